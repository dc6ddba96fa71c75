#include <doctest.h>

#include <cmath>

#include "vg3d/posenc.hpp"
#include "vg3d/rng.hpp"

using namespace vg3d;

namespace {

OffsetField random_field(Rng& rng, int K, int N, PeScheme scheme) {
  std::vector<Point3> pts;
  std::vector<Box3> boxes;
  for (int n = 0; n < N; ++n)
    pts.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
  for (int k = 0; k < K; ++k) {
    Box3 b;
    b.center = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    b.l = rng.uniform(0.3, 2.0);
    b.w = rng.uniform(0.3, 2.0);
    b.h = rng.uniform(0.3, 2.0);
    boxes.push_back(b);
  }
  return offset_field(pts, boxes, scheme);
}

double signed_log_scalar(double d, double s) {
  const double m = std::log1p(std::fabs(d) / s);
  return d < 0 ? -m : (d > 0 ? m : 0.0);
}

}  // namespace

TEST_CASE("f_nonlinear is odd and hits the log anchor") {
  Rng rng(0);
  PosEncConfig cfg = posenc_init(PeScheme::box_surface, 2, 8, rng);
  Tensor zero = Tensor::zeros({1, 1, 3});
  OffsetField f0{PeScheme::box_surface, zero};
  CHECK(f_nonlinear(f0.offsets, cfg).at(0) == 0.0);

  Tensor d = Tensor::from_data({1, 1, 3}, {0.1, -0.1, 0.7});
  Tensor fd = f_nonlinear(d, cfg);
  CHECK(fd.at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(fd.at(1) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

  Tensor neg = f_nonlinear(scale(d, -1.0), cfg);
  for (int i = 0; i < 3; ++i) CHECK(neg.at(i) == doctest::Approx(-fd.at(i)).epsilon(1e-14));

  cfg.f_kind = FKind::identity;
  Tensor idf = f_nonlinear(d, cfg);
  for (int i = 0; i < 3; ++i) CHECK(idf.at(i) == d.at(i));
}

TEST_CASE("f_nonlinear derivative is bounded by 1/f_scale") {
  Rng rng(1);
  PosEncConfig cfg = posenc_init(PeScheme::box_surface, 1, 4, rng);
  for (double d : {-50.0, -1.0, -0.01, 0.0, 0.02, 3.0, 80.0}) {
    const double h = 1e-6;
    const double plus = signed_log_scalar(d + h, cfg.f_scale);
    const double minus = signed_log_scalar(d - h, cfg.f_scale);
    CHECK(std::fabs((plus - minus) / (2 * h)) <= 1.0 / cfg.f_scale + 1e-6);
  }
}

TEST_CASE("pe_bias zero-weight MLP yields constant per-head bias") {
  Rng rng(2);
  PosEncConfig cfg = posenc_init(PeScheme::box_surface, 3, 8, rng);
  for (Tensor* t : {&cfg.mlps[0].w1, &cfg.mlps[0].b1, &cfg.mlps[0].w2})
    std::fill(t->mutable_data().begin(), t->mutable_data().end(), 0.0);
  cfg.mlps[0].b2.mutable_data() = {0.5, -1.5, 2.0};

  Rng fr(3);
  OffsetField field = random_field(fr, 2, 5, PeScheme::box_surface);
  AttnBias bias = pe_bias(field, cfg);
  CHECK(bias.e.shape() == std::vector<int>{3, 2, 5});
  for (int k = 0; k < 2; ++k)
    for (int n = 0; n < 5; ++n) {
      CHECK(bias.e.at(0, k, n) == 0.5);
      CHECK(bias.e.at(1, k, n) == -1.5);
      CHECK(bias.e.at(2, k, n) == 2.0);
    }
}

TEST_CASE("pe_bias at K=1,N=1,H=1 equals a direct scalar MLP evaluation") {
  Rng rng(4);
  PosEncConfig cfg = posenc_init(PeScheme::box_surface, 1, 6, rng);
  Tensor d = Tensor::from_data({1, 1, 3}, {0.4, -0.2, 1.1});
  OffsetField field{PeScheme::box_surface, d};
  AttnBias bias = pe_bias(field, cfg);

  Tensor f = f_nonlinear(d, cfg);
  Tensor direct = mlp_apply(cfg.mlps[0], reshape(f, {1, 3}));
  CHECK(bias.e.at(0, 0, 0) == doctest::Approx(direct.at(0, 0)).epsilon(1e-14));
}

TEST_CASE("pe_bias matches a scalar loop oracle") {
  Rng rng(5);
  PosEncConfig cfg = posenc_init(PeScheme::box_surface, 2, 7, rng);
  Rng fr(6);
  OffsetField field = random_field(fr, 2, 3, PeScheme::box_surface);
  AttnBias bias = pe_bias(field, cfg);

  const MlpParams& p = cfg.mlps[0];
  for (int k = 0; k < 2; ++k)
    for (int n = 0; n < 3; ++n) {
      double fin[3];
      for (int c = 0; c < 3; ++c)
        fin[c] = signed_log_scalar(field.offsets.at(k, n, c), cfg.f_scale);
      std::vector<double> hidden(static_cast<std::size_t>(p.hidden_dim()));
      for (int hidx = 0; hidx < p.hidden_dim(); ++hidx) {
        double acc = p.b1.at(hidx);
        for (int c = 0; c < 3; ++c) acc += fin[c] * p.w1.at(c, hidx);
        hidden[static_cast<std::size_t>(hidx)] = acc > 0 ? acc : 0;
      }
      for (int head = 0; head < 2; ++head) {
        double acc = p.b2.at(head);
        for (int hidx = 0; hidx < p.hidden_dim(); ++hidx)
          acc += hidden[static_cast<std::size_t>(hidx)] * p.w2.at(hidx, head);
        CHECK(std::fabs(bias.e.at(head, k, n) - acc) < 1e-12);
      }
    }
}

TEST_CASE("vertex pe_bias sums per-corner MLPs and is permutation-consistent") {
  Rng rng(7);
  PosEncConfig cfg = posenc_init(PeScheme::vertex, 2, 6, rng);
  REQUIRE(cfg.mlps.size() == 8);
  Rng fr(8);
  OffsetField field = random_field(fr, 2, 4, PeScheme::vertex);
  AttnBias bias = pe_bias(field, cfg);

  // swapping two corner MLPs while swapping the corner slabs keeps E fixed
  PosEncConfig swapped = cfg;
  std::swap(swapped.mlps[2], swapped.mlps[5]);
  OffsetField swapped_field = field;
  std::vector<double> data = field.offsets.data();
  for (int k = 0; k < 2; ++k)
    for (int n = 0; n < 4; ++n)
      for (int c = 0; c < 3; ++c) {
        const std::size_t i2 = ((static_cast<std::size_t>(k) * 4 + n) * 8 + 2) * 3 + c;
        const std::size_t i5 = ((static_cast<std::size_t>(k) * 4 + n) * 8 + 5) * 3 + c;
        std::swap(data[i2], data[i5]);
      }
  swapped_field.offsets = Tensor::from_data({2, 4, 8, 3}, data);
  AttnBias bias2 = pe_bias(swapped_field, swapped);
  for (std::size_t i = 0; i < bias.e.numel(); ++i)
    CHECK(bias.e.data()[i] == doctest::Approx(bias2.e.data()[i]).epsilon(1e-12));
}

TEST_CASE("pe_bias differentiates with respect to MLP parameters") {
  Rng rng(9);
  PosEncConfig cfg = posenc_init(PeScheme::box_surface, 2, 5, rng);
  Rng fr(10);
  OffsetField field = random_field(fr, 2, 3, PeScheme::box_surface);

  const double err = grad_check(
      [&](const Tensor& t) {
        PosEncConfig probe = cfg;
        probe.mlps[0].w1 = reshape(t, {3, 5});
        return sum(pe_bias(field, probe).e);
      },
      Tensor::from_data({3, 5}, cfg.mlps[0].w1.data()));
  CHECK(err < 1e-4);
}

TEST_CASE("pe_bias shape validation") {
  Rng rng(11);
  PosEncConfig cfg = posenc_init(PeScheme::vertex, 2, 4, rng);
  Rng fr(12);
  OffsetField mismatched = random_field(fr, 2, 3, PeScheme::box_surface);
  CHECK_THROWS_AS(pe_bias(mismatched, cfg), std::invalid_argument);
}

TEST_CASE("pe cost model") {
  const PeCost vertex = pe_cost_model(PeScheme::vertex, 16, 64, 32, 4);
  const PeCost surface = pe_cost_model(PeScheme::box_surface, 16, 64, 32, 4);
  const PeCost center = pe_cost_model(PeScheme::center, 16, 64, 32, 4);
  CHECK(vertex.mlp_applications == 8 * surface.mlp_applications);
  CHECK(center.mlp_applications == surface.mlp_applications);
  CHECK(center.bias_buffer_scalars == surface.bias_buffer_scalars);
  CHECK(surface.bias_buffer_scalars == 16 * 64 * 3 + 4 * 16 * 64);
  CHECK_THROWS_AS(pe_cost_model(PeScheme::center, 0, 1, 1, 1), std::invalid_argument);
}

TEST_CASE("translation invariance of the bias") {
  Rng rng(13);
  PosEncConfig cfg = posenc_init(PeScheme::box_surface, 2, 6, rng);
  std::vector<Point3> pts = {{0.2, 0.4, -0.3}, {1.5, -2.0, 0.8}};
  std::vector<Box3> boxes = {{{0.5, 0.5, 0.5}, 1, 1.5, 0.8}};
  AttnBias e1 = pe_bias(offset_field(pts, boxes, PeScheme::box_surface), cfg);

  const double tx = 2.5, ty = -1.0, tz = 0.75;
  std::vector<Point3> pts2;
  for (const Point3& p : pts) pts2.push_back({p.x + tx, p.y + ty, p.z + tz});
  std::vector<Box3> boxes2 = boxes;
  boxes2[0].center = {boxes[0].center.x + tx, boxes[0].center.y + ty,
                      boxes[0].center.z + tz};
  AttnBias e2 = pe_bias(offset_field(pts2, boxes2, PeScheme::box_surface), cfg);
  for (std::size_t i = 0; i < e1.e.numel(); ++i)
    CHECK(e1.e.data()[i] == doctest::Approx(e2.e.data()[i]).epsilon(1e-9));
}
