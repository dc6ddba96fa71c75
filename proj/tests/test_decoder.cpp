#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vg3d/decoder.hpp"
#include "vg3d/rng.hpp"

using namespace vg3d;

namespace {

struct TinySetup {
  QuerySet q;
  Tensor seeds_V;
  std::vector<Point3> seed_xyz;
  Tensor T_m, T_s;
};

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(shape, v);
}

TinySetup tiny_setup(Rng& rng, int K, int N, int Lm, int Ls, int D) {
  TinySetup s;
  s.q.feats = rand_tensor(rng, {K, D});
  for (int k = 0; k < K; ++k) {
    Box3 b;
    b.center = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    b.l = rng.uniform(0.4, 1.5);
    b.w = rng.uniform(0.4, 1.5);
    b.h = rng.uniform(0.4, 1.5);
    s.q.boxes.push_back(b);
  }
  s.seeds_V = rand_tensor(rng, {N, D});
  for (int n = 0; n < N; ++n)
    s.seed_xyz.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
  s.T_m = rand_tensor(rng, {Lm, D});
  if (Ls > 0) s.T_s = rand_tensor(rng, {Ls, D});
  return s;
}

BranchSpec gated_spec() {
  BranchSpec spec;
  spec.wiring = GateWiring::gate_on_all;
  return spec;
}

void zero_all(Tensor t) {
  std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
}

void zero_attn(MultiheadAttnParams& p) {
  for (Tensor* t : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo})
    zero_all(*t);
}

}  // namespace

TEST_CASE("decoder layer matches the straight-line scalar oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(100 + seed);
    const int K = 2, N = 5, Lm = 2, Ls = 3, D = 8, H = 2;
    TinySetup s = tiny_setup(rng, K, N, Lm, Ls, D);
    DecoderLayerParams p =
        decoder_layer_init(D, H, 16, 16, 8, BranchSpec{}, gated_spec(), rng);

    QuerySet next = decoder_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s, p);

    oracle::Mat T_s_mat = oracle::from_tensor(s.T_s);
    oracle::LayerOut expect = oracle::decoder_layer(
        p, oracle::from_tensor(s.q.feats), s.q.boxes, oracle::from_tensor(s.seeds_V),
        s.seed_xyz, oracle::from_tensor(s.T_m), &T_s_mat);

    CHECK(oracle::max_abs_diff(expect.feats, next.feats) < 1e-10);
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < 6; ++j)
        CHECK(std::fabs(expect.boxes6[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] -
                        next.boxes6.at(k, j)) < 1e-10);
  }
}

TEST_CASE("serial layer matches the straight-line scalar oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(200 + seed);
    const int K = 2, N = 5, L = 4, D = 8, H = 2;
    TinySetup s = tiny_setup(rng, K, N, L, 0, D);
    SerialLayerParams p = serial_layer_init(D, H, 16, 16, 8, BranchSpec{}, rng);

    QuerySet next = serial_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, p);
    oracle::LayerOut expect = oracle::serial_layer(
        p, oracle::from_tensor(s.q.feats), s.q.boxes, oracle::from_tensor(s.seeds_V),
        s.seed_xyz, oracle::from_tensor(s.T_m));
    CHECK(oracle::max_abs_diff(expect.feats, next.feats) < 1e-10);
  }
}

TEST_CASE("identical branches contribute identically") {
  Rng rng(300);
  const int K = 2, N = 4, Lm = 2, D = 8, H = 2;
  TinySetup s = tiny_setup(rng, K, N, Lm, 0, D);
  DecoderLayerParams p =
      decoder_layer_init(D, H, 16, 16, 8, BranchSpec{}, BranchSpec{}, rng);
  p.surrounding = p.target;  // shared parameters, same token stream below

  LayerTrace trace;
  decoder_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_m, p, &trace);
  for (std::size_t i = 0; i < trace.target_text_out.numel(); ++i)
    CHECK(trace.target_text_out.data()[i] == trace.surrounding_text_out.data()[i]);
  for (std::size_t i = 0; i < trace.target_visual_attn.numel(); ++i)
    CHECK(trace.target_visual_attn.data()[i] == trace.surrounding_visual_attn.data()[i]);
}

TEST_CASE("zeroed attention projections reduce to the feed-forward path") {
  Rng rng(310);
  const int K = 2, N = 4, Lm = 2, Ls = 2, D = 8, H = 2;
  TinySetup s = tiny_setup(rng, K, N, Lm, Ls, D);
  DecoderLayerParams p =
      decoder_layer_init(D, H, 16, 16, 8, BranchSpec{}, gated_spec(), rng);
  zero_attn(p.self_attn);
  zero_attn(p.target.text_cross);
  zero_attn(p.target.visual_cross);
  zero_attn(p.surrounding.text_cross);
  zero_attn(p.surrounding.visual_cross);

  QuerySet next = decoder_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s, p);

  // with zero attention blocks, each branch is LN(feats) and the tail sees
  // their sum
  Tensor bt = layer_norm(s.q.feats, p.target.fuse_norm.gamma, p.target.fuse_norm.beta);
  Tensor bs = layer_norm(s.q.feats, p.surrounding.fuse_norm.gamma,
                         p.surrounding.fuse_norm.beta);
  Tensor fused = add(bt, bs);
  Tensor f1 = add(fused, mlp_apply(p.ffn, layer_norm(fused, p.pre_ffn.gamma, p.pre_ffn.beta)));
  Tensor expect = layer_norm(f1, p.out_norm.gamma, p.out_norm.beta);
  for (std::size_t i = 0; i < expect.numel(); ++i)
    CHECK(next.feats.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("empty surrounding stream reduces to the target-only serial layer") {
  Rng rng(320);
  const int K = 2, N = 4, Lm = 3, D = 8, H = 2;
  TinySetup s = tiny_setup(rng, K, N, Lm, 0, D);
  DecoderLayerParams p =
      decoder_layer_init(D, H, 16, 16, 8, BranchSpec{}, gated_spec(), rng);
  // silence the surrounding branch entirely
  zero_all(p.surrounding.fuse_norm.gamma);
  zero_all(p.surrounding.fuse_norm.beta);

  SerialLayerParams sp;
  sp.self_attn = p.self_attn;
  sp.pre_self = p.pre_self;
  sp.branch = p.target;
  sp.ffn = p.ffn;
  sp.pre_ffn = p.pre_ffn;
  sp.out_norm = p.out_norm;
  sp.box_head = p.box_head;

  QuerySet parallel = decoder_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, Tensor(), p);
  QuerySet serial = serial_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, sp);
  for (std::size_t i = 0; i < parallel.feats.numel(); ++i)
    CHECK(parallel.feats.data()[i] == doctest::Approx(serial.feats.data()[i]).epsilon(1e-15));
}

TEST_CASE("serial layer has strictly fewer parameters") {
  Rng rng(330);
  DecoderLayerParams p =
      decoder_layer_init(16, 2, 32, 32, 16, BranchSpec{}, gated_spec(), rng);
  SerialLayerParams sp = serial_layer_init(16, 2, 32, 32, 16, BranchSpec{}, rng);
  NamedParams pp, ps;
  collect_params(p, "p", pp);
  collect_params(sp, "s", ps);
  CHECK(param_count(ps) < param_count(pp));
}

TEST_CASE("predict_boxes") {
  Rng rng(340);
  BoxHeadParams head;
  head.mlp = mlp_init(4, 8, 6, rng);
  std::vector<Point3> refs = {{1, 2, 3}, {-1, 0, 1}};

  SUBCASE("zero weights with bias give identical boxes") {
    for (Tensor* t : {&head.mlp.w1, &head.mlp.b1, &head.mlp.w2}) zero_all(*t);
    head.mlp.b2.mutable_data() = {0.1, 0.2, 0.3, 0.5, 0.5, 0.5};
    BoxPrediction pred = predict_boxes(rand_tensor(rng, {2, 4}), head, refs);
    CHECK(pred.boxes[0].l == pred.boxes[1].l);
    CHECK(pred.boxes[0].center.x == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(pred.boxes[1].center.x == doctest::Approx(-0.9).epsilon(1e-12));
  }

  SUBCASE("deeply negative size channel still yields a positive box") {
    for (Tensor* t : {&head.mlp.w1, &head.mlp.b1, &head.mlp.w2}) zero_all(*t);
    head.mlp.b2.mutable_data() = {0, 0, 0, -1000, -1000, -1000};
    BoxPrediction pred = predict_boxes(rand_tensor(rng, {2, 4}), head, refs);
    CHECK(pred.boxes[0].l > 0.0);
    CHECK(pred.boxes[0].l < 1e-5);
  }

  SUBCASE("random head matches the scalar oracle") {
    Tensor feats = rand_tensor(rng, {2, 4});
    BoxPrediction pred = predict_boxes(feats, head, refs);
    std::vector<Box3> prev(2);
    prev[0].center = refs[0];
    prev[1].center = refs[1];
    prev[0].l = prev[0].w = prev[0].h = 1;
    prev[1].l = prev[1].w = prev[1].h = 1;
    oracle::LayerOut expect = oracle::boxes_from(oracle::from_tensor(feats), head, prev);
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 6; ++j)
        CHECK(std::fabs(pred.boxes6.at(k, j) -
                        expect.boxes6[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)]) < 1e-12);
  }
}

TEST_CASE("decode_stack basics") {
  Rng rng(350);
  const int K = 2, N = 4, Lm = 2, Ls = 2, D = 8, H = 2;
  TinySetup s = tiny_setup(rng, K, N, Lm, Ls, D);
  std::vector<DecoderLayerParams> layers;
  for (int i = 0; i < 3; ++i)
    layers.push_back(decoder_layer_init(D, H, 16, 16, 8, BranchSpec{}, gated_spec(), rng));

  SUBCASE("one layer reduces to decoder_layer") {
    DecodeResult r = decode_stack(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s,
                                  {layers[0]}, false);
    QuerySet direct = decoder_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s, layers[0]);
    for (std::size_t i = 0; i < direct.feats.numel(); ++i)
      CHECK(r.final_queries.feats.data()[i] == direct.feats.data()[i]);
    CHECK(!r.trace.has_value());
  }

  SUBCASE("trace captures per-layer maps that row-normalize") {
    DecodeResult r = decode_stack(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s, layers, true);
    REQUIRE(r.trace.has_value());
    CHECK(r.trace->layers.size() == 3);
    for (const LayerTrace& t : r.trace->layers) {
      for (const Tensor* attn : {&t.target_visual_attn, &t.surrounding_visual_attn}) {
        for (int h = 0; h < H; ++h)
          for (int k = 0; k < K; ++k) {
            double total = 0.0;
            for (int n = 0; n < N; ++n) total += attn->at(h, k, n);
            CHECK(std::fabs(total - 1.0) < 1e-9);
          }
      }
    }
  }

  SUBCASE("per-layer bias tracks the refreshed boxes") {
    DecodeResult r = decode_stack(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s, layers, true);
    // boxes move between layers, so the recomputed E must differ
    bool boxes_moved = false;
    for (int k = 0; k < K; ++k)
      boxes_moved = boxes_moved ||
                    std::fabs(r.trace->layers[0].boxes[static_cast<std::size_t>(k)].center.x -
                              r.trace->layers[1].boxes[static_cast<std::size_t>(k)].center.x) > 1e-12;
    REQUIRE(boxes_moved);
    double diff = 0.0;
    for (std::size_t i = 0; i < r.trace->layers[0].target_bias.numel(); ++i)
      diff = std::max(diff, std::fabs(r.trace->layers[1].target_bias.data()[i] -
                                      r.trace->layers[2].target_bias.data()[i]));
    CHECK(diff > 1e-12);
  }

  SUBCASE("gradients flow through all layers") {
    const double err = grad_check(
        [&](const Tensor& feats) {
          QuerySet q0 = s.q;
          q0.feats = feats;
          DecodeResult r = decode_stack(q0, s.seeds_V, s.seed_xyz, s.T_m, s.T_s,
                                        layers, false);
          return sum(r.final_queries.feats);
        },
        s.q.feats);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("branch text blocks are disentangled") {
  Rng rng(360);
  const int K = 2, N = 4, Lm = 2, Ls = 3, D = 8, H = 2;
  TinySetup s = tiny_setup(rng, K, N, Lm, Ls, D);
  DecoderLayerParams p =
      decoder_layer_init(D, H, 16, 16, 8, BranchSpec{}, gated_spec(), rng);

  LayerTrace base;
  decoder_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s, p, &base);

  LayerTrace zeroed_s;
  decoder_layer(s.q, s.seeds_V, s.seed_xyz, s.T_m, Tensor::zeros({3, D}), p, &zeroed_s);
  bool surrounding_changed = false;
  for (std::size_t i = 0; i < base.surrounding_text_out.numel(); ++i)
    surrounding_changed = surrounding_changed ||
        base.surrounding_text_out.data()[i] != zeroed_s.surrounding_text_out.data()[i];
  CHECK(surrounding_changed);
  for (std::size_t i = 0; i < base.target_text_out.numel(); ++i)
    CHECK(base.target_text_out.data()[i] == zeroed_s.target_text_out.data()[i]);

  LayerTrace zeroed_m;
  decoder_layer(s.q, s.seeds_V, s.seed_xyz, Tensor::zeros({2, D}), s.T_s, p, &zeroed_m);
  bool target_changed = false;
  for (std::size_t i = 0; i < base.target_text_out.numel(); ++i)
    target_changed = target_changed ||
        base.target_text_out.data()[i] != zeroed_m.target_text_out.data()[i];
  CHECK(target_changed);
  for (std::size_t i = 0; i < base.surrounding_text_out.numel(); ++i)
    CHECK(base.surrounding_text_out.data()[i] == zeroed_m.surrounding_text_out.data()[i]);
}

TEST_CASE("decoder layer input validation") {
  Rng rng(370);
  const int D = 8;
  TinySetup s = tiny_setup(rng, 2, 4, 2, 2, D);
  DecoderLayerParams p =
      decoder_layer_init(D, 2, 16, 16, 8, BranchSpec{}, gated_spec(), rng);
  CHECK_THROWS_AS(decoder_layer(s.q, s.seeds_V, s.seed_xyz, Tensor(), s.T_s, p),
                  std::invalid_argument);
  CHECK_THROWS_AS(decode_stack(s.q, s.seeds_V, s.seed_xyz, s.T_m, s.T_s, {}, false),
                  std::invalid_argument);
}
