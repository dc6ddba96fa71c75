#include <doctest.h>

#include <cmath>
#include <cstring>

#include "vg3d/geometry.hpp"
#include "vg3d/rng.hpp"

using namespace vg3d;

namespace {

const Box3 unit2{{0, 0, 0}, 2, 2, 2};  // faces at +-1

bool strictly_inside(const Point3& a, const Box3& b) {
  return std::fabs(a.x - b.center.x) < b.l / 2 && std::fabs(a.y - b.center.y) < b.w / 2 &&
         std::fabs(a.z - b.center.z) < b.h / 2;
}

double offset_norm(const Vec3& v) {
  return std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
}

Box3 random_box(Rng& rng) {
  Box3 b;
  b.center = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
  b.l = rng.uniform(0.2, 3.0);
  b.w = rng.uniform(0.2, 3.0);
  b.h = rng.uniform(0.2, 3.0);
  return b;
}

Point3 random_point(Rng& rng) {
  return {rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
}

}  // namespace

TEST_CASE("box_surface_offset outside cases") {
  Vec3 v = box_surface_offset({3, 0, 0}, unit2);
  CHECK(v.x == 2.0);
  CHECK(v.y == 0.0);
  CHECK(v.z == 0.0);

  v = box_surface_offset({2, 2, 0}, unit2);
  CHECK(v.x == 1.0);
  CHECK(v.y == 1.0);
  CHECK(v.z == 0.0);
}

TEST_CASE("box_surface_offset inside and boundary cases") {
  Vec3 v = box_surface_offset({0.5, 0, 0}, unit2);
  CHECK(v.x == -0.5);
  CHECK(v.y == 0.0);
  CHECK(v.z == 0.0);

  // three-way tie at the center resolves along x
  v = box_surface_offset({0, 0, 0}, unit2);
  CHECK(v.x == -1.0);
  CHECK(v.y == 0.0);
  CHECK(v.z == 0.0);

  // on-surface points take the outside branch: all zeros
  v = box_surface_offset({1, 0, 0}, unit2);
  CHECK(v.x == 0.0);
  CHECK(v.y == 0.0);
  CHECK(v.z == 0.0);
}

TEST_CASE("box_surface_offset rejects degenerate boxes") {
  Box3 bad{{0, 0, 0}, 1, 0, 1};
  CHECK_THROWS_AS(box_surface_offset({0, 0, 0}, bad), std::invalid_argument);
}

TEST_CASE("center_offset") {
  Vec3 v = center_offset({3, 0, 0}, unit2);
  CHECK(v.x == 3.0);
  v = center_offset({0, 0, 0}, unit2);
  CHECK(v.x == 0.0);
  Box3 b{{-1, 0, 1}, 1, 1, 1};
  v = center_offset({1, 2, 3}, b);
  CHECK(v.x == 2.0);
  CHECK(v.y == 2.0);
  CHECK(v.z == 2.0);
}

TEST_CASE("vertex_offsets corner order and symmetry") {
  // point at corner (+1,+1,+1): offset to that corner is zero
  auto offs = vertex_offsets({1, 1, 1}, unit2);
  int zero_count = 0;
  for (const Vec3& v : offs)
    if (v.x == 0.0 && v.y == 0.0 && v.z == 0.0) ++zero_count;
  CHECK(zero_count == 1);
  // binary enumeration with x fastest: corner 7 is (+,+,+)
  CHECK(offs[7].x == 0.0);
  CHECK(offs[7].y == 0.0);
  CHECK(offs[7].z == 0.0);
  CHECK(offs[0].x == 2.0);  // corner 0 is (-,-,-)

  // from the center the offsets are the signed half-extent combinations
  auto center_offs = vertex_offsets({0, 0, 0}, unit2);
  for (int c = 0; c < 8; ++c) {
    CHECK(center_offs[static_cast<std::size_t>(c)].x == ((c & 1) ? -1.0 : 1.0));
    CHECK(center_offs[static_cast<std::size_t>(c)].y == ((c & 2) ? -1.0 : 1.0));
    CHECK(center_offs[static_cast<std::size_t>(c)].z == ((c & 4) ? -1.0 : 1.0));
  }

  // sum of corner offsets is 8x the center offset
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Box3 b = random_box(rng);
    Point3 a = random_point(rng);
    auto vo = vertex_offsets(a, b);
    Vec3 total{0, 0, 0};
    for (const Vec3& v : vo) {
      total.x += v.x;
      total.y += v.y;
      total.z += v.z;
    }
    Vec3 c = center_offset(a, b);
    CHECK(total.x == doctest::Approx(8 * c.x).epsilon(1e-12));
    CHECK(total.y == doctest::Approx(8 * c.y).epsilon(1e-12));
    CHECK(total.z == doctest::Approx(8 * c.z).epsilon(1e-12));
  }
}

TEST_CASE("offset_field single pair reduces to the element op") {
  OffsetField f = offset_field({{3, 0, 0}}, {unit2}, PeScheme::box_surface);
  CHECK(f.offsets.shape() == std::vector<int>{1, 1, 3});
  CHECK(f.offsets.at(0, 0, 0) == 2.0);

  OffsetField fc = offset_field({{3, 0, 0}}, {unit2}, PeScheme::center);
  CHECK(fc.offsets.at(0, 0, 0) == 3.0);

  OffsetField fv = offset_field({{3, 0, 0}}, {unit2}, PeScheme::vertex);
  CHECK(fv.offsets.shape() == std::vector<int>{1, 1, 8, 3});
}

TEST_CASE("offset_field duplicated boxes duplicate rows") {
  std::vector<Point3> pts = {{0.5, 0.25, 0}, {2, 1, 0.5}};
  OffsetField f = offset_field(pts, {unit2, unit2}, PeScheme::box_surface);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) CHECK(f.offsets.at(0, n, c) == f.offsets.at(1, n, c));
}

TEST_CASE("offset_field matches scalar loop oracle") {
  Rng rng(23);
  std::vector<Box3> boxes;
  std::vector<Point3> pts;
  for (int k = 0; k < 4; ++k) boxes.push_back(random_box(rng));
  for (int n = 0; n < 16; ++n) pts.push_back(random_point(rng));
  for (PeScheme scheme : {PeScheme::box_surface, PeScheme::center}) {
    OffsetField f = offset_field(pts, boxes, scheme);
    for (int k = 0; k < 4; ++k)
      for (int n = 0; n < 16; ++n) {
        const Vec3 v = scheme == PeScheme::box_surface
                           ? box_surface_offset(pts[static_cast<std::size_t>(n)],
                                                boxes[static_cast<std::size_t>(k)])
                           : center_offset(pts[static_cast<std::size_t>(n)],
                                           boxes[static_cast<std::size_t>(k)]);
        CHECK(f.offsets.at(k, n, 0) == v.x);
        CHECK(f.offsets.at(k, n, 1) == v.y);
        CHECK(f.offsets.at(k, n, 2) == v.z);
      }
  }
  OffsetField fv = offset_field(pts, boxes, PeScheme::vertex);
  for (int k = 0; k < 4; ++k)
    for (int n = 0; n < 16; ++n) {
      auto vo = vertex_offsets(pts[static_cast<std::size_t>(n)],
                               boxes[static_cast<std::size_t>(k)]);
      for (int c = 0; c < 8; ++c) {
        const std::size_t base =
            ((static_cast<std::size_t>(k) * 16 + n) * 8 + c) * 3;
        CHECK(fv.offsets.data()[base] == vo[static_cast<std::size_t>(c)].x);
        CHECK(fv.offsets.data()[base + 1] == vo[static_cast<std::size_t>(c)].y);
        CHECK(fv.offsets.data()[base + 2] == vo[static_cast<std::size_t>(c)].z);
      }
    }
}

TEST_CASE("closest point oracle hand cases") {
  ClosestPoint cp = closest_point_oracle({3, 0, 0}, unit2);
  CHECK(cp.m.x == 1.0);
  CHECK(cp.m.y == 0.0);
  CHECK(cp.distance == 2.0);

  cp = closest_point_oracle({0.5, 0, 0}, unit2);
  CHECK(cp.m.x == 1.0);
  CHECK(cp.distance == 0.5);
}

TEST_CASE("box_surface_offset agrees with the closest point oracle") {
  Rng rng(1234);
  for (int trial = 0; trial < 10000; ++trial) {
    const Box3 b = random_box(rng);
    const Point3 a = random_point(rng);
    const Vec3 v = box_surface_offset(a, b);
    const ClosestPoint cp = closest_point_oracle(a, b);
    CHECK(std::fabs(offset_norm(v) - cp.distance) < 1e-9);

    // sign pattern
    if (strictly_inside(a, b)) {
      int negatives = 0, zeros = 0;
      for (double c : {v.x, v.y, v.z}) {
        if (c < 0.0) ++negatives;
        if (c == 0.0) ++zeros;
      }
      CHECK(negatives == 1);
      CHECK(zeros == 2);
    } else {
      CHECK(v.x >= 0.0);
      CHECK(v.y >= 0.0);
      CHECK(v.z >= 0.0);
    }
  }
}

TEST_CASE("translation equivariance") {
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    Box3 b = random_box(rng);
    Point3 a = random_point(rng);
    const Vec3 t{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    Box3 b2 = b;
    b2.center = {b.center.x + t.x, b.center.y + t.y, b.center.z + t.z};
    Point3 a2{a.x + t.x, a.y + t.y, a.z + t.z};

    const Vec3 v1 = box_surface_offset(a, b);
    const Vec3 v2 = box_surface_offset(a2, b2);
    CHECK(v1.x == doctest::Approx(v2.x).epsilon(1e-9));
    CHECK(v1.y == doctest::Approx(v2.y).epsilon(1e-9));
    CHECK(v1.z == doctest::Approx(v2.z).epsilon(1e-9));

    const Vec3 c1 = center_offset(a, b);
    const Vec3 c2 = center_offset(a2, b2);
    CHECK(c1.x == doctest::Approx(c2.x).epsilon(1e-9));
  }
}

TEST_CASE("boundary continuity across a face") {
  for (double eps : {1e-6, 1e-9, 1e-12}) {
    const Vec3 out = box_surface_offset({1 + eps, 0.2, -0.3}, unit2);
    const Vec3 in = box_surface_offset({1 - eps, 0.2, -0.3}, unit2);
    CHECK(std::fabs(out.x) <= eps * 1.0001);
    CHECK(std::fabs(in.x) <= eps * 1.0001);
    CHECK(out.y == 0.0);
    CHECK(in.y == 0.0);
  }
}

TEST_CASE("determinism at ties is bit-identical") {
  const Point3 tie{0.25, 0.25, 0.25};
  Box3 b{{0.25, 0.25, 0.25}, 1, 1, 1};
  const Vec3 v1 = box_surface_offset(tie, b);
  const Vec3 v2 = box_surface_offset(tie, b);
  CHECK(std::memcmp(&v1, &v2, sizeof(Vec3)) == 0);
  CHECK(v1.x == -0.5);  // x priority at the three-way tie
}

TEST_CASE("plain box IoU") {
  Box3 a{{0, 0, 0}, 2, 2, 2};
  CHECK(box_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Box3 apart{{10, 0, 0}, 2, 2, 2};
  CHECK(box_iou(a, apart) == 0.0);
  Box3 shifted{{1, 0, 0}, 2, 2, 2};
  CHECK(box_iou(a, shifted) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}
