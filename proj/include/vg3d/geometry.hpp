#pragma once

#include <array>
#include <vector>

#include "vg3d/tensor.hpp"

namespace vg3d {

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

// Axis-aligned box given by its center and full extents, all in meters.
struct Box3 {
  Point3 center;
  double l = 0.0, w = 0.0, h = 0.0;  // full lengths along x, y, z
};

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

enum class PeScheme { box_surface, center, vertex };

// Per-(box, seed-point) relative offsets. Shape is [K,N,3] for the
// box_surface and center schemes and [K,N,8,3] for the vertex scheme,
// laid out box-major.
struct OffsetField {
  PeScheme scheme = PeScheme::box_surface;
  Tensor offsets;
};

void validate_box(const Box3& b);

// Signed offset from point a to its closest point on the surface of b.
// Outside (or on) the surface every component is >= 0; strictly inside,
// exactly one component is negative (the distance to the nearest face,
// axis ties broken x then y then z) and the other two are 0.
Vec3 box_surface_offset(const Point3& a, const Box3& b);

// Offset from the box center, ignoring extent.
Vec3 center_offset(const Point3& a, const Box3& b);

// Offsets from a to the 8 box corners. Corner order is the binary
// enumeration of (-,+) half extents with x varying fastest.
std::array<Vec3, 8> vertex_offsets(const Point3& a, const Box3& b);

// Independent closest-point computation used to cross-check
// box_surface_offset; implemented by clamping / face projection and shares
// no code with it.
struct ClosestPoint {
  Point3 m;
  double distance = 0.0;
};
ClosestPoint closest_point_oracle(const Point3& a, const Box3& b);

OffsetField offset_field(const std::vector<Point3>& points,
                         const std::vector<Box3>& boxes, PeScheme scheme,
                         DType dtype = DType::f64);

// Plain (non-differentiable) axis-aligned IoU.
double box_iou(const Box3& a, const Box3& b);

}  // namespace vg3d
