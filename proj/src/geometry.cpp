#include "vg3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vg3d {

void validate_box(const Box3& b) {
  if (!(b.l > 0.0) || !(b.w > 0.0) || !(b.h > 0.0))
    throw std::invalid_argument("box: non-positive extent");
  if (!std::isfinite(b.center.x) || !std::isfinite(b.center.y) ||
      !std::isfinite(b.center.z) || !std::isfinite(b.l) || !std::isfinite(b.w) ||
      !std::isfinite(b.h))
    throw std::invalid_argument("box: non-finite field");
}

Vec3 box_surface_offset(const Point3& a, const Box3& b) {
  validate_box(b);
  const double dx = std::fabs(a.x - b.center.x) - b.l / 2.0;
  const double dy = std::fabs(a.y - b.center.y) - b.w / 2.0;
  const double dz = std::fabs(a.z - b.center.z) - b.h / 2.0;
  if (dx >= 0.0 || dy >= 0.0 || dz >= 0.0) {
    // outside or on the surface: componentwise distance past each face pair
    return {std::max(dx, 0.0), std::max(dy, 0.0), std::max(dz, 0.0)};
  }
  // strictly inside: nearest face distance, negated, in the achieving axis
  const double fx = -dx, fy = -dy, fz = -dz;
  if (fx <= fy && fx <= fz) return {-fx, 0.0, 0.0};
  if (fy <= fz) return {0.0, -fy, 0.0};
  return {0.0, 0.0, -fz};
}

Vec3 center_offset(const Point3& a, const Box3& b) {
  validate_box(b);
  return {a.x - b.center.x, a.y - b.center.y, a.z - b.center.z};
}

std::array<Vec3, 8> vertex_offsets(const Point3& a, const Box3& b) {
  validate_box(b);
  std::array<Vec3, 8> out;
  for (int c = 0; c < 8; ++c) {
    const double sx = (c & 1) ? 1.0 : -1.0;
    const double sy = (c & 2) ? 1.0 : -1.0;
    const double sz = (c & 4) ? 1.0 : -1.0;
    out[static_cast<std::size_t>(c)] = {a.x - (b.center.x + sx * b.l / 2.0),
                                        a.y - (b.center.y + sy * b.w / 2.0),
                                        a.z - (b.center.z + sz * b.h / 2.0)};
  }
  return out;
}

ClosestPoint closest_point_oracle(const Point3& a, const Box3& b) {
  validate_box(b);
  const double xlo = b.center.x - b.l / 2.0, xhi = b.center.x + b.l / 2.0;
  const double ylo = b.center.y - b.w / 2.0, yhi = b.center.y + b.w / 2.0;
  const double zlo = b.center.z - b.h / 2.0, zhi = b.center.z + b.h / 2.0;
  const bool inside = a.x > xlo && a.x < xhi && a.y > ylo && a.y < yhi &&
                      a.z > zlo && a.z < zhi;
  if (!inside) {
    ClosestPoint cp;
    cp.m = {std::clamp(a.x, xlo, xhi), std::clamp(a.y, ylo, yhi),
            std::clamp(a.z, zlo, zhi)};
    const double ddx = a.x - cp.m.x, ddy = a.y - cp.m.y, ddz = a.z - cp.m.z;
    cp.distance = std::sqrt(ddx * ddx + ddy * ddy + ddz * ddz);
    return cp;
  }
  // project onto the nearest face, ties broken x then y then z
  const double to_x = std::min(a.x - xlo, xhi - a.x);
  const double to_y = std::min(a.y - ylo, yhi - a.y);
  const double to_z = std::min(a.z - zlo, zhi - a.z);
  ClosestPoint cp;
  cp.m = a;
  if (to_x <= to_y && to_x <= to_z) {
    cp.m.x = (a.x - xlo <= xhi - a.x) ? xlo : xhi;
    cp.distance = to_x;
  } else if (to_y <= to_z) {
    cp.m.y = (a.y - ylo <= yhi - a.y) ? ylo : yhi;
    cp.distance = to_y;
  } else {
    cp.m.z = (a.z - zlo <= zhi - a.z) ? zlo : zhi;
    cp.distance = to_z;
  }
  return cp;
}

OffsetField offset_field(const std::vector<Point3>& points,
                         const std::vector<Box3>& boxes, PeScheme scheme,
                         DType dtype) {
  if (points.empty() || boxes.empty())
    throw std::invalid_argument("offset_field: need at least one point and one box");
  const int K = static_cast<int>(boxes.size());
  const int N = static_cast<int>(points.size());
  OffsetField field;
  field.scheme = scheme;
  if (scheme == PeScheme::vertex) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(K) * N * 8 * 3);
    for (const Box3& b : boxes) {
      for (const Point3& a : points) {
        const auto corners = vertex_offsets(a, b);
        for (const Vec3& v : corners) {
          data.push_back(v.x);
          data.push_back(v.y);
          data.push_back(v.z);
        }
      }
    }
    field.offsets = Tensor::from_data({K, N, 8, 3}, std::move(data), false, dtype);
    return field;
  }
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(K) * N * 3);
  for (const Box3& b : boxes) {
    for (const Point3& a : points) {
      const Vec3 v = scheme == PeScheme::box_surface ? box_surface_offset(a, b)
                                                     : center_offset(a, b);
      data.push_back(v.x);
      data.push_back(v.y);
      data.push_back(v.z);
    }
  }
  field.offsets = Tensor::from_data({K, N, 3}, std::move(data), false, dtype);
  return field;
}

double box_iou(const Box3& a, const Box3& b) {
  auto overlap = [](double c1, double e1, double c2, double e2) {
    const double lo = std::max(c1 - e1 / 2.0, c2 - e2 / 2.0);
    const double hi = std::min(c1 + e1 / 2.0, c2 + e2 / 2.0);
    return std::max(hi - lo, 0.0);
  };
  const double inter = overlap(a.center.x, a.l, b.center.x, b.l) *
                       overlap(a.center.y, a.w, b.center.y, b.w) *
                       overlap(a.center.z, a.h, b.center.z, b.h);
  const double va = a.l * a.w * a.h;
  const double vb = b.l * b.w * b.h;
  const double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace vg3d
