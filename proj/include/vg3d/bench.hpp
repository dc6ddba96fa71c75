#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vg3d/posenc.hpp"

namespace vg3d {

struct BenchResult {
  PeScheme scheme = PeScheme::box_surface;
  int K = 0, N = 0, D = 0, H = 0;
  int warmup = 0, reps = 0;
  double median_ms = 0.0, p10_ms = 0.0, p90_ms = 0.0;
  std::int64_t mlp_applications = 0;
  std::int64_t offset_buffer_bytes = 0;    // analytic, 32-bit scalars
  std::int64_t bias_buffer_bytes = 0;      // analytic
  std::int64_t peak_transient_bytes = 0;   // analytic estimate
};

// Times offset_field + pe_bias + one ungated cross-attention forward at the
// given shapes in 32-bit mode on deterministic seeded inputs. Refuses to run
// concurrently with another measurement.
BenchResult bench_pe(PeScheme scheme, int K, int N, int D, int H, int reps);

// Aligned-text table of results with ratios against the box_surface row.
std::string compare_report_text(const std::vector<BenchResult>& results);
std::string compare_report_csv(const std::vector<BenchResult>& results);

}  // namespace vg3d
