#include "vg3d/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "vg3d/attention.hpp"
#include "vg3d/geometry.hpp"
#include "vg3d/rng.hpp"

#ifdef __linux__
#include <pthread.h>
#include <sched.h>
#endif

namespace vg3d {

namespace {

std::atomic<bool> g_measuring{false};

void pin_to_one_cpu() {
#ifdef __linux__
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(0, &set);
  pthread_setaffinity_np(pthread_self(), sizeof(set), &set);  // best effort
#endif
}

double percentile(std::vector<double> sorted, double q) {
  const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

BenchResult bench_pe(PeScheme scheme, int K, int N, int D, int H, int reps) {
  if (K <= 0 || N <= 0 || D <= 0 || H <= 0)
    throw std::invalid_argument("bench_pe: shapes must be positive");
  if (reps < 20) throw std::invalid_argument("bench_pe: need at least 20 reps");
  if (g_measuring.exchange(true))
    throw std::runtime_error("bench_pe: another measurement is running");
  pin_to_one_cpu();

  BenchResult result;
  try {
    Rng rng(0xbe9c4ULL + static_cast<std::uint64_t>(scheme));
    std::vector<Point3> points(static_cast<std::size_t>(N));
    for (Point3& p : points)
      p = {rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0), rng.uniform(0.0, 3.0)};
    std::vector<Box3> boxes(static_cast<std::size_t>(K));
    for (Box3& b : boxes) {
      b.center = {rng.uniform(1.0, 7.0), rng.uniform(1.0, 7.0), rng.uniform(0.3, 2.0)};
      b.l = rng.uniform(0.3, 2.0);
      b.w = rng.uniform(0.3, 2.0);
      b.h = rng.uniform(0.3, 2.0);
    }

    Rng prng(0x9a2a3ULL);
    PosEncConfig cfg = posenc_init(scheme, H, D, prng, FKind::signed_log, 0.1,
                                   DType::f32);
    for (MlpParams& m : cfg.mlps) {
      m.w1.raw()->requires_grad = false;
      m.b1.raw()->requires_grad = false;
      m.w2.raw()->requires_grad = false;
      m.b2.raw()->requires_grad = false;
    }

    auto rand_mat = [&](int r, int c) {
      std::vector<double> vals(static_cast<std::size_t>(r) * c);
      for (double& v : vals) v = prng.uniform(-1.0, 1.0);
      return Tensor::from_data({r, c}, std::move(vals), false, DType::f32);
    };
    Tensor Q = rand_mat(K, D), Kv = rand_mat(N, D), Vv = rand_mat(N, D);
    Tensor w_out = rand_mat(D, D);
    Tensor b_out = Tensor::zeros({D}, false, DType::f32);

    const int warmup = 5;
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(reps));
    for (int r = 0; r < warmup + reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      OffsetField field = offset_field(points, boxes, scheme, DType::f32);
      AttnBias bias = pe_bias(field, cfg);
      AttnOutput out = gated_cross_attention(Q, Kv, Vv, bias, std::nullopt,
                                             GateWiring::none, H, w_out, b_out);
      const auto t1 = std::chrono::steady_clock::now();
      (void)out;
      if (r >= warmup)
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());

    result.scheme = scheme;
    result.K = K;
    result.N = N;
    result.D = D;
    result.H = H;
    result.warmup = warmup;
    result.reps = reps;
    result.median_ms = percentile(times, 0.5);
    result.p10_ms = percentile(times, 0.1);
    result.p90_ms = percentile(times, 0.9);

    const PeCost cost = pe_cost_model(scheme, K, N, D, H);
    const std::int64_t scalar_bytes = 4;  // 32-bit mode
    const std::int64_t elems = static_cast<std::int64_t>(K) * N;
    const std::int64_t offset_scalars =
        scheme == PeScheme::vertex ? elems * 8 * 3 : elems * 3;
    result.mlp_applications = cost.mlp_applications;
    result.offset_buffer_bytes = offset_scalars * scalar_bytes;
    result.bias_buffer_bytes = elems * H * scalar_bytes;
    // largest transient is the MLP hidden activation over all K*N elements
    result.peak_transient_bytes =
        (offset_scalars + elems * static_cast<std::int64_t>(D) + elems * H) *
        scalar_bytes;
  } catch (...) {
    g_measuring.store(false);
    throw;
  }
  g_measuring.store(false);
  return result;
}

namespace {

const BenchResult* find_baseline(const std::vector<BenchResult>& results) {
  for (const BenchResult& r : results)
    if (r.scheme == PeScheme::box_surface) return &r;
  return &results.front();
}

}  // namespace

std::string compare_report_text(const std::vector<BenchResult>& results) {
  if (results.size() < 2)
    throw std::invalid_argument("compare_report: need at least two schemes");
  const BenchResult* base = find_baseline(results);
  std::ostringstream os;
  os << "# position-encoding cost comparison (CPU, 32-bit, single thread)\n";
  os << "# buffer bytes cover PE-attributable buffers only\n";
  os << std::left << std::setw(14) << "scheme" << std::right << std::setw(12)
     << "median_ms" << std::setw(10) << "p10_ms" << std::setw(10) << "p90_ms"
     << std::setw(16) << "offset_bytes" << std::setw(14) << "bias_bytes"
     << std::setw(12) << "lat_ratio" << std::setw(12) << "mem_ratio" << "\n";
  for (const BenchResult& r : results) {
    os << std::left << std::setw(14) << pe_scheme_name(r.scheme) << std::right
       << std::fixed << std::setprecision(3) << std::setw(12) << r.median_ms
       << std::setw(10) << r.p10_ms << std::setw(10) << r.p90_ms
       << std::setw(16) << r.offset_buffer_bytes << std::setw(14)
       << r.bias_buffer_bytes << std::setw(12) << std::setprecision(3)
       << r.median_ms / base->median_ms << std::setw(12)
       << static_cast<double>(r.offset_buffer_bytes) /
              static_cast<double>(base->offset_buffer_bytes)
       << "\n";
  }
  return os.str();
}

std::string compare_report_csv(const std::vector<BenchResult>& results) {
  if (results.size() < 2)
    throw std::invalid_argument("compare_report: need at least two schemes");
  const BenchResult* base = find_baseline(results);
  std::ostringstream os;
  os << "scheme,K,N,D,H,reps,median_ms,p10_ms,p90_ms,mlp_applications,"
        "offset_buffer_bytes,bias_buffer_bytes,peak_transient_bytes,"
        "latency_ratio,offset_bytes_ratio\n";
  for (const BenchResult& r : results) {
    os << pe_scheme_name(r.scheme) << "," << r.K << "," << r.N << "," << r.D
       << "," << r.H << "," << r.reps << "," << r.median_ms << "," << r.p10_ms
       << "," << r.p90_ms << "," << r.mlp_applications << ","
       << r.offset_buffer_bytes << "," << r.bias_buffer_bytes << ","
       << r.peak_transient_bytes << "," << r.median_ms / base->median_ms << ","
       << static_cast<double>(r.offset_buffer_bytes) /
              static_cast<double>(base->offset_buffer_bytes)
       << "\n";
  }
  return os.str();
}

}  // namespace vg3d
