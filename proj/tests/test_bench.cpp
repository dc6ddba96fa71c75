#include <doctest.h>

#include <sstream>

#include "vg3d/bench.hpp"

using namespace vg3d;

TEST_CASE("bench results carry analytic counts and ordered stats") {
  const BenchResult bs = bench_pe(PeScheme::box_surface, 4, 16, 8, 2, 20);
  const BenchResult vx = bench_pe(PeScheme::vertex, 4, 16, 8, 2, 20);
  CHECK(vx.mlp_applications == 8 * bs.mlp_applications);
  CHECK(vx.offset_buffer_bytes == 8 * bs.offset_buffer_bytes);
  CHECK(bs.p10_ms <= bs.median_ms);
  CHECK(bs.median_ms <= bs.p90_ms);
  CHECK(bs.reps == 20);
  CHECK(bs.warmup == 5);
  CHECK_THROWS_AS(bench_pe(PeScheme::center, 4, 16, 8, 2, 10), std::invalid_argument);
}

TEST_CASE("compare report") {
  const BenchResult bs = bench_pe(PeScheme::box_surface, 2, 8, 4, 1, 20);
  const BenchResult ct = bench_pe(PeScheme::center, 2, 8, 4, 1, 20);

  CHECK_THROWS_AS(compare_report_text({bs}), std::invalid_argument);

  const std::string text = compare_report_text({bs, ct});
  CHECK(text.find("box_surface") != std::string::npos);
  CHECK(text.find("PE-attributable") != std::string::npos);

  const std::string csv = compare_report_csv({bs, ct});
  // parse back: header + one line per scheme, constant column count
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  const auto count_fields = [](const std::string& s) {
    std::size_t n = 1;
    for (char c : s) n += c == ',';
    return n;
  };
  const std::size_t header_fields = count_fields(line);
  CHECK(header_fields == 15);
  int rows = 0;
  double baseline_ratio = -1.0;
  while (std::getline(in, line)) {
    CHECK(count_fields(line) == header_fields);
    if (line.rfind("box_surface,", 0) == 0) {
      // latency_ratio is the second-to-last field
      const auto last_comma = line.rfind(',');
      const auto prev_comma = line.rfind(',', last_comma - 1);
      baseline_ratio = std::stod(line.substr(prev_comma + 1, last_comma - prev_comma - 1));
    }
    ++rows;
  }
  CHECK(rows == 2);
  CHECK(baseline_ratio == 1.0);
}

TEST_CASE("benchmarked forward equals the library path") {
  // bench_pe uses the standard ops; spot-check that a second measurement of
  // the same scheme reproduces identical analytic fields
  const BenchResult a = bench_pe(PeScheme::center, 2, 8, 4, 1, 20);
  const BenchResult b = bench_pe(PeScheme::center, 2, 8, 4, 1, 20);
  CHECK(a.offset_buffer_bytes == b.offset_buffer_bytes);
  CHECK(a.bias_buffer_bytes == b.bias_buffer_bytes);
  CHECK(a.mlp_applications == b.mlp_applications);
}
