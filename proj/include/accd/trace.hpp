#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

// Per-iteration trace rows shared by all methods and the bench CLI.
// CSV layout is versioned and fixed; reruns of a config are byte-identical
// (timing is recorded as 0 unless explicitly enabled, see bench config).

namespace accd {

struct TraceRecord {
  std::uint64_t run_id = 0;
  std::int64_t restart = 0;     // epoch / restart index, -1 if not applicable
  std::uint64_t iteration = 0;  // k within the run
  std::uint64_t coord_calls = 0;
  std::uint64_t value_calls = 0;
  double gap_or_value = 0.0;          // f - f_* when f_* is known, else f
  std::optional<double> half_dist_sq; // (1/2)||z - x_*||^2 in the run norm
  std::uint64_t elapsed_ns = 0;
};

inline constexpr const char* kTraceHeaderComment = "# accd-trace-v1";
inline constexpr const char* kTraceColumns =
    "run_id,restart,iteration,coord_calls,value_calls,gap_or_value,half_dist_sq,elapsed_ns";

// Shortest round-trip decimal form so rewrites are byte-stable.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (back == v) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[40];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      std::sscanf(shorter, "%lf", &back);
      if (back == v) return shorter;
    }
  }
  return buf;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& rows) {
  os << kTraceHeaderComment << "\n" << kTraceColumns << "\n";
  for (const auto& r : rows) {
    os << r.run_id << ',' << r.restart << ',' << r.iteration << ',' << r.coord_calls
       << ',' << r.value_calls << ',' << format_double(r.gap_or_value) << ',';
    if (r.half_dist_sq) os << format_double(*r.half_dist_sq);
    os << ',' << r.elapsed_ns << "\n";
  }
}

}  // namespace accd
