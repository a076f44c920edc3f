#ifndef DOPF_TRACE_HPP
#define DOPF_TRACE_HPP

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dopf/types.hpp"

namespace dopf {

/// One convergence-trace row. dist_to_ref is NaN when no reference point was
/// supplied. step_norm and stationarity back the stall detector and are not
/// part of the CSV schema.
struct TraceRow {
  int k = 0;
  double consensus_gap = 0.0;
  double objective = 0.0;
  double dist_to_ref = std::numeric_limits<double>::quiet_NaN();
  double violation = 0.0;
  double primal_gap = 0.0;
  double local_ms = 0.0;
  double coord_ms = 0.0;
  double step_norm = 0.0;      // ||x^k - x^{k-1}||_inf (0 at k=0)
  double stationarity = 0.0;   // full-problem stationarity gap at x^k
  double objective_at_z = 0.0;
};

struct ConvergenceTrace {
  std::vector<TraceRow> rows;

  bool empty() const { return rows.empty(); }
  const TraceRow& back() const { return rows.back(); }
};

inline const char* trace_csv_header() {
  return "k,consensus_gap,objective,dist_to_ref,violation,primal_gap,local_ms,coord_ms";
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trace_to_csv(const ConvergenceTrace& t) {
  std::ostringstream os;
  os << trace_csv_header() << '\n';
  for (const TraceRow& r : t.rows) {
    os << r.k << ',' << format_double(r.consensus_gap) << ','
       << format_double(r.objective) << ',' << format_double(r.dist_to_ref)
       << ',' << format_double(r.violation) << ','
       << format_double(r.primal_gap) << ',' << format_double(r.local_ms)
       << ',' << format_double(r.coord_ms) << '\n';
  }
  return os.str();
}

inline ConvergenceTrace trace_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != trace_csv_header())
    throw InputError("trace CSV: unexpected header");
  ConvergenceTrace t;
  int expected_k = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    TraceRow r;
    double k;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &k,
                    &r.consensus_gap, &r.objective, &r.dist_to_ref,
                    &r.violation, &r.primal_gap, &r.local_ms,
                    &r.coord_ms) != 8)
      throw InputError("trace CSV: malformed row: " + line);
    r.k = static_cast<int>(k);
    if (expected_k >= 0 && r.k <= expected_k)
      throw InputError("trace CSV: iteration index not increasing");
    expected_k = r.k;
    t.rows.push_back(r);
  }
  return t;
}

inline void write_trace_csv(const ConvergenceTrace& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot open " + path + " for writing");
  os << trace_to_csv(t);
}

inline ConvergenceTrace read_trace_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return trace_from_csv(os.str());
}

}  // namespace dopf

#endif  // DOPF_TRACE_HPP
