#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "dopf/trace.hpp"

using namespace dopf;

namespace {

ConvergenceTrace sample_trace() {
  ConvergenceTrace t;
  for (int k = 0; k < 3; ++k) {
    TraceRow r;
    r.k = k;
    r.consensus_gap = 1.0 / (k + 1);
    r.objective = 41737.8 - k;
    r.dist_to_ref = k == 0 ? std::numeric_limits<double>::quiet_NaN()
                           : 0.125 * k;
    r.violation = 1e-9 * k;
    r.primal_gap = std::pow(10.0, -k);
    r.local_ms = 12.5 + k;
    r.coord_ms = 0.75;
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace

TEST_CASE("header is the exact column contract") {
  CHECK(std::string(trace_csv_header()) ==
        "k,consensus_gap,objective,dist_to_ref,violation,primal_gap,local_ms,"
        "coord_ms");
}

TEST_CASE("round trip preserves every value bitwise") {
  ConvergenceTrace t = sample_trace();
  ConvergenceTrace u = trace_from_csv(trace_to_csv(t));
  REQUIRE(u.rows.size() == t.rows.size());
  for (size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(u.rows[i].k == t.rows[i].k);
    CHECK(u.rows[i].consensus_gap == t.rows[i].consensus_gap);
    CHECK(u.rows[i].objective == t.rows[i].objective);
    if (std::isnan(t.rows[i].dist_to_ref))
      CHECK(std::isnan(u.rows[i].dist_to_ref));
    else
      CHECK(u.rows[i].dist_to_ref == t.rows[i].dist_to_ref);
    CHECK(u.rows[i].violation == t.rows[i].violation);
    CHECK(u.rows[i].primal_gap == t.rows[i].primal_gap);
    CHECK(u.rows[i].local_ms == t.rows[i].local_ms);
    CHECK(u.rows[i].coord_ms == t.rows[i].coord_ms);
  }
}

TEST_CASE("17 significant digits survive for awkward doubles") {
  ConvergenceTrace t;
  TraceRow r;
  r.k = 0;
  r.consensus_gap = 0.1;                  // not exactly representable
  r.objective = 1.0 / 3.0;
  r.violation = 1e-308;                   // near subnormal range
  r.primal_gap = 12345678.901234567;
  t.rows.push_back(r);
  ConvergenceTrace u = trace_from_csv(trace_to_csv(t));
  CHECK(u.rows[0].consensus_gap == 0.1);
  CHECK(u.rows[0].objective == 1.0 / 3.0);
  CHECK(u.rows[0].violation == 1e-308);
  CHECK(u.rows[0].primal_gap == 12345678.901234567);
}

TEST_CASE("malformed input is rejected with a clear error") {
  CHECK_THROWS_AS(trace_from_csv("wrong,header\n"), InputError);
  std::string good_header = std::string(trace_csv_header()) + "\n";
  CHECK_THROWS_AS(trace_from_csv(good_header + "0,1,2\n"), InputError);
  // non-increasing iteration index
  std::string dup = good_header +
                    "0,1,1,1,1,1,1,1\n"
                    "0,1,1,1,1,1,1,1\n";
  CHECK_THROWS_AS(trace_from_csv(dup), InputError);
}

TEST_CASE("file round trip") {
  const char* path = "trace_roundtrip_test.csv";
  ConvergenceTrace t = sample_trace();
  write_trace_csv(t, path);
  ConvergenceTrace u = read_trace_csv(path);
  CHECK(u.rows.size() == t.rows.size());
  CHECK(u.rows[2].objective == t.rows[2].objective);
  std::remove(path);
  CHECK_THROWS_AS(read_trace_csv("no_such_file_here.csv"), InputError);
}
