#ifndef DOPF_MATPOWER_HPP
#define DOPF_MATPOWER_HPP

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dopf/types.hpp"

namespace dopf {

/// MATPOWER case file contents, in the file's own units (MW, MVAr, per-unit
/// voltages). Conversion to per-unit powers happens in the model builder.
struct MpBus {
  int id = 0;
  int type = 1;  // 1 PQ, 2 PV, 3 slack
  double pd = 0.0, qd = 0.0;
  double gs = 0.0, bs = 0.0;
  int area = 1;
  double vm = 1.0, va = 0.0;
  double base_kv = 0.0;
  int zone = 1;
  double vmax = 1.1, vmin = 0.9;
};

struct MpGen {
  int bus = 0;
  double pg = 0.0, qg = 0.0;
  double qmax = 0.0, qmin = 0.0;
  double vg = 1.0;
  double mbase = 100.0;
  int status = 1;
  double pmax = 0.0, pmin = 0.0;
};

struct MpBranch {
  int from = 0, to = 0;
  double r = 0.0, x = 0.0, b = 0.0;
  double rate_a = 0.0;
  double tap = 0.0;    // 0 means nominal (1.0)
  double shift = 0.0;  // degrees
  int status = 1;
};

struct MpGenCost {
  int model = 2;  // 2 polynomial; 1 (piecewise linear) is rejected
  double startup = 0.0, shutdown = 0.0;
  std::vector<double> coeff;  // highest order first
};

struct MatpowerCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<MpBus> bus;
  std::vector<MpGen> gen;
  std::vector<MpBranch> branch;
  std::vector<MpGenCost> gencost;
};

namespace detail {

inline std::string strip_comment(const std::string& line) {
  auto pos = line.find('%');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline bool parse_row(const std::string& text, std::vector<double>* out) {
  out->clear();
  std::istringstream is(text);
  double v;
  while (is >> v) out->push_back(v);
  if (!is.eof()) {
    // allow trailing separators only
    is.clear();
    std::string rest;
    is >> rest;
    if (!rest.empty()) return false;
  }
  return true;
}

}  // namespace detail

/// Parse a MATPOWER case from MATLAB-ish text. Supports the subset used by
/// the standard case files: `mpc.baseMVA = <num>;`, `mpc.<field> = [ ... ];`
/// matrices with one row per line, `%` comments, and a function header.
inline MatpowerCase parse_matpower(std::istream& in, const std::string& origin) {
  MatpowerCase mpc;
  std::string line;
  int lineno = 0;
  std::string field;           // matrix currently being read, empty otherwise
  std::vector<std::vector<double>> rows;
  std::map<std::string, std::vector<std::vector<double>>> tables;

  auto fail = [&](const std::string& msg) -> void {
    throw InputError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  auto finish = [&]() {
    tables[field] = rows;
    rows.clear();
    field.clear();
  };

  while (std::getline(in, line)) {
    ++lineno;
    std::string s = detail::strip_comment(line);
    // trim
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    size_t e = s.find_last_not_of(" \t\r");
    s = s.substr(b, e - b + 1);

    if (!field.empty()) {
      bool closing = false;
      auto close = s.find(']');
      if (close != std::string::npos) {
        closing = true;
        s = s.substr(0, close);
      }
      // strip row-terminating semicolons
      for (char& c : s)
        if (c == ';' || c == ',') c = ' ';
      std::vector<double> row;
      if (!detail::parse_row(s, &row)) fail("malformed numeric row");
      if (!row.empty()) rows.push_back(row);
      if (closing) finish();
      continue;
    }

    if (s.rfind("function", 0) == 0) {
      auto eq = s.find('=');
      if (eq != std::string::npos) {
        std::string name = s.substr(eq + 1);
        size_t nb = name.find_first_not_of(" \t");
        if (nb != std::string::npos) {
          size_t ne = name.find_last_not_of(" \t;");
          mpc.name = name.substr(nb, ne - nb + 1);
        }
      }
      continue;
    }
    if (s.rfind("mpc.", 0) != 0) continue;
    auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected '=' after mpc field");
    std::string key = s.substr(4, eq - 4);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string val = s.substr(eq + 1);

    if (key == "version") continue;
    if (key == "baseMVA") {
      for (char& c : val)
        if (c == ';' || c == '\'') c = ' ';
      std::vector<double> row;
      if (!detail::parse_row(val, &row) || row.size() != 1)
        fail("baseMVA must be a single number");
      mpc.base_mva = row[0];
      continue;
    }

    auto open = val.find('[');
    if (open == std::string::npos) continue;  // unknown scalar field: ignore
    field = key;
    std::string tail = val.substr(open + 1);
    auto close = tail.find(']');
    bool closing = close != std::string::npos;
    if (closing) tail = tail.substr(0, close);
    for (char& c : tail)
      if (c == ';' || c == ',') c = ' ';
    std::vector<double> row;
    if (!detail::parse_row(tail, &row)) fail("malformed numeric row");
    if (!row.empty()) rows.push_back(row);
    if (closing) finish();
  }
  if (!field.empty())
    throw InputError(origin + ": unterminated matrix mpc." + field);

  auto need = [&](const std::string& key, size_t min_cols)
      -> const std::vector<std::vector<double>>& {
    auto it = tables.find(key);
    if (it == tables.end() || it->second.empty())
      throw InputError(origin + ": missing mpc." + key);
    for (const auto& r : it->second)
      if (r.size() < min_cols)
        throw InputError(origin + ": mpc." + key + " row has " +
                         std::to_string(r.size()) + " columns, expected >= " +
                         std::to_string(min_cols));
    return it->second;
  };

  for (const auto& r : need("bus", 13)) {
    MpBus b;
    b.id = static_cast<int>(r[0]);
    b.type = static_cast<int>(r[1]);
    b.pd = r[2];
    b.qd = r[3];
    b.gs = r[4];
    b.bs = r[5];
    b.area = static_cast<int>(r[6]);
    b.vm = r[7];
    b.va = r[8];
    b.base_kv = r[9];
    b.zone = static_cast<int>(r[10]);
    b.vmax = r[11];
    b.vmin = r[12];
    mpc.bus.push_back(b);
  }
  for (const auto& r : need("gen", 10)) {
    MpGen g;
    g.bus = static_cast<int>(r[0]);
    g.pg = r[1];
    g.qg = r[2];
    g.qmax = r[3];
    g.qmin = r[4];
    g.vg = r[5];
    g.mbase = r[6];
    g.status = static_cast<int>(r[7]);
    g.pmax = r[8];
    g.pmin = r[9];
    mpc.gen.push_back(g);
  }
  for (const auto& r : need("branch", 11)) {
    MpBranch br;
    br.from = static_cast<int>(r[0]);
    br.to = static_cast<int>(r[1]);
    br.r = r[2];
    br.x = r[3];
    br.b = r[4];
    br.rate_a = r[5];
    br.tap = r[8];
    br.shift = r[9];
    br.status = static_cast<int>(r[10]);
    mpc.branch.push_back(br);
  }
  for (const auto& r : need("gencost", 4)) {
    MpGenCost c;
    c.model = static_cast<int>(r[0]);
    if (c.model == 1)
      throw InputError(origin + ": piecewise-linear gencost is not supported");
    if (c.model != 2)
      throw InputError(origin + ": unknown gencost model " +
                       std::to_string(c.model));
    c.startup = r[1];
    c.shutdown = r[2];
    int ncoef = static_cast<int>(r[3]);
    if (static_cast<int>(r.size()) < 4 + ncoef)
      throw InputError(origin + ": gencost row shorter than its n field");
    for (int j = 0; j < ncoef; ++j) c.coeff.push_back(r[4 + j]);
    mpc.gencost.push_back(c);
  }
  if (mpc.gencost.size() != mpc.gen.size())
    throw InputError(origin + ": gencost rows (" +
                     std::to_string(mpc.gencost.size()) +
                     ") do not match gen rows (" +
                     std::to_string(mpc.gen.size()) + ")");

  // basic referential checks
  std::map<int, int> seen;
  for (const auto& b : mpc.bus) {
    if (seen.count(b.id))
      throw InputError(origin + ": duplicate bus id " + std::to_string(b.id));
    seen[b.id] = 1;
    if (b.vmin <= 0 || b.vmax < b.vmin)
      throw InputError(origin + ": bad voltage limits at bus " +
                       std::to_string(b.id));
  }
  for (const auto& g : mpc.gen)
    if (!seen.count(g.bus))
      throw InputError(origin + ": generator at unknown bus " +
                       std::to_string(g.bus));
  for (const auto& br : mpc.branch) {
    if (!seen.count(br.from) || !seen.count(br.to))
      throw InputError(origin + ": branch " + std::to_string(br.from) + "-" +
                       std::to_string(br.to) + " references unknown bus");
    if (br.status && br.r == 0.0 && br.x == 0.0)
      throw InputError(origin + ": branch " + std::to_string(br.from) + "-" +
                       std::to_string(br.to) + " has zero impedance");
  }
  if (mpc.base_mva <= 0)
    throw InputError(origin + ": baseMVA must be positive");
  return mpc;
}

inline MatpowerCase load_matpower(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open case file " + path);
  return parse_matpower(is, path);
}

}  // namespace dopf

#endif  // DOPF_MATPOWER_HPP
