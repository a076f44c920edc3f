#ifndef DOPF_OPF_HPP
#define DOPF_OPF_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dopf/interior_point.hpp"
#include "dopf/least_squares.hpp"
#include "dopf/matpower.hpp"
#include "dopf/types.hpp"

namespace dopf {

/// Processed network in per-unit with internal 0-based bus indices.
struct CaseData {
  double base = 100.0;
  // buses
  std::vector<int> bus_id;  // internal -> MATPOWER id
  std::map<int, int> bus_index;
  Vector pd, qd, gs, bs, vmin, vmax;
  int ref_bus = -1;
  // generators (in service)
  std::vector<int> gen_bus;  // internal bus index
  Vector pmin, pmax, qmin, qmax;
  Vector pg_init, qg_init;  // dispatch shipped with the case
  Vector c2, c1, c0;  // cost applied to per-unit power: c2*p^2 + c1*p + c0
  // branches (in service)
  std::vector<int> br_from, br_to;
  Vector gff, bff, gft, bft, gtf, btf, gtt, btt;

  int n_bus() const { return static_cast<int>(bus_id.size()); }
  int n_gen() const { return static_cast<int>(gen_bus.size()); }
  int n_branch() const { return static_cast<int>(br_from.size()); }
};

inline CaseData make_case_data(const MatpowerCase& mpc) {
  CaseData d;
  d.base = mpc.base_mva;
  const int nb = static_cast<int>(mpc.bus.size());
  d.pd.resize(nb);
  d.qd.resize(nb);
  d.gs.resize(nb);
  d.bs.resize(nb);
  d.vmin.resize(nb);
  d.vmax.resize(nb);
  for (int i = 0; i < nb; ++i) {
    const MpBus& b = mpc.bus[i];
    d.bus_id.push_back(b.id);
    d.bus_index[b.id] = i;
    d.pd[i] = b.pd / d.base;
    d.qd[i] = b.qd / d.base;
    d.gs[i] = b.gs / d.base;
    d.bs[i] = b.bs / d.base;
    d.vmin[i] = b.vmin;
    d.vmax[i] = b.vmax;
    if (b.type == 3) d.ref_bus = i;
  }
  if (d.ref_bus < 0) throw InputError("case has no reference bus (type 3)");

  for (size_t g = 0; g < mpc.gen.size(); ++g) {
    const MpGen& gen = mpc.gen[g];
    if (!gen.status) continue;
    d.gen_bus.push_back(d.bus_index.at(gen.bus));
    const int k = static_cast<int>(d.gen_bus.size());
    d.pmin.conservativeResize(k);
    d.pmax.conservativeResize(k);
    d.qmin.conservativeResize(k);
    d.qmax.conservativeResize(k);
    d.c2.conservativeResize(k);
    d.c1.conservativeResize(k);
    d.c0.conservativeResize(k);
    d.pmin[k - 1] = gen.pmin / d.base;
    d.pmax[k - 1] = gen.pmax / d.base;
    d.qmin[k - 1] = gen.qmin / d.base;
    d.qmax[k - 1] = gen.qmax / d.base;
    d.pg_init.conservativeResize(k);
    d.qg_init.conservativeResize(k);
    d.pg_init[k - 1] = gen.pg / d.base;
    d.qg_init[k - 1] = gen.qg / d.base;
    const MpGenCost& c = mpc.gencost[g];
    double a2 = 0, a1 = 0, a0 = 0;
    const int nc = static_cast<int>(c.coeff.size());
    if (nc >= 1) a0 = c.coeff[nc - 1];
    if (nc >= 2) a1 = c.coeff[nc - 2];
    if (nc >= 3) a2 = c.coeff[nc - 3];
    if (nc > 3)
      throw InputError("gencost polynomial degree > 2 is not supported");
    d.c2[k - 1] = a2;
    d.c1[k - 1] = a1;
    d.c0[k - 1] = a0;
  }

  for (const MpBranch& br : mpc.branch) {
    if (!br.status) continue;
    const double denom = br.r * br.r + br.x * br.x;
    const double g = br.r / denom, b = -br.x / denom;  // ys = g + jb
    const double tau = br.tap == 0.0 ? 1.0 : br.tap;
    const double shift = br.shift * M_PI / 180.0;
    // Yff = (ys + j b_c/2) / tau^2, Yft = -ys / (tau e^{-j shift}),
    // Ytf = -ys / (tau e^{j shift}), Ytt = ys + j b_c/2
    const double yff_g = g / (tau * tau);
    const double yff_b = (b + br.b / 2.0) / (tau * tau);
    const double cs = std::cos(shift), sn = std::sin(shift);
    // -ys * e^{j shift} / tau and -ys * e^{-j shift} / tau
    const double yft_g = (-g * cs + b * sn) / tau;
    const double yft_b = (-b * cs - g * sn) / tau;
    const double ytf_g = (-g * cs - b * sn) / tau;
    const double ytf_b = (-b * cs + g * sn) / tau;
    d.br_from.push_back(d.bus_index.at(br.from));
    d.br_to.push_back(d.bus_index.at(br.to));
    const int k = static_cast<int>(d.br_from.size());
    auto grow = [k](Vector& v) { v.conservativeResize(k); };
    grow(d.gff);
    grow(d.bff);
    grow(d.gft);
    grow(d.bft);
    grow(d.gtf);
    grow(d.btf);
    grow(d.gtt);
    grow(d.btt);
    d.gff[k - 1] = yff_g;
    d.bff[k - 1] = yff_b;
    d.gft[k - 1] = yft_g;
    d.bft[k - 1] = yft_b;
    d.gtf[k - 1] = ytf_g;
    d.btf[k - 1] = ytf_b;
    d.gtt[k - 1] = g;
    d.btt[k - 1] = b + br.b / 2.0;
  }
  return d;
}

namespace detail {

/// Sparse assembler for smooth power-flow equation systems. Each row is a
/// sum of branch-flow terms, quadratic shunt terms, linear terms and a
/// constant. A P/Q flow at end a of a branch reads
///   P = c_self Va^2 + Va Vb (G cos u + B sin u),   u = theta_a - theta_b
///   Q = c_self Va^2 + Va Vb (G sin u - B cos u)
/// with c_self = gaa for P and -baa for Q.
struct EqAssembler {
  int n = 0;
  int rows = 0;
  struct FlowTerm {
    int row;
    double sign;
    bool is_q;
    int th_a, v_a, th_b, v_b;
    double c_self, G, B;
  };
  struct QuadTerm {  // sign * coeff * x[col]^2
    int row, col;
    double coeff;
  };
  struct LinTerm {
    int row, col;
    double coeff;
  };
  std::vector<FlowTerm> flows;
  std::vector<QuadTerm> quads;
  std::vector<LinTerm> lins;
  Vector constant;

  void init(int n_, int rows_) {
    n = n_;
    rows = rows_;
    constant = Vector::Zero(rows);
  }

  // add the flow at end a of branch k of `net`, a_is_from selecting the end
  void add_flow(const CaseData& net, int k, bool a_is_from, bool is_q, int row,
                double sign, int th_a, int v_a, int th_b, int v_b) {
    FlowTerm t;
    t.row = row;
    t.sign = sign;
    t.is_q = is_q;
    t.th_a = th_a;
    t.v_a = v_a;
    t.th_b = th_b;
    t.v_b = v_b;
    if (a_is_from) {
      t.c_self = is_q ? -net.bff[k] : net.gff[k];
      t.G = net.gft[k];
      t.B = net.bft[k];
    } else {
      t.c_self = is_q ? -net.btt[k] : net.gtt[k];
      t.G = net.gtf[k];
      t.B = net.btf[k];
    }
    flows.push_back(t);
  }

  Vector eval(const Vector& x) const {
    Vector r = constant;
    for (const FlowTerm& t : flows) {
      const double va = x[t.v_a], vb = x[t.v_b];
      const double u = x[t.th_a] - x[t.th_b];
      const double T = t.is_q
                           ? t.G * std::sin(u) - t.B * std::cos(u)
                           : t.G * std::cos(u) + t.B * std::sin(u);
      r[t.row] += t.sign * (t.c_self * va * va + va * vb * T);
    }
    for (const QuadTerm& t : quads) r[t.row] += t.coeff * x[t.col] * x[t.col];
    for (const LinTerm& t : lins) r[t.row] += t.coeff * x[t.col];
    return r;
  }

  SparseMatrix jacobian(const Vector& x) const {
    std::vector<Triplet> trips;
    trips.reserve(flows.size() * 4 + quads.size() + lins.size());
    for (const FlowTerm& t : flows) {
      const double va = x[t.v_a], vb = x[t.v_b];
      const double u = x[t.th_a] - x[t.th_b];
      const double t1 = t.G * std::cos(u) + t.B * std::sin(u);
      const double t2 = t.G * std::sin(u) - t.B * std::cos(u);
      const double T = t.is_q ? t2 : t1;
      const double Tp = t.is_q ? t1 : -t2;  // dT/du
      trips.emplace_back(t.row, t.v_a, t.sign * (2.0 * t.c_self * va + vb * T));
      trips.emplace_back(t.row, t.v_b, t.sign * (va * T));
      trips.emplace_back(t.row, t.th_a, t.sign * (va * vb * Tp));
      trips.emplace_back(t.row, t.th_b, -t.sign * (va * vb * Tp));
    }
    for (const QuadTerm& t : quads)
      trips.emplace_back(t.row, t.col, 2.0 * t.coeff * x[t.col]);
    for (const LinTerm& t : lins) trips.emplace_back(t.row, t.col, t.coeff);
    SparseMatrix J(rows, n);
    J.setFromTriplets(trips.begin(), trips.end());
    return J;
  }

  SparseMatrix hessian_vlp(const Vector& x, const Vector& w) const {
    std::vector<Triplet> trips;
    auto sym = [&trips](int r, int c, double v) {
      trips.emplace_back(r, c, v);
      if (r != c) trips.emplace_back(c, r, v);
    };
    for (const FlowTerm& t : flows) {
      const double s = w[t.row] * t.sign;
      if (s == 0.0) continue;
      const double va = x[t.v_a], vb = x[t.v_b];
      const double u = x[t.th_a] - x[t.th_b];
      const double t1 = t.G * std::cos(u) + t.B * std::sin(u);
      const double t2 = t.G * std::sin(u) - t.B * std::cos(u);
      const double T = t.is_q ? t2 : t1;
      const double Tp = t.is_q ? t1 : -t2;  // dT/du; d2T/du2 = -T
      sym(t.v_a, t.v_a, s * 2.0 * t.c_self);
      sym(t.v_a, t.v_b, s * T);
      sym(t.v_a, t.th_a, s * vb * Tp);
      sym(t.v_a, t.th_b, -s * vb * Tp);
      sym(t.v_b, t.th_a, s * va * Tp);
      sym(t.v_b, t.th_b, -s * va * Tp);
      sym(t.th_a, t.th_a, -s * va * vb * T);
      sym(t.th_a, t.th_b, s * va * vb * T);
      sym(t.th_b, t.th_b, -s * va * vb * T);
    }
    for (const QuadTerm& t : quads)
      if (w[t.row] != 0.0) sym(t.col, t.col, 2.0 * w[t.row] * t.coeff);
    SparseMatrix H(n, n);
    H.setFromTriplets(trips.begin(), trips.end());
    return H;
  }

  SmoothFunction to_function() const {
    EqAssembler a = *this;
    SmoothFunction f;
    f.dim_in = n;
    f.dim_out = rows;
    f.eval = [a](const Vector& x) { return a.eval(x); };
    f.jacobian = [a](const Vector& x) { return a.jacobian(x); };
    f.hessian_vlp = [a](const Vector& x, const Vector& w) {
      return a.hessian_vlp(x, w);
    };
    return f;
  }
};

// Generation cost over a subset of generators located at given vector slots.
inline SmoothFunction cost_function(const CaseData& net,
                                    const std::vector<int>& gens, int n,
                                    int pg0) {
  // Cost polynomials act on the per-unit power directly, so objective
  // gradients stay on the same numeric scale as the rest of the model. This
  // keeps the penalty parameters comparable across the problem's blocks; it
  // rescales the reported objective but every reference value (f*, x*) is
  // computed under the same convention.
  Vector q(static_cast<int>(gens.size())), l(static_cast<int>(gens.size()));
  double c = 0.0;
  for (size_t j = 0; j < gens.size(); ++j) {
    q[static_cast<int>(j)] = 2.0 * net.c2[gens[j]];
    l[static_cast<int>(j)] = net.c1[gens[j]];
    c += net.c0[gens[j]];
  }
  SmoothFunction f;
  f.dim_in = n;
  f.dim_out = 1;
  const int ng = static_cast<int>(gens.size());
  f.eval = [q, l, c, pg0, ng](const Vector& x) {
    double v = c;
    for (int j = 0; j < ng; ++j) {
      double p = x[pg0 + j];
      v += 0.5 * q[j] * p * p + l[j] * p;
    }
    return Vector::Constant(1, v);
  };
  f.jacobian = [q, l, pg0, ng, n = f.dim_in](const Vector& x) {
    std::vector<Triplet> trips;
    for (int j = 0; j < ng; ++j)
      trips.emplace_back(0, pg0 + j, q[j] * x[pg0 + j] + l[j]);
    SparseMatrix J(1, n);
    J.setFromTriplets(trips.begin(), trips.end());
    return J;
  };
  f.hessian_vlp = [q, pg0, ng, n = f.dim_in](const Vector&, const Vector& w) {
    std::vector<Triplet> trips;
    for (int j = 0; j < ng; ++j) trips.emplace_back(pg0 + j, pg0 + j, w[0] * q[j]);
    SparseMatrix H(n, n);
    H.setFromTriplets(trips.begin(), trips.end());
    return H;
  };
  return f;
}

}  // namespace detail

/// Per-region variable layout:
/// [theta_owned | v_owned | theta_copied | v_copied | pg | qg | transfers].
/// Transfers come in groups of four per incident tie branch: (Pf, Qf, Pt, Qt).
struct OpfLayout {
  std::vector<int> owned;   // internal bus indices, ascending
  std::vector<int> copied;  // boundary buses owned elsewhere, ascending
  std::vector<int> gens;    // generator indices, ascending
  std::vector<int> ties;    // tie branch indices, ascending
  int n = 0;
  int th_owned0 = 0, v_owned0 = 0, th_copied0 = 0, v_copied0 = 0;
  int pg0 = 0, qg0 = 0, tr0 = 0;
  std::map<int, int> owned_pos, copied_pos;

  int theta_of(int bus) const {
    auto it = owned_pos.find(bus);
    if (it != owned_pos.end()) return th_owned0 + it->second;
    return th_copied0 + copied_pos.at(bus);
  }
  int v_of(int bus) const {
    auto it = owned_pos.find(bus);
    if (it != owned_pos.end()) return v_owned0 + it->second;
    return v_copied0 + copied_pos.at(bus);
  }
  int transfer0(int tie_pos) const { return tr0 + 4 * tie_pos; }
};

struct OpfModel {
  CaseData net;
  PartitionedProblem problem;
  std::vector<OpfLayout> layout;
  std::vector<int> region_id;               // external region labels
  std::vector<std::string> consensus_label;  // one per coupling row
  std::vector<int> bus_region;               // internal bus -> region slot
};

struct RegionSpec {
  int id = 0;
  std::vector<int> bus_ids;  // MATPOWER ids
};

/// Parse `region <id>: <bus ids>` lines. `%` and `#` start comments.
inline std::vector<RegionSpec> parse_partition(std::istream& in,
                                               const std::string& origin) {
  std::vector<RegionSpec> specs;
  std::string line;
  int lineno = 0;
  std::set<int> seen_ids;
  while (std::getline(in, line)) {
    ++lineno;
    auto cut = line.find_first_of("%#");
    if (cut != std::string::npos) line = line.substr(0, cut);
    std::istringstream is(line);
    std::string word;
    if (!(is >> word)) continue;
    auto fail = [&](const std::string& msg) -> void {
      throw InputError(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (word != "region") fail("expected 'region', got '" + word + "'");
    std::string idtok;
    if (!(is >> idtok)) fail("missing region id");
    bool trailing_colon = !idtok.empty() && idtok.back() == ':';
    if (trailing_colon) idtok.pop_back();
    RegionSpec spec;
    try {
      spec.id = std::stoi(idtok);
    } catch (...) {
      fail("bad region id '" + idtok + "'");
    }
    if (!trailing_colon) {
      std::string colon;
      if (!(is >> colon) || colon != ":") fail("expected ':' after region id");
    }
    int b;
    while (is >> b) spec.bus_ids.push_back(b);
    if (!is.eof()) fail("bad bus id");
    if (spec.bus_ids.empty()) fail("region " + std::to_string(spec.id) + " is empty");
    if (!seen_ids.insert(spec.id).second)
      fail("duplicate region id " + std::to_string(spec.id));
    specs.push_back(spec);
  }
  if (specs.empty()) throw InputError(origin + ": no regions found");
  std::sort(specs.begin(), specs.end(),
            [](const RegionSpec& a, const RegionSpec& b) { return a.id < b.id; });
  return specs;
}

inline std::vector<RegionSpec> load_partition(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open partition file " + path);
  return parse_partition(is, path);
}

/// Which equalities pin a tie branch's four transfer variables to the
/// branch-flow expressions.
enum class TransferDef {
  own_end,    // each region defines the P/Q pair at the end it owns
  from_side,  // the region owning the from end defines all four
  both        // both regions define all four (redundant across regions)
};

/// Assemble the affinely-coupled separable NLP for a partitioned AC-OPF.
/// Boundary buses are duplicated into neighbouring regions and each tie
/// branch gets four shared transfer variables (P and Q at both ends), so
/// every coupling row contains exactly one copy or transfer variable and the
/// stacked coupling matrix has full row rank.
inline OpfModel build_partitioned_opf(const CaseData& net,
                                      const std::vector<RegionSpec>& specs,
                                      TransferDef tdef = TransferDef::own_end) {
  OpfModel m;
  m.net = net;
  const int R = static_cast<int>(specs.size());
  m.bus_region.assign(net.n_bus(), -1);
  for (int i = 0; i < R; ++i) {
    m.region_id.push_back(specs[i].id);
    for (int id : specs[i].bus_ids) {
      auto it = net.bus_index.find(id);
      if (it == net.bus_index.end())
        throw InputError("partition references unknown bus " + std::to_string(id));
      if (m.bus_region[it->second] != -1)
        throw InputError("bus " + std::to_string(id) +
                         " assigned to more than one region");
      m.bus_region[it->second] = i;
    }
  }
  for (int b = 0; b < net.n_bus(); ++b)
    if (m.bus_region[b] < 0)
      throw InputError("bus " + std::to_string(net.bus_id[b]) +
                       " is not assigned to any region");

  // layouts
  m.layout.resize(R);
  for (int b = 0; b < net.n_bus(); ++b)
    m.layout[m.bus_region[b]].owned.push_back(b);
  for (int g = 0; g < net.n_gen(); ++g)
    m.layout[m.bus_region[net.gen_bus[g]]].gens.push_back(g);
  std::vector<std::set<int>> copied(R);
  for (int k = 0; k < net.n_branch(); ++k) {
    int rf = m.bus_region[net.br_from[k]], rt = m.bus_region[net.br_to[k]];
    if (rf == rt) continue;
    m.layout[rf].ties.push_back(k);
    m.layout[rt].ties.push_back(k);
    copied[rf].insert(net.br_to[k]);
    copied[rt].insert(net.br_from[k]);
  }
  for (int i = 0; i < R; ++i) {
    OpfLayout& L = m.layout[i];
    L.copied.assign(copied[i].begin(), copied[i].end());
    std::sort(L.ties.begin(), L.ties.end());
    const int no = static_cast<int>(L.owned.size());
    const int nc = static_cast<int>(L.copied.size());
    const int ng = static_cast<int>(L.gens.size());
    const int nt = static_cast<int>(L.ties.size());
    L.th_owned0 = 0;
    L.v_owned0 = no;
    L.th_copied0 = 2 * no;
    L.v_copied0 = 2 * no + nc;
    L.pg0 = 2 * no + 2 * nc;
    L.qg0 = L.pg0 + ng;
    L.tr0 = L.qg0 + ng;
    L.n = L.tr0 + 4 * nt;
    for (int j = 0; j < no; ++j) L.owned_pos[L.owned[j]] = j;
    for (int j = 0; j < nc; ++j) L.copied_pos[L.copied[j]] = j;
  }

  // region subproblems
  m.problem.regions.resize(R);
  for (int i = 0; i < R; ++i) {
    const OpfLayout& L = m.layout[i];
    const int no = static_cast<int>(L.owned.size());
    const int nt = static_cast<int>(L.ties.size());
    const bool has_ref = m.bus_region[net.ref_bus] == i;
    // Count transfer-defining rows. Defining a quantity in more than one
    // region makes the stacked constraint system redundant, and at points
    // violating consensus the linearizations disagree, so the default pins
    // each P/Q pair exactly once: in the region owning that end of the tie.
    int n_def = 0;
    for (int t = 0; t < nt; ++t) {
      const bool owns_from = m.bus_region[net.br_from[L.ties[t]]] == i;
      switch (tdef) {
        case TransferDef::own_end: n_def += 2; break;
        case TransferDef::from_side: n_def += owns_from ? 4 : 0; break;
        case TransferDef::both: n_def += 4; break;
      }
    }
    detail::EqAssembler eq;
    eq.init(L.n, 2 * no + n_def + (has_ref ? 1 : 0));

    // power balance at owned buses: rows 2j (P) and 2j+1 (Q)
    for (int j = 0; j < no; ++j) {
      const int b = L.owned[j];
      eq.constant[2 * j] = -net.pd[b];
      eq.constant[2 * j + 1] = -net.qd[b];
      eq.quads.push_back({2 * j, L.v_of(b), -net.gs[b]});
      eq.quads.push_back({2 * j + 1, L.v_of(b), net.bs[b]});
    }
    for (int g = 0; g < static_cast<int>(L.gens.size()); ++g) {
      const int j = L.owned_pos.at(net.gen_bus[L.gens[g]]);
      eq.lins.push_back({2 * j, L.pg0 + g, 1.0});
      eq.lins.push_back({2 * j + 1, L.qg0 + g, 1.0});
    }
    // internal branch flows
    for (int k = 0; k < net.n_branch(); ++k) {
      const int bf = net.br_from[k], bt = net.br_to[k];
      if (m.bus_region[bf] != i || m.bus_region[bt] != i) continue;
      const int jf = L.owned_pos.at(bf), jt = L.owned_pos.at(bt);
      eq.add_flow(net, k, true, false, 2 * jf, -1.0, L.theta_of(bf), L.v_of(bf),
                  L.theta_of(bt), L.v_of(bt));
      eq.add_flow(net, k, true, true, 2 * jf + 1, -1.0, L.theta_of(bf),
                  L.v_of(bf), L.theta_of(bt), L.v_of(bt));
      eq.add_flow(net, k, false, false, 2 * jt, -1.0, L.theta_of(bt),
                  L.v_of(bt), L.theta_of(bf), L.v_of(bf));
      eq.add_flow(net, k, false, true, 2 * jt + 1, -1.0, L.theta_of(bt),
                  L.v_of(bt), L.theta_of(bf), L.v_of(bf));
    }
    // tie branches: transfer variables enter the balance of the owned end,
    // and defining rows pin transfers to the branch-flow expressions
    int def_row = 2 * no;
    for (int t = 0; t < nt; ++t) {
      const int k = L.ties[t];
      const int bf = net.br_from[k], bt = net.br_to[k];
      const int tr = L.transfer0(t);  // (Pf, Qf, Pt, Qt)
      const bool owns_from = m.bus_region[bf] == i;
      const int j = L.owned_pos.at(owns_from ? bf : bt);
      eq.lins.push_back({2 * j, tr + (owns_from ? 0 : 2), -1.0});
      eq.lins.push_back({2 * j + 1, tr + (owns_from ? 1 : 3), -1.0});
      const int thf = L.theta_of(bf), vf = L.v_of(bf);
      const int tht = L.theta_of(bt), vt = L.v_of(bt);
      const bool def_from =
          tdef == TransferDef::both ||
          (tdef == TransferDef::own_end && owns_from) ||
          (tdef == TransferDef::from_side && owns_from);
      const bool def_to = tdef == TransferDef::both ||
                          (tdef == TransferDef::own_end && !owns_from) ||
                          (tdef == TransferDef::from_side && owns_from);
      if (def_from) {
        eq.lins.push_back({def_row + 0, tr + 0, 1.0});
        eq.lins.push_back({def_row + 1, tr + 1, 1.0});
        eq.add_flow(net, k, true, false, def_row + 0, -1.0, thf, vf, tht, vt);
        eq.add_flow(net, k, true, true, def_row + 1, -1.0, thf, vf, tht, vt);
        def_row += 2;
      }
      if (def_to) {
        eq.lins.push_back({def_row + 0, tr + 2, 1.0});
        eq.lins.push_back({def_row + 1, tr + 3, 1.0});
        eq.add_flow(net, k, false, false, def_row + 0, -1.0, tht, vt, thf, vf);
        eq.add_flow(net, k, false, true, def_row + 1, -1.0, tht, vt, thf, vf);
        def_row += 2;
      }
    }
    if (has_ref) eq.lins.push_back({def_row, L.theta_of(net.ref_bus), 1.0});

    Subproblem& s = m.problem.regions[i];
    s.n_xi = L.n;
    s.objective = detail::cost_function(net, L.gens, L.n, L.pg0);
    s.eq_constraints = eq.to_function();
    s.ineq_constraints = empty_function(L.n);
    s.lower = Vector::Constant(L.n, -kInf);
    s.upper = Vector::Constant(L.n, kInf);
    for (size_t j = 0; j < L.owned.size(); ++j) {
      s.lower[L.v_owned0 + static_cast<int>(j)] = net.vmin[L.owned[j]];
      s.upper[L.v_owned0 + static_cast<int>(j)] = net.vmax[L.owned[j]];
    }
    for (size_t j = 0; j < L.copied.size(); ++j) {
      s.lower[L.v_copied0 + static_cast<int>(j)] = net.vmin[L.copied[j]];
      s.upper[L.v_copied0 + static_cast<int>(j)] = net.vmax[L.copied[j]];
    }
    for (size_t g = 0; g < L.gens.size(); ++g) {
      s.lower[L.pg0 + static_cast<int>(g)] = net.pmin[L.gens[g]];
      s.upper[L.pg0 + static_cast<int>(g)] = net.pmax[L.gens[g]];
      s.lower[L.qg0 + static_cast<int>(g)] = net.qmin[L.gens[g]];
      s.upper[L.qg0 + static_cast<int>(g)] = net.qmax[L.gens[g]];
    }
    s.scaling_diag = Vector::Ones(L.n);
    s.scaling_diag.head(L.pg0).setConstant(100.0);  // theta and V entries
  }

  // consensus rows: copied-state rows sorted by (bus, copier region), then
  // four transfer rows per tie branch sorted by branch index
  struct RowRef {
    int region, col;
    double coeff;
  };
  std::vector<std::vector<RowRef>> rows;
  for (int b = 0; b < net.n_bus(); ++b) {
    const int owner = m.bus_region[b];
    for (int i = 0; i < R; ++i) {
      if (i == owner || !m.layout[i].copied_pos.count(b)) continue;
      const std::string tag = "bus " + std::to_string(net.bus_id[b]) +
                              " regions " + std::to_string(m.region_id[owner]) +
                              "/" + std::to_string(m.region_id[i]);
      rows.push_back({{owner, m.layout[owner].theta_of(b), 1.0},
                      {i, m.layout[i].theta_of(b), -1.0}});
      m.consensus_label.push_back("theta " + tag);
      rows.push_back({{owner, m.layout[owner].v_of(b), 1.0},
                      {i, m.layout[i].v_of(b), -1.0}});
      m.consensus_label.push_back("v " + tag);
    }
  }
  for (int k = 0; k < net.n_branch(); ++k) {
    const int rf = m.bus_region[net.br_from[k]];
    const int rt = m.bus_region[net.br_to[k]];
    if (rf == rt) continue;
    auto tie_pos = [&](int region) {
      const auto& t = m.layout[region].ties;
      return static_cast<int>(std::lower_bound(t.begin(), t.end(), k) -
                              t.begin());
    };
    const int trf = m.layout[rf].transfer0(tie_pos(rf));
    const int trt = m.layout[rt].transfer0(tie_pos(rt));
    const std::string tag = "branch " + std::to_string(net.bus_id[net.br_from[k]]) +
                            "-" + std::to_string(net.bus_id[net.br_to[k]]);
    const char* names[4] = {"pf", "qf", "pt", "qt"};
    for (int c = 0; c < 4; ++c) {
      rows.push_back({{rf, trf + c, 1.0}, {rt, trt + c, -1.0}});
      m.consensus_label.push_back(std::string(names[c]) + " " + tag);
    }
  }

  m.problem.n_c = static_cast<int>(rows.size());
  std::vector<std::vector<Triplet>> trips(R);
  for (int r = 0; r < static_cast<int>(rows.size()); ++r)
    for (const RowRef& ref : rows[r])
      trips[ref.region].emplace_back(r, ref.col, ref.coeff);
  for (int i = 0; i < R; ++i) {
    SparseMatrix A(m.problem.n_c, m.layout[i].n);
    A.setFromTriplets(trips[i].begin(), trips[i].end());
    m.problem.regions[i].A = A;
  }
  m.problem.validate();
  return m;
}

/// Full-network operating point: angles, voltage magnitudes, dispatch.
struct NetworkState {
  Vector theta, vm, pg, qg;
};

namespace detail {

// Flow at one end of branch k: (P, Q) as seen from `from_end`.
inline std::pair<double, double> branch_flow(const CaseData& net, int k,
                                             bool from_end, double th_a,
                                             double va, double th_b,
                                             double vb) {
  const double u = th_a - th_b;
  double cs = std::cos(u), sn = std::sin(u);
  double gaa = from_end ? net.gff[k] : net.gtt[k];
  double baa = from_end ? net.bff[k] : net.btt[k];
  double G = from_end ? net.gft[k] : net.gtf[k];
  double B = from_end ? net.bft[k] : net.btf[k];
  double p = gaa * va * va + va * vb * (G * cs + B * sn);
  double q = -baa * va * va + va * vb * (G * sn - B * cs);
  return {p, q};
}

// Central equation system on [theta | vm | pg | qg]: 2*nb balance rows plus
// the reference-angle row.
inline EqAssembler central_equations(const CaseData& net) {
  const int nb = net.n_bus(), ng = net.n_gen();
  EqAssembler eq;
  eq.init(2 * nb + 2 * ng, 2 * nb + 1);
  const int th0 = 0, v0 = nb, pg0 = 2 * nb, qg0 = 2 * nb + ng;
  for (int b = 0; b < nb; ++b) {
    eq.constant[2 * b] = -net.pd[b];
    eq.constant[2 * b + 1] = -net.qd[b];
    eq.quads.push_back({2 * b, v0 + b, -net.gs[b]});
    eq.quads.push_back({2 * b + 1, v0 + b, net.bs[b]});
  }
  for (int g = 0; g < ng; ++g) {
    eq.lins.push_back({2 * net.gen_bus[g], pg0 + g, 1.0});
    eq.lins.push_back({2 * net.gen_bus[g] + 1, qg0 + g, 1.0});
  }
  for (int k = 0; k < net.n_branch(); ++k) {
    const int bf = net.br_from[k], bt = net.br_to[k];
    eq.add_flow(net, k, true, false, 2 * bf, -1.0, th0 + bf, v0 + bf, th0 + bt,
                v0 + bt);
    eq.add_flow(net, k, true, true, 2 * bf + 1, -1.0, th0 + bf, v0 + bf,
                th0 + bt, v0 + bt);
    eq.add_flow(net, k, false, false, 2 * bt, -1.0, th0 + bt, v0 + bt, th0 + bf,
                v0 + bf);
    eq.add_flow(net, k, false, true, 2 * bt + 1, -1.0, th0 + bt, v0 + bt,
                th0 + bf, v0 + bf);
  }
  eq.lins.push_back({2 * nb, th0 + net.ref_bus, 1.0});
  return eq;
}

inline void central_bounds(const CaseData& net, Vector* lower, Vector* upper) {
  const int nb = net.n_bus(), ng = net.n_gen();
  *lower = Vector::Constant(2 * nb + 2 * ng, -kInf);
  *upper = Vector::Constant(2 * nb + 2 * ng, kInf);
  for (int b = 0; b < nb; ++b) {
    (*lower)[nb + b] = net.vmin[b];
    (*upper)[nb + b] = net.vmax[b];
  }
  for (int g = 0; g < ng; ++g) {
    (*lower)[2 * nb + g] = net.pmin[g];
    (*upper)[2 * nb + g] = net.pmax[g];
    (*lower)[2 * nb + ng + g] = net.qmin[g];
    (*upper)[2 * nb + ng + g] = net.qmax[g];
  }
}

inline Vector central_start(const CaseData& net) {
  const int nb = net.n_bus(), ng = net.n_gen();
  Vector x = Vector::Zero(2 * nb + 2 * ng);
  for (int b = 0; b < nb; ++b)
    x[nb + b] = std::clamp(1.0, net.vmin[b], net.vmax[b]);
  for (int g = 0; g < ng; ++g) {
    x[2 * nb + g] = 0.5 * (net.pmin[g] + net.pmax[g]);
    x[2 * nb + ng + g] = 0.5 * (net.qmin[g] + net.qmax[g]);
  }
  return x;
}

inline NetworkState unpack_central(const CaseData& net, const Vector& x) {
  const int nb = net.n_bus(), ng = net.n_gen();
  NetworkState st;
  st.theta = x.head(nb);
  st.vm = x.segment(nb, nb);
  st.pg = x.segment(2 * nb, ng);
  st.qg = x.segment(2 * nb + ng, ng);
  return st;
}

}  // namespace detail

/// Lift a full-network state into the per-region vectors: copies take the
/// owner's values and transfers take the exact branch-flow values, so a
/// power-flow solution lifts to a consensus-feasible point.
inline std::vector<Vector> scatter_state(const OpfModel& m,
                                         const NetworkState& st) {
  std::vector<Vector> x;
  for (size_t i = 0; i < m.layout.size(); ++i) {
    const OpfLayout& L = m.layout[i];
    Vector xi = Vector::Zero(L.n);
    for (size_t j = 0; j < L.owned.size(); ++j) {
      xi[L.th_owned0 + static_cast<int>(j)] = st.theta[L.owned[j]];
      xi[L.v_owned0 + static_cast<int>(j)] = st.vm[L.owned[j]];
    }
    for (size_t j = 0; j < L.copied.size(); ++j) {
      xi[L.th_copied0 + static_cast<int>(j)] = st.theta[L.copied[j]];
      xi[L.v_copied0 + static_cast<int>(j)] = st.vm[L.copied[j]];
    }
    for (size_t g = 0; g < L.gens.size(); ++g) {
      xi[L.pg0 + static_cast<int>(g)] = st.pg[L.gens[g]];
      xi[L.qg0 + static_cast<int>(g)] = st.qg[L.gens[g]];
    }
    for (size_t t = 0; t < L.ties.size(); ++t) {
      const int k = L.ties[t];
      const int bf = m.net.br_from[k], bt = m.net.br_to[k];
      auto [pf, qf] = detail::branch_flow(m.net, k, true, st.theta[bf],
                                          st.vm[bf], st.theta[bt], st.vm[bt]);
      auto [pt, qt] = detail::branch_flow(m.net, k, false, st.theta[bt],
                                          st.vm[bt], st.theta[bf], st.vm[bf]);
      const int tr = L.transfer0(static_cast<int>(t));
      xi[tr + 0] = pf;
      xi[tr + 1] = qf;
      xi[tr + 2] = pt;
      xi[tr + 3] = qt;
    }
    x.push_back(xi);
  }
  return x;
}

/// Read the owned entries back out of per-region vectors.
inline NetworkState gather_state(const OpfModel& m,
                                 const std::vector<Vector>& x) {
  NetworkState st;
  st.theta = Vector::Zero(m.net.n_bus());
  st.vm = Vector::Zero(m.net.n_bus());
  st.pg = Vector::Zero(m.net.n_gen());
  st.qg = Vector::Zero(m.net.n_gen());
  for (size_t i = 0; i < m.layout.size(); ++i) {
    const OpfLayout& L = m.layout[i];
    for (size_t j = 0; j < L.owned.size(); ++j) {
      st.theta[L.owned[j]] = x[i][L.th_owned0 + static_cast<int>(j)];
      st.vm[L.owned[j]] = x[i][L.v_owned0 + static_cast<int>(j)];
    }
    for (size_t g = 0; g < L.gens.size(); ++g) {
      st.pg[L.gens[g]] = x[i][L.pg0 + static_cast<int>(g)];
      st.qg[L.gens[g]] = x[i][L.qg0 + static_cast<int>(g)];
    }
  }
  return st;
}

/// Flat start: zero angles, unit voltage magnitudes clamped into their
/// bounds, generators at the dispatch shipped with the case (clamped).
inline NetworkState flat_init(const CaseData& net) {
  const int nb = net.n_bus(), ng = net.n_gen();
  NetworkState st;
  st.theta = Vector::Zero(nb);
  st.vm = Vector(nb);
  for (int b = 0; b < nb; ++b)
    st.vm[b] = std::clamp(1.0, net.vmin[b], net.vmax[b]);
  st.pg = Vector(ng);
  st.qg = Vector(ng);
  for (int g = 0; g < ng; ++g) {
    st.pg[g] = std::clamp(net.pg_init[g], net.pmin[g], net.pmax[g]);
    st.qg[g] = std::clamp(net.qg_init[g], net.qmin[g], net.qmax[g]);
  }
  return st;
}

/// Feasible starting point: least-squares power flow over the whole network
/// within the variable bounds, then lifted to the regions. Throws when no
/// balanced operating point is found.
inline NetworkState feasible_init(const CaseData& net) {
  detail::EqAssembler eq = detail::central_equations(net);
  Vector lower, upper;
  detail::central_bounds(net, &lower, &upper);
  auto res = solve_constrained_least_squares(eq.to_function(), lower, upper,
                                             detail::central_start(net), 1e-10);
  if (!res.converged)
    throw EvaluationError("feasible_init: power-flow residual stalled at " +
                          std::to_string(res.residual_inf));
  return detail::unpack_central(net, res.x);
}

struct CentralSolveResult {
  NetworkState state;
  double objective = 0.0;
  SolveStatus status = SolveStatus::max_iter;
  int iterations = 0;
};

/// Reference solution: the same OPF solved without any decomposition.
inline CentralSolveResult centralized_solve(const CaseData& net,
                                            const IpOptions& opt = {}) {
  const int nb = net.n_bus(), ng = net.n_gen();
  std::vector<int> all_gens(ng);
  for (int g = 0; g < ng; ++g) all_gens[g] = g;
  NlpProblem p;
  p.n = 2 * nb + 2 * ng;
  p.objective = detail::cost_function(net, all_gens, p.n, 2 * nb);
  p.eq = detail::central_equations(net).to_function();
  p.ineq = empty_function(p.n);
  detail::central_bounds(net, &p.lower, &p.upper);

  Vector start = detail::central_start(net);
  IpResult r = solve_nlp(p, start, opt);
  CentralSolveResult out;
  out.state = detail::unpack_central(net, r.x);
  out.objective = r.objective;
  out.status = r.status;
  out.iterations = r.iterations;
  return out;
}

/// Total generation cost of a network state, in cost units.
inline double dispatch_cost(const CaseData& net, const NetworkState& st) {
  double f = 0.0;
  for (int g = 0; g < net.n_gen(); ++g) {
    double p = st.pg[g];
    f += net.c2[g] * p * p + net.c1[g] * p + net.c0[g];
  }
  return f;
}

/// Max power-balance mismatch of a network state, per unit.
inline double power_flow_mismatch(const CaseData& net, const NetworkState& st) {
  detail::EqAssembler eq = detail::central_equations(net);
  Vector x(2 * net.n_bus() + 2 * net.n_gen());
  x << st.theta, st.vm, st.pg, st.qg;
  Vector r = eq.eval(x);
  return r.head(2 * net.n_bus()).lpNorm<Eigen::Infinity>();
}

}  // namespace dopf

#endif  // DOPF_OPF_HPP
