#pragma once

// Sublinear expectations over finite measure families: the G-expectation and
// its conditional version, pasting, martingale classification, and the family
// norms.

#include <array>
#include <map>

#include "martnorm/decomposition.hpp"

namespace martnorm {

/// A finite family of measures on one model. The rectangular kind lists a
/// choice set of child-probability rows per internal node; its members are all
/// node-wise selections, so it is closed under pasting.
struct MeasureFamily {
  enum class Kind { explicit_list, rectangular };
  Kind kind = Kind::explicit_list;
  std::vector<Measure> measures;
  std::vector<std::string> names;
  /// choices[v][j] is the j-th row for internal node v (child_count entries).
  std::vector<std::vector<std::vector<double>>> choices;

  static MeasureFamily explicit_family(const FiltrationModel& m, std::vector<Measure> ms,
                                       std::vector<std::string> names = {}) {
    if (ms.empty()) throw Error("measure family is empty");
    for (const auto& q : ms) check_measure(m, q);
    if (names.empty())
      for (std::size_t i = 0; i < ms.size(); ++i) names.push_back("P" + std::to_string(i));
    if (names.size() != ms.size()) throw Error("measure names do not match measures");
    MeasureFamily f;
    f.kind = Kind::explicit_list;
    f.measures = std::move(ms);
    f.names = std::move(names);
    return f;
  }

  static MeasureFamily singleton(const FiltrationModel& m, const Measure& q) { return explicit_family(m, {q}); }

  /// Nodes without an entry in `choices` (empty vector) get the reference row.
  static MeasureFamily rectangular(const FiltrationModel& m, std::vector<std::vector<std::vector<double>>> choices) {
    choices.resize(m.node_count());
    for (NodeId v = 0; v < m.node_count(); ++v) {
      const std::size_t b = m.child_count(v);
      if (b == 0) {
        if (!choices[v].empty()) throw Error("choice set given for terminal node " + m.label(v));
        continue;
      }
      if (choices[v].empty()) {
        std::vector<double> row(b);
        for (std::size_t i = 0; i < b; ++i) row[i] = m.reference()[m.first_child(v) + i];
        choices[v].push_back(std::move(row));
      }
      for (const auto& row : choices[v]) {
        if (row.size() != b) throw Error("choice row at node " + m.label(v) + " has wrong length");
        double s = 0.0;
        for (double p : row) {
          if (!(p >= 0.0)) throw Error("negative probability in choice set at node " + m.label(v));
          s += p;
        }
        if (std::abs(s - 1.0) > kProbTolerance)
          throw Error("choice row at node " + m.label(v) + " sums to " + detail::fmt_double(s));
      }
    }
    MeasureFamily f;
    f.kind = Kind::rectangular;
    f.choices = std::move(choices);
    return f;
  }

  bool is_rectangular() const { return kind == Kind::rectangular; }
};

/// Number of members, saturated at cap + 1.
inline std::size_t member_count(const FiltrationModel& m, const MeasureFamily& f, std::size_t cap = enumeration_cap()) {
  if (!f.is_rectangular()) return f.measures.size();
  std::size_t n = 1;
  for (NodeId v = 0; v < m.first_leaf(); ++v) n = detail::sat_mul(n, f.choices[v].size(), cap);
  return n;
}

inline Measure selection_measure(const FiltrationModel& m, const MeasureFamily& f, const std::vector<std::size_t>& sel) {
  std::vector<double> p(m.node_count(), 0.0);
  p[0] = 1.0;
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    const auto& row = f.choices[v][sel[v]];
    for (std::size_t i = 0; i < row.size(); ++i) p[m.first_child(v) + i] = row[i];
  }
  return Measure(std::move(p));
}

struct FamilyMember {
  std::string name;
  Measure measure;
};

/// All members; rectangular families are enumerated selection by selection.
inline std::vector<FamilyMember> family_members(const FiltrationModel& m, const MeasureFamily& f,
                                                std::size_t cap = enumeration_cap()) {
  std::vector<FamilyMember> out;
  if (!f.is_rectangular()) {
    for (std::size_t i = 0; i < f.measures.size(); ++i) out.push_back({f.names[i], f.measures[i]});
    return out;
  }
  const std::size_t count = member_count(m, f, cap);
  if (count > cap)
    throw Error("selection count exceeds cap " + std::to_string(cap) +
                "; supply an explicit list of extreme measures instead");
  std::vector<std::size_t> sel(m.first_leaf(), 0);
  for (std::size_t k = 0; k < count; ++k) {
    std::string name = "sel:";
    for (NodeId v = 0; v < m.first_leaf(); ++v) name += std::to_string(sel[v]) + (v + 1 < m.first_leaf() ? "," : "");
    out.push_back({std::move(name), selection_measure(m, f, sel)});
    for (NodeId v = 0; v < m.first_leaf(); ++v) {
      if (++sel[v] < f.choices[v].size()) break;
      sel[v] = 0;
    }
  }
  return out;
}

/// Membership: explicit lists compare edge by edge, rectangular families row by row.
inline bool family_contains(const FiltrationModel& m, const MeasureFamily& f, const Measure& q, double tol = kProbTolerance) {
  if (q.size() != m.node_count()) return false;
  if (!f.is_rectangular()) {
    for (const auto& p : f.measures) {
      bool same = true;
      for (NodeId v = 0; v < m.node_count() && same; ++v) same = std::abs(p[v] - q[v]) <= tol;
      if (same) return true;
    }
    return false;
  }
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    bool found = false;
    for (const auto& row : f.choices[v]) {
      bool same = true;
      for (std::size_t i = 0; i < row.size() && same; ++i) same = std::abs(row[i] - q[m.first_child(v) + i]) <= tol;
      if (same) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

/// Rectangular dynamic programme: W = x at and below the cut, and above it the
/// maximum over the node's choice set of the child-weighted value.
inline std::vector<double> g_stopped_values(const FiltrationModel& m, const MeasureFamily& f, std::span<const double> x,
                                            const StoppingTime& at) {
  if (!f.is_rectangular()) throw Error("dynamic programme needs a rectangular family");
  std::vector<double> w(m.node_count(), 0.0);
  for (NodeId v = m.node_count(); v-- > 0;) {
    const NodeId a = at.anchor(v);
    if (a != kNoNode) {
      w[v] = x[a];
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& row : f.choices[v]) {
      double s = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) s += row[i] * w[m.first_child(v) + i];
      best = std::max(best, s);
    }
    w[v] = best;
  }
  return w;
}

/// G-expectation of a terminal variable (leaf values of xi are read).
inline double g_expectation(const FiltrationModel& m, const MeasureFamily& f, const AdaptedProcess& xi) {
  const auto term = StoppingTime::terminal(m);
  if (f.is_rectangular()) return g_stopped_values(m, f, xi.span(), term)[0];
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& q : f.measures) best = std::max(best, expectation(m, q, xi, term));
  return best;
}

/// Leaf-value version for objectives.
inline double g_leaf_expectation(const FiltrationModel& m, const MeasureFamily& f, std::span<const double> leaf) {
  AdaptedProcess x(m.node_count());
  for (std::size_t i = 0; i < leaf.size(); ++i) x[m.first_leaf() + i] = leaf[i];
  return g_expectation(m, f, x);
}

/// Q agrees with P on F_tau: equal probabilities of reaching each cut node.
inline bool agrees_on(const FiltrationModel& m, const std::vector<double>& reach_p, const std::vector<double>& reach_q,
                      const StoppingTime& tau, double tol = kProbTolerance) {
  (void)m;
  for (NodeId u : tau.nodes())
    if (std::abs(reach_p[u] - reach_q[u]) > tol) return false;
  return true;
}

/// E^{G,P}_tau[xi]. Rectangular: the dynamic-programme value at the cut node,
/// which does not depend on P. Explicit: the node-wise maximum over members
/// agreeing with P on F_tau. Strictly above the cut the value is the
/// P-conditional expectation of the cut values.
inline AdaptedProcess conditional_g_expectation(const FiltrationModel& m, const MeasureFamily& f,
                                                const AdaptedProcess& xi, const StoppingTime& at, const Measure& base) {
  if (!family_contains(m, f, base)) throw Error("base measure is not in the family");
  const auto term = StoppingTime::terminal(m);
  std::vector<double> cut_value(m.node_count(), 0.0);
  if (f.is_rectangular()) {
    cut_value = g_stopped_values(m, f, xi.span(), term);
  } else {
    const auto rp = reach_probabilities(m, base);
    std::fill(cut_value.begin(), cut_value.end(), -std::numeric_limits<double>::infinity());
    for (const auto& q : f.measures) {
      if (!agrees_on(m, rp, reach_probabilities(m, q), at)) continue;
      const auto w = stopped_values(m, q, xi.span(), term);
      for (NodeId u : at.nodes()) cut_value[u] = std::max(cut_value[u], w[u]);
    }
  }
  AdaptedProcess atv(m.node_count());
  for (NodeId u : at.nodes()) atv[u] = cut_value[u];
  const auto w = stopped_values(m, base, atv.span(), at);
  AdaptedProcess r(m.node_count());
  for (NodeId v = 0; v < m.node_count(); ++v) {
    const NodeId a = at.anchor(v);
    r[v] = (a == kNoNode) ? w[v] : cut_value[a];
  }
  return r;
}

/// P1 below the cut nodes in `event`, P2 below the rest; P1 and P2 must agree
/// on F_tau.
inline Measure paste(const FiltrationModel& m, const Measure& p1, const Measure& p2, const StoppingTime& at,
                     const std::vector<NodeId>& event) {
  if (!agrees_on(m, reach_probabilities(m, p1), reach_probabilities(m, p2), at)) throw Error("not in P(tau, P)");
  std::vector<char> in_event(m.node_count(), 0);
  for (NodeId u : event) {
    if (u >= m.node_count() || at.anchor(u) != u) throw Error("event node " + std::to_string(u) + " is not on the cut");
    in_event[u] = 1;
  }
  std::vector<double> p(m.node_count());
  p[0] = 1.0;
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const NodeId a = at.anchor(m.parent(v));
    p[v] = (a == kNoNode || in_event[a]) ? p1[v] : p2[v];
  }
  return Measure(std::move(p));
}

enum class GLabel { p_martingale, p_super, p_sub, g_martingale, g_super, g_sub };
inline constexpr std::array<GLabel, 6> kAllLabels{GLabel::p_martingale, GLabel::p_super, GLabel::p_sub,
                                                  GLabel::g_martingale, GLabel::g_super, GLabel::g_sub};

inline const char* to_string(GLabel l) {
  switch (l) {
    case GLabel::p_martingale: return "P-martingale";
    case GLabel::p_super: return "P-supermartingale";
    case GLabel::p_sub: return "P-submartingale";
    case GLabel::g_martingale: return "G-martingale";
    case GLabel::g_super: return "G-supermartingale";
    case GLabel::g_sub: return "G-submartingale";
  }
  return "?";
}

struct ClassificationWitness {
  std::string measure;
  NodeId node = kNoNode;
  double gap = 0.0;  // conditional value minus Y at the node
};

struct GClassification {
  std::array<bool, 6> flags{};
  std::array<std::optional<ClassificationWitness>, 6> witness;

  bool has(GLabel l) const { return flags[static_cast<std::size_t>(l)]; }
};

/// Implication violations among the flags; empty when consistent.
inline std::vector<std::string> implication_violations(const GClassification& c) {
  std::vector<std::string> bad;
  auto need = [&](GLabel a, GLabel b) {
    if (c.has(a) && !c.has(b)) bad.push_back(std::string(to_string(a)) + " without " + to_string(b));
  };
  need(GLabel::g_super, GLabel::p_super);
  need(GLabel::p_sub, GLabel::g_sub);
  need(GLabel::g_martingale, GLabel::p_super);
  need(GLabel::g_martingale, GLabel::g_super);
  need(GLabel::g_martingale, GLabel::g_sub);
  need(GLabel::p_martingale, GLabel::p_super);
  need(GLabel::p_martingale, GLabel::p_sub);
  if (c.has(GLabel::g_super) && c.has(GLabel::g_sub) && !c.has(GLabel::g_martingale))
    bad.push_back("G-super and G-sub without G-martingale");
  if (c.has(GLabel::p_super) && c.has(GLabel::p_sub) && !c.has(GLabel::p_martingale))
    bad.push_back("P-super and P-sub without P-martingale");
  return bad;
}

namespace detail {

struct LabelTracker {
  double tol;
  GClassification c;
  std::array<double, 6> worst{};

  explicit LabelTracker(double t) : tol(t) { c.flags.fill(true); }

  // gap = conditional value - Y; super needs gap <= 0, sub needs gap >= 0
  void observe(bool g_side, const std::string& measure, NodeId v, double gap) {
    const auto super = g_side ? GLabel::g_super : GLabel::p_super;
    const auto sub = g_side ? GLabel::g_sub : GLabel::p_sub;
    const auto mart = g_side ? GLabel::g_martingale : GLabel::p_martingale;
    if (gap > tol) fail(super, measure, v, gap), fail(mart, measure, v, gap);
    if (gap < -tol) fail(sub, measure, v, gap), fail(mart, measure, v, gap);
  }
  void fail(GLabel l, const std::string& measure, NodeId v, double gap) {
    const auto i = static_cast<std::size_t>(l);
    c.flags[i] = false;
    if (std::abs(gap) > worst[i]) {
      worst[i] = std::abs(gap);
      c.witness[i] = ClassificationWitness{measure, v, gap};
    }
  }
};

inline double classification_tolerance(const AdaptedProcess& y) {
  double s = 0.0;
  for (double x : y.values()) s = std::max(s, std::abs(x));
  return 1e-12 * (1.0 + s);
}

}  // namespace detail

/// One-step checks at every node reachable with positive probability. For a
/// rectangular family the P-labels are checked per choice row and the G-labels
/// against the row maximum.
inline GClassification classify(const FiltrationModel& m, const MeasureFamily& f, const AdaptedProcess& y) {
  detail::LabelTracker t(detail::classification_tolerance(y));
  if (f.is_rectangular()) {
    std::vector<char> reachable(m.node_count(), 0);
    reachable[0] = 1;
    for (NodeId v = 0; v < m.first_leaf(); ++v) {
      if (!reachable[v]) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < f.choices[v].size(); ++j) {
        const auto& row = f.choices[v][j];
        double s = 0.0;
        for (std::size_t i = 0; i < row.size(); ++i) {
          s += row[i] * y[m.first_child(v) + i];
          if (row[i] > 0.0) reachable[m.first_child(v) + i] = 1;
        }
        best = std::max(best, s);
        t.observe(false, "choice " + std::to_string(j) + " at " + m.label(v), v, s - y[v]);
      }
      t.observe(true, "row maximum at " + m.label(v), v, best - y[v]);
    }
    return t.c;
  }
  std::vector<std::vector<double>> reach;
  for (const auto& q : f.measures) reach.push_back(reach_probabilities(m, q));
  for (std::size_t i = 0; i < f.measures.size(); ++i) {
    const auto& q = f.measures[i];
    for (int k = 0; k < m.horizon(); ++k) {
      const auto level = StoppingTime::at_level(m, k);
      std::vector<std::size_t> agreeing;
      for (std::size_t j = 0; j < f.measures.size(); ++j)
        if (agrees_on(m, reach[i], reach[j], level)) agreeing.push_back(j);
      for (NodeId v = m.level_begin(k); v < m.level_end(k); ++v) {
        if (!(reach[i][v] > 0.0)) continue;
        const double mean = one_step_mean(m, q, y.span(), v);
        t.observe(false, f.names[i], v, mean - y[v]);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j : agreeing) best = std::max(best, one_step_mean(m, f.measures[j], y.span(), v));
        t.observe(true, f.names[i], v, best - y[v]);
      }
    }
  }
  return t.c;
}

struct FamilyNormReport {
  double value_sq = 0.0;
  std::string attaining_member;
  bool lower_bound = false;
};

/// ||Y||_P^2 over the family: the largest single-measure norm.
inline FamilyNormReport norm_cp(const FiltrationModel& m, const MeasureFamily& f, const AdaptedProcess& y,
                                Strategy strategy, std::size_t max_segments = 0) {
  FamilyNormReport r;
  r.value_sq = -1.0;
  for (const auto& member : family_members(m, f)) {
    const auto rep = norm_p(m, member.measure, y, strategy, max_segments);
    if (rep.norm_p_sq > r.value_sq) {
      r.value_sq = rep.norm_p_sq;
      r.attaining_member = member.name;
    }
    r.lower_bound = r.lower_bound || rep.lower_bound;
  }
  return r;
}

/// Partition objective for the G-norm on a rectangular family.
struct GIncrementObjective {
  const FiltrationModel* model;
  const MeasureFamily* family;
  const AdaptedProcess* y;

  using Target = std::vector<double>;
  Target target(const StoppingTime& to) const { return g_stopped_values(*model, *family, y->span(), to); }
  double term(const Target& w, const StoppingTime&, NodeId u) const { return std::abs(w[u] - (*y)[u]); }
  double outer(std::span<const double> leaf) const { return g_leaf_expectation(*model, *family, leaf); }
};

/// Partition objective for the G-norm on an explicit family, for one base
/// measure: the conditional G-expectation at tau_i maximizes over members that
/// agree with the base on F_{tau_i}.
struct ExplicitGIncrementObjective {
  const FiltrationModel* model;
  const MeasureFamily* family;
  const AdaptedProcess* y;
  std::size_t base;
  std::vector<std::vector<double>> reach;
  mutable std::map<std::vector<NodeId>, std::vector<std::size_t>> agreeing_cache;

  ExplicitGIncrementObjective(const FiltrationModel& m, const MeasureFamily& f, const AdaptedProcess& yy,
                              std::size_t b)
      : model(&m), family(&f), y(&yy), base(b) {
    for (const auto& q : f.measures) reach.push_back(reach_probabilities(m, q));
  }

  using Target = std::vector<std::vector<double>>;  // stopped values per member
  Target target(const StoppingTime& to) const {
    Target t;
    for (const auto& q : family->measures) t.push_back(stopped_values(*model, q, y->span(), to));
    return t;
  }
  double term(const Target& w, const StoppingTime& from, NodeId u) const {
    auto it = agreeing_cache.find(from.nodes());
    if (it == agreeing_cache.end()) {
      std::vector<std::size_t> a;
      for (std::size_t j = 0; j < reach.size(); ++j)
        if (agrees_on(*model, reach[base], reach[j], from)) a.push_back(j);
      it = agreeing_cache.emplace(from.nodes(), std::move(a)).first;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j : it->second) best = std::max(best, w[j][u]);
    return std::abs(best - (*y)[u]);
  }
  double outer(std::span<const double> leaf) const {
    return leaf_expectation(*model, family->measures[base], leaf);
  }
};

/// ||Y||_G^2 = E^G[sup|Y|^2] + sup over partitions and measures of
/// E^P[(sum_i |E^{G,P}_{tau_i} Y_{tau_{i+1}} - Y_{tau_i}|)^2].
inline FamilyNormReport norm_g(const FiltrationModel& m, const MeasureFamily& f, const AdaptedProcess& y,
                               Strategy strategy, std::size_t max_segments = 0) {
  const auto rmax = running_abs_max(m, y);
  AdaptedProcess sq(m.node_count());
  for (NodeId v = 0; v < m.node_count(); ++v) sq[v] = rmax[v] * rmax[v];
  FamilyNormReport r;
  const double sup_part = g_expectation(m, f, sq);
  if (f.is_rectangular()) {
    const auto s = partition_supremum(m, GIncrementObjective{&m, &f, &y}, strategy, max_segments);
    r.value_sq = sup_part + s.value;
    r.attaining_member = "dynamic programme";
    r.lower_bound = s.lower_bound;
    return r;
  }
  double best = -1.0;
  for (std::size_t i = 0; i < f.measures.size(); ++i) {
    const auto s = partition_supremum(m, ExplicitGIncrementObjective(m, f, y, i), strategy, max_segments);
    r.lower_bound = r.lower_bound || s.lower_bound;
    if (s.value > best) {
      best = s.value;
      r.attaining_member = f.names[i];
    }
  }
  r.value_sq = sup_part + best;
  return r;
}

struct MemberDecomposition {
  std::string name;
  Measure measure;
  Decomposition doob;
  AdaptedProcess increasing;  // L: positive part of the A increments
  AdaptedProcess decreasing;  // K: negative part, so A = L - K
};

enum class ProbeOutcome { holds, fails, ambiguous, not_applicable };

inline const char* to_string(ProbeOutcome p) {
  switch (p) {
    case ProbeOutcome::holds: return "holds";
    case ProbeOutcome::fails: return "fails";
    case ProbeOutcome::ambiguous: return "ambiguous";
    case ProbeOutcome::not_applicable: return "not_applicable";
  }
  return "?";
}

struct FamilyDecomposition {
  std::vector<MemberDecomposition> members;
  ProbeOutcome probe = ProbeOutcome::not_applicable;
  double probe_gap = 0.0;
  std::string probe_member;
  NodeId probe_node = kNoNode;
};

/// Doob decomposition under each member with the orthogonal split A = L - K.
/// For a G-submartingale, also probes whether -K^P(v) equals the maximum over
/// members agreeing with P up to the level of v of E^{P'}[-K^{P'}_T | v].
inline FamilyDecomposition decomposition_family(const FiltrationModel& m, const MeasureFamily& f,
                                                const AdaptedProcess& y) {
  FamilyDecomposition out;
  for (auto& member : family_members(m, f)) {
    MemberDecomposition d{member.name, member.measure, doob_decompose(m, member.measure, y),
                          AdaptedProcess(m.node_count()), AdaptedProcess(m.node_count())};
    for (NodeId v = 1; v < m.node_count(); ++v) {
      const NodeId p = m.parent(v);
      const double inc = d.doob.finite_variation[v] - d.doob.finite_variation[p];
      d.increasing[v] = d.increasing[p] + std::max(inc, 0.0);
      d.decreasing[v] = d.decreasing[p] + std::max(-inc, 0.0);
    }
    out.members.push_back(std::move(d));
  }
  if (!classify(m, f, y).has(GLabel::g_sub)) return out;

  std::vector<std::vector<double>> reach;
  std::vector<std::vector<double>> tail;  // E^{P'}[-K_T | v]
  const auto term = StoppingTime::terminal(m);
  double scale = 0.0;
  for (const auto& d : out.members) {
    reach.push_back(reach_probabilities(m, d.measure));
    AdaptedProcess neg = -1.0 * d.decreasing;
    tail.push_back(stopped_values(m, d.measure, neg.span(), term));
    for (double x : d.decreasing.values()) scale = std::max(scale, std::abs(x));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < out.members.size(); ++i)
    for (int k = 0; k < m.horizon(); ++k) {
      const auto level = StoppingTime::at_level(m, k);
      std::vector<std::size_t> agreeing;
      for (std::size_t j = 0; j < out.members.size(); ++j)
        if (agrees_on(m, reach[i], reach[j], level)) agreeing.push_back(j);
      for (NodeId v = m.level_begin(k); v < m.level_end(k); ++v) {
        if (!(reach[i][v] > 0.0)) continue;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j : agreeing) best = std::max(best, tail[j][v]);
        const double gap = std::abs(-out.members[i].decreasing[v] - best);
        if (gap > worst) {
          worst = gap;
          out.probe_member = out.members[i].name;
          out.probe_node = v;
        }
      }
    }
  out.probe_gap = worst;
  const double unit = 1.0 + scale;
  out.probe = worst <= 1e-12 * unit ? ProbeOutcome::holds
              : worst > 1e-9 * unit ? ProbeOutcome::fails
                                    : ProbeOutcome::ambiguous;
  return out;
}

}  // namespace martnorm
