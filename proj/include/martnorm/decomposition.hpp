#pragma once

// Doob decomposition, bracket energy, total variation, and the sup-norm and
// partition norms of a process under a single measure.

#include "martnorm/filtration.hpp"
#include "martnorm/partitions.hpp"

namespace martnorm {

/// Y = Y0 + M + A with M a martingale and A predictable, M0 = A0 = 0.
struct Decomposition {
  AdaptedProcess martingale;
  AdaptedProcess finite_variation;
  double base = 0.0;
};

/// The unique discrete Doob decomposition: the A-increment on every edge out of
/// v is E[Y(child) - Y(v) | v].
inline Decomposition doob_decompose(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y) {
  Decomposition d;
  const std::size_t n = m.node_count();
  d.base = y[0];
  d.finite_variation = AdaptedProcess(n);
  d.martingale = AdaptedProcess(n);
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    const double inc = one_step_mean(m, q, y.span(), v) - y[v];
    for (std::size_t i = 0; i < m.child_count(v); ++i) {
      const NodeId c = m.first_child(v) + i;
      d.finite_variation[c] = d.finite_variation[v] + inc;
    }
  }
  for (NodeId v = 0; v < n; ++v) d.martingale[v] = y[v] - d.base - d.finite_variation[v];
  return d;
}

/// Largest |E[M(child) | v] - M(v)| over internal nodes.
inline double martingale_defect(const FiltrationModel& m, const Measure& q, const AdaptedProcess& x) {
  double worst = 0.0;
  for (NodeId v = 0; v < m.first_leaf(); ++v) worst = std::max(worst, std::abs(one_step_mean(m, q, x.span(), v) - x[v]));
  return worst;
}

/// Largest spread of the increment x(child) - x(v) across the children of a node.
inline double predictability_defect(const FiltrationModel& m, const AdaptedProcess& x) {
  double worst = 0.0;
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    const NodeId b = m.first_child(v);
    for (std::size_t i = 1; i < m.child_count(v); ++i) worst = std::max(worst, std::abs(x[b + i] - x[b]));
  }
  return worst;
}

/// E[sum_k (Delta M_k)^2] for a martingale M; throws "not a martingale" when the
/// one-step defect exceeds 1e-9.
inline double quadratic_variation_energy(const FiltrationModel& m, const Measure& q, const AdaptedProcess& mart) {
  if (martingale_defect(m, q, mart) > 1e-9) throw Error("not a martingale");
  std::vector<double> acc(m.node_count(), 0.0);
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const double d = mart[v] - mart[m.parent(v)];
    acc[v] = acc[m.parent(v)] + d * d;
  }
  return leaf_expectation(m, q, std::span<const double>(acc).subspan(m.first_leaf()));
}

/// Pathwise running total variation of A, frozen once the path crosses `up_to`.
inline AdaptedProcess total_variation(const FiltrationModel& m, const AdaptedProcess& a, const StoppingTime& up_to) {
  AdaptedProcess tv(m.node_count());
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const NodeId p = m.parent(v);
    // once the parent is at or below the cut, the path has stopped
    tv[v] = up_to.above(p) ? tv[p] + std::abs(a[v] - a[p]) : tv[p];
  }
  return tv;
}

inline AdaptedProcess total_variation(const FiltrationModel& m, const AdaptedProcess& a) {
  return total_variation(m, a, StoppingTime::terminal(m));
}

/// Running maximum of |Y| along each path.
inline AdaptedProcess running_abs_max(const FiltrationModel& m, const AdaptedProcess& y) {
  AdaptedProcess r(m.node_count());
  r[0] = std::abs(y[0]);
  for (NodeId v = 1; v < m.node_count(); ++v) r[v] = std::max(r[m.parent(v)], std::abs(y[v]));
  return r;
}

/// Expectation of the square of a terminal-level quantity.
inline double expected_square_at_leaves(const FiltrationModel& m, const Measure& q, const AdaptedProcess& x) {
  std::vector<double> sq(m.leaf_count());
  for (NodeId l = m.first_leaf(); l < m.node_count(); ++l) sq[l - m.first_leaf()] = x[l] * x[l];
  return leaf_expectation(m, q, sq);
}

/// E[ sup_t |Y_t|^2 ].
inline double norm_p0(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y) {
  return expected_square_at_leaves(m, q, running_abs_max(m, y));
}

/// E[|Y0|^2 + <M>_T + (TV of A)^2] from the Doob decomposition.
inline double decomposition_energy(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y) {
  const auto d = doob_decompose(m, q, y);
  return d.base * d.base + quadratic_variation_energy(m, q, d.martingale) +
         expected_square_at_leaves(m, q, total_variation(m, d.finite_variation));
}

/// |E_{tau_i}[Y_{tau_{i+1}}] - Y_{tau_i}| under a linear expectation.
struct IncrementObjective {
  const FiltrationModel* model;
  const Measure* measure;
  const AdaptedProcess* y;

  using Target = std::vector<double>;
  Target target(const StoppingTime& to) const { return stopped_values(*model, *measure, y->span(), to); }
  double term(const Target& w, const StoppingTime&, NodeId u) const { return std::abs(w[u] - (*y)[u]); }
  double outer(std::span<const double> leaf) const { return leaf_expectation(*model, *measure, leaf); }
};

struct NormReport {
  double norm_p0_sq = 0.0;
  double norm_p_sq = 0.0;
  std::optional<StoppingPartition> attaining_partition;
  Strategy strategy = Strategy::finest;
  bool lower_bound = false;
  double decomposition_energy = 0.0;
  double ratio = 0.0;
  /// Window check from verify_norm_equivalence; absent when not checked.
  std::optional<bool> within_window;
  double window_lo = 0.0;
  double window_hi = 0.0;
};

/// ||Y||_P^2 = ||Y||_{P,0}^2 + sup over partitions of E[(sum_i |E_{tau_i} Y_{tau_{i+1}} - Y_{tau_i}|)^2].
inline NormReport norm_p(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y, Strategy strategy,
                         std::size_t max_segments = 0, std::size_t cap = enumeration_cap()) {
  NormReport r;
  r.norm_p0_sq = norm_p0(m, q, y);
  const auto sup = partition_supremum(m, IncrementObjective{&m, &q, &y}, strategy, max_segments, cap);
  r.norm_p_sq = r.norm_p0_sq + sup.value;
  r.attaining_partition = sup.partition;
  r.strategy = strategy;
  r.lower_bound = sup.lower_bound;
  r.decomposition_energy = decomposition_energy(m, q, y);
  r.ratio = r.norm_p_sq > 0.0 ? r.decomposition_energy / r.norm_p_sq : 0.0;
  return r;
}

/// The partition term alone for one given partition.
inline double partition_term(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y,
                             const StoppingPartition& p) {
  return evaluate_partition(m, IncrementObjective{&m, &q, &y}, p);
}

/// Computes the norm report and checks decomposition_energy / norm_p^2 against [lo, hi].
inline NormReport verify_norm_equivalence(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y,
                                          Strategy strategy, double lo, double hi, std::size_t max_segments = 0) {
  auto r = norm_p(m, q, y, strategy, max_segments);
  r.window_lo = lo;
  r.window_hi = hi;
  r.within_window = r.norm_p_sq > 0.0 ? (r.ratio >= lo && r.ratio <= hi) : true;
  return r;
}

/// E[sum_i |E_{t_i} Y_{t_{i+1}} - Y_{t_i}|] over a deterministic grid of levels
/// (must start at 0 and end at the horizon).
inline double quasimartingale_variation(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y,
                                        std::span<const int> levels) {
  if (levels.size() < 2 || levels.front() != 0 || levels.back() != m.horizon())
    throw Error("grid must run from 0 to the horizon");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    if (levels[i] > levels[i + 1]) throw Error("times not ordered");
    const auto from = StoppingTime::at_level(m, levels[i]);
    const auto w = stopped_values(m, q, y.span(), StoppingTime::at_level(m, levels[i + 1]));
    const auto reach = reach_probabilities(m, q);
    for (NodeId u : from.nodes()) total += reach[u] * std::abs(w[u] - y[u]);
  }
  return total;
}

}  // namespace martnorm
