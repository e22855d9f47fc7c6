#pragma once

// Discrete doubly reflected BSDEs on event trees: the clamping backward scheme,
// the barrier norm, a priori quantities, excursion stopping times and the
// difference estimate.

#include <functional>
#include <memory>
#include <random>

#include "martnorm/decomposition.hpp"

namespace martnorm {

/// Stand-in for an infinite barrier.
inline constexpr double kInfiniteBarrier = 1e9;

/// f(node, level, y, z) with a declared Lipschitz constant in (y, z).
struct Driver {
  std::function<double(NodeId, int, double, double)> fn;
  double lipschitz = 0.0;

  double operator()(NodeId v, int level, double y, double z) const { return fn ? fn(v, level, y, z) : 0.0; }

  static Driver zero() { return Driver{nullptr, 0.0}; }
  /// f = a*y + b*z + c(node).
  static Driver linear(double y_coef, double z_coef, AdaptedProcess constant) {
    auto c = std::make_shared<AdaptedProcess>(std::move(constant));
    return Driver{[=](NodeId v, int, double y, double z) { return y_coef * y + z_coef * z + (*c)[v]; },
                  std::max(std::abs(y_coef), std::abs(z_coef))};
  }
};

struct DrbsdeInstance {
  AdaptedProcess terminal;  // read at terminal nodes only
  Driver driver;
  AdaptedProcess lower;
  AdaptedProcess upper;
  double dt = 1.0;
  /// Driving-noise increment on the edge into each node (binary trees). When
  /// absent, a mean-zero two-point increment with variance dt is used.
  std::optional<AdaptedProcess> increments;
};

enum class Scheme { explicit_euler, picard, automatic };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::explicit_euler: return "explicit";
    case Scheme::picard: return "picard";
    case Scheme::automatic: return "auto";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "explicit") return Scheme::explicit_euler;
  if (s == "picard") return Scheme::picard;
  if (s == "auto") return Scheme::automatic;
  throw Error("unknown scheme '" + s + "'");
}

struct DrbsdeSolution {
  AdaptedProcess y;
  AdaptedProcess z;  // Z_k stored at the internal node; 0 at terminal nodes
  AdaptedProcess k_plus;
  AdaptedProcess k_minus;
  Scheme scheme = Scheme::explicit_euler;
  /// True when Z is the increment-energy surrogate (non-binary nodes).
  bool z_surrogate = false;
  /// Per-node reflection increments applied on the edges out of each node.
  std::vector<double> dk_plus;
  std::vector<double> dk_minus;
};

/// Checks L <= U node-wise, L_N <= xi <= U_N, and spot-checks the driver's
/// Lipschitz bound on deterministic pseudo-random points.
inline void validate_instance(const FiltrationModel& m, const DrbsdeInstance& inst) {
  const std::size_t n = m.node_count();
  if (inst.lower.size() != n || inst.upper.size() != n || inst.terminal.size() != n)
    throw Error("instance processes do not match the model");
  if (!(inst.dt > 0.0)) throw Error("dt must be positive");
  for (NodeId v = 0; v < n; ++v)
    if (inst.lower[v] > inst.upper[v]) throw Error("barriers crossed at node " + m.label(v));
  for (NodeId v = m.first_leaf(); v < n; ++v)
    if (inst.terminal[v] < inst.lower[v] || inst.terminal[v] > inst.upper[v])
      throw Error("terminal value outside barriers at node " + m.label(v));
  std::mt19937_64 rng(0x5eed);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
  for (int i = 0; i < 64; ++i) {
    const NodeId v = static_cast<NodeId>(rng() % n);
    const double y1 = 10 * unit(), z1 = 10 * unit(), y2 = 10 * unit(), z2 = 10 * unit();
    const int k = m.time_of(v);
    const double lhs = std::abs(inst.driver(v, k, y1, z1) - inst.driver(v, k, y2, z2));
    const double rhs = inst.driver.lipschitz * (std::abs(y1 - y2) + std::abs(z1 - z2));
    if (lhs > rhs * (1 + 1e-12) + 1e-12) throw Error("driver violates its declared Lipschitz constant");
  }
}

/// Two-point increments (b_up, b_down) with mean zero and variance dt under q.
inline std::optional<std::pair<double, double>> default_increments(double p_up, double dt) {
  if (!(p_up > 0.0 && p_up < 1.0)) return std::nullopt;
  return std::make_pair(std::sqrt(dt * (1.0 - p_up) / p_up), -std::sqrt(dt * p_up / (1.0 - p_up)));
}

/// Backward induction: Y_N = xi; at each node the unreflected value
/// E_k[Y_{k+1}] + f(k, y, Z_k) dt is clamped into [L_k, U_k] and the clamp
/// distance becomes the reflection increment on the outgoing edges.
inline DrbsdeSolution solve(const FiltrationModel& m, const Measure& q, const DrbsdeInstance& inst,
                            Scheme scheme = Scheme::automatic) {
  validate_instance(m, inst);
  if (scheme == Scheme::automatic)
    scheme = inst.driver.lipschitz * inst.dt >= 0.5 ? Scheme::picard : Scheme::explicit_euler;
  const std::size_t n = m.node_count();
  DrbsdeSolution s;
  s.scheme = scheme;
  s.y = AdaptedProcess(n);
  s.z = AdaptedProcess(n);
  s.k_plus = AdaptedProcess(n);
  s.k_minus = AdaptedProcess(n);
  s.dk_plus.assign(n, 0.0);
  s.dk_minus.assign(n, 0.0);
  for (NodeId v = m.first_leaf(); v < n; ++v) s.y[v] = inst.terminal[v];
  for (NodeId v = m.first_leaf(); v-- > 0;) {
    const int k = m.time_of(v);
    const NodeId c0 = m.first_child(v);
    const double mean = one_step_mean(m, q, s.y.span(), v);
    double z = 0.0;
    bool have_z = false;
    if (m.child_count(v) == 2) {
      std::optional<std::pair<double, double>> b;
      if (inst.increments)
        b = std::make_pair((*inst.increments)[c0], (*inst.increments)[c0 + 1]);
      else
        b = default_increments(q[c0], inst.dt);
      if (b && b->first != b->second) {
        z = (s.y[c0] - s.y[c0 + 1]) / (b->first - b->second);
        have_z = true;
      }
    }
    if (!have_z) {
      double e2 = 0.0;
      for (std::size_t i = 0; i < m.child_count(v); ++i) {
        const double d = s.y[c0 + i] - mean;
        e2 += q[c0 + i] * d * d;
      }
      z = std::sqrt(e2 / inst.dt);
      if (m.child_count(v) != 1) s.z_surrogate = true;
    }
    s.z[v] = z;
    double unreflected = mean + inst.driver(v, k, mean, z) * inst.dt;
    if (scheme == Scheme::picard) {
      // up to 100 steps or a 1e-12 step; a non-contracting iteration is an error
      double y = mean, first = -1.0, step = 0.0;
      for (int it = 0; it < 100; ++it) {
        const double next = mean + inst.driver(v, k, y, z) * inst.dt;
        if (!std::isfinite(next)) throw Error("driver iteration diverged");
        step = std::abs(next - y);
        if (first < 0.0) first = step;
        y = next;
        if (step <= 1e-12 * std::max(1.0, std::abs(y))) break;
      }
      if (first > 0.0 && step >= first && step > 1e-12 * std::max(1.0, std::abs(y)))
        throw Error("driver iteration diverged");
      unreflected = y;
    }
    const double lo = inst.lower[v], hi = inst.upper[v];
    if (unreflected < lo) {
      s.y[v] = lo;
      s.dk_plus[v] = lo - unreflected;
    } else if (unreflected > hi) {
      s.y[v] = hi;
      s.dk_minus[v] = unreflected - hi;
    } else {
      s.y[v] = unreflected;
    }
  }
  for (NodeId v = 1; v < n; ++v) {
    const NodeId p = m.parent(v);
    s.k_plus[v] = s.k_plus[p] + s.dk_plus[p];
    s.k_minus[v] = s.k_minus[p] + s.dk_minus[p];
  }
  return s;
}

/// A = K+ - K-.
inline AdaptedProcess reflection_process(const DrbsdeSolution& s) { return s.k_plus - s.k_minus; }

/// |L^+|, |U^-| and partition terms [E_{tau_i} L_{tau_{i+1}} - U_{tau_i}]^+ + [L_{tau_i} - E_{tau_i} U_{tau_{i+1}}]^+.
struct BarrierObjective {
  const FiltrationModel* model;
  const Measure* measure;
  const AdaptedProcess* lower;
  const AdaptedProcess* upper;

  using Target = std::pair<std::vector<double>, std::vector<double>>;
  Target target(const StoppingTime& to) const {
    return {stopped_values(*model, *measure, lower->span(), to), stopped_values(*model, *measure, upper->span(), to)};
  }
  double term(const Target& w, const StoppingTime&, NodeId u) const {
    return std::max(w.first[u] - (*upper)[u], 0.0) + std::max((*lower)[u] - w.second[u], 0.0);
  }
  double outer(std::span<const double> leaf) const { return leaf_expectation(*model, *measure, leaf); }
};

struct BarrierNorm {
  double norm_sq = 0.0;
  double sup_part = 0.0;        // ||L^+||_{P,0}^2 + ||U^-||_{P,0}^2
  double partition_part = 0.0;  // the partition supremum
  PartitionSearchResult search;
};

inline BarrierNorm barrier_norm_report(const FiltrationModel& m, const Measure& q, const AdaptedProcess& lower,
                                       const AdaptedProcess& upper, Strategy strategy, std::size_t max_segments = 0,
                                       std::size_t cap = enumeration_cap()) {
  for (NodeId v = 0; v < m.node_count(); ++v)
    if (lower[v] > upper[v]) throw Error("barriers crossed at node " + m.label(v));
  AdaptedProcess lp(m.node_count()), um(m.node_count());
  for (NodeId v = 0; v < m.node_count(); ++v) {
    lp[v] = std::max(lower[v], 0.0);
    um[v] = std::max(-upper[v], 0.0);
  }
  BarrierNorm r;
  r.sup_part = norm_p0(m, q, lp) + norm_p0(m, q, um);
  r.search = partition_supremum(m, BarrierObjective{&m, &q, &lower, &upper}, strategy, max_segments, cap);
  r.partition_part = r.search.value;
  r.norm_sq = r.sup_part + r.partition_part;
  return r;
}

/// ||(L, U)||_P^2.
inline double barrier_norm(const FiltrationModel& m, const Measure& q, const AdaptedProcess& lower,
                           const AdaptedProcess& upper, Strategy strategy, std::size_t max_segments = 0) {
  return barrier_norm_report(m, q, lower, upper, strategy, max_segments).norm_sq;
}

/// I_0^2 = E[|xi|^2 + (sum_k |f(k, 0, 0)| dt)^2].
inline double i0(const FiltrationModel& m, const Measure& q, const AdaptedProcess& xi, const Driver& f, double dt) {
  std::vector<double> acc(m.node_count(), 0.0);
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const NodeId p = m.parent(v);
    acc[v] = acc[p] + std::abs(f(p, m.time_of(p), 0.0, 0.0)) * dt;
  }
  std::vector<double> leaf(m.leaf_count());
  for (NodeId l = m.first_leaf(); l < m.node_count(); ++l) leaf[l - m.first_leaf()] = xi[l] * xi[l] + acc[l] * acc[l];
  return leaf_expectation(m, q, leaf);
}

/// E[sup|Y|^2 + sum_k |Z_k|^2 dt + (TV of K+ - K-)^2]; by orthogonality the
/// variation equals K+_N + K-_N.
inline double solution_norm(const FiltrationModel& m, const Measure& q, const DrbsdeSolution& s, double dt) {
  const auto ymax = running_abs_max(m, s.y);
  std::vector<double> zacc(m.node_count(), 0.0);
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const NodeId p = m.parent(v);
    zacc[v] = zacc[p] + s.z[p] * s.z[p] * dt;
  }
  std::vector<double> leaf(m.leaf_count());
  for (NodeId l = m.first_leaf(); l < m.node_count(); ++l) {
    const double var = s.k_plus[l] + s.k_minus[l];
    leaf[l - m.first_leaf()] = ymax[l] * ymax[l] + zacc[l] + var * var;
  }
  return leaf_expectation(m, q, leaf);
}

struct EstimateReport {
  double i0_sq = 0.0;
  double barrier_norm_sq = 0.0;
  double solution_norm_sq = 0.0;
  double ratio = 0.0;
};

inline EstimateReport estimate_report(const FiltrationModel& m, const Measure& q, const DrbsdeInstance& inst,
                                      const DrbsdeSolution& s, Strategy strategy, std::size_t max_segments = 0) {
  EstimateReport r;
  r.i0_sq = i0(m, q, inst.terminal, inst.driver, inst.dt);
  r.barrier_norm_sq = barrier_norm(m, q, inst.lower, inst.upper, strategy, max_segments);
  r.solution_norm_sq = solution_norm(m, q, s, inst.dt);
  const double denom = r.i0_sq + r.barrier_norm_sq;
  r.ratio = denom > 0.0 ? r.solution_norm_sq / denom : 0.0;
  return r;
}

/// Excursion stopping times: tau_0 = 0, tau_{2i+1} the first time after tau_{2i}
/// where K+ strictly increases (capped at T), tau_{2i+2} the same for K-.
/// Stops after the first even time equal to T everywhere.
inline std::vector<StoppingTime> excursion_times(const FiltrationModel& m, const AdaptedProcess& k_plus,
                                                 const AdaptedProcess& k_minus) {
  const auto terminal = StoppingTime::terminal(m);
  auto next_increase = [&](const StoppingTime& from, const AdaptedProcess& k) {
    std::vector<NodeId> base(m.node_count(), kNoNode);  // searching below this cut node
    std::vector<NodeId> cut;
    for (NodeId v = 0; v < m.node_count(); ++v) {
      if (from.anchor(v) == v) {
        if (m.is_terminal(v))
          cut.push_back(v);
        else
          base[v] = v;
        continue;
      }
      const NodeId p = m.parent(v);
      if (p == kNoNode || base[p] == kNoNode) continue;
      if (k[v] > k[base[p]] || m.is_terminal(v))
        cut.push_back(v);
      else
        base[v] = base[p];
    }
    return StoppingTime::from_cut(m, std::move(cut));
  };
  std::vector<StoppingTime> times{StoppingTime::initial(m)};
  for (;;) {
    times.push_back(next_increase(times.back(), k_plus));
    times.push_back(next_increase(times.back(), k_minus));
    if (times.back() == terminal) break;
  }
  return times;
}

struct DifferenceReport {
  double lhs = 0.0;
  double driver_terminal_term = 0.0;
  double barrier_term = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
};

/// E[sup(|dY|^2 + |dA|^2) + sum |dZ|^2 dt] against
/// E[|dxi|^2 + (sum |df(k, Y1, Z1)| dt)^2] + sum_i (I0_i + ||(L_i, U_i)||) (E[sup(|dL|^2 + |dU|^2)])^{1/2}.
inline DifferenceReport difference_report(const FiltrationModel& m, const Measure& q, const DrbsdeInstance& a,
                                          const DrbsdeInstance& b, const DrbsdeSolution& sa, const DrbsdeSolution& sb,
                                          Strategy strategy = Strategy::finest, std::size_t max_segments = 0) {
  if (a.dt != b.dt) throw Error("instances use different dt");
  const std::size_t n = m.node_count();
  const double dt = a.dt;
  std::vector<double> run_max(n, 0.0), zacc(n, 0.0), facc(n, 0.0), barrier_max(n, 0.0);
  const auto aa = reflection_process(sa), ab = reflection_process(sb);
  for (NodeId v = 0; v < n; ++v) {
    const double dy = sa.y[v] - sb.y[v], da = aa[v] - ab[v];
    const double dl = a.lower[v] - b.lower[v], du = a.upper[v] - b.upper[v];
    const NodeId p = m.parent(v);
    const double here = dy * dy + da * da;
    const double bh = dl * dl + du * du;
    if (p == kNoNode) {
      run_max[v] = here;
      barrier_max[v] = bh;
      continue;
    }
    run_max[v] = std::max(run_max[p], here);
    barrier_max[v] = std::max(barrier_max[p], bh);
    const double dz = sa.z[p] - sb.z[p];
    zacc[v] = zacc[p] + dz * dz * dt;
    const int k = m.time_of(p);
    facc[v] = facc[p] + std::abs(a.driver(p, k, sa.y[p], sa.z[p]) - b.driver(p, k, sa.y[p], sa.z[p])) * dt;
  }
  std::vector<double> lhs(m.leaf_count()), drv(m.leaf_count()), bar(m.leaf_count());
  for (NodeId l = m.first_leaf(); l < n; ++l) {
    const std::size_t i = l - m.first_leaf();
    lhs[i] = run_max[l] + zacc[l];
    const double dxi = a.terminal[l] - b.terminal[l];
    drv[i] = dxi * dxi + facc[l] * facc[l];
    bar[i] = barrier_max[l];
  }
  DifferenceReport r;
  r.lhs = leaf_expectation(m, q, lhs);
  r.driver_terminal_term = leaf_expectation(m, q, drv);
  const double barrier_gap = std::sqrt(leaf_expectation(m, q, bar));
  if (barrier_gap > 0.0) {
    const double s1 = std::sqrt(i0(m, q, a.terminal, a.driver, dt)) +
                      std::sqrt(barrier_norm(m, q, a.lower, a.upper, strategy, max_segments));
    const double s2 = std::sqrt(i0(m, q, b.terminal, b.driver, dt)) +
                      std::sqrt(barrier_norm(m, q, b.lower, b.upper, strategy, max_segments));
    r.barrier_term = (s1 + s2) * barrier_gap;
  }
  r.rhs = r.driver_terminal_term + r.barrier_term;
  r.ratio = r.rhs > 0.0 ? r.lhs / r.rhs : 0.0;
  return r;
}

/// Strict node-wise separation L < U.
inline bool barriers_separated(const FiltrationModel& m, const AdaptedProcess& lower, const AdaptedProcess& upper) {
  for (NodeId v = 0; v < m.node_count(); ++v)
    if (!(lower[v] < upper[v])) return false;
  return true;
}

/// Solves the f = 0 problem between the barriers; the result is a semimartingale
/// between L and U. The terminal value is the barrier midpoint, or the finite
/// barrier when the other one is infinite.
inline AdaptedProcess mokobodski_witness(const FiltrationModel& m, const Measure& q, const AdaptedProcess& lower,
                                         const AdaptedProcess& upper, double dt = 1.0) {
  DrbsdeInstance inst;
  inst.lower = lower;
  inst.upper = upper;
  inst.dt = dt;
  inst.driver = Driver::zero();
  inst.terminal = AdaptedProcess(m.node_count());
  for (NodeId l = m.first_leaf(); l < m.node_count(); ++l) {
    const bool lo_inf = lower[l] <= -kInfiniteBarrier, hi_inf = upper[l] >= kInfiniteBarrier;
    if (lo_inf && hi_inf)
      inst.terminal[l] = 0.0;
    else if (hi_inf)
      inst.terminal[l] = lower[l];
    else if (lo_inf)
      inst.terminal[l] = upper[l];
    else
      inst.terminal[l] = 0.5 * (lower[l] + upper[l]);
  }
  return solve(m, q, inst, Scheme::explicit_euler).y;
}

struct JumpBoundCheck {
  bool holds = true;
  std::vector<NodeId> violating_leaves;
};

/// Pathwise sum dK+ <= sum (dL)^- and sum dK- <= sum (dU)^+.
inline JumpBoundCheck jump_bound_check(const FiltrationModel& m, const DrbsdeInstance& inst, const DrbsdeSolution& s,
                                       double tol = 1e-12) {
  const std::size_t n = m.node_count();
  std::vector<double> kp(n, 0.0), km(n, 0.0), ldown(n, 0.0), uup(n, 0.0);
  for (NodeId v = 1; v < n; ++v) {
    const NodeId p = m.parent(v);
    kp[v] = kp[p] + s.dk_plus[p];
    km[v] = km[p] + s.dk_minus[p];
    ldown[v] = ldown[p] + std::max(inst.lower[p] - inst.lower[v], 0.0);
    uup[v] = uup[p] + std::max(inst.upper[v] - inst.upper[p], 0.0);
  }
  JumpBoundCheck r;
  for (NodeId l = m.first_leaf(); l < n; ++l)
    if (kp[l] > ldown[l] + tol || km[l] > uup[l] + tol) {
      r.holds = false;
      r.violating_leaves.push_back(l);
    }
  return r;
}

}  // namespace martnorm
