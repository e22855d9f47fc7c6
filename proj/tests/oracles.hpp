#pragma once

// Brute-force reference computations for the tests. Everything here works on
// explicit root-to-leaf paths and explicit cut lists and shares no code with
// the library beyond the model accessors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "martnorm/filtration.hpp"

namespace oracle {

using martnorm::AdaptedProcess;
using martnorm::FiltrationModel;
using martnorm::Measure;
using martnorm::NodeId;

struct Path {
  std::vector<NodeId> nodes;  // root first
  double prob = 1.0;
};

inline std::vector<Path> paths(const FiltrationModel& m, const Measure& q) {
  std::vector<Path> out;
  for (NodeId leaf = m.first_leaf(); leaf < m.node_count(); ++leaf) {
    Path p;
    for (NodeId v = leaf; v != martnorm::kNoNode; v = m.parent(v)) p.nodes.push_back(v);
    std::reverse(p.nodes.begin(), p.nodes.end());
    for (std::size_t i = 1; i < p.nodes.size(); ++i) p.prob *= q[p.nodes[i]];
    out.push_back(std::move(p));
  }
  return out;
}

inline bool passes(const Path& p, NodeId v) { return std::find(p.nodes.begin(), p.nodes.end(), v) != p.nodes.end(); }

/// E[f(path) | path passes v]; falls back to the uniform average over
/// continuations when v has probability zero.
inline double cond(const std::vector<Path>& ps, NodeId v, const std::function<double(const Path&)>& f) {
  double num = 0.0, den = 0.0, plain = 0.0;
  int count = 0;
  for (const auto& p : ps)
    if (passes(p, v)) {
      num += p.prob * f(p);
      den += p.prob;
      plain += f(p);
      ++count;
    }
  return den > 0.0 ? num / den : plain / count;
}

inline double expect(const std::vector<Path>& ps, const std::function<double(const Path&)>& f) {
  double s = 0.0;
  for (const auto& p : ps) s += p.prob * f(p);
  return s;
}

/// A cut as a set of nodes; stop level along a path is the level of the cut node on it.
using Cut = std::vector<NodeId>;

inline std::vector<Cut> all_cuts(const FiltrationModel& m, NodeId v) {
  std::vector<Cut> out{{v}};
  if (m.is_terminal(v)) return out;
  std::vector<Cut> combos{{}};
  for (std::size_t i = 0; i < m.child_count(v); ++i) {
    const auto sub = all_cuts(m, m.first_child(v) + i);
    std::vector<Cut> next;
    for (const auto& a : combos)
      for (const auto& b : sub) {
        Cut c = a;
        c.insert(c.end(), b.begin(), b.end());
        next.push_back(std::move(c));
      }
    combos = std::move(next);
  }
  for (auto& c : combos) {
    std::sort(c.begin(), c.end());
    out.push_back(std::move(c));
  }
  return out;
}

inline NodeId cut_node_on(const Cut& c, const Path& p) {
  for (NodeId v : p.nodes)
    if (std::find(c.begin(), c.end(), v) != c.end()) return v;
  return martnorm::kNoNode;
}

inline std::size_t stop_index(const Cut& c, const Path& p) {
  for (std::size_t i = 0; i < p.nodes.size(); ++i)
    if (std::find(c.begin(), c.end(), p.nodes[i]) != c.end()) return i;
  return p.nodes.size();
}

/// a <= b along every path.
inline bool weakly_before(const std::vector<Path>& ps, const Cut& a, const Cut& b) {
  for (const auto& p : ps)
    if (stop_index(a, p) > stop_index(b, p)) return false;
  return true;
}

/// Every chain initial = c0 <= c1 <= ... <= ck = terminal, weak (repeats allowed)
/// with exactly `segments` steps, or strict with at most `segments` steps.
inline std::vector<std::vector<Cut>> chains(const FiltrationModel& m, const Measure& q, std::size_t segments,
                                            bool strict) {
  const auto ps = paths(m, q);
  const auto cuts = all_cuts(m, 0);
  Cut terminal;
  for (NodeId v = m.first_leaf(); v < m.node_count(); ++v) terminal.push_back(v);
  std::vector<std::vector<Cut>> out;
  std::vector<Cut> cur{Cut{0}};
  std::function<void()> rec = [&] {
    const std::size_t used = cur.size() - 1;
    if (cur.back() == terminal && (strict || used == segments)) {
      out.push_back(cur);
      if (strict) return;
    }
    if (used == segments) return;
    for (const auto& c : cuts) {
      if (!weakly_before(ps, cur.back(), c)) continue;
      if (strict && c == cur.back()) continue;
      cur.push_back(c);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

/// E[(sum_i |E[Y at c_{i+1} | node of c_i] - Y(node of c_i)|)^2] by paths.
inline double increment_objective(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y,
                                  const std::vector<Cut>& chain) {
  const auto ps = paths(m, q);
  return expect(ps, [&](const Path& p) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      const NodeId u = cut_node_on(chain[i], p);
      const Cut& next = chain[i + 1];
      const double e = cond(ps, u, [&](const Path& r) { return y[cut_node_on(next, r)]; });
      s += std::abs(e - y[u]);
    }
    return s * s;
  });
}

inline double norm_p0(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y) {
  return expect(paths(m, q), [&](const Path& p) {
    double mx = 0.0;
    for (NodeId v : p.nodes) mx = std::max(mx, std::abs(y[v]));
    return mx * mx;
  });
}

/// Exact partition supremum over strict chains.
inline double partition_sup(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y) {
  double best = 0.0;
  for (const auto& c : chains(m, q, m.internal_count() + 1, true))
    best = std::max(best, increment_objective(m, q, y, c));
  return best;
}

/// E[Y_{k+1} | v] - Y_k summed along the path gives A; M = Y - Y0 - A.
inline std::pair<AdaptedProcess, AdaptedProcess> doob(const FiltrationModel& m, const Measure& q,
                                                      const AdaptedProcess& y) {
  const auto ps = paths(m, q);
  AdaptedProcess a(m.node_count()), mart(m.node_count());
  for (const auto& p : ps)
    for (std::size_t i = 1; i < p.nodes.size(); ++i) {
      const NodeId prev = p.nodes[i - 1];
      const std::size_t level = i;
      const double e = cond(ps, prev, [&](const Path& r) { return y[r.nodes[level]]; });
      a[p.nodes[i]] = a[prev] + (e - y[prev]);
    }
  for (NodeId v = 0; v < m.node_count(); ++v) mart[v] = y[v] - y[0] - a[v];
  return {mart, a};
}

inline double path_tv_sq(const FiltrationModel& m, const Measure& q, const AdaptedProcess& a) {
  return expect(paths(m, q), [&](const Path& p) {
    double s = 0.0;
    for (std::size_t i = 1; i < p.nodes.size(); ++i) s += std::abs(a[p.nodes[i]] - a[p.nodes[i - 1]]);
    return s * s;
  });
}

inline double path_qv(const FiltrationModel& m, const Measure& q, const AdaptedProcess& mart) {
  return expect(paths(m, q), [&](const Path& p) {
    double s = 0.0;
    for (std::size_t i = 1; i < p.nodes.size(); ++i) {
      const double d = mart[p.nodes[i]] - mart[p.nodes[i - 1]];
      s += d * d;
    }
    return s;
  });
}

/// Barrier partition objective by paths.
inline double barrier_objective(const FiltrationModel& m, const Measure& q, const AdaptedProcess& l,
                                const AdaptedProcess& u, const std::vector<Cut>& chain) {
  const auto ps = paths(m, q);
  return expect(ps, [&](const Path& p) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      const NodeId at = cut_node_on(chain[i], p);
      const Cut& next = chain[i + 1];
      const double el = cond(ps, at, [&](const Path& r) { return l[cut_node_on(next, r)]; });
      const double eu = cond(ps, at, [&](const Path& r) { return u[cut_node_on(next, r)]; });
      s += std::max(el - u[at], 0.0) + std::max(l[at] - eu, 0.0);
    }
    return s * s;
  });
}

/// Sup over selections of a rectangular family (given as rows per node) of E[xi].
inline double g_expectation_by_selection(const FiltrationModel& m,
                                         const std::vector<std::vector<std::vector<double>>>& choices,
                                         const AdaptedProcess& xi) {
  std::vector<std::size_t> sel(m.first_leaf(), 0);
  double best = -1e300;
  for (;;) {
    std::vector<double> p(m.node_count(), 0.0);
    p[0] = 1.0;
    for (NodeId v = 0; v < m.first_leaf(); ++v)
      for (std::size_t i = 0; i < m.child_count(v); ++i) p[m.first_child(v) + i] = choices[v][sel[v]][i];
    const Measure q(p);
    best = std::max(best, expect(paths(m, q), [&](const Path& r) { return xi[r.nodes.back()]; }));
    std::size_t v = 0;
    for (; v < m.first_leaf(); ++v) {
      if (++sel[v] < choices[v].size()) break;
      sel[v] = 0;
    }
    if (v == m.first_leaf()) break;
  }
  return best;
}

/// Penalized backward scheme: y = E + f dt + dt*p*((L - y)^+ - (y - U)^+), solved
/// node-wise for y by bisection (the right side is decreasing in y).
inline AdaptedProcess penalized_solution(const FiltrationModel& m, const Measure& q, const AdaptedProcess& xi,
                                         const AdaptedProcess& l, const AdaptedProcess& u, double dt,
                                         const std::function<double(NodeId, double, double)>& f_of_mean_z,
                                         double penalty) {
  AdaptedProcess y(m.node_count());
  for (NodeId v = m.first_leaf(); v < m.node_count(); ++v) y[v] = xi[v];
  for (NodeId v = m.first_leaf(); v-- > 0;) {
    double e = 0.0;
    for (std::size_t i = 0; i < m.child_count(v); ++i) e += q[m.first_child(v) + i] * y[m.first_child(v) + i];
    const double base = e + f_of_mean_z(v, e, 0.0) * dt;
    auto g = [&](double x) {
      return base + dt * penalty * (std::max(l[v] - x, 0.0) - std::max(x - u[v], 0.0)) - x;
    };
    double lo = std::min(base, l[v]) - 1.0, hi = std::max(base, u[v]) + 1.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (g(mid) > 0.0 ? lo : hi) = mid;
    }
    y[v] = 0.5 * (lo + hi);
  }
  return y;
}

/// Per-path scan for the excursion times: list of stop indices along each path.
inline std::vector<std::vector<std::size_t>> excursion_scan(const FiltrationModel& m, const AdaptedProcess& kp,
                                                            const AdaptedProcess& km) {
  std::vector<std::vector<std::size_t>> out;
  const Measure q(std::vector<double>(m.node_count(), 1.0));
  for (const auto& p : paths(m, q)) {
    const std::size_t n = p.nodes.size() - 1;
    std::vector<std::size_t> t{0};
    for (;;) {
      for (const AdaptedProcess* k : {&kp, &km}) {
        const std::size_t from = t.back();
        std::size_t s = from;
        while (s < n && !((*k)[p.nodes[s]] > (*k)[p.nodes[from]])) ++s;
        t.push_back(s);
      }
      if (t.back() == n) break;
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace oracle
