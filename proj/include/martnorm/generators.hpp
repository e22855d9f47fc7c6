#pragma once

// Seeded random instances and the constructive counterexamples: the zig-zag
// process, the equal-barrier family, the G-submartingale zig-zag and the
// volatility-uncertainty family.

#include <cmath>
#include <map>
#include <random>

#include "martnorm/gexp.hpp"

namespace martnorm {

enum class GeneratorKind { random_semimartingale, random_barriers, zigzag, equal_barriers, g_zigzag, volatility_family };

inline const char* to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::random_semimartingale: return "random_semimartingale";
    case GeneratorKind::random_barriers: return "random_barriers";
    case GeneratorKind::zigzag: return "zigzag";
    case GeneratorKind::equal_barriers: return "equal_barriers";
    case GeneratorKind::g_zigzag: return "g_zigzag";
    case GeneratorKind::volatility_family: return "volatility_family";
  }
  return "?";
}

inline GeneratorKind parse_generator_kind(const std::string& s) {
  for (auto k : {GeneratorKind::random_semimartingale, GeneratorKind::random_barriers, GeneratorKind::zigzag,
                 GeneratorKind::equal_barriers, GeneratorKind::g_zigzag, GeneratorKind::volatility_family})
    if (s == to_string(k)) return k;
  throw Error("unknown generator kind '" + s + "'");
}

struct GeneratorSpec {
  std::uint64_t seed = 1;
  int depth = 3;
  /// 1 gives a deterministic chain (zigzag and equal_barriers only).
  int branching = 2;
  double value_scale = 1.0;
  GeneratorKind kind = GeneratorKind::random_semimartingale;
};

inline constexpr double kTreeSizeCap = 24.0;  // depth * log2(branching)

inline void check_generator_spec(const GeneratorSpec& s) {
  if (s.depth < 1) throw Error("depth must be at least 1");
  if (!(s.value_scale > 0.0)) throw Error("value_scale must be positive");
  const bool deterministic = s.kind == GeneratorKind::zigzag || s.kind == GeneratorKind::equal_barriers;
  if (s.branching < (deterministic ? 1 : 2)) throw Error("branching too small for kind " + std::string(to_string(s.kind)));
  if (s.kind == GeneratorKind::volatility_family && s.branching != 4)
    throw Error("volatility_family uses branching 4");
  if (s.branching > 1 && s.depth * std::log2(static_cast<double>(s.branching)) > kTreeSizeCap + 1e-12)
    throw Error("tree too large: depth*log2(branching) exceeds " + std::to_string(static_cast<int>(kTreeSizeCap)));
}

/// Seeded source with a platform-independent mapping to [0, 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  /// Renormalized positive draw; entries are bounded away from zero.
  std::vector<double> probability_row(std::size_t b) {
    std::vector<double> w(b);
    double s = 0.0;
    for (auto& x : w) s += (x = 0.1 + uniform());
    for (auto& x : w) x /= s;
    return w;
  }

 private:
  std::mt19937_64 engine_;
};

/// Uniform-branching tree with an independent random row at every node.
inline FiltrationModel make_random_tree(int depth, int branching, Rng& rng) {
  std::vector<double> row(static_cast<std::size_t>(branching), 1.0 / branching);
  auto m = make_tree(depth, row);
  std::vector<double> p(m.node_count(), 0.0);
  p[0] = 1.0;
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    const auto r = rng.probability_row(m.child_count(v));
    for (std::size_t i = 0; i < r.size(); ++i) p[m.first_child(v) + i] = r[i];
  }
  m.set_reference(Measure(std::move(p)));
  return m;
}

/// Random walk with increments uniform in [-scale, scale] and Y0 in the same range.
inline AdaptedProcess random_walk(const FiltrationModel& m, double scale, Rng& rng) {
  AdaptedProcess y(m.node_count());
  y[0] = rng.uniform(-scale, scale);
  for (NodeId v = 1; v < m.node_count(); ++v) y[v] = y[m.parent(v)] + rng.uniform(-scale, scale);
  return y;
}

/// Two rows per internal node: the reference row and an independent draw.
inline MeasureFamily random_rectangular_family(const FiltrationModel& m, Rng& rng, std::size_t rows = 2) {
  std::vector<std::vector<std::vector<double>>> ch(m.node_count());
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    std::vector<double> ref(m.child_count(v));
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = m.reference()[m.first_child(v) + i];
    ch[v].push_back(std::move(ref));
    for (std::size_t j = 1; j < rows; ++j) ch[v].push_back(rng.probability_row(m.child_count(v)));
  }
  return MeasureFamily::rectangular(m, std::move(ch));
}

/// Y_0 = 0 and Y(v) = Y(parent) - (K(v) - K(parent)) while floor(K(parent)) is
/// even, + (K(v) - K(parent)) while it is odd: Y follows K down from 0 to -1
/// between the hitting times of consecutive even and odd integers, then back up.
/// For K whose steps never jump over an integer, -1 <= Y <= 0 and the pathwise
/// variation of Y equals K_N.
inline AdaptedProcess zigzag_example(const FiltrationModel& m, const AdaptedProcess& k) {
  if (k[0] != 0.0) throw Error("K must start at 0");
  AdaptedProcess y(m.node_count());
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const NodeId p = m.parent(v);
    const double dk = k[v] - k[p];
    if (dk < 0.0) throw Error("K decreases on the edge into " + m.label(v));
    const bool even = static_cast<long long>(std::floor(k[p])) % 2 == 0;
    y[v] = y[p] + (even ? -dk : dk);
  }
  return y;
}

/// True when no step of K jumps strictly over an integer.
inline bool zigzag_admissible(const FiltrationModel& m, const AdaptedProcess& k) {
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const double lo = k[m.parent(v)], hi = k[v];
    if (std::floor(hi) > std::floor(lo) && hi > std::floor(lo) + 1.0) return false;
  }
  return true;
}

/// Random admissible K: each step draws from {0, 1/4, 1/2, 3/4, 1} and is cut
/// back to the next integer.
inline AdaptedProcess random_admissible_k(const FiltrationModel& m, Rng& rng) {
  AdaptedProcess k(m.node_count());
  for (NodeId v = 1; v < m.node_count(); ++v) {
    const double base = k[m.parent(v)];
    const double step = 0.25 * static_cast<double>(rng.index(5));
    k[v] = std::min(base + step, std::floor(base) + 1.0);
  }
  return k;
}

/// L = U with values alternating 0, 1, 0, ... by level, so the variation is the depth.
inline std::pair<AdaptedProcess, AdaptedProcess> equal_barriers_counterexample(const FiltrationModel& m) {
  AdaptedProcess l(m.node_count());
  for (NodeId v = 0; v < m.node_count(); ++v) l[v] = m.time_of(v) % 2 == 0 ? 0.0 : 1.0;
  return {l, l};
}

/// K with -K a G-martingale: at each node K stays flat on the support of the
/// choice row with the fewest positive entries and rises by delta elsewhere.
/// The zig-zag built on that K is returned together with K.
inline std::pair<AdaptedProcess, AdaptedProcess> g_zigzag_example(const FiltrationModel& m, const MeasureFamily& f,
                                                                   double delta = 1.0) {
  if (!f.is_rectangular()) throw Error("g_zigzag needs a rectangular family");
  AdaptedProcess k(m.node_count());
  bool moved = false;
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    std::size_t best = 0, best_support = std::numeric_limits<std::size_t>::max();
    for (std::size_t j = 0; j < f.choices[v].size(); ++j) {
      std::size_t s = 0;
      for (double p : f.choices[v][j]) s += p > 0.0;
      if (s < best_support) best_support = s, best = j;
    }
    const auto& row = f.choices[v][best];
    for (std::size_t i = 0; i < row.size(); ++i) {
      const NodeId c = m.first_child(v) + i;
      const bool flat = row[i] > 0.0;
      k[c] = k[v] + (flat ? 0.0 : delta);
      moved = moved || !flat;
    }
  }
  if (!moved)
    throw Error("no admissible K: every choice row has full support, so only K = 0 keeps -K a G-martingale");
  return {k, zigzag_example(m, k)};
}

/// Four children per node carrying steps +lo, -lo, +hi, -hi; the two choices
/// put mass 1/2 on the low pair or on the high pair. B is the running sum.
inline std::pair<FiltrationModel, MeasureFamily> volatility_family(int depth, double lo, double hi,
                                                                   AdaptedProcess* b_out = nullptr) {
  if (!(0.0 < lo && lo < hi)) throw Error("volatility bounds must satisfy 0 < lo < hi");
  const double row[4] = {0.25, 0.25, 0.25, 0.25};
  auto m = make_tree(depth, row);
  std::vector<std::vector<std::vector<double>>> ch(m.node_count());
  for (NodeId v = 0; v < m.first_leaf(); ++v) ch[v] = {{0.5, 0.5, 0.0, 0.0}, {0.0, 0.0, 0.5, 0.5}};
  auto fam = MeasureFamily::rectangular(m, std::move(ch));
  if (b_out) {
    const double step[4] = {lo, -lo, hi, -hi};
    *b_out = AdaptedProcess(m.node_count());
    for (NodeId v = 1; v < m.node_count(); ++v)
      (*b_out)[v] = (*b_out)[m.parent(v)] + step[v - m.first_child(m.parent(v))];
  }
  return {std::move(m), std::move(fam)};
}

struct GeneratedInstance {
  GeneratorSpec spec;
  FiltrationModel model;
  std::map<std::string, AdaptedProcess> processes;
  std::map<std::string, double> scalars;
  std::optional<MeasureFamily> family;

  const AdaptedProcess& process(const std::string& name) const {
    auto it = processes.find(name);
    if (it == processes.end()) throw Error("instance has no process '" + name + "'");
    return it->second;
  }
};

/// Deterministic in the spec. Processes per kind:
///   random_semimartingale: Y (random walk), plus a two-row rectangular family
///   random_barriers: L = min(X1, X2), U = max(X1, X2) of two random walks,
///     xi uniform between them at the terminal level, driver_c, and scalars
///     driver_y, driver_z, dt
///   zigzag: K (t on a chain, else random admissible) and Y
///   equal_barriers: L = U alternating 0/1, xi = L
///   g_zigzag: family {reference row, a row with one null child}, K and Y
///   volatility_family: B under the two-pair family, steps value_scale and 2*value_scale
inline GeneratedInstance random_instance(const GeneratorSpec& spec) {
  check_generator_spec(spec);
  Rng rng(spec.seed);
  GeneratedInstance g;
  g.spec = spec;
  const double s = spec.value_scale;
  switch (spec.kind) {
    case GeneratorKind::random_semimartingale: {
      g.model = make_random_tree(spec.depth, spec.branching, rng);
      g.processes.emplace("Y", random_walk(g.model, s, rng));
      g.family = random_rectangular_family(g.model, rng);
      break;
    }
    case GeneratorKind::random_barriers: {
      g.model = make_random_tree(spec.depth, spec.branching, rng);
      const auto x1 = random_walk(g.model, s, rng), x2 = random_walk(g.model, s, rng);
      AdaptedProcess l(g.model.node_count()), u(g.model.node_count()), xi(g.model.node_count()),
          c(g.model.node_count());
      for (NodeId v = 0; v < g.model.node_count(); ++v) {
        l[v] = std::min(x1[v], x2[v]);
        u[v] = std::max(x1[v], x2[v]);
      }
      for (NodeId v = g.model.first_leaf(); v < g.model.node_count(); ++v) xi[v] = rng.uniform(l[v], u[v]);
      for (NodeId v = 0; v < g.model.first_leaf(); ++v) c[v] = rng.uniform(-s, s);
      g.processes.emplace("L", std::move(l));
      g.processes.emplace("U", std::move(u));
      g.processes.emplace("xi", std::move(xi));
      g.processes.emplace("driver_c", std::move(c));
      g.scalars["driver_y"] = rng.uniform(-1.0, 1.0);
      g.scalars["driver_z"] = rng.uniform(-1.0, 1.0);
      g.scalars["dt"] = 1.0 / spec.depth;
      break;
    }
    case GeneratorKind::zigzag: {
      AdaptedProcess k;
      if (spec.branching == 1) {
        g.model = make_chain(spec.depth);
        k = AdaptedProcess(g.model.node_count());
        for (NodeId v = 0; v < g.model.node_count(); ++v) k[v] = g.model.time_of(v);
      } else {
        g.model = make_random_tree(spec.depth, spec.branching, rng);
        k = random_admissible_k(g.model, rng);
      }
      g.processes.emplace("Y", zigzag_example(g.model, k));
      g.processes.emplace("K", std::move(k));
      break;
    }
    case GeneratorKind::equal_barriers: {
      g.model = spec.branching == 1 ? make_chain(spec.depth) : make_random_tree(spec.depth, spec.branching, rng);
      auto [l, u] = equal_barriers_counterexample(g.model);
      g.processes.emplace("xi", l);
      g.processes.emplace("L", std::move(l));
      g.processes.emplace("U", std::move(u));
      break;
    }
    case GeneratorKind::g_zigzag: {
      g.model = make_random_tree(spec.depth, spec.branching, rng);
      std::vector<std::vector<std::vector<double>>> ch(g.model.node_count());
      for (NodeId v = 0; v < g.model.first_leaf(); ++v) {
        const std::size_t b = g.model.child_count(v);
        std::vector<double> ref(b);
        for (std::size_t i = 0; i < b; ++i) ref[i] = g.model.reference()[g.model.first_child(v) + i];
        // mass of one child moved onto the others
        const std::size_t null_child = rng.index(b);
        auto thin = ref;
        const double moved = thin[null_child];
        thin[null_child] = 0.0;
        for (std::size_t i = 0; i < b; ++i)
          if (i != null_child) thin[i] += moved / static_cast<double>(b - 1);
        ch[v] = {std::move(ref), std::move(thin)};
      }
      g.family = MeasureFamily::rectangular(g.model, std::move(ch));
      auto [k, y] = g_zigzag_example(g.model, *g.family);
      g.processes.emplace("K", std::move(k));
      g.processes.emplace("Y", std::move(y));
      break;
    }
    case GeneratorKind::volatility_family: {
      AdaptedProcess b;
      auto [m, fam] = volatility_family(spec.depth, s, 2.0 * s, &b);
      g.model = std::move(m);
      g.family = std::move(fam);
      g.processes.emplace("B", std::move(b));
      break;
    }
  }
  return g;
}

}  // namespace martnorm

namespace martnorm {

/// Y = Y0 + M + A with M a martingale under the reference measure and A
/// nondecreasing. With lag 1 every A increment is known one level early; with
/// lag 2 the increments over levels [2j, 2j+2] are both drawn at level 2j, so
/// A at every even level is known at the previous even level.
inline AdaptedProcess random_monotone_semimartingale(const FiltrationModel& m, double scale, Rng& rng, int lag = 1) {
  if (lag != 1 && lag != 2) throw Error("lag must be 1 or 2");
  const Measure& q = m.reference();
  const std::size_t n = m.node_count();
  AdaptedProcess y(n);
  std::vector<double> a_out(n, 0.0);
  y[0] = rng.uniform(-scale, scale);
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    const NodeId c0 = m.first_child(v);
    const std::size_t b = m.child_count(v);
    if (lag == 1 || m.time_of(v) % 2 == 0) {
      a_out[v] = rng.uniform(0.0, scale);
      if (lag == 2) {
        const double next = rng.uniform(0.0, scale);
        for (std::size_t i = 0; i < b; ++i) a_out[c0 + i] = next;
      }
    }
    std::vector<double> r(b);
    double mean = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      r[i] = rng.uniform(-scale, scale);
      mean += q[c0 + i] * r[i];
    }
    for (std::size_t i = 0; i < b; ++i) y[c0 + i] = y[v] + (r[i] - mean) + a_out[v];
  }
  return y;
}

}  // namespace martnorm
