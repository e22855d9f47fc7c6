#pragma once

// Stopping-partition machinery: the lattice of cuts, exhaustive enumeration of
// monotone partitions, and the partition-supremum search shared by every norm
// of the form outer((sum_i term_i)^2).

#include <concepts>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>

#include "martnorm/filtration.hpp"

namespace martnorm {

inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

/// The enumeration cap, overridable through the MARTNORM_CAP environment variable.
inline std::size_t enumeration_cap() {
  if (const char* env = std::getenv("MARTNORM_CAP")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return kDefaultEnumerationCap;
}

enum class Strategy { finest, enumerate, greedy };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::finest: return "finest";
    case Strategy::enumerate: return "enumerate";
    case Strategy::greedy: return "greedy";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "finest") return Strategy::finest;
  if (s == "enumerate") return Strategy::enumerate;
  if (s == "greedy") return Strategy::greedy;
  throw Error("unknown strategy '" + s + "'");
}

namespace detail {
inline std::size_t sat_add(std::size_t a, std::size_t b, std::size_t cap) { return (a > cap || b > cap - a) ? cap + 1 : a + b; }
inline std::size_t sat_mul(std::size_t a, std::size_t b, std::size_t cap) {
  if (a == 0 || b == 0) return 0;
  return (a > cap / b) ? cap + 1 : a * b;
}
}  // namespace detail

/// Number of cuts of the model, saturated at cap + 1.
inline std::size_t count_cuts(const FiltrationModel& m, std::size_t cap) {
  std::vector<std::size_t> c(m.node_count(), 1);
  for (NodeId v = m.first_leaf(); v-- > 0;) {
    std::size_t prod = 1;
    for (std::size_t i = 0; i < m.child_count(v); ++i) prod = detail::sat_mul(prod, c[m.first_child(v) + i], cap);
    c[v] = detail::sat_add(prod, 1, cap);
  }
  return c[0];
}

/// Number of monotone partitions with exactly `segments` segments (tau_0 = 0,
/// tau_n = T fixed, intermediate times weakly increasing), saturated at cap + 1.
///
/// Recursion: a weak sequence of k cuts of subtree(v) stays at {v} for its first
/// j entries and then factorizes over the children.
inline std::size_t count_stopping_partitions(const FiltrationModel& m, std::size_t segments, std::size_t cap) {
  if (segments == 0) return 0;
  const std::size_t k_max = segments - 1;
  std::vector<std::vector<std::size_t>> f(m.node_count(), std::vector<std::size_t>(k_max + 1, 1));
  for (NodeId v = m.first_leaf(); v-- > 0;) {
    for (std::size_t k = 0; k <= k_max; ++k) {
      std::size_t total = 0;
      for (std::size_t j = 0; j <= k; ++j) {
        std::size_t prod = 1;
        for (std::size_t i = 0; i < m.child_count(v); ++i) prod = detail::sat_mul(prod, f[m.first_child(v) + i][k - j], cap);
        total = detail::sat_add(total, prod, cap);
      }
      f[v][k] = total;
    }
  }
  return f[0][k_max];
}

/// Every cut of a model, with the strict and weak order between them.
class CutLattice {
 public:
  static constexpr std::size_t kMaxCuts = 5000;

  explicit CutLattice(const FiltrationModel& m, std::size_t cap = enumeration_cap()) : model_(&m) {
    const std::size_t limit = std::min(cap, kMaxCuts);
    if (count_cuts(m, limit) > limit)
      throw Error("enumeration too large: the model has more than " + std::to_string(limit) +
                  " cuts; use strategy=greedy or strategy=finest");
    std::vector<std::vector<std::vector<NodeId>>> sub(m.node_count());
    for (NodeId v = m.node_count(); v-- > 0;) {
      sub[v].push_back({v});
      if (m.is_terminal(v)) continue;
      std::vector<std::vector<NodeId>> acc{{}};
      for (std::size_t i = 0; i < m.child_count(v); ++i) {
        const auto& opts = sub[m.first_child(v) + i];
        std::vector<std::vector<NodeId>> next;
        next.reserve(acc.size() * opts.size());
        for (const auto& a : acc)
          for (const auto& o : opts) {
            auto x = a;
            x.insert(x.end(), o.begin(), o.end());
            next.push_back(std::move(x));
          }
        acc = std::move(next);
      }
      for (auto& a : acc) sub[v].push_back(std::move(a));
      for (std::size_t i = 0; i < m.child_count(v); ++i) {
        auto& s = sub[m.first_child(v) + i];
        std::vector<std::vector<NodeId>>().swap(s);
      }
    }
    words_ = (m.node_count() + 63) / 64;
    for (auto& nodes : sub[0]) {
      cuts_.push_back(StoppingTime::from_cut(m, std::move(nodes)));
      const auto& t = cuts_.back();
      std::vector<std::uint64_t> bits(words_, 0);
      std::size_t popcount = 0;
      for (NodeId v = 0; v < m.node_count(); ++v)
        if (t.above(v)) {
          bits[v / 64] |= std::uint64_t{1} << (v % 64);
          ++popcount;
        }
      passed_.push_back(std::move(bits));
      passed_count_.push_back(popcount);
    }
    for (std::size_t i = 0; i < cuts_.size(); ++i) {
      if (passed_count_[i] == 0) initial_ = i;
      if (passed_count_[i] == m.internal_count()) terminal_ = i;
    }
  }

  std::size_t size() const { return cuts_.size(); }
  const StoppingTime& cut(std::size_t i) const { return cuts_[i]; }
  std::size_t initial() const { return initial_; }
  std::size_t terminal() const { return terminal_; }

  /// cut(i) <= cut(j) pathwise.
  bool weakly_before(std::size_t i, std::size_t j) const {
    for (std::size_t w = 0; w < words_; ++w)
      if ((passed_[i][w] & ~passed_[j][w]) != 0) return false;
    return true;
  }
  bool strictly_before(std::size_t i, std::size_t j) const {
    return passed_count_[i] < passed_count_[j] && weakly_before(i, j);
  }

  std::vector<std::vector<std::size_t>> successors(bool strict) const {
    std::vector<std::vector<std::size_t>> s(size());
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < size(); ++j)
        if (strict ? strictly_before(i, j) : weakly_before(i, j)) s[i].push_back(j);
    return s;
  }

  const FiltrationModel& model() const { return *model_; }

 private:
  const FiltrationModel* model_;
  std::vector<StoppingTime> cuts_;
  std::vector<std::vector<std::uint64_t>> passed_;
  std::vector<std::size_t> passed_count_;
  std::size_t words_ = 0;
  std::size_t initial_ = 0;
  std::size_t terminal_ = 0;
};

/// Calls `visit` for every monotone partition with exactly `segments` segments
/// (intermediate times weakly increasing); `visit` returns false to stop.
/// Throws "enumeration too large" when the count exceeds the cap.
inline std::size_t enumerate_stopping_partitions(const FiltrationModel& m, std::size_t segments,
                                                 const std::function<bool(const StoppingPartition&)>& visit,
                                                 std::size_t cap = enumeration_cap()) {
  if (segments == 0) throw Error("max_segments must be at least 1");
  const std::size_t count = count_stopping_partitions(m, segments, cap);
  if (count > cap)
    throw Error("enumeration too large: more than " + std::to_string(cap) +
                " partitions; use strategy=greedy or lower max_segments");
  CutLattice lattice(m, cap);
  const auto succ = lattice.successors(false);
  std::vector<std::size_t> chain{lattice.initial()};
  std::size_t emitted = 0;
  bool stop = false;
  std::function<void(std::size_t)> dfs = [&](std::size_t cur) {
    if (stop) return;
    if (chain.size() == segments) {
      StoppingPartition p;
      for (auto i : chain) p.times.push_back(lattice.cut(i));
      p.times.push_back(lattice.cut(lattice.terminal()));
      ++emitted;
      if (!visit(p)) stop = true;
      return;
    }
    for (std::size_t j : succ[cur]) {
      chain.push_back(j);
      dfs(j);
      chain.pop_back();
      if (stop) return;
    }
  };
  dfs(lattice.initial());
  return emitted;
}

/// A partition-supremum objective: sup over partitions of
/// outer( (sum_i term(target(tau_{i+1}), tau_i, node of tau_i))^2 ).
template <class O>
concept PartitionObjective = requires(const O& o, const StoppingTime& t, NodeId u, std::span<const double> leaf) {
  typename O::Target;
  { o.target(t) } -> std::convertible_to<typename O::Target>;
  { o.term(std::declval<const typename O::Target&>(), t, u) } -> std::convertible_to<double>;
  { o.outer(leaf) } -> std::convertible_to<double>;
};

struct PartitionSearchResult {
  double value = 0.0;
  StoppingPartition partition;
  Strategy strategy = Strategy::finest;
  bool lower_bound = false;
  std::size_t evaluated = 0;
};

/// Adds the segment contribution of (from -> to) to the per-leaf sums.
template <PartitionObjective O>
void accumulate_segment(const FiltrationModel& m, const O& obj, const typename O::Target& to_target,
                        const StoppingTime& from, std::vector<double>& sums) {
  const NodeId fl = m.first_leaf();
  for (NodeId leaf = fl; leaf < m.node_count(); ++leaf) sums[leaf - fl] += obj.term(to_target, from, from.anchor(leaf));
}

template <PartitionObjective O>
double evaluate_partition(const FiltrationModel& m, const O& obj, const StoppingPartition& p) {
  std::vector<double> sums(m.leaf_count(), 0.0);
  for (std::size_t i = 0; i + 1 < p.times.size(); ++i) {
    const auto target = obj.target(p.times[i + 1]);
    accumulate_segment(m, obj, target, p.times[i], sums);
  }
  for (auto& s : sums) s *= s;
  return obj.outer(sums);
}

inline StoppingPartition finest_partition(const FiltrationModel& m) {
  StoppingPartition p;
  for (int k = 0; k <= m.horizon(); ++k) p.times.push_back(StoppingTime::at_level(m, k));
  return p;
}

inline StoppingPartition trivial_partition(const FiltrationModel& m) {
  return StoppingPartition{{StoppingTime::initial(m), StoppingTime::terminal(m)}};
}

/// Number of strictly increasing partitions with at most `segments` segments,
/// saturated at cap + 1.
inline std::size_t count_strict_chains(const CutLattice& lattice, const std::vector<std::vector<std::size_t>>& succ,
                                       std::size_t segments, std::size_t cap) {
  const std::size_t n = lattice.size();
  std::vector<std::vector<std::size_t>> memo(segments + 1, std::vector<std::size_t>(n, 0));
  for (std::size_t k = 1; k <= segments; ++k)
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t total = 0;
      for (std::size_t j : succ[i])
        total = detail::sat_add(total, j == lattice.terminal() ? 1 : memo[k - 1][j], cap);
      memo[k][i] = total;
    }
  return memo[segments][lattice.initial()];
}

namespace detail {

template <PartitionObjective O>
PartitionSearchResult enumerate_supremum(const FiltrationModel& m, const O& obj, std::size_t max_segments,
                                         std::size_t cap) {
  CutLattice lattice(m, cap);
  const auto succ = lattice.successors(true);
  if (count_strict_chains(lattice, succ, max_segments, cap) > cap)
    throw Error("enumeration too large: more than " + std::to_string(cap) +
                " partitions; use strategy=greedy or lower max_segments");
  std::vector<std::optional<typename O::Target>> targets(lattice.size());
  auto target_of = [&](std::size_t j) -> const typename O::Target& {
    if (!targets[j]) targets[j].emplace(obj.target(lattice.cut(j)));
    return *targets[j];
  };
  PartitionSearchResult best;
  best.strategy = Strategy::enumerate;
  best.value = -1.0;
  std::vector<std::size_t> chain{lattice.initial()};
  std::vector<std::vector<double>> sums_stack{std::vector<double>(m.leaf_count(), 0.0)};
  std::vector<double> sq(m.leaf_count());
  std::function<void(std::size_t, std::size_t)> dfs = [&](std::size_t cur, std::size_t used) {
    for (std::size_t j : succ[cur]) {
      auto sums = sums_stack.back();
      accumulate_segment(m, obj, target_of(j), lattice.cut(cur), sums);
      if (j == lattice.terminal()) {
        for (std::size_t l = 0; l < sums.size(); ++l) sq[l] = sums[l] * sums[l];
        const double v = obj.outer(sq);
        ++best.evaluated;
        if (v > best.value) {
          best.value = v;
          best.partition.times.clear();
          for (auto i : chain) best.partition.times.push_back(lattice.cut(i));
          best.partition.times.push_back(lattice.cut(j));
        }
      } else if (used + 1 < max_segments) {
        chain.push_back(j);
        sums_stack.push_back(std::move(sums));
        dfs(j, used + 1);
        sums_stack.pop_back();
        chain.pop_back();
      }
    }
  };
  dfs(lattice.initial(), 0);
  return best;
}

inline std::vector<NodeId> push_down(const FiltrationModel& m, const std::vector<NodeId>& cut, NodeId u) {
  std::vector<NodeId> out;
  for (NodeId v : cut)
    if (v != u) out.push_back(v);
  for (std::size_t i = 0; i < m.child_count(u); ++i) out.push_back(m.first_child(u) + i);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::optional<std::vector<NodeId>> pull_up(const FiltrationModel& m, const std::vector<NodeId>& cut, NodeId p) {
  const NodeId b = m.first_child(p), e = b + m.child_count(p);
  std::size_t found = 0;
  std::vector<NodeId> out;
  for (NodeId v : cut) {
    if (v >= b && v < e)
      ++found;
    else
      out.push_back(v);
  }
  if (found != m.child_count(p)) return std::nullopt;
  out.push_back(p);
  std::sort(out.begin(), out.end());
  return out;
}

template <PartitionObjective O>
PartitionSearchResult greedy_supremum(const FiltrationModel& m, const O& obj, std::size_t max_segments) {
  PartitionSearchResult best;
  best.strategy = Strategy::greedy;
  best.lower_bound = true;
  auto consider = [&](StoppingPartition p) {
    if (p.segments() > max_segments) return false;
    const double v = evaluate_partition(m, obj, p);
    ++best.evaluated;
    if (v > best.value * (1.0 + 1e-14) + 1e-300 || best.partition.times.empty()) {
      best.value = v;
      best.partition = std::move(p);
      return true;
    }
    return false;
  };
  auto fin = finest_partition(m);
  if (fin.segments() <= max_segments) consider(fin);
  consider(trivial_partition(m));

  for (int iter = 0; iter < 500; ++iter) {
    const StoppingPartition base = best.partition;
    const double before = best.value;
    const std::size_t n = base.times.size();
    auto with_cut = [&](std::size_t i, const std::vector<NodeId>& nodes, bool insert) -> std::optional<StoppingPartition> {
      StoppingTime t = StoppingTime::from_cut(m, nodes);
      StoppingPartition p = base;
      if (insert)
        p.times.insert(p.times.begin() + static_cast<std::ptrdiff_t>(i) + 1, t);
      else
        p.times[i] = t;
      const std::size_t at = insert ? i + 1 : i;
      if (!p.times[at - 1].precedes(p.times[at]) || !p.times[at].precedes(p.times[at + 1])) return std::nullopt;
      if (p.times[at - 1] == p.times[at] || p.times[at] == p.times[at + 1]) return std::nullopt;
      return p;
    };
    for (std::size_t i = 1; i + 1 < n; ++i) {
      StoppingPartition p = base;
      p.times.erase(p.times.begin() + static_cast<std::ptrdiff_t>(i));
      consider(std::move(p));
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto& cut = base.times[i].nodes();
      for (NodeId u : cut) {
        if (m.is_terminal(u)) continue;
        const auto down = push_down(m, cut, u);
        if (auto p = with_cut(i, down, true)) consider(std::move(*p));
        if (i > 0)
          if (auto p = with_cut(i, down, false)) consider(std::move(*p));
      }
      if (i == 0) continue;
      std::vector<NodeId> parents;
      for (NodeId u : cut)
        if (u != 0) parents.push_back(m.parent(u));
      std::sort(parents.begin(), parents.end());
      parents.erase(std::unique(parents.begin(), parents.end()), parents.end());
      for (NodeId par : parents)
        if (auto up = pull_up(m, cut, par))
          if (auto p = with_cut(i, *up, false)) consider(std::move(*p));
    }
    if (!(best.value > before)) break;
  }
  return best;
}

}  // namespace detail

/// Supremum of the objective over stopping partitions.
///
/// finest evaluates the deterministic full grid; enumerate is exact over all
/// strictly increasing partitions with at most max_segments segments (0 means
/// unrestricted); greedy hill-climbs from the better of the finest and trivial
/// partitions and reports a lower bound.
template <PartitionObjective O>
PartitionSearchResult partition_supremum(const FiltrationModel& m, const O& obj, Strategy strategy,
                                         std::size_t max_segments = 0, std::size_t cap = enumeration_cap()) {
  if (max_segments == 0) max_segments = std::max<std::size_t>(m.internal_count(), static_cast<std::size_t>(m.horizon()));
  switch (strategy) {
    case Strategy::finest: {
      PartitionSearchResult r;
      r.strategy = Strategy::finest;
      r.partition = finest_partition(m);
      r.value = evaluate_partition(m, obj, r.partition);
      r.evaluated = 1;
      return r;
    }
    case Strategy::enumerate:
      return detail::enumerate_supremum(m, obj, max_segments, cap);
    case Strategy::greedy:
      return detail::greedy_supremum(m, obj, max_segments);
  }
  throw Error("unknown strategy");
}

}  // namespace martnorm
