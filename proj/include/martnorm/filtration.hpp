#pragma once

// Finite filtered probability models: event trees, adapted processes,
// stopping times encoded as antichain cuts, and exact conditional expectation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace martnorm {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

/// Raised for computation errors (bad inputs, caps exceeded, divergence).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kProbTolerance = 1e-12;
inline constexpr double kRenormalizeTolerance = 1e-9;

/// A real value per node of a model.
class AdaptedProcess {
 public:
  AdaptedProcess() = default;
  explicit AdaptedProcess(std::size_t n, double fill = 0.0) : value_(n, fill) {}
  explicit AdaptedProcess(std::vector<double> v) : value_(std::move(v)) {}

  double operator[](NodeId v) const { return value_[v]; }
  double& operator[](NodeId v) { return value_[v]; }
  std::size_t size() const { return value_.size(); }
  const std::vector<double>& values() const { return value_; }
  std::span<const double> span() const { return value_; }

  AdaptedProcess& operator+=(const AdaptedProcess& o) {
    for (std::size_t i = 0; i < value_.size(); ++i) value_[i] += o.value_[i];
    return *this;
  }
  AdaptedProcess& operator-=(const AdaptedProcess& o) {
    for (std::size_t i = 0; i < value_.size(); ++i) value_[i] -= o.value_[i];
    return *this;
  }
  AdaptedProcess& operator*=(double s) {
    for (auto& x : value_) x *= s;
    return *this;
  }
  AdaptedProcess& operator+=(double s) {
    for (auto& x : value_) x += s;
    return *this;
  }
  friend AdaptedProcess operator+(AdaptedProcess a, const AdaptedProcess& b) { return a += b; }
  friend AdaptedProcess operator-(AdaptedProcess a, const AdaptedProcess& b) { return a -= b; }
  friend AdaptedProcess operator*(double s, AdaptedProcess a) { return a *= s; }
  friend AdaptedProcess operator+(AdaptedProcess a, double s) { return a += s; }

 private:
  std::vector<double> value_;
};

/// Transition probabilities, stored per child node: prob[v] is the probability
/// of the edge parent(v) -> v. prob[root] is 1.
class Measure {
 public:
  Measure() = default;
  explicit Measure(std::vector<double> edge_prob) : prob_(std::move(edge_prob)) {}

  double operator[](NodeId child) const { return prob_[child]; }
  double& operator[](NodeId child) { return prob_[child]; }
  std::size_t size() const { return prob_.size(); }
  const std::vector<double>& edges() const { return prob_; }

  friend bool operator==(const Measure&, const Measure&) = default;

 private:
  std::vector<double> prob_;
};

/// Unvalidated model description, as read from a file or produced by a builder.
struct ModelDraft {
  struct Edge {
    std::string child;
    double prob = 0.0;
  };
  struct Node {
    std::string id;
    int time = 0;
    std::vector<Edge> children;
  };
  int horizon = 0;
  std::vector<Node> nodes;
};

struct ValidationIssue {
  std::string node;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> failures;
  std::vector<ValidationIssue> warnings;
  bool pass() const { return failures.empty(); }
  std::string summary() const {
    std::ostringstream os;
    for (const auto& f : failures) os << "node " << f.node << ": " << f.message << "\n";
    return os.str();
  }
};

namespace detail {
inline std::string fmt_double(double x) {
  std::ostringstream os;
  os.precision(15);
  os << x;
  return os.str();
}
}  // namespace detail

/// Checks the tree, level and probability invariants of a draft.
///
/// Probability rows summing to 1 within 1e-12 pass; rows within 1e-9 pass with a
/// "renormalized" warning; anything else fails with the observed sum.
inline ValidationReport validate_model(const ModelDraft& draft) {
  ValidationReport rep;
  auto fail = [&](const std::string& node, std::string msg) {
    rep.failures.push_back({node, std::move(msg)});
  };
  if (draft.horizon < 1) fail("-", "horizon must be a positive integer");
  if (draft.nodes.empty()) {
    fail("-", "model has no nodes");
    return rep;
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < draft.nodes.size(); ++i) {
    if (!index.emplace(draft.nodes[i].id, i).second) fail(draft.nodes[i].id, "duplicate node id");
  }
  std::vector<int> parent_count(draft.nodes.size(), 0);
  for (const auto& n : draft.nodes) {
    if (n.time < 0 || n.time > draft.horizon) fail(n.id, "time outside [0, horizon]");
    if (n.children.empty()) {
      if (n.time != draft.horizon) fail(n.id, "terminal node not at horizon level");
      continue;
    }
    if (n.time >= draft.horizon) fail(n.id, "node at horizon level has children");
    double sum = 0.0;
    bool zero_edge = false;
    for (const auto& e : n.children) {
      auto it = index.find(e.child);
      if (it == index.end()) {
        fail(n.id, "unknown child " + e.child);
        continue;
      }
      ++parent_count[it->second];
      if (draft.nodes[it->second].time != n.time + 1) fail(n.id, "level inconsistency at child " + e.child);
      if (!(e.prob >= 0.0 && e.prob <= 1.0)) fail(n.id, "probability outside [0,1] on edge to " + e.child);
      if (e.prob == 0.0) zero_edge = true;
      sum += e.prob;
    }
    const double err = std::abs(sum - 1.0);
    if (err > kRenormalizeTolerance) {
      fail(n.id, "probabilities sum " + detail::fmt_double(sum));
    } else if (err > kProbTolerance) {
      rep.warnings.push_back({n.id, "probabilities renormalized from sum " + detail::fmt_double(sum)});
    }
    if (zero_edge) rep.warnings.push_back({n.id, "zero-probability edge"});
  }
  int roots = 0;
  for (std::size_t i = 0; i < draft.nodes.size(); ++i) {
    const auto& n = draft.nodes[i];
    if (parent_count[i] == 0) {
      ++roots;
      if (n.time != 0) fail(n.id, "node without parent is not at level 0");
    } else if (parent_count[i] > 1) {
      fail(n.id, "node has more than one parent");
    }
  }
  if (roots != 1) fail("-", "expected exactly one root, found " + std::to_string(roots));
  return rep;
}

/// A validated event tree. Nodes are re-indexed breadth-first, so indices
/// increase with level and the terminal nodes occupy the last block.
class FiltrationModel {
 public:
  /// Validates and builds; throws Error with the report summary on failure.
  static FiltrationModel build(const ModelDraft& draft) {
    auto rep = validate_model(draft);
    if (!rep.pass()) throw Error("invalid model:\n" + rep.summary());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < draft.nodes.size(); ++i) index.emplace(draft.nodes[i].id, i);
    std::vector<bool> has_parent(draft.nodes.size(), false);
    for (const auto& n : draft.nodes)
      for (const auto& e : n.children) has_parent[index.at(e.child)] = true;
    std::size_t root = 0;
    while (has_parent[root]) ++root;

    FiltrationModel m;
    m.horizon_ = draft.horizon;
    std::vector<std::size_t> order{root};
    std::vector<NodeId> new_id(draft.nodes.size(), kNoNode);
    new_id[root] = 0;
    m.parent_.push_back(kNoNode);
    m.time_.push_back(0);
    m.labels_.push_back(draft.nodes[root].id);
    std::vector<double> ref{1.0};
    for (std::size_t head = 0; head < order.size(); ++head) {
      const auto& n = draft.nodes[order[head]];
      double sum = 0.0;
      for (const auto& e : n.children) sum += e.prob;
      const bool renorm = std::abs(sum - 1.0) > kProbTolerance;
      for (const auto& e : n.children) {
        const auto old = index.at(e.child);
        new_id[old] = order.size();
        order.push_back(old);
        m.parent_.push_back(head);
        m.time_.push_back(draft.nodes[old].time);
        m.labels_.push_back(draft.nodes[old].id);
        ref.push_back(renorm ? e.prob / sum : e.prob);
      }
    }
    if (order.size() != draft.nodes.size()) throw Error("invalid model: nodes unreachable from root");
    m.ref_ = Measure(std::move(ref));
    m.finish();
    return m;
  }

  std::size_t node_count() const { return parent_.size(); }
  int horizon() const { return horizon_; }
  NodeId root() const { return 0; }
  int time_of(NodeId v) const { return time_[v]; }
  NodeId parent(NodeId v) const { return parent_[v]; }
  /// Children of v are the contiguous index range [first_child, first_child + child_count).
  NodeId first_child(NodeId v) const { return first_child_[v]; }
  std::size_t child_count(NodeId v) const { return child_count_[v]; }
  bool is_terminal(NodeId v) const { return child_count_[v] == 0; }
  const Measure& reference() const { return ref_; }
  const std::string& label(NodeId v) const { return labels_[v]; }
  std::optional<NodeId> find(const std::string& label) const {
    auto it = by_label_.find(label);
    if (it == by_label_.end()) return std::nullopt;
    return it->second;
  }
  /// Nodes at level k form the index range [level_begin(k), level_begin(k+1)).
  NodeId level_begin(int k) const { return level_begin_[static_cast<std::size_t>(k)]; }
  NodeId level_end(int k) const { return level_begin_[static_cast<std::size_t>(k) + 1]; }
  NodeId first_leaf() const { return level_begin(horizon_); }
  std::size_t leaf_count() const { return node_count() - first_leaf(); }
  bool is_binary() const {
    for (NodeId v = 0; v < first_leaf(); ++v)
      if (child_count_[v] != 2) return false;
    return true;
  }
  std::size_t internal_count() const { return first_leaf(); }

  /// Replaces the reference measure; used by builders and generators.
  void set_reference(Measure m) { ref_ = std::move(m); }

 private:
  void finish() {
    const std::size_t n = parent_.size();
    first_child_.assign(n, kNoNode);
    child_count_.assign(n, 0);
    for (NodeId v = 1; v < n; ++v) {
      const NodeId p = parent_[v];
      if (first_child_[p] == kNoNode) first_child_[p] = v;
      ++child_count_[p];
    }
    level_begin_.assign(static_cast<std::size_t>(horizon_) + 2, n);
    for (NodeId v = n; v-- > 0;) level_begin_[static_cast<std::size_t>(time_[v])] = v;
    level_begin_[static_cast<std::size_t>(horizon_) + 1] = n;
    for (NodeId v = 0; v < n; ++v) by_label_.emplace(labels_[v], v);
  }

  int horizon_ = 0;
  std::vector<NodeId> parent_;
  std::vector<int> time_;
  std::vector<NodeId> first_child_;
  std::vector<std::size_t> child_count_;
  std::vector<NodeId> level_begin_;
  std::vector<std::string> labels_;
  std::map<std::string, NodeId> by_label_;
  Measure ref_;
};

/// Builds a uniform-branching tree of the given depth. Every internal node gets
/// the same child probability row. Labels are breadth-first indices.
inline FiltrationModel make_tree(int depth, std::span<const double> child_probs) {
  ModelDraft d;
  d.horizon = depth;
  const std::size_t b = child_probs.size();
  std::size_t level_size = 1, next = 1;
  std::size_t id = 0;
  for (int k = 0; k <= depth; ++k) {
    for (std::size_t i = 0; i < level_size; ++i, ++id) {
      ModelDraft::Node n{std::to_string(id), k, {}};
      if (k < depth)
        for (std::size_t c = 0; c < b; ++c) n.children.push_back({std::to_string(next++), child_probs[c]});
      d.nodes.push_back(std::move(n));
    }
    level_size *= b;
  }
  return FiltrationModel::build(d);
}

inline FiltrationModel make_binary_tree(int depth, double p_up = 0.5) {
  const double row[2] = {p_up, 1.0 - p_up};
  return make_tree(depth, row);
}

/// A deterministic chain: one child per node.
inline FiltrationModel make_chain(int depth) {
  const double row[1] = {1.0};
  return make_tree(depth, row);
}

/// Validates a measure against the model's edges.
inline void check_measure(const FiltrationModel& m, const Measure& q) {
  if (q.size() != m.node_count()) throw Error("measure size does not match model");
  for (NodeId v = 0; v < m.first_leaf(); ++v) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.child_count(v); ++i) {
      const double p = q[m.first_child(v) + i];
      if (!(p >= 0.0 && p <= 1.0)) throw Error("measure probability outside [0,1] at node " + m.label(v));
      s += p;
    }
    if (std::abs(s - 1.0) > kProbTolerance)
      throw Error("measure probabilities at node " + m.label(v) + " sum " + detail::fmt_double(s));
  }
}

/// Probability of reaching each node under the measure.
inline std::vector<double> reach_probabilities(const FiltrationModel& m, const Measure& q) {
  std::vector<double> r(m.node_count(), 1.0);
  for (NodeId v = 1; v < m.node_count(); ++v) r[v] = r[m.parent(v)] * q[v];
  return r;
}

/// Expectation of a terminal random variable given per leaf (leaf index order).
inline double leaf_expectation(const FiltrationModel& m, const Measure& q, std::span<const double> leaf_values) {
  // Backward weighting keeps the summation order identical to conditional_expectation.
  std::vector<double> w(m.node_count(), 0.0);
  const NodeId fl = m.first_leaf();
  for (NodeId v = fl; v < m.node_count(); ++v) w[v] = leaf_values[v - fl];
  for (NodeId v = fl; v-- > 0;) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.child_count(v); ++i) {
      const NodeId c = m.first_child(v) + i;
      s += q[c] * w[c];
    }
    w[v] = s;
  }
  return w[0];
}

/// An antichain cut crossed exactly once by every root-to-leaf path.
class StoppingTime {
 public:
  StoppingTime() = default;

  /// Validates the cut structurally and returns the stopping time.
  static StoppingTime from_cut(const FiltrationModel& m, std::vector<NodeId> nodes) {
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    StoppingTime t;
    t.anchor_.assign(m.node_count(), kNoNode);
    std::vector<char> in_cut(m.node_count(), 0);
    for (NodeId v : nodes) {
      if (v >= m.node_count()) throw Error("cut node out of range");
      in_cut[v] = 1;
    }
    for (NodeId v = 0; v < m.node_count(); ++v) {
      const NodeId p = m.parent(v);
      const NodeId inherited = (p == kNoNode) ? kNoNode : t.anchor_[p];
      if (in_cut[v]) {
        if (inherited != kNoNode) throw Error("cut is not an antichain: " + m.label(v) + " lies below another cut node");
        t.anchor_[v] = v;
      } else {
        t.anchor_[v] = inherited;
      }
    }
    for (NodeId v = m.first_leaf(); v < m.node_count(); ++v)
      if (t.anchor_[v] == kNoNode) throw Error("cut misses the path ending at " + m.label(v));
    t.nodes_ = std::move(nodes);
    return t;
  }

  static StoppingTime at_level(const FiltrationModel& m, int k) {
    std::vector<NodeId> nodes;
    for (NodeId v = m.level_begin(k); v < m.level_end(k); ++v) nodes.push_back(v);
    return from_cut(m, std::move(nodes));
  }
  static StoppingTime initial(const FiltrationModel& m) { return at_level(m, 0); }
  static StoppingTime terminal(const FiltrationModel& m) { return at_level(m, m.horizon()); }

  /// Cut nodes, sorted.
  const std::vector<NodeId>& nodes() const { return nodes_; }
  /// The cut node at or above v, or kNoNode when v lies strictly above the cut.
  NodeId anchor(NodeId v) const { return anchor_[v]; }
  bool above(NodeId v) const { return anchor_[v] == kNoNode; }
  /// Level at which the path through leaf v stops.
  int stop_level(const FiltrationModel& m, NodeId leaf) const { return m.time_of(anchor_[leaf]); }

  /// Pathwise this <= other.
  bool precedes(const StoppingTime& other) const {
    for (NodeId u : other.nodes_)
      if (anchor_[u] == kNoNode) return false;
    return true;
  }

  friend bool operator==(const StoppingTime& a, const StoppingTime& b) { return a.nodes_ == b.nodes_; }

 private:
  std::vector<NodeId> nodes_;
  std::vector<NodeId> anchor_;
};

/// 0 = tau_0 <= ... <= tau_n = T.
struct StoppingPartition {
  std::vector<StoppingTime> times;

  std::size_t segments() const { return times.empty() ? 0 : times.size() - 1; }
  bool is_monotone(const FiltrationModel& m) const {
    if (times.size() < 2) return false;
    if (!(times.front() == StoppingTime::initial(m))) return false;
    if (!(times.back() == StoppingTime::terminal(m))) return false;
    for (std::size_t i = 0; i + 1 < times.size(); ++i)
      if (!times[i].precedes(times[i + 1])) return false;
    return true;
  }
};

/// Values W(v) = E[X_at | path through v] for every node, by backward weighting.
/// At and below the cut W equals X at the cut node.
inline std::vector<double> stopped_values(const FiltrationModel& m, const Measure& q, std::span<const double> x,
                                          const StoppingTime& at) {
  std::vector<double> w(m.node_count(), 0.0);
  for (NodeId v = m.node_count(); v-- > 0;) {
    const NodeId a = at.anchor(v);
    if (a != kNoNode) {
      w[v] = x[a];
      continue;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < m.child_count(v); ++i) {
      const NodeId c = m.first_child(v) + i;
      s += q[c] * w[c];
    }
    w[v] = s;
  }
  return w;
}

/// E[X_of | F_from]. At and below the from-cut the result is constant along each
/// cut node's subtree; strictly above the from-cut it is E[X_of | F_v].
inline AdaptedProcess conditional_expectation(const FiltrationModel& m, const Measure& q, const AdaptedProcess& x,
                                              const StoppingTime& from, const StoppingTime& of) {
  if (!from.precedes(of)) throw Error("times not ordered");
  auto w = stopped_values(m, q, x.span(), of);
  AdaptedProcess r(m.node_count());
  for (NodeId v = 0; v < m.node_count(); ++v) {
    const NodeId a = from.anchor(v);
    r[v] = (a == kNoNode) ? w[v] : w[a];
  }
  return r;
}

inline double expectation(const FiltrationModel& m, const Measure& q, const AdaptedProcess& x, const StoppingTime& at) {
  return stopped_values(m, q, x.span(), at)[0];
}

/// One-step conditional expectation E[X_{k+1} | node v] for an internal node.
inline double one_step_mean(const FiltrationModel& m, const Measure& q, std::span<const double> x, NodeId v) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.child_count(v); ++i) {
    const NodeId c = m.first_child(v) + i;
    s += q[c] * x[c];
  }
  return s;
}

}  // namespace martnorm
