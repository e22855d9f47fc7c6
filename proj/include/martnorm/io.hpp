#pragma once

// JSON reading and writing for models, processes, families, DRBSDE instances
// and reports.

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "martnorm/drbsde.hpp"
#include "martnorm/generators.hpp"

namespace martnorm {

using json = nlohmann::json;

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

/// Everything a model file can carry.
struct ModelFile {
  FiltrationModel model;
  ValidationReport report;
  std::map<std::string, Measure> measures;
  std::map<std::string, AdaptedProcess> processes;
  std::map<std::string, MeasureFamily> families;
  std::map<std::string, double> scalars;
  json extra;  // unrecognized top-level members, kept verbatim

  const Measure& measure(const std::string& name) const {
    if (name.empty() || name == "reference") return model.reference();
    auto it = measures.find(name);
    if (it == measures.end()) throw Error("model has no measure '" + name + "'");
    return it->second;
  }
  const AdaptedProcess& process(const std::string& name) const {
    auto it = processes.find(name);
    if (it == processes.end()) throw Error("model has no process '" + name + "'");
    return it->second;
  }
  const MeasureFamily& family(const std::string& name) const {
    if (name.empty() && families.size() == 1) return families.begin()->second;
    auto it = families.find(name);
    if (it == families.end()) throw Error("model has no family '" + name + "'");
    return it->second;
  }
};

inline ModelDraft draft_from_json(const json& j) {
  ModelDraft d;
  try {
    d.horizon = j.at("horizon").get<int>();
    for (const auto& n : j.at("nodes")) {
      ModelDraft::Node node{n.at("id").get<std::string>(), n.at("time").get<int>(), {}};
      if (n.contains("children"))
        for (const auto& c : n.at("children")) node.children.push_back({c.at("id").get<std::string>(), c.at("prob").get<double>()});
      d.nodes.push_back(std::move(node));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed model: ") + e.what());
  }
  return d;
}

/// node-label -> value map, or a single number for a constant process.
inline AdaptedProcess process_from_json(const FiltrationModel& m, const json& j, const std::string& what) {
  if (j.is_number()) return AdaptedProcess(m.node_count(), j.get<double>());
  if (!j.is_object()) throw Error(what + ": expected an object mapping node ids to values");
  AdaptedProcess x(m.node_count());
  std::vector<char> seen(m.node_count(), 0);
  for (const auto& [key, val] : j.items()) {
    auto v = m.find(key);
    if (!v) throw Error(what + ": unknown node '" + key + "'");
    if (!val.is_number()) throw Error(what + ": value at '" + key + "' is not a number");
    x[*v] = val.get<double>();
    seen[*v] = 1;
  }
  for (NodeId v = 0; v < m.node_count(); ++v)
    if (!seen[v]) throw Error(what + ": missing node '" + m.label(v) + "'");
  return x;
}

inline json process_to_json(const FiltrationModel& m, const AdaptedProcess& x) {
  json j = json::object();
  for (NodeId v = 0; v < m.node_count(); ++v) j[m.label(v)] = x[v];
  return j;
}

/// Named measures are edge overrides on top of the reference: {child-id: prob}.
inline Measure measure_from_json(const FiltrationModel& m, const json& j, const std::string& what) {
  std::vector<double> p = m.reference().edges();
  for (const auto& [key, val] : j.items()) {
    auto v = m.find(key);
    if (!v || *v == 0) throw Error(what + ": '" + key + "' is not a child node");
    p[*v] = val.get<double>();
  }
  Measure q(std::move(p));
  check_measure(m, q);
  return q;
}

inline json measure_to_json(const FiltrationModel& m, const Measure& q) {
  json j = json::object();
  for (NodeId v = 1; v < m.node_count(); ++v) j[m.label(v)] = q[v];
  return j;
}

inline MeasureFamily family_from_json(const FiltrationModel& m, const std::map<std::string, Measure>& measures,
                                      const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "rectangular") {
    std::vector<std::vector<std::vector<double>>> ch(m.node_count());
    for (const auto& [key, rows] : j.at("choices").items()) {
      auto v = m.find(key);
      if (!v) throw Error("family: unknown node '" + key + "'");
      ch[*v] = rows.get<std::vector<std::vector<double>>>();
    }
    return MeasureFamily::rectangular(m, std::move(ch));
  }
  if (kind == "explicit") {
    std::vector<Measure> ms;
    std::vector<std::string> names;
    for (const auto& n : j.at("measures")) {
      const auto name = n.get<std::string>();
      if (name == "reference") {
        ms.push_back(m.reference());
      } else {
        auto it = measures.find(name);
        if (it == measures.end()) throw Error("family: unknown measure '" + name + "'");
        ms.push_back(it->second);
      }
      names.push_back(name);
    }
    return MeasureFamily::explicit_family(m, std::move(ms), std::move(names));
  }
  throw Error("family: unknown kind '" + kind + "'");
}

/// Explicit families serialize their measures inline under "members".
inline json family_to_json(const FiltrationModel& m, const MeasureFamily& f) {
  json j;
  if (f.is_rectangular()) {
    j["kind"] = "rectangular";
    j["choices"] = json::object();
    for (NodeId v = 0; v < m.first_leaf(); ++v) j["choices"][m.label(v)] = f.choices[v];
  } else {
    j["kind"] = "explicit";
    j["measures"] = f.names;
  }
  return j;
}

/// Parses and validates; a failed validation leaves `model` empty and the
/// failures in `report` unless `strict`, in which case it throws.
inline ModelFile model_from_json(const json& j, bool strict = true) {
  ModelFile f;
  const auto draft = draft_from_json(j);
  f.report = validate_model(draft);
  if (!f.report.pass()) {
    if (strict) throw Error("invalid model:\n" + f.report.summary());
    return f;
  }
  f.model = FiltrationModel::build(draft);
  if (j.contains("measures"))
    for (const auto& [name, mj] : j.at("measures").items())
      f.measures.emplace(name, measure_from_json(f.model, mj, "measure " + name));
  if (j.contains("processes"))
    for (const auto& [name, pj] : j.at("processes").items())
      f.processes.emplace(name, process_from_json(f.model, pj, "process " + name));
  if (j.contains("families"))
    for (const auto& [name, fj] : j.at("families").items()) {
      try {
        f.families.emplace(name, family_from_json(f.model, f.measures, fj));
      } catch (const json::exception& e) {
        throw Error("family " + name + ": " + e.what());
      }
    }
  if (j.contains("scalars"))
    for (const auto& [name, v] : j.at("scalars").items()) f.scalars[name] = v.get<double>();
  for (const auto& [key, val] : j.items())
    if (key != "horizon" && key != "nodes" && key != "measures" && key != "processes" && key != "families" &&
        key != "scalars")
      f.extra[key] = val;
  return f;
}

inline ModelFile load_model_file(const std::string& path, bool strict = true) {
  return model_from_json(read_json_file(path), strict);
}

inline json model_to_json(const FiltrationModel& m) {
  json j;
  j["horizon"] = m.horizon();
  j["nodes"] = json::array();
  for (NodeId v = 0; v < m.node_count(); ++v) {
    json n;
    n["id"] = m.label(v);
    n["time"] = m.time_of(v);
    n["children"] = json::array();
    for (std::size_t i = 0; i < m.child_count(v); ++i) {
      const NodeId c = m.first_child(v) + i;
      n["children"].push_back({{"id", m.label(c)}, {"prob", m.reference()[c]}});
    }
    j["nodes"].push_back(std::move(n));
  }
  return j;
}

inline json generator_spec_to_json(const GeneratorSpec& s) {
  return {{"seed", s.seed},
          {"depth", s.depth},
          {"branching", s.branching},
          {"value_scale", s.value_scale},
          {"kind", to_string(s.kind)}};
}

/// Generated instances use the model file format; explicit-family measures
/// (none are generated) would go under "measures".
inline json instance_to_json(const GeneratedInstance& g) {
  json j = model_to_json(g.model);
  j["generator"] = generator_spec_to_json(g.spec);
  j["processes"] = json::object();
  for (const auto& [name, x] : g.processes) j["processes"][name] = process_to_json(g.model, x);
  if (!g.scalars.empty()) j["scalars"] = g.scalars;
  if (g.family) j["families"]["family"] = family_to_json(g.model, *g.family);
  return j;
}

/// FNV-1a (64 bit) over the compact JSON text; object keys are sorted.
inline std::uint64_t instance_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << x;
  return os.str();
}

inline json partition_to_json(const FiltrationModel& m, const StoppingPartition& p) {
  json j = json::array();
  for (const auto& t : p.times) {
    json cut = json::array();
    for (NodeId u : t.nodes()) cut.push_back(m.label(u));
    j.push_back(std::move(cut));
  }
  return j;
}

inline json norm_report_to_json(const FiltrationModel& m, const NormReport& r) {
  json j;
  j["norm_p0_sq"] = r.norm_p0_sq;
  j["norm_p_sq"] = r.norm_p_sq;
  j["attaining_partition"] = r.attaining_partition ? partition_to_json(m, *r.attaining_partition) : json(nullptr);
  j["strategy"] = to_string(r.strategy);
  j["lower_bound"] = r.lower_bound;
  j["decomposition_energy"] = r.decomposition_energy;
  j["ratio"] = r.ratio;
  if (r.within_window) {
    j["window"] = {r.window_lo, r.window_hi};
    j["within_window"] = *r.within_window;
  }
  return j;
}

/// Values in an instance file: a process name from the model file, an inline
/// node map, a number, or null for an infinite barrier.
inline AdaptedProcess resolve_process(const ModelFile& f, const json& j, const std::string& what, double null_value) {
  if (j.is_null()) return AdaptedProcess(f.model.node_count(), null_value);
  if (j.is_string()) return f.process(j.get<std::string>());
  return process_from_json(f.model, j, what);
}

/// {"terminal", "lower", "upper", "dt", "driver": {"kind": "zero"} |
///  {"kind": "linear", "y": a, "z": b, "constant": process}, "increments"?, "measure"?}
inline DrbsdeInstance drbsde_instance_from_json(const ModelFile& f, const json& j) {
  DrbsdeInstance inst;
  try {
    inst.terminal = resolve_process(f, j.at("terminal"), "terminal", 0.0);
    inst.lower = resolve_process(f, j.value("lower", json(nullptr)), "lower", -kInfiniteBarrier);
    inst.upper = resolve_process(f, j.value("upper", json(nullptr)), "upper", kInfiniteBarrier);
    inst.dt = j.value("dt", 1.0);
    const json d = j.value("driver", json{{"kind", "zero"}});
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "zero") {
      inst.driver = Driver::zero();
    } else if (kind == "linear") {
      inst.driver = Driver::linear(d.value("y", 0.0), d.value("z", 0.0),
                                   resolve_process(f, d.value("constant", json(0.0)), "driver constant", 0.0));
    } else {
      throw Error("unknown driver kind '" + kind + "'");
    }
    if (j.contains("increments")) inst.increments = resolve_process(f, j.at("increments"), "increments", 0.0);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed instance: ") + e.what());
  }
  return inst;
}

inline json solution_to_json(const FiltrationModel& m, const DrbsdeSolution& s) {
  return {{"scheme", to_string(s.scheme)},
          {"z_surrogate", s.z_surrogate},
          {"Y", process_to_json(m, s.y)},
          {"Z", process_to_json(m, s.z)},
          {"K_plus", process_to_json(m, s.k_plus)},
          {"K_minus", process_to_json(m, s.k_minus)}};
}

inline json estimate_to_json(const EstimateReport& r) {
  return {{"i0_sq", r.i0_sq},
          {"barrier_norm_sq", r.barrier_norm_sq},
          {"solution_norm_sq", r.solution_norm_sq},
          {"ratio", r.ratio}};
}

inline json difference_to_json(const DifferenceReport& r) {
  return {{"lhs", r.lhs},
          {"driver_terminal_term", r.driver_terminal_term},
          {"barrier_term", r.barrier_term},
          {"rhs", r.rhs},
          {"ratio", r.ratio}};
}

inline json classification_to_json(const FiltrationModel& m, const GClassification& c) {
  json j;
  for (auto l : kAllLabels) {
    const auto i = static_cast<std::size_t>(l);
    json e{{"holds", c.flags[i]}};
    if (c.witness[i])
      e["witness"] = {{"measure", c.witness[i]->measure},
                      {"node", m.label(c.witness[i]->node)},
                      {"gap", c.witness[i]->gap}};
    j[to_string(l)] = std::move(e);
  }
  j["implication_violations"] = implication_violations(c);
  return j;
}

inline json family_decomposition_to_json(const FiltrationModel& m, const FamilyDecomposition& d) {
  json j;
  j["members"] = json::array();
  for (const auto& md : d.members)
    j["members"].push_back({{"name", md.name},
                            {"M", process_to_json(m, md.doob.martingale)},
                            {"A", process_to_json(m, md.doob.finite_variation)},
                            {"K", process_to_json(m, md.decreasing)},
                            {"L", process_to_json(m, md.increasing)}});
  j["probe"] = {{"outcome", to_string(d.probe)},
                {"gap", d.probe_gap},
                {"member", d.probe_member},
                {"node", d.probe_node == kNoNode ? json(nullptr) : json(m.label(d.probe_node))}};
  return j;
}

}  // namespace martnorm
