#pragma once

// Seeded ratio suites: config parsing, a bounded worker pool, versioned CSV
// output and the summary pass over a CSV.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <thread>

#include "martnorm/io.hpp"

namespace martnorm {

inline constexpr const char* kSuiteSchema = "martnorm-suite-v1";

struct SuiteConfig {
  std::string check;
  std::uint64_t first_seed = 1;
  std::size_t seed_count = 100;
  int depth_min = 1;
  int depth_max = 4;
  int branching = 2;
  double value_scale = 1.0;
  Strategy strategy = Strategy::finest;
  std::size_t max_segments = 0;
  std::optional<std::pair<double, double>> window;
  std::string csv_path;
  std::string summary_path;
  unsigned workers = 1;
};

inline const std::vector<std::string>& suite_checks() {
  static const std::vector<std::string> checks{"thm25", "lemma22", "lemma24", "est39", "thm411", "thm49"};
  return checks;
}

inline SuiteConfig suite_config_from_json(const json& j) {
  SuiteConfig c;
  try {
    c.check = j.at("check").get<std::string>();
    if (j.contains("seeds")) {
      c.first_seed = j.at("seeds").value("first", std::uint64_t{1});
      c.seed_count = j.at("seeds").value("count", std::size_t{100});
    }
    if (j.contains("depth")) {
      c.depth_min = j.at("depth").value("min", 1);
      c.depth_max = j.at("depth").value("max", 4);
    }
    c.branching = j.value("branching", 2);
    c.value_scale = j.value("value_scale", 1.0);
    c.strategy = parse_strategy(j.value("strategy", std::string("finest")));
    c.max_segments = j.value("max_segments", std::size_t{0});
    if (j.contains("window") && !j.at("window").is_null())
      c.window = std::make_pair(j.at("window").at("lo").get<double>(), j.at("window").at("hi").get<double>());
    c.csv_path = j.value("csv", std::string());
    c.summary_path = j.value("summary", std::string());
    c.workers = j.value("workers", 1u);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed suite config: ") + e.what());
  }
  if (std::find(suite_checks().begin(), suite_checks().end(), c.check) == suite_checks().end())
    throw Error("unknown suite check '" + c.check + "'");
  if (c.seed_count == 0) throw Error("suite config: seed range is empty");
  if (c.depth_min < 1 || c.depth_max < c.depth_min) throw Error("suite config: depth range is empty");
  if (c.window && !(0.0 < c.window->first && c.window->first < c.window->second))
    throw Error("suite config: window must satisfy 0 < lo < hi");
  if (c.workers == 0) c.workers = 1;
  return c;
}

inline SuiteConfig load_suite_config(const std::string& path) { return suite_config_from_json(read_json_file(path)); }

struct SuiteRow {
  std::uint64_t seed = 0;
  int depth = 0;
  std::vector<double> values;
  double ratio = 0.0;
};

struct SuiteResult {
  SuiteConfig config;
  std::vector<std::string> columns;  // value columns between depth and ratio
  std::vector<SuiteRow> rows;
};

inline int suite_depth(const SuiteConfig& c, std::uint64_t seed) {
  return c.depth_min + static_cast<int>(seed % static_cast<std::uint64_t>(c.depth_max - c.depth_min + 1));
}

inline std::vector<std::string> suite_columns(const std::string& check) {
  if (check == "thm25") return {"norm_p0_sq", "norm_p_sq", "decomposition_energy"};
  if (check == "lemma22") return {"energy", "norm_p0_sq"};
  if (check == "lemma24") return {"energy", "grid_sup_sq"};
  if (check == "est39") return {"i0_sq", "barrier_norm_sq", "solution_norm_sq"};
  if (check == "thm411") return {"norm_cp_sq", "norm_g_sq"};
  if (check == "thm49") return {"max_member_energy", "norm_cp_sq"};
  throw Error("unknown suite check '" + check + "'");
}

inline double safe_ratio(double a, double b) { return b > 0.0 ? a / b : 0.0; }

/// E[max over the given levels of |Y|^2].
inline double grid_sup_sq(const FiltrationModel& m, const Measure& q, const AdaptedProcess& y, const std::vector<int>& levels) {
  std::vector<char> on(static_cast<std::size_t>(m.horizon()) + 1, 0);
  for (int k : levels) on[static_cast<std::size_t>(k)] = 1;
  std::vector<double> r(m.node_count(), 0.0);
  for (NodeId v = 0; v < m.node_count(); ++v) {
    const double here = on[static_cast<std::size_t>(m.time_of(v))] ? y[v] * y[v] : 0.0;
    r[v] = v == 0 ? here : std::max(r[m.parent(v)], here);
  }
  return leaf_expectation(m, q, std::span<const double>(r).subspan(m.first_leaf()));
}

/// One seed of one check.
inline SuiteRow run_suite_seed(const SuiteConfig& c, std::uint64_t seed) {
  SuiteRow row;
  row.seed = seed;
  row.depth = suite_depth(c, seed);
  GeneratorSpec spec{seed, row.depth, c.branching, c.value_scale, GeneratorKind::random_semimartingale};
  if (c.check == "thm25") {
    const auto g = random_instance(spec);
    const auto r = norm_p(g.model, g.model.reference(), g.process("Y"), c.strategy, c.max_segments);
    row.values = {r.norm_p0_sq, r.norm_p_sq, r.decomposition_energy};
    row.ratio = r.ratio;
  } else if (c.check == "lemma22" || c.check == "lemma24") {
    check_generator_spec(spec);
    Rng rng(seed);
    const auto m = make_random_tree(row.depth, c.branching, rng);
    const int lag = c.check == "lemma22" ? 1 : 2;
    const auto y = random_monotone_semimartingale(m, c.value_scale, rng, lag);
    const double energy = decomposition_energy(m, m.reference(), y);
    double denom = 0.0;
    if (lag == 1) {
      denom = norm_p0(m, m.reference(), y);
    } else {
      std::vector<int> levels;
      for (int k = 0; k < m.horizon(); k += 2) levels.push_back(k);
      levels.push_back(m.horizon());
      denom = grid_sup_sq(m, m.reference(), y, levels);
    }
    row.values = {energy, denom};
    row.ratio = safe_ratio(energy, denom);
  } else if (c.check == "est39") {
    spec.kind = GeneratorKind::random_barriers;
    const auto g = random_instance(spec);
    DrbsdeInstance inst;
    inst.terminal = g.process("xi");
    inst.lower = g.process("L");
    inst.upper = g.process("U");
    inst.dt = g.scalars.at("dt");
    inst.driver = Driver::linear(g.scalars.at("driver_y"), g.scalars.at("driver_z"), g.process("driver_c"));
    const auto& q = g.model.reference();
    const auto sol = solve(g.model, q, inst);
    const auto r = estimate_report(g.model, q, inst, sol, c.strategy, c.max_segments);
    row.values = {r.i0_sq, r.barrier_norm_sq, r.solution_norm_sq};
    row.ratio = r.ratio;
  } else if (c.check == "thm411" || c.check == "thm49") {
    const auto g = random_instance(spec);
    const auto& y = g.process("Y");
    const auto cp = norm_cp(g.model, *g.family, y, c.strategy, c.max_segments);
    if (c.check == "thm411") {
      const auto gn = norm_g(g.model, *g.family, y, c.strategy, c.max_segments);
      row.values = {cp.value_sq, gn.value_sq};
      row.ratio = safe_ratio(cp.value_sq, gn.value_sq);
    } else {
      double worst = 0.0;
      for (const auto& member : family_members(g.model, *g.family)) {
        const auto d = doob_decompose(g.model, member.measure, y);
        const double e = quadratic_variation_energy(g.model, member.measure, d.martingale) +
                         expected_square_at_leaves(g.model, member.measure, total_variation(g.model, d.finite_variation));
        worst = std::max(worst, e);
      }
      row.values = {worst, cp.value_sq};
      row.ratio = safe_ratio(worst, cp.value_sq);
    }
  } else {
    throw Error("unknown suite check '" + c.check + "'");
  }
  return row;
}

/// Runs every seed on a bounded pool; rows come back in seed order.
inline SuiteResult run_suite(const SuiteConfig& c) {
  SuiteResult res;
  res.config = c;
  res.columns = suite_columns(c.check);
  res.rows.resize(c.seed_count);
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(c.seed_count);
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < c.seed_count;) {
      try {
        res.rows[i] = run_suite_seed(c, c.first_seed + i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(c.workers, static_cast<unsigned>(c.seed_count)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < c.seed_count; ++i)
    if (!errors[i].empty()) throw Error("seed " + std::to_string(c.first_seed + i) + ": " + errors[i]);
  return res;
}

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Row 1: schema id, check, window and (unless reproducible) a timestamp.
/// Row 2: column names. Then one row per seed.
inline std::string suite_csv(const SuiteResult& r, bool reproducible) {
  std::ostringstream os;
  os << "#schema=" << kSuiteSchema << ",check=" << r.config.check;
  if (r.config.window)
    os << ",window_lo=" << format_real(r.config.window->first) << ",window_hi=" << format_real(r.config.window->second);
  if (!reproducible) os << ",generated=" << utc_timestamp();
  os << "\nseed,depth";
  for (const auto& col : r.columns) os << ',' << col;
  os << ",ratio\n";
  for (const auto& row : r.rows) {
    os << row.seed << ',' << row.depth;
    for (double v : row.values) os << ',' << format_real(v);
    os << ',' << format_real(row.ratio) << '\n';
  }
  return os.str();
}

struct SuiteSummary {
  std::string check;
  std::size_t count = 0;
  double min = 0.0, max = 0.0, mean = 0.0;
  std::uint64_t argmin_seed = 0, argmax_seed = 0;
  std::optional<std::pair<double, double>> window;
  std::vector<std::uint64_t> violating_seeds;
  bool pass = true;
};

/// Aggregates a suite CSV; throws Error on malformed input.
inline SuiteSummary report_summary(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line.rfind("#schema=", 0) != 0) throw Error("malformed CSV: missing schema row");
  SuiteSummary s;
  std::optional<double> lo, hi;
  std::string schema;
  {
    std::istringstream fields(line.substr(1));
    std::string kv;
    while (std::getline(fields, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("malformed CSV: bad header field '" + kv + "'");
      const auto key = kv.substr(0, eq), val = kv.substr(eq + 1);
      try {
        if (key == "schema") schema = val;
        else if (key == "check") s.check = val;
        else if (key == "window_lo") lo = std::stod(val);
        else if (key == "window_hi") hi = std::stod(val);
      } catch (const std::exception&) {
        throw Error("malformed CSV: bad number in '" + kv + "'");
      }
    }
  }
  if (schema != kSuiteSchema) throw Error("malformed CSV: unknown schema '" + schema + "'");
  if (lo.has_value() != hi.has_value()) throw Error("malformed CSV: half-open window");
  if (lo) s.window = std::make_pair(*lo, *hi);
  if (!std::getline(in, line)) throw Error("malformed CSV: missing column row");
  std::vector<std::string> cols;
  {
    std::istringstream fields(line);
    std::string col;
    while (std::getline(fields, col, ',')) cols.push_back(col);
  }
  if (cols.size() < 3 || cols.front() != "seed" || cols.back() != "ratio") throw Error("malformed CSV: bad column row");
  double sum = 0.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    std::string x;
    while (std::getline(fields, x, ',')) f.push_back(x);
    if (f.size() != cols.size()) throw Error("malformed CSV: row has " + std::to_string(f.size()) + " fields");
    std::uint64_t seed = 0;
    double ratio = 0.0;
    try {
      std::size_t used = 0;
      seed = std::stoull(f.front(), &used);
      if (used != f.front().size()) throw std::invalid_argument("seed");
      ratio = std::stod(f.back(), &used);
      if (used != f.back().size()) throw std::invalid_argument("ratio");
    } catch (const std::exception&) {
      throw Error("malformed CSV: bad row '" + line + "'");
    }
    if (s.count == 0 || ratio < s.min) s.min = ratio, s.argmin_seed = seed;
    if (s.count == 0 || ratio > s.max) s.max = ratio, s.argmax_seed = seed;
    sum += ratio;
    ++s.count;
    if (s.window && (ratio < s.window->first || ratio > s.window->second)) s.violating_seeds.push_back(seed);
  }
  if (s.count == 0) throw Error("malformed CSV: no data rows");
  s.mean = sum / static_cast<double>(s.count);
  s.pass = s.violating_seeds.empty();
  return s;
}

inline json summary_to_json(const SuiteSummary& s) {
  json j{{"check", s.check},
         {"count", s.count},
         {"min", s.min},
         {"max", s.max},
         {"mean", s.mean},
         {"argmin_seed", s.argmin_seed},
         {"argmax_seed", s.argmax_seed},
         {"violating_seeds", s.violating_seeds},
         {"pass", s.pass}};
  j["window"] = s.window ? json{s.window->first, s.window->second} : json(nullptr);
  return j;
}

}  // namespace martnorm
