// Command-line front end.
//
// Exit codes: 0 success, 1 computation error, 2 usage error.

#include <iostream>

#include <CLI11.hpp>

#include "martnorm/martnorm.hpp"

using namespace martnorm;

namespace {

void emit(const json& j, const std::string& out) {
  std::cout << j.dump(2) << "\n";
  if (!out.empty()) write_json_file(out, j);
}

int cmd_validate(const std::string& model_path, const std::string& out) {
  const auto f = load_model_file(model_path, false);
  json j{{"pass", f.report.pass()}, {"failures", json::array()}, {"warnings", json::array()}};
  for (const auto& i : f.report.failures) j["failures"].push_back({{"node", i.node}, {"message", i.message}});
  for (const auto& i : f.report.warnings) j["warnings"].push_back({{"node", i.node}, {"message", i.message}});
  emit(j, out);
  return f.report.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"martnorm: semimartingale norms, reflected BSDEs and G-expectations on finite event trees"};
  app.require_subcommand(1);
  std::string out;

  // validate
  std::string model_path;
  auto* validate = app.add_subcommand("validate", "check a model file");
  validate->add_option("--model", model_path, "model JSON")->required();
  validate->add_option("--out", out, "write the report here");

  // norm
  std::string process = "Y", measure_name, strategy_name = "finest";
  std::size_t max_segments = 0;
  std::vector<double> window;
  auto* norm = app.add_subcommand("norm", "partition norm of a process");
  norm->add_option("--model", model_path, "model JSON")->required();
  norm->add_option("--process", process, "process name");
  norm->add_option("--measure", measure_name, "measure name (default: reference)");
  norm->add_option("--strategy", strategy_name, "finest | enumerate | greedy");
  norm->add_option("--max-segments", max_segments, "segment limit (0: unrestricted)");
  norm->add_option("--window", window, "ratio window lo hi")->expected(2);
  norm->add_option("--out", out, "write the report here");

  // decompose
  auto* decompose = app.add_subcommand("decompose", "Doob decomposition of a process");
  decompose->add_option("--model", model_path, "model JSON")->required();
  decompose->add_option("--process", process, "process name");
  decompose->add_option("--measure", measure_name, "measure name (default: reference)");
  decompose->add_option("--out", out, "write the decomposition here");

  // drbsde
  std::string instance_path, instance2_path, scheme_name = "auto";
  auto* drbsde = app.add_subcommand("drbsde", "doubly reflected BSDEs");
  drbsde->require_subcommand(1);
  auto* solve_cmd = drbsde->add_subcommand("solve", "solve one instance and report the a priori estimate");
  solve_cmd->add_option("--model", model_path, "model JSON")->required();
  solve_cmd->add_option("--instance", instance_path, "instance JSON")->required();
  solve_cmd->add_option("--scheme", scheme_name, "explicit | picard | auto");
  solve_cmd->add_option("--measure", measure_name, "measure name (default: reference)");
  solve_cmd->add_option("--strategy", strategy_name, "strategy for the barrier norm");
  solve_cmd->add_option("--out", out, "write the solution here");
  auto* diff_cmd = drbsde->add_subcommand("diff", "difference estimate between two instances");
  diff_cmd->add_option("--model", model_path, "model JSON")->required();
  diff_cmd->add_option("--instance", instance_path, "first instance JSON")->required();
  diff_cmd->add_option("--instance2", instance2_path, "second instance JSON")->required();
  diff_cmd->add_option("--scheme", scheme_name, "explicit | picard | auto");
  diff_cmd->add_option("--measure", measure_name, "measure name (default: reference)");
  diff_cmd->add_option("--strategy", strategy_name, "strategy for the barrier norms");
  diff_cmd->add_option("--out", out, "write the report here");

  // gexp
  std::string family_name, gexp_op = "classify";
  auto* gexp = app.add_subcommand("gexp", "G-expectation, classification and family norms");
  gexp->add_option("op", gexp_op, "expect | classify | norm | decompose")
      ->check(CLI::IsMember({"expect", "classify", "norm", "decompose"}));
  gexp->add_option("--model", model_path, "model JSON")->required();
  gexp->add_option("--family", family_name, "family name (default: the only one)");
  gexp->add_option("--process", process, "process name (terminal values for expect)");
  gexp->add_option("--strategy", strategy_name, "strategy for the norms");
  gexp->add_option("--out", out, "write the report here");

  // generate
  std::string kind_name = "random_semimartingale";
  GeneratorSpec spec;
  auto* generate = app.add_subcommand("generate", "seeded instance generator");
  generate->add_option("--kind", kind_name,
                       "random_semimartingale | random_barriers | zigzag | equal_barriers | g_zigzag | volatility_family");
  generate->add_option("--depth", spec.depth, "tree depth");
  generate->add_option("--seed", spec.seed, "seed");
  generate->add_option("--branching", spec.branching, "children per node (1: chain)");
  generate->add_option("--scale", spec.value_scale, "value scale");
  generate->add_option("--out", out, "write the instance here");

  // suite
  std::string config_path, csv_path, summarize_path, summary_out;
  bool pilot = false, reproducible = false;
  unsigned workers = 0;
  auto* suite = app.add_subcommand("suite", "seeded ratio suites");
  suite->add_option("--config", config_path, "suite config JSON");
  suite->add_option("--summarize", summarize_path, "summarize an existing suite CSV instead");
  suite->add_flag("--pilot", pilot, "ignore the window and suggest one");
  suite->add_flag("--reproducible", reproducible, "omit the timestamp from the CSV header");
  suite->add_option("--csv", csv_path, "CSV output (overrides config)");
  suite->add_option("--summary", summary_out, "summary JSON output (overrides config)");
  suite->add_option("--workers", workers, "worker threads (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (validate->parsed()) return cmd_validate(model_path, out);

    if (norm->parsed()) {
      const auto f = load_model_file(model_path);
      const auto& q = f.measure(measure_name);
      const auto strategy = parse_strategy(strategy_name);
      NormReport r = window.empty() ? norm_p(f.model, q, f.process(process), strategy, max_segments)
                                    : verify_norm_equivalence(f.model, q, f.process(process), strategy, window[0],
                                                              window[1], max_segments);
      emit(norm_report_to_json(f.model, r), out);
      return r.within_window.value_or(true) ? 0 : 1;
    }

    if (decompose->parsed()) {
      const auto f = load_model_file(model_path);
      const auto& q = f.measure(measure_name);
      const auto& y = f.process(process);
      const auto d = doob_decompose(f.model, q, y);
      json j{{"base", d.base},
             {"M", process_to_json(f.model, d.martingale)},
             {"A", process_to_json(f.model, d.finite_variation)},
             {"quadratic_variation_energy", quadratic_variation_energy(f.model, q, d.martingale)},
             {"expected_tv_sq", expected_square_at_leaves(f.model, q, total_variation(f.model, d.finite_variation))},
             {"decomposition_energy", decomposition_energy(f.model, q, y)}};
      emit(j, out);
      return 0;
    }

    if (solve_cmd->parsed()) {
      const auto f = load_model_file(model_path);
      const auto& q = f.measure(measure_name);
      const auto inst = drbsde_instance_from_json(f, read_json_file(instance_path));
      const auto sol = solve(f.model, q, inst, parse_scheme(scheme_name));
      double tv_max = 0.0;
      for (NodeId l = f.model.first_leaf(); l < f.model.node_count(); ++l)
        tv_max = std::max(tv_max, sol.k_plus[l] + sol.k_minus[l]);
      json j = solution_to_json(f.model, sol);
      j["tv_A_max"] = tv_max;
      j["estimate"] = estimate_to_json(estimate_report(f.model, q, inst, sol, parse_strategy(strategy_name)));
      emit(j, out);
      return 0;
    }

    if (diff_cmd->parsed()) {
      const auto f = load_model_file(model_path);
      const auto& q = f.measure(measure_name);
      const auto a = drbsde_instance_from_json(f, read_json_file(instance_path));
      const auto b = drbsde_instance_from_json(f, read_json_file(instance2_path));
      const auto scheme = parse_scheme(scheme_name);
      const auto sa = solve(f.model, q, a, scheme), sb = solve(f.model, q, b, scheme);
      emit(difference_to_json(difference_report(f.model, q, a, b, sa, sb, parse_strategy(strategy_name))), out);
      return 0;
    }

    if (gexp->parsed()) {
      const auto f = load_model_file(model_path);
      const auto& fam = f.family(family_name);
      const auto& y = f.process(process);
      json j;
      if (gexp_op == "expect") {
        j = {{"g_expectation", g_expectation(f.model, fam, y)}};
      } else if (gexp_op == "classify") {
        j = classification_to_json(f.model, classify(f.model, fam, y));
      } else if (gexp_op == "norm") {
        const auto s = parse_strategy(strategy_name);
        const auto cp = norm_cp(f.model, fam, y, s), g = norm_g(f.model, fam, y, s);
        j = {{"norm_cp_sq", cp.value_sq},
             {"norm_cp_member", cp.attaining_member},
             {"norm_g_sq", g.value_sq},
             {"lower_bound", cp.lower_bound || g.lower_bound}};
      } else {
        j = family_decomposition_to_json(f.model, decomposition_family(f.model, fam, y));
      }
      emit(j, out);
      return 0;
    }

    if (generate->parsed()) {
      spec.kind = parse_generator_kind(kind_name);
      const auto j = instance_to_json(random_instance(spec));
      if (!out.empty()) write_json_file(out, j);
      std::cout << "hash " << hex64(instance_hash(j)) << "\n";
      if (out.empty()) std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (suite->parsed()) {
      if (!summarize_path.empty()) {
        std::ifstream in(summarize_path);
        if (!in) throw Error("cannot open " + summarize_path);
        std::stringstream buf;
        buf << in.rdbuf();
        const auto s = report_summary(buf.str());
        emit(summary_to_json(s), summary_out);
        return 0;
      }
      if (config_path.empty()) {
        std::cerr << "suite: --config or --summarize is required\n" << suite->help();
        return 2;
      }
      auto cfg = load_suite_config(config_path);
      if (pilot) cfg.window.reset();
      if (workers) cfg.workers = workers;
      if (!csv_path.empty()) cfg.csv_path = csv_path;
      if (!summary_out.empty()) cfg.summary_path = summary_out;
      const auto csv = suite_csv(run_suite(cfg), reproducible);
      if (!cfg.csv_path.empty()) write_text_file(cfg.csv_path, csv);
      const auto s = report_summary(csv);
      json j = summary_to_json(s);
      if (pilot) j["suggested_window"] = {s.min / 1.1, s.max * 1.1};
      if (!cfg.summary_path.empty()) write_json_file(cfg.summary_path, j);
      std::cout << j.dump(2) << "\n";
      return s.pass ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
