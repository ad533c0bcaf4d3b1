// Command-line front end: experiment runs and one subcommand per component.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <unistd.h>

#include "CLI11.hpp"

#include "elicit/bootstrap.hpp"
#include "elicit/io.hpp"
#include "elicit/outcome_probability.hpp"
#include "elicit/preference_aggregator.hpp"
#include "elicit/question_selector.hpp"
#include "elicit/simulation.hpp"
#include "elicit/stats.hpp"
#include "elicit/worker_model.hpp"

namespace {

using namespace elicit;
using io::json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;
constexpr int kExitAbort = 130;

/// Thrown by the interactive prompt when stdin closes.
struct UserAbort {};

bool use_color() { return std::getenv("NO_COLOR") == nullptr && ::isatty(STDOUT_FILENO); }

std::string bold(const std::string& s) { return use_color() ? "\033[1m" + s + "\033[0m" : s; }

std::string fmt_num(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << v;
  return out.str();
}

/// Writes to `path`, or stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    std::cout.flush();
  } else {
    io::atomic_write(path, content);
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

double resolve_alpha(const std::optional<double>& alpha, bool gcv, const LabeledTasks& data) {
  if (gcv) return select_alpha_gcv(data, default_alpha_grid());
  return alpha.value_or(0.0);
}

// --- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string output;
  std::string format;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool quiet = false;
};

void print_summary(const ExperimentConfig& config, const ExperimentResult& result) {
  std::cout << bold("method          final MSE      std. error") << '\n';
  std::map<Method, std::vector<double>> finals;
  for (Method m : config.methods) {
    finals[m] = final_mse(result, m, config.iterations);
    std::cout << std::left << std::setw(16) << method_name(m) << std::setw(15) << fmt_num(mean_of(finals[m]))
              << fmt_num(standard_error_of(finals[m])) << '\n';
  }
  std::vector<double> initial;
  for (const auto& b : result.bootstrap) initial.push_back(b.mse);
  std::cout << "initial (" << bootstrap_name(config.bootstrap) << ") MSE " << fmt_num(mean_of(initial)) << " +/- "
            << fmt_num(standard_error_of(initial)) << '\n';
  if (config.replications < 2 || config.methods.size() < 2) return;
  std::cout << bold("paired t-test on final MSE") << '\n';
  for (std::size_t i = 0; i < config.methods.size(); ++i) {
    for (std::size_t j = i + 1; j < config.methods.size(); ++j) {
      const auto test = paired_significance(finals[config.methods[i]], finals[config.methods[j]]);
      std::cout << "  " << method_name(config.methods[i]) << " vs " << method_name(config.methods[j])
                << ": mean diff " << fmt_num(test.mean_difference) << ", p = " << fmt_num(test.p_value) << '\n';
    }
  }
}

int cmd_simulate(const SimulateArgs& args) {
  io::RunConfig run = io::read_run_config_file(args.config);
  if (args.seed) run.experiment.seed = *args.seed;
  if (args.jobs) run.experiment.jobs = *args.jobs;
  if (!args.output.empty()) run.output = args.output;
  if (!args.format.empty()) run.format = io::parse_format(args.format);
  run.experiment.validate();
  const ExperimentResult result = run_elicitation_experiment(run.experiment);
  emit(run.output, run.format == io::OutputFormat::csv ? io::results_csv(result) : dump(io::results_json(result)));
  if (!args.quiet && run.verbosity > 0 && run.output != "-") print_summary(run.experiment, result);
  return kExitOk;
}

// --- single-step tools -----------------------------------------------------

struct CommonArgs {
  std::string data;
  std::string output;
  std::string format = "json";
  bool binarize = false;
  std::optional<double> alpha;
  bool gcv = false;
  std::uint64_t seed = 0;
};

int cmd_fit(const CommonArgs& args) {
  const io::TaskTable table = io::read_task_csv_file(args.data, args.binarize);
  const LabeledTasks data = table.labeled();
  const WorkerModel model = fit(data, resolve_alpha(args.alpha, args.gcv, data), table.factor_names);
  if (io::parse_format(args.format) == io::OutputFormat::json) {
    emit(args.output, dump(io::model_to_json(model)));
  } else {
    std::ostringstream out;
    out << "factor,weight\n";
    for (Index i = 0; i < model.factor_count(); ++i) {
      out << model.factor_names[static_cast<std::size_t>(i)] << ',' << io::detail::format_double(model.weights[i]) << '\n';
    }
    emit(args.output, out.str());
  }
  return kExitOk;
}

struct BootstrapArgs {
  std::string history;
  std::size_t budget = 15;
  std::string method = "optboot";
  bool exact = false;
  std::size_t samples = 0;
  double smoothing = 1.0;
};

int cmd_bootstrap(const CommonArgs& args, const BootstrapArgs& boot) {
  const io::TaskTable pool = io::read_task_csv_file(args.data, args.binarize);
  LabeledTasks history{Matrix(0, pool.factors.cols()), Vector(0)};
  if (!boot.history.empty()) {
    const io::TaskTable h = io::read_task_csv_file(boot.history, args.binarize);
    if (h.factor_names != pool.factor_names) throw ValidationError("history file factors differ from the task pool");
    history = h.labeled();
  } else if (pool.outcomes) {
    history = pool.labeled();
  }
  const OutcomeProbabilityModel prob = fit_probability_model(history, boot.smoothing);
  const double alpha = args.alpha.value_or(0.0);
  const EvaluationMode mode = boot.exact ? EvaluationMode{ExactEvaluation{}} : EvaluationMode{MonteCarloEvaluation{boot.samples, args.seed}};
  BootstrapPlan plan;
  if (boot.method == "optboot") {
    plan = greedy_bootstrap(pool.factors, boot.budget, prob, alpha, mode);
  } else if (boot.method == "randomboot") {
    plan = random_bootstrap(pool.factors, boot.budget, args.seed, prob, alpha, mode);
  } else {
    throw ValidationError("--method must be optboot or randomboot");
  }
  if (io::parse_format(args.format) == io::OutputFormat::json) {
    emit(args.output, dump(json{{"task_ids", plan.task_ids}, {"expected_error", plan.expected_error},
                                {"round_errors", plan.round_errors}, {"mode", boot.exact ? "exact" : "monte-carlo"}}));
  } else {
    std::ostringstream out;
    out << "order,task_id\n";
    for (std::size_t i = 0; i < plan.task_ids.size(); ++i) out << i << ',' << plan.task_ids[i] << '\n';
    emit(args.output, out.str());
  }
  return kExitOk;
}

struct SelectArgs {
  std::size_t k = 4;
  std::string method = "k-exfactor";
};

int cmd_select_questions(const CommonArgs& args, const SelectArgs& sel) {
  const io::TaskTable table = io::read_task_csv_file(args.data, args.binarize);
  double alpha = args.alpha.value_or(0.0);
  if (args.gcv) alpha = select_alpha_gcv(table.labeled(), default_alpha_grid());
  QuestionSet q;
  if (sel.method == "k-exfactor") {
    q = k_exfactor(table.factors, sel.k, alpha);
  } else if (sel.method == "k-random") {
    q = k_random(table.factors, sel.k, alpha, args.seed);
  } else if (sel.method == "brute-force") {
    q = brute_force_selector(table.factors, sel.k, alpha);
  } else {
    throw ValidationError("--method must be k-exfactor, k-random or brute-force");
  }
  std::vector<std::string> names;
  for (Index i : q.factor_indices) names.push_back(table.factor_names[static_cast<std::size_t>(i)]);
  if (io::parse_format(args.format) == io::OutputFormat::json) {
    json j{{"factor_indices", q.factor_indices}, {"factor_names", names}};
    j["retained_trace"] = std::isinf(q.retained_trace) ? json("inf") : json(q.retained_trace);
    emit(args.output, dump(j));
  } else {
    std::ostringstream out;
    out << "index,factor\n";
    for (std::size_t i = 0; i < names.size(); ++i) out << q.factor_indices[i] << ',' << names[i] << '\n';
    emit(args.output, out.str());
  }
  return kExitOk;
}

struct AggregateArgs {
  std::string constraints;
  std::string ranking;
  double margin = kDefaultMargin;
};

std::vector<Index> parse_ranking(const std::string& text, const std::vector<std::string>& names) {
  std::vector<Index> out;
  for (const auto& token : io::detail::split_fields(text)) {
    if (token.empty()) throw ValidationError("ranking has an empty entry");
    out.push_back(io::resolve_factor(token, names));
  }
  return out;
}

int cmd_aggregate(const CommonArgs& args, const AggregateArgs& agg) {
  const io::TaskTable table = io::read_task_csv_file(args.data, args.binarize);
  const LabeledTasks data = table.labeled();
  std::vector<PreferenceConstraint> constraints;
  if (!agg.constraints.empty()) {
    std::ifstream in(agg.constraints);
    if (!in) throw ValidationError("cannot open constraints file " + agg.constraints);
    constraints = io::read_constraints_csv(in, table.factor_names);
  }
  if (!agg.ranking.empty()) {
    const auto more = ranking_to_constraints(parse_ranking(agg.ranking, table.factor_names), agg.margin);
    constraints.insert(constraints.end(), more.begin(), more.end());
  }
  const WorkerModel model =
      constrained_fit(data, resolve_alpha(args.alpha, args.gcv, data), constraints, table.factor_names);
  emit(args.output, dump(io::model_to_json(model)));
  return kExitOk;
}

int cmd_predict(const CommonArgs& args, const std::string& model_path) {
  const WorkerModel model = io::read_model_file(model_path);
  const io::TaskTable table = io::read_task_csv_file(args.data, args.binarize);
  if (table.factor_names != model.factor_names) {
    throw ValidationError("task columns do not match the model's factor names");
  }
  const Vector p = predict_all(model, table.factors);
  if (io::parse_format(args.format) == io::OutputFormat::json) {
    emit(args.output, dump(json{{"predictions", std::vector<double>(p.data(), p.data() + p.size())}}));
  } else {
    std::ostringstream out;
    out << "row,prediction\n";
    for (Index r = 0; r < p.size(); ++r) out << r << ',' << io::detail::format_double(p[r]) << '\n';
    emit(args.output, out.str());
  }
  return kExitOk;
}

// --- interactive elicitation ----------------------------------------------

struct ElicitArgs {
  std::string model;
  std::size_t k = 4;
  std::string constraints_out;
  double margin = kDefaultMargin;
};

/// Reads rankings until one is a permutation of `asked`; three failures end the session.
std::vector<Index> prompt_ranking(const std::vector<Index>& asked, const std::vector<std::string>& names,
                                  std::istream& in, std::ostream& out) {
  for (int attempt = 1; attempt <= 3; ++attempt) {
    out << "Your ranking (most preferred first, comma-separated names or indices): " << std::flush;
    std::string line;
    if (!std::getline(in, line)) throw UserAbort{};
    try {
      std::vector<Index> ranking = parse_ranking(line, names);
      std::vector<Index> a = asked, r = ranking;
      std::sort(a.begin(), a.end());
      std::sort(r.begin(), r.end());
      if (a == r) return ranking;
      out << "Please rank exactly the listed factors, each once.\n";
    } catch (const ValidationError& e) {
      out << e.what() << "; please rank exactly the listed factors.\n";
    }
  }
  throw ValidationError("no valid ranking after 3 attempts");
}

int cmd_elicit(const CommonArgs& args, const ElicitArgs& el) {
  const WorkerModel before = io::read_model_file(el.model);
  const io::TaskTable table = io::read_task_csv_file(args.data, args.binarize);
  if (table.factor_names != before.factor_names) throw ValidationError("task columns do not match the model's factor names");
  const LabeledTasks data = table.labeled();
  const double alpha = args.alpha.value_or(before.alpha);
  const QuestionSet q = k_exfactor(data.factors, el.k, alpha);

  std::cout << bold("Please rank these task factors:") << '\n';
  for (Index i : q.factor_indices) std::cout << "  [" << i << "] " << table.factor_names[static_cast<std::size_t>(i)] << '\n';
  const std::vector<Index> ranking = prompt_ranking(q.factor_indices, table.factor_names, std::cin, std::cout);
  const auto constraints = ranking_to_constraints(ranking, el.margin);
  const WorkerModel after = constrained_fit(data, alpha, constraints, table.factor_names);

  io::atomic_write(args.output.empty() ? el.model : args.output, dump(io::model_to_json(after)));
  if (!el.constraints_out.empty()) {
    std::ostringstream out;
    io::write_constraints_csv(out, constraints, table.factor_names);
    io::atomic_write(el.constraints_out, out.str());
  }
  std::cout << bold("factor          old weight     new weight") << '\n';
  for (Index i : ranking) {
    std::cout << std::left << std::setw(16) << table.factor_names[static_cast<std::size_t>(i)] << std::setw(15)
              << fmt_num(before.weights[i]) << fmt_num(after.weights[i]) << '\n';
  }
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_alpha = true) {
  cmd->add_option("--data", args.data, "Task CSV (factor columns, optional final outcome column)")->required();
  cmd->add_option("-o,--output", args.output, "Output path (default: stdout)");
  cmd->add_option("--format", args.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_flag("--binarize", args.binarize, "One-hot expand non-numeric columns");
  cmd->add_option("--seed", args.seed, "Random seed");
  if (needs_alpha) {
    cmd->add_option("--alpha", args.alpha, "Ridge strength (default 0)")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--gcv", args.gcv, "Choose alpha by generalized cross-validation on the default grid");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Worker preference elicitation: fit, bootstrap, select questions, aggregate rankings, simulate."};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run the synthetic elicitation experiment from a JSON config");
  simulate->add_option("config", sim.config, "Config JSON")->required();
  simulate->add_option("-o,--output", sim.output, "Results path (overrides the config)");
  simulate->add_option("--format", sim.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  simulate->add_option("--seed", sim.seed, "Seed (overrides the config)");
  simulate->add_option("--jobs", sim.jobs, "Parallel replications")->check(CLI::PositiveNumber);
  simulate->add_flag("-q,--quiet", sim.quiet, "No summary table");

  CommonArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the linear worker model");
  add_common(fit_cmd, fit_args);

  CommonArgs boot_args;
  BootstrapArgs boot;
  auto* boot_cmd = app.add_subcommand("bootstrap", "Choose cold-start tasks");
  add_common(boot_cmd, boot_args);
  boot_cmd->add_option("--history", boot.history, "Other workers' labelled tasks for the probability model");
  boot_cmd->add_option("-b,--budget", boot.budget, "Number of tasks to choose");
  boot_cmd->add_option("--method", boot.method, "optboot or randomboot");
  boot_cmd->add_flag("--exact", boot.exact, "Enumerate every branch (budget <= 20)");
  boot_cmd->add_option("--samples", boot.samples, "Monte-Carlo branches (0 = default)");
  boot_cmd->add_option("--smoothing", boot.smoothing, "Pseudo-count for the probability model")->check(CLI::NonNegativeNumber);

  CommonArgs sel_args;
  SelectArgs sel;
  auto* sel_cmd = app.add_subcommand("select-questions", "Pick the k factors to ask about");
  add_common(sel_cmd, sel_args);
  sel_cmd->add_option("-k,--k", sel.k, "Number of questions");
  sel_cmd->add_option("--method", sel.method, "k-exfactor, k-random or brute-force");

  CommonArgs agg_args;
  AggregateArgs agg;
  auto* agg_cmd = app.add_subcommand("aggregate", "Refit under pairwise preference constraints");
  add_common(agg_cmd, agg_args);
  agg_cmd->add_option("--constraints", agg.constraints, "Constraints CSV (higher,lower,margin)");
  agg_cmd->add_option("--ranking", agg.ranking, "Comma-separated ranking, most preferred first");
  agg_cmd->add_option("--margin", agg.margin, "Margin for --ranking constraints")->check(CLI::NonNegativeNumber);

  CommonArgs pred_args;
  std::string model_path;
  auto* pred_cmd = app.add_subcommand("predict", "Predict outcomes with a saved model");
  add_common(pred_cmd, pred_args, false);
  pred_cmd->add_option("--model", model_path, "Model JSON")->required();

  CommonArgs el_args;
  ElicitArgs el;
  auto* el_cmd = app.add_subcommand("elicit", "Ask for a ranking in the terminal and update the model");
  add_common(el_cmd, el_args);
  el_cmd->add_option("--model", el.model, "Model JSON (updated in place unless --output is given)")->required();
  el_cmd->add_option("-k,--k", el.k, "Number of factors to rank");
  el_cmd->add_option("--constraints-out", el.constraints_out, "Also write the elicited constraints");
  el_cmd->add_option("--margin", el.margin, "Constraint margin")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*fit_cmd) return cmd_fit(fit_args);
    if (*boot_cmd) return cmd_bootstrap(boot_args, boot);
    if (*sel_cmd) return cmd_select_questions(sel_args, sel);
    if (*agg_cmd) return cmd_aggregate(agg_args, agg);
    if (*pred_cmd) return cmd_predict(pred_args, model_path);
    if (*el_cmd) return cmd_elicit(el_args, el);
  } catch (const UserAbort&) {
    std::cerr << "\naborted\n";
    return kExitAbort;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
