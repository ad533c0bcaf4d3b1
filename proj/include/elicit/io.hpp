#pragma once

// File formats: task CSV, constraints CSV, model JSON, experiment config JSON
// and results CSV/JSON.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "elicit/preference_aggregator.hpp"
#include "elicit/simulation.hpp"
#include "elicit/worker_model.hpp"

namespace elicit::io {

using nlohmann::json;

/// Task factors with names and, when the file has an `outcome` column, outcomes.
struct TaskTable {
  std::vector<std::string> factor_names;
  Matrix factors;
  std::optional<Vector> outcomes;

  LabeledTasks labeled() const {
    if (!outcomes) throw ValidationError("task file has no outcome column");
    return LabeledTasks{factors, *outcomes};
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_number(const std::string& text) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

inline bool valid_name(const std::string& name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

inline std::string sanitize_name(const std::string& raw) {
  std::string out = raw;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
  }
  return out.empty() ? "_" : out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a task CSV. Non-numeric columns are rejected unless `binarize`, in
/// which case they are one-hot expanded in first-appearance order.
inline TaskTable read_task_csv(std::istream& in, bool binarize = false) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!detail::trim(line).empty()) {
      header = detail::split_fields(line);
      break;
    }
  }
  if (header.empty()) throw ValidationError("task CSV: missing header row");
  std::set<std::string> seen_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!detail::valid_name(header[c])) {
      throw ValidationError("task CSV line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                            ": invalid factor name '" + header[c] + "' (allowed: A-Z a-z 0-9 _ -)");
    }
    if (!seen_names.insert(header[c]).second) {
      throw ValidationError("task CSV: duplicate column name '" + header[c] + "'");
    }
  }
  const bool has_outcome = header.back() == "outcome";
  const std::size_t factor_columns = header.size() - (has_outcome ? 1 : 0);
  if (factor_columns == 0) throw ValidationError("task CSV: no factor columns");

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw ValidationError("task CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
    row_lines.push_back(line_no);
  }

  // Decide per column: numeric, or categorical (binarize only).
  std::vector<bool> categorical(factor_columns, false);
  for (std::size_t c = 0; c < factor_columns; ++c) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!detail::parse_number(rows[r][c])) {
        if (!binarize) {
          throw ValidationError("task CSV line " + std::to_string(row_lines[r]) + ", column '" + header[c] + "': '" +
                                rows[r][c] + "' is not a number (use --binarize for categorical columns)");
        }
        categorical[c] = true;
        break;
      }
    }
  }

  TaskTable table;
  std::vector<std::vector<std::string>> levels(factor_columns);
  std::vector<std::size_t> first_output(factor_columns);
  for (std::size_t c = 0; c < factor_columns; ++c) {
    first_output[c] = table.factor_names.size();
    if (!categorical[c]) {
      table.factor_names.push_back(header[c]);
      continue;
    }
    for (const auto& row : rows) {
      if (std::find(levels[c].begin(), levels[c].end(), row[c]) == levels[c].end()) levels[c].push_back(row[c]);
    }
    for (const auto& level : levels[c]) table.factor_names.push_back(header[c] + "_" + detail::sanitize_name(level));
  }
  std::set<std::string> unique_out(table.factor_names.begin(), table.factor_names.end());
  if (unique_out.size() != table.factor_names.size()) {
    throw ValidationError("task CSV: binarized factor names collide; rename the categorical levels");
  }

  const auto n = static_cast<Index>(rows.size());
  table.factors = Matrix::Zero(n, static_cast<Index>(table.factor_names.size()));
  if (has_outcome) table.outcomes = Vector(n);
  for (Index r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < factor_columns; ++c) {
      if (categorical[c]) {
        const auto level = std::find(levels[c].begin(), levels[c].end(), row[c]) - levels[c].begin();
        table.factors(r, static_cast<Index>(first_output[c] + static_cast<std::size_t>(level))) = 1.0;
      } else {
        table.factors(r, static_cast<Index>(first_output[c])) = *detail::parse_number(row[c]);
      }
    }
    if (has_outcome) {
      auto y = detail::parse_number(row.back());
      if (!y || *y < 0.0 || *y > 1.0) {
        throw ValidationError("task CSV line " + std::to_string(row_lines[static_cast<std::size_t>(r)]) +
                              ", column 'outcome': '" + row.back() + "' must be a number in [0, 1]");
      }
      (*table.outcomes)[r] = *y;
    }
  }
  return table;
}

inline TaskTable read_task_csv_file(const std::filesystem::path& path, bool binarize = false) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open task file " + path.string());
  return read_task_csv(in, binarize);
}

inline void write_task_csv(std::ostream& out, const TaskTable& table) {
  for (std::size_t c = 0; c < table.factor_names.size(); ++c) out << (c ? "," : "") << table.factor_names[c];
  if (table.outcomes) out << ",outcome";
  out << '\n';
  for (Index r = 0; r < table.factors.rows(); ++r) {
    for (Index c = 0; c < table.factors.cols(); ++c) out << (c ? "," : "") << detail::format_double(table.factors(r, c));
    if (table.outcomes) out << ',' << detail::format_double((*table.outcomes)[r]);
    out << '\n';
  }
}

/// Factor reference by name, or by index when it parses as an integer in range.
inline Index resolve_factor(const std::string& token, const std::vector<std::string>& names) {
  if (auto it = std::find(names.begin(), names.end(), token); it != names.end()) return it - names.begin();
  Index value = -1;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec == std::errc() && ptr == token.data() + token.size() && value >= 0 &&
      value < static_cast<Index>(names.size())) {
    return value;
  }
  throw ValidationError("unknown factor '" + token + "'");
}

inline std::vector<PreferenceConstraint> read_constraints_csv(std::istream& in, const std::vector<std::string>& names) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) header = detail::split_fields(line);
  }
  if (header.size() < 2 || header.size() > 3 || header[0] != "higher" || header[1] != "lower" ||
      (header.size() == 3 && header[2] != "margin")) {
    throw ValidationError("constraints CSV: header must be higher,lower,margin");
  }
  std::vector<PreferenceConstraint> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw ValidationError("constraints CSV line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    PreferenceConstraint c;
    try {
      c.higher = resolve_factor(fields[0], names);
      c.lower = resolve_factor(fields[1], names);
    } catch (const ValidationError& e) {
      throw ValidationError("constraints CSV line " + std::to_string(line_no) + ": " + e.what());
    }
    if (header.size() == 3) {
      auto margin = detail::parse_number(fields[2]);
      if (!margin || *margin < 0.0) {
        throw ValidationError("constraints CSV line " + std::to_string(line_no) + ", column 'margin': '" + fields[2] +
                              "' must be a nonnegative number");
      }
      c.margin = *margin;
    }
    if (c.higher == c.lower) {
      throw ValidationError("constraints CSV line " + std::to_string(line_no) + ": factor compared with itself");
    }
    out.push_back(c);
  }
  return out;
}

inline void write_constraints_csv(std::ostream& out, const std::vector<PreferenceConstraint>& constraints,
                                  const std::vector<std::string>& names) {
  out << "higher,lower,margin\n";
  for (const auto& c : constraints) {
    out << names.at(static_cast<std::size_t>(c.higher)) << ',' << names.at(static_cast<std::size_t>(c.lower)) << ','
        << detail::format_double(c.margin) << '\n';
  }
}

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_field(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": field '" + key + "' is missing or has the wrong type");
  }
}

inline json parse_json(std::istream& in, const std::string& where) {
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

}  // namespace detail

inline json model_to_json(const WorkerModel& model) {
  std::vector<double> weights(model.weights.data(), model.weights.data() + model.weights.size());
  return json{{"factor_names", model.factor_names}, {"weights", weights}, {"alpha", model.alpha}};
}

inline WorkerModel model_from_json(const json& j) {
  const std::string where = "model JSON";
  detail::reject_unknown_keys(j, {"factor_names", "weights", "alpha"}, where);
  WorkerModel model;
  model.factor_names = detail::get_field<std::vector<std::string>>(j, "factor_names", where);
  const auto weights = detail::get_field<std::vector<double>>(j, "weights", where);
  model.weights = Eigen::Map<const Vector>(weights.data(), static_cast<Index>(weights.size()));
  model.alpha = detail::get_field<double>(j, "alpha", where);
  try {
    model.validate();
  } catch (const Error& e) {
    throw ValidationError(where + ": " + e.what());
  }
  return model;
}

inline WorkerModel read_model_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file " + path.string());
  return model_from_json(detail::parse_json(in, "model JSON " + path.string()));
}

/// Writes `content` to a temporary sibling and renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

enum class OutputFormat { csv, json };

inline OutputFormat parse_format(const std::string& s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "json") return OutputFormat::json;
  throw ValidationError("format must be csv or json, got '" + s + "'");
}

/// Experiment settings plus where and how to write the results.
struct RunConfig {
  ExperimentConfig experiment;
  std::string output = "results.csv";
  OutputFormat format = OutputFormat::csv;
  int verbosity = 1;
};

/// Sizes of the large-scale profile: 50000 tasks, 50 factors, k = 3, b = 25.
inline void apply_scalability_preset(ExperimentConfig& config) {
  config.tasks = 50'000;
  config.factors = 50;
  config.k = 3;
  config.bootstrap_budget = 25;
}

inline RunConfig run_config_from_json(const json& j) {
  const std::string where = "config";
  detail::reject_unknown_keys(
      j,
      {"preset", "tasks", "factors", "attribute_factors", "k", "iterations", "tasks_per_iteration", "bootstrap_budget",
       "bootstrap", "bootstrap_samples", "bootstrap_exact", "bootstrap_alpha", "alpha", "history", "methods",
       "train_fraction", "seed", "replications", "ranking_noise", "worker_weight_total", "implicit_eta", "margin",
       "smoothing", "history_workers", "error_trigger", "record_timing", "jobs", "output", "format", "verbosity"},
      where);
  RunConfig run;
  ExperimentConfig& c = run.experiment;
  if (j.contains("preset")) {
    const auto preset = detail::get_field<std::string>(j, "preset", where);
    if (preset == "scalability") {
      apply_scalability_preset(c);
    } else if (preset != "default") {
      throw ValidationError("config: field 'preset' must be \"default\" or \"scalability\"");
    }
  }
  auto size_field = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_unsigned()) throw ValidationError(std::string("config: field '") + key + "' must be a nonnegative integer");
    dst = j.at(key).get<std::size_t>();
  };
  auto real_field = [&](const char* key, double& dst) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number()) throw ValidationError(std::string("config: field '") + key + "' must be a number");
    dst = j.at(key).get<double>();
  };
  auto bool_field = [&](const char* key, bool& dst) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_boolean()) throw ValidationError(std::string("config: field '") + key + "' must be true or false");
    dst = j.at(key).get<bool>();
  };
  size_field("tasks", c.tasks);
  size_field("factors", c.factors);
  size_field("attribute_factors", c.attribute_factors);
  size_field("k", c.k);
  size_field("iterations", c.iterations);
  size_field("tasks_per_iteration", c.tasks_per_iteration);
  size_field("bootstrap_budget", c.bootstrap_budget);
  size_field("bootstrap_samples", c.bootstrap_samples);
  size_field("replications", c.replications);
  size_field("history_workers", c.history_workers);
  size_field("jobs", c.jobs);
  real_field("train_fraction", c.train_fraction);
  real_field("ranking_noise", c.ranking_noise);
  real_field("worker_weight_total", c.worker_weight_total);
  real_field("implicit_eta", c.implicit_eta);
  real_field("margin", c.margin);
  real_field("smoothing", c.smoothing);
  real_field("error_trigger", c.error_trigger);
  bool_field("bootstrap_exact", c.bootstrap_exact);
  bool_field("record_timing", c.record_timing);
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw ValidationError("config: field 'seed' must be a nonnegative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("bootstrap_alpha") && !j.at("bootstrap_alpha").is_null()) {
    double a = 0.0;
    real_field("bootstrap_alpha", a);
    c.bootstrap_alpha = a;
  }
  if (j.contains("bootstrap")) {
    auto b = parse_bootstrap(detail::get_field<std::string>(j, "bootstrap", where));
    if (!b) throw ValidationError("config: field 'bootstrap' must be optboot, randomboot or uniformboot");
    c.bootstrap = *b;
  }
  if (j.contains("history")) {
    const auto h = detail::get_field<std::string>(j, "history", where);
    if (h == "full") {
      c.history = HistoryMode::full;
    } else if (h == "recent") {
      c.history = HistoryMode::recent;
    } else {
      throw ValidationError("config: field 'history' must be full or recent");
    }
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& name : detail::get_field<std::vector<std::string>>(j, "methods", where)) {
      auto m = parse_method(name);
      if (!m) throw ValidationError("config: field 'methods' has unknown method '" + name + "'");
      c.methods.push_back(*m);
    }
  }
  if (j.contains("alpha")) {
    const json& a = j.at("alpha");
    detail::reject_unknown_keys(a, {"policy", "value", "grid"}, "config: field 'alpha'");
    if (a.contains("policy")) {
      const auto policy = detail::get_field<std::string>(a, "policy", "config: field 'alpha'");
      if (policy == "gcv") {
        c.alpha.use_gcv = true;
      } else if (policy == "fixed") {
        c.alpha.use_gcv = false;
      } else {
        throw ValidationError("config: field 'alpha.policy' must be gcv or fixed");
      }
    }
    if (a.contains("value")) c.alpha.fixed = detail::get_field<double>(a, "value", "config: field 'alpha'");
    if (a.contains("grid")) c.alpha.grid = detail::get_field<std::vector<double>>(a, "grid", "config: field 'alpha'");
  }
  if (j.contains("output")) run.output = detail::get_field<std::string>(j, "output", where);
  if (j.contains("format")) run.format = parse_format(detail::get_field<std::string>(j, "format", where));
  if (j.contains("verbosity")) run.verbosity = detail::get_field<int>(j, "verbosity", where);
  c.validate();
  return run;
}

inline RunConfig read_run_config(std::istream& in, const std::string& source = "config") {
  return run_config_from_json(detail::parse_json(in, source));
}

inline RunConfig read_run_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  return read_run_config(in, "config " + path.string());
}

inline std::string join_indices(const std::vector<Index>& ids, char sep = ';') {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(ids[i]);
  }
  return out;
}

/// Columns: method, replication, iteration, mse, questions, wall_ms.
inline std::string results_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "method,replication,iteration,mse,questions,wall_ms\n";
  for (const auto& log : result.logs) {
    out << method_name(log.method) << ',' << log.replication << ',' << log.iteration << ','
        << detail::format_double(log.mse) << ',' << join_indices(log.questions) << ','
        << detail::format_double(log.wall_ms) << '\n';
  }
  return out.str();
}

inline json results_json(const ExperimentResult& result) {
  json logs = json::array();
  for (const auto& log : result.logs) {
    logs.push_back({{"method", method_name(log.method)},
                    {"replication", log.replication},
                    {"iteration", log.iteration},
                    {"mse", log.mse},
                    {"questions", log.questions},
                    {"constraints_active", log.constraints_active},
                    {"wall_ms", log.wall_ms}});
  }
  json boot = json::array();
  for (const auto& b : result.bootstrap) {
    boot.push_back({{"replication", b.replication},
                    {"bootstrap", bootstrap_name(b.bootstrap)},
                    {"mse", b.mse},
                    {"task_ids", b.task_ids}});
  }
  return json{{"iterations", logs}, {"bootstrap", boot}};
}

struct ResultRow {
  std::string method;
  std::size_t replication = 0;
  std::size_t iteration = 0;
  double mse = 0.0;
  std::vector<Index> questions;
  double wall_ms = 0.0;
};

inline std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "method,replication,iteration,mse,questions,wall_ms") {
    throw ValidationError("results CSV: unexpected header");
  }
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split_fields(line);
    if (f.size() != 6) throw ValidationError("results CSV line " + std::to_string(line_no) + ": expected 6 fields");
    ResultRow row;
    row.method = f[0];
    auto rep = detail::parse_number(f[1]);
    auto it = detail::parse_number(f[2]);
    auto mse_value = detail::parse_number(f[3]);
    auto wall = detail::parse_number(f[5]);
    if (!rep || !it || !mse_value || !wall) throw ValidationError("results CSV line " + std::to_string(line_no) + ": bad number");
    row.replication = static_cast<std::size_t>(*rep);
    row.iteration = static_cast<std::size_t>(*it);
    row.mse = *mse_value;
    row.wall_ms = *wall;
    std::istringstream qs(f[4]);
    std::string q;
    while (std::getline(qs, q, ';')) {
      if (!q.empty()) row.questions.push_back(static_cast<Index>(std::stoll(q)));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace elicit::io
