// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// The six-condition experiment: {ZO-MeZO, FO-Full, FO-LoRA} x {Original,
// Rephrased}. Each condition sweeps its hyperparameter grid, keeps the
// configuration with the best dev accuracy (first in grid order on ties) and
// reports that configuration's test accuracy.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "zorephrase/data_io.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/fo_train.hpp"
#include "zorephrase/models.hpp"
#include "zorephrase/zo_core.hpp"

namespace zorephrase {

enum class Method { zo_mezo, fo_full, fo_lora };
enum class DataType { original, rephrased };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::zo_mezo: return "ZO-MeZO";
    case Method::fo_full: return "FO-Full";
    case Method::fo_lora: return "FO-LoRA";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "ZO-MeZO" || s == "zo" || s == "zo-mezo") return Method::zo_mezo;
  if (s == "FO-Full" || s == "fo-full" || s == "full") return Method::fo_full;
  if (s == "FO-LoRA" || s == "fo-lora" || s == "lora") return Method::fo_lora;
  throw InvalidConfigError("unknown method '" + std::string(s) + "'");
}

inline std::string_view to_string(DataType d) {
  return d == DataType::original ? "Original" : "Rephrased";
}

inline DataType parse_data_type(std::string_view s) {
  if (s == "Original" || s == "original") return DataType::original;
  if (s == "Rephrased" || s == "rephrased") return DataType::rephrased;
  throw InvalidConfigError("unknown data type '" + std::string(s) + "'");
}

inline constexpr Method kMethods[] = {Method::zo_mezo, Method::fo_full, Method::fo_lora};
inline constexpr DataType kDataTypes[] = {DataType::original, DataType::rephrased};

/// Hyperparameters of one training run.
struct RunConfig {
  Method method = Method::zo_mezo;
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  std::size_t rank = 0;  // FO-LoRA only

  std::string describe() const {
    std::ostringstream out;
    out << to_string(method) << " lr=" << learning_rate << " bs=" << batch_size;
    if (method == Method::fo_lora) out << " rank=" << rank;
    return out.str();
  }
};

struct ExperimentGrid {
  std::vector<double> zo_learning_rates{0.2, 0.1, 0.05, 0.02};
  std::vector<std::size_t> zo_batch_sizes{16, 32};
  std::vector<double> fo_learning_rates{0.05, 0.02, 0.01, 0.005};
  std::vector<std::size_t> fo_batch_sizes{16, 32};
  std::vector<std::size_t> lora_ranks{2, 4, 8};
  std::vector<double> lora_learning_rates{0.02, 0.01};
  std::size_t lora_batch_size = 16;
  double lora_alpha_per_rank = 1.0;  // alpha = this * rank, i.e. scale = this
  std::uint64_t zo_steps = 300;  // matched step budgets
  std::uint64_t fo_steps = 300;
  double zo_delta = 1e-3;
  double weight_decay = 0.01;
  ModelKind model = ModelKind::mlp;
  std::size_t hidden = 16;
  double init_scale = 1.0;
  std::uint64_t seed = 0;

  /// LLM-scale grid: lr {1e-6, 5e-7, 2e-7, 1e-7} x bs {2, 4, 8, 16} for ZO and
  /// FO-Full, ranks {8, 16, 32} x lr {1e-4, 2e-4} for LoRA. Kept for
  /// reference; at desk scale these learning rates barely move the weights.
  static ExperimentGrid llm_scale() {
    ExperimentGrid g;
    g.zo_learning_rates = {1e-6, 5e-7, 2e-7, 1e-7};
    g.zo_batch_sizes = {2, 4, 8, 16};
    g.fo_learning_rates = {1e-6, 5e-7, 2e-7, 1e-7};
    g.fo_batch_sizes = {2, 4, 8, 16};
    g.lora_ranks = {8, 16, 32};
    g.lora_learning_rates = {1e-4, 2e-4};
    return g;
  }

  std::vector<RunConfig> configs(Method m) const {
    std::vector<RunConfig> out;
    switch (m) {
      case Method::zo_mezo:
        for (double lr : zo_learning_rates)
          for (std::size_t bs : zo_batch_sizes) out.push_back({m, lr, bs, 0});
        break;
      case Method::fo_full:
        for (double lr : fo_learning_rates)
          for (std::size_t bs : fo_batch_sizes) out.push_back({m, lr, bs, 0});
        break;
      case Method::fo_lora:
        for (std::size_t r : lora_ranks)
          for (double lr : lora_learning_rates) out.push_back({m, lr, lora_batch_size, r});
        break;
    }
    return out;
  }

  void validate() const {
    for (Method m : kMethods)
      if (configs(m).empty())
        throw InvalidConfigError("empty hyperparameter grid for " + std::string(to_string(m)));
  }
};

inline void to_json(nlohmann::json& j, const ExperimentGrid& g) {
  j = nlohmann::json{{"zo_learning_rates", g.zo_learning_rates},
                     {"zo_batch_sizes", g.zo_batch_sizes},
                     {"fo_learning_rates", g.fo_learning_rates},
                     {"fo_batch_sizes", g.fo_batch_sizes},
                     {"lora_ranks", g.lora_ranks},
                     {"lora_learning_rates", g.lora_learning_rates},
                     {"lora_batch_size", g.lora_batch_size},
                     {"lora_alpha_per_rank", g.lora_alpha_per_rank},
                     {"zo_steps", g.zo_steps},
                     {"fo_steps", g.fo_steps},
                     {"zo_delta", g.zo_delta},
                     {"weight_decay", g.weight_decay},
                     {"model", g.model == ModelKind::linear ? "linear" : "mlp"},
                     {"hidden", g.hidden},
                     {"init_scale", g.init_scale},
                     {"seed", g.seed}};
}

inline void from_json(const nlohmann::json& j, ExperimentGrid& g) {
  if (j.value("preset", std::string()) == "llm_scale") g = ExperimentGrid::llm_scale();
  g.zo_learning_rates = j.value("zo_learning_rates", g.zo_learning_rates);
  g.zo_batch_sizes = j.value("zo_batch_sizes", g.zo_batch_sizes);
  g.fo_learning_rates = j.value("fo_learning_rates", g.fo_learning_rates);
  g.fo_batch_sizes = j.value("fo_batch_sizes", g.fo_batch_sizes);
  g.lora_ranks = j.value("lora_ranks", g.lora_ranks);
  g.lora_learning_rates = j.value("lora_learning_rates", g.lora_learning_rates);
  g.lora_batch_size = j.value("lora_batch_size", g.lora_batch_size);
  g.lora_alpha_per_rank = j.value("lora_alpha_per_rank", g.lora_alpha_per_rank);
  g.zo_steps = j.value("zo_steps", g.zo_steps);
  g.fo_steps = j.value("fo_steps", g.fo_steps);
  g.zo_delta = j.value("zo_delta", g.zo_delta);
  g.weight_decay = j.value("weight_decay", g.weight_decay);
  const std::string model = j.value("model", std::string(g.model == ModelKind::linear ? "linear" : "mlp"));
  if (model == "linear") g.model = ModelKind::linear;
  else if (model == "mlp") g.model = ModelKind::mlp;
  else throw InvalidConfigError("unknown model kind '" + model + "'");
  g.hidden = j.value("hidden", g.hidden);
  g.init_scale = j.value("init_scale", g.init_scale);
  g.seed = j.value("seed", g.seed);
}

struct RunResult {
  RunConfig config;
  double dev_accuracy = 0.0;
  double test_accuracy = 0.0;
  TrainingTrace trace;
};

inline Classifier make_model(const ExperimentGrid& grid, std::size_t features,
                             std::size_t classes) {
  if (grid.model == ModelKind::linear)
    return Classifier::linear(features, classes, grid.seed, grid.init_scale);
  return Classifier::mlp(features, grid.hidden, classes, grid.seed, grid.init_scale);
}

inline std::size_t class_count(const SplitFeatures& data) {
  std::size_t c = 2;
  for (const auto* m : {&data.train, &data.dev, &data.test})
    for (auto l : m->labels) c = std::max(c, l + 1);
  return c;
}

/// Trains one configuration from the seeded initialization. All randomness
/// (init, batches, directions) flows from grid.seed.
inline RunResult run_one(const ExperimentGrid& grid, const RunConfig& rc,
                         const SplitFeatures& data, std::size_t classes,
                         std::uint64_t eval_interval = 0) {
  Classifier model = make_model(grid, data.train.cols, classes);
  auto dev_hook = [&] { return predict_accuracy(model, data.dev); };
  RunResult res;
  res.config = rc;
  switch (rc.method) {
    case Method::zo_mezo: {
      ZOConfig cfg;
      cfg.delta = grid.zo_delta;
      cfg.learning_rate = rc.learning_rate;
      cfg.batch_size = rc.batch_size;
      cfg.steps = grid.zo_steps;
      cfg.master_seed = grid.seed;
      cfg.eval_interval = eval_interval;
      res.trace = train_zo(model, data.train, cfg, dev_hook);
      break;
    }
    case Method::fo_full:
    case Method::fo_lora: {
      FOConfig cfg;
      cfg.learning_rate = rc.learning_rate;
      cfg.batch_size = rc.batch_size;
      cfg.steps = grid.fo_steps;
      cfg.weight_decay = grid.weight_decay;
      cfg.master_seed = grid.seed;
      cfg.eval_interval = eval_interval;
      FoMode mode = FoMode::full;
      if (rc.method == Method::fo_lora) {
        model.attach_lora(rc.rank, grid.lora_alpha_per_rank * static_cast<double>(rc.rank),
                          grid.seed);
        mode = FoMode::lora;
      }
      res.trace = train_fo(model, data.train, cfg, mode, dev_hook);
      break;
    }
  }
  res.dev_accuracy = predict_accuracy(model, data.dev);
  res.test_accuracy = predict_accuracy(model, data.test);
  return res;
}

struct ConditionResult {
  RunConfig selected;
  double dev_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Sweeps the grid for one method; keeps the best dev accuracy, first in
/// declared order on ties.
inline ConditionResult run_condition(const ExperimentGrid& grid, Method method,
                                     const SplitFeatures& data) {
  const std::size_t classes = class_count(data);
  std::optional<ConditionResult> best;
  for (const auto& rc : grid.configs(method)) {
    RunResult r;
    try {
      r = run_one(grid, rc, data, classes);
    } catch (const Error& e) {
      throw Error("training run failed for " + rc.describe() + ": " + e.what());
    }
    if (!best || r.dev_accuracy > best->dev_accuracy)
      best = ConditionResult{rc, r.dev_accuracy, r.test_accuracy};
  }
  if (!best) throw InvalidConfigError("empty grid for " + std::string(to_string(method)));
  return *best;
}

struct ResultRow {
  DataType data_type = DataType::original;
  Method method = Method::zo_mezo;
  std::map<std::string, double> accuracy;       // task -> test accuracy
  std::map<std::string, std::string> selected;  // task -> chosen configuration

  bool operator==(const ResultRow&) const = default;
};

/// Rows keyed by (data type, method) with per-task test accuracy.
struct ResultTable {
  std::vector<std::string> tasks;  // column order
  std::vector<ResultRow> rows;

  const ResultRow* find(DataType d, Method m) const {
    for (const auto& r : rows)
      if (r.data_type == d && r.method == m) return &r;
    return nullptr;
  }

  ResultRow& row(DataType d, Method m) {
    for (auto& r : rows)
      if (r.data_type == d && r.method == m) return r;
    rows.push_back(ResultRow{d, m, {}, {}});
    return rows.back();
  }

  static std::optional<double> average(const ResultRow& r) {
    if (r.accuracy.empty()) return std::nullopt;
    double sum = 0.0;
    for (const auto& [task, acc] : r.accuracy) sum += acc;
    return sum / static_cast<double>(r.accuracy.size());
  }

  /// Mean (Rephrased - Original) over tasks present in both rows; positive
  /// means rephrasing helped.
  std::optional<double> avg_delta(Method m) const {
    const auto* orig = find(DataType::original, m);
    const auto* reph = find(DataType::rephrased, m);
    if (!orig || !reph) return std::nullopt;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& [task, acc] : reph->accuracy) {
      auto it = orig->accuracy.find(task);
      if (it == orig->accuracy.end()) continue;
      sum += acc - it->second;
      ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }

  bool operator==(const ResultTable&) const = default;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tasks"] = tasks;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      nlohmann::ordered_json jr;
      jr["data_type"] = std::string(to_string(r.data_type));
      jr["method"] = std::string(to_string(r.method));
      jr["accuracy"] = nlohmann::ordered_json::object();
      for (const auto& [t, a] : r.accuracy) jr["accuracy"][t] = a;
      jr["selected"] = nlohmann::ordered_json::object();
      for (const auto& [t, s] : r.selected) jr["selected"][t] = s;
      j["rows"].push_back(jr);
    }
    return j;
  }

  static ResultTable from_json(const nlohmann::json& j) {
    ResultTable t;
    try {
      t.tasks = j.at("tasks").get<std::vector<std::string>>();
      for (const auto& jr : j.at("rows")) {
        ResultRow r;
        r.data_type = parse_data_type(jr.at("data_type").get<std::string>());
        r.method = parse_method(jr.at("method").get<std::string>());
        for (const auto& [k, v] : jr.at("accuracy").items()) r.accuracy[k] = v.get<double>();
        if (jr.contains("selected"))
          for (const auto& [k, v] : jr["selected"].items()) r.selected[k] = v.get<std::string>();
        t.rows.push_back(std::move(r));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed result table: ") + e.what());
    }
    return t;
  }
};

struct TaskPair {
  std::string name;
  Dataset original;
  Dataset rephrased;
};

/// Runs all six conditions for every task. Original and Rephrased runs share
/// split assignments, row order, seeds and therefore batch orders; only the
/// field text differs.
inline ResultTable run_grid(const ExperimentGrid& grid, const std::vector<TaskPair>& tasks,
                            const FeatureExtractor& extractor) {
  grid.validate();
  ResultTable table;
  for (DataType d : kDataTypes)
    for (Method m : kMethods) table.row(d, m);
  for (const auto& task : tasks) {
    require_aligned(task.original, task.rephrased);
    table.tasks.push_back(task.name);
    for (DataType d : kDataTypes) {
      const Dataset& ds = d == DataType::original ? task.original : task.rephrased;
      const SplitFeatures features = featurize(ds, extractor);
      for (Method m : kMethods) {
        ConditionResult res;
        try {
          res = run_condition(grid, m, features);
        } catch (const Error& e) {
          throw Error("condition " + std::string(to_string(d)) + "/" +
                      std::string(to_string(m)) + " on task '" + task.name +
                      "' failed: " + e.what());
        }
        auto& row = table.row(d, m);
        row.accuracy[task.name] = res.test_accuracy;
        row.selected[task.name] = res.selected.describe();
      }
    }
  }
  return table;
}

enum class ReportFormat { plain, delimited };

namespace detail {
inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}
inline std::string signed_percent(double v) {
  char buf[32];
  const double p = 100.0 * v;
  std::snprintf(buf, sizeof buf, "%+.2f", std::abs(p) < 0.005 ? 0.0 : p);
  return buf;
}
}  // namespace detail

/// Table-2-style report: one block per method with Original above Rephrased.
/// Accuracies are percentages with two decimals; Avg. Delta appears on the
/// Rephrased row. The delimited form is comma-separated.
inline std::string emit_report(const ResultTable& table, ReportFormat format) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Data Type", "Methods"};
  for (const auto& t : table.tasks) header.push_back(t);
  header.push_back("Avg. Acc.");
  header.push_back("Avg. Delta");
  cells.push_back(header);

  if (!table.tasks.empty()) {
    for (Method m : kMethods) {
      for (DataType d : kDataTypes) {
        const ResultRow* r = table.find(d, m);
        if (!r) continue;
        std::vector<std::string> line{std::string(to_string(d)), std::string(to_string(m))};
        for (const auto& t : table.tasks) {
          auto it = r->accuracy.find(t);
          line.push_back(it == r->accuracy.end() ? "-" : detail::percent(it->second));
        }
        const auto avg = ResultTable::average(*r);
        line.push_back(avg ? detail::percent(*avg) : "-");
        std::string delta = "-";
        if (d == DataType::rephrased)
          if (auto dv = table.avg_delta(m)) delta = detail::signed_percent(*dv);
        line.push_back(delta);
        cells.push_back(std::move(line));
      }
    }
  }

  std::string out;
  if (format == ReportFormat::delimited) {
    for (const auto& line : cells) {
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (i) out += ',';
        out += line[i];
      }
      out += '\n';
    }
    return out;
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  for (const auto& line : cells) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i) text += "  ";
      text += line[i];
      if (i + 1 < line.size()) text += std::string(width[i] - line[i].size(), ' ');
    }
    out += text + '\n';
  }
  return out;
}

}  // namespace zorephrase
