// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line driver. Every subcommand reads the shared JSON config given by
// --config; flags override config keys. Relative paths in the config resolve
// against the config file's directory.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "zorephrase/data_io.hpp"
#include "zorephrase/experiment.hpp"
#include "zorephrase/http_backend.hpp"
#include "zorephrase/judge_calibration.hpp"
#include "zorephrase/llm_backend.hpp"
#include "zorephrase/prompt_template.hpp"
#include "zorephrase/rephrase_pipeline.hpp"
#include "zorephrase/synthetic_study.hpp"
#include "zorephrase/synthetic_task.hpp"

namespace zr = zorephrase;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Config {
  json root = json::object();
  fs::path base = fs::current_path();

  static Config load(const std::string& path) {
    Config c;
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw zr::InvalidConfigError("cannot open config '" + path + "'");
    try {
      c.root = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
      throw zr::InvalidConfigError("config '" + path + "': " + e.what());
    }
    if (!c.root.is_object()) throw zr::InvalidConfigError("config must be a JSON object");
    c.base = fs::absolute(path).parent_path();
    return c;
  }

  json section(const std::string& key) const {
    return root.contains(key) ? root.at(key) : json::object();
  }

  std::string path(const std::string& value) const {
    if (value.empty()) return value;
    const fs::path p(value);
    return p.is_absolute() ? value : (base / p).string();
  }

  /// Flag value if given, else the config key, else empty.
  std::string path_or(const std::string& flag, const std::string& key) const {
    if (!flag.empty()) return flag;
    return root.contains(key) ? path(root.at(key).get<std::string>()) : std::string();
  }
};

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  Config config;

  std::uint64_t resolved_seed() const {
    if (seed_given) return seed;
    return config.root.value("seed", std::uint64_t{0});
  }
};

std::string require(const std::string& value, const std::string& what) {
  if (value.empty()) throw zr::InvalidConfigError("missing " + what);
  return value;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw zr::Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw zr::Error("cannot write '" + path + "'");
}

/// Writes to the path, or to stdout when the path is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    write_file(path, text);
  }
}

zr::TaskSchema load_schema(const Globals& g, const std::string& flag) {
  const auto path = g.config.path_or(flag, "schema");
  return zr::TaskSchema::from_json(json::parse(read_file(require(path, "schema (--schema)"))));
}

zr::Dataset load_data(const Globals& g, const zr::TaskSchema& schema, const std::string& path,
                      bool assign_split) {
  auto ds = zr::load_jsonl(require(path, "data file"), schema);
  if (assign_split && ds.split_assignment.empty()) ds = zr::split(std::move(ds), g.resolved_seed());
  return ds;
}

zr::PromptTemplate load_template(const Globals& g, const std::string& flag, const std::string& key,
                                 const zr::TaskSchema& schema) {
  const auto path = require(g.config.path_or(flag, key), key + " template");
  auto tpl = zr::PromptTemplate::load(path);
  if (tpl.schema_name != schema.name()) {
    std::cerr << "note: retargeting " << tpl.label() << " from schema '" << tpl.schema_name
              << "' to '" << schema.name() << "'\n";
    tpl = zr::template_transfer(tpl, schema);
  }
  return tpl;
}

zr::CallOptions call_options(const json& j) {
  zr::CallOptions o;
  o.temperature = j.value("temperature", o.temperature);
  o.max_output_tokens = j.value("max_output_tokens", o.max_output_tokens);
  o.max_backend_retries = j.value("max_backend_retries", o.max_backend_retries);
  return o;
}

zr::FeatureExtractor feature_extractor(const Config& c) {
  const auto j = c.section("features");
  zr::FeatureExtractor fx;
  fx.dimension = j.value("dimension", fx.dimension);
  fx.fields = j.value("fields", fx.fields);
  fx.l2_normalize = j.value("l2_normalize", fx.l2_normalize);
  return fx;
}

zr::ExperimentGrid experiment_grid(const Globals& g) {
  zr::ExperimentGrid grid = g.config.section("grid").get<zr::ExperimentGrid>();
  grid.seed = g.resolved_seed();
  return grid;
}

zr::SyntheticTaskSpec synthetic_spec(const Globals& g) {
  zr::SyntheticTaskSpec spec = g.config.section("synthetic").get<zr::SyntheticTaskSpec>();
  spec.seed = g.resolved_seed();
  return spec;
}

/// Owns a chain of backends: inner, optional cache, optional in-flight cap.
///
/// Backend spec keys: kind (fixture | rule | http | replay), reply (fixture),
/// rules (rule; path to a rule table), http (endpoint, model, api_key_env,
/// timeout_seconds), cache_dir, max_in_flight.
class BackendChain {
 public:
  BackendChain(const json& spec, const Config& config) {
    const std::string kind = spec.value("kind", std::string("fixture"));
    const std::string cache_dir = config.path(spec.value("cache_dir", std::string()));
    if (kind == "fixture") {
      add(std::make_unique<zr::FixtureBackend>(
          "fixture", [reply = spec.value("reply", std::string("same"))](const zr::ChatRequest&) {
            return reply;
          }));
    } else if (kind == "rule") {
      const auto rules_path = require(config.path(spec.value("rules", std::string())),
                                      "rules file for the rule backend");
      add(std::make_unique<zr::RuleRewriterBackend>(
          zr::RuleTable::from_json(json::parse(read_file(rules_path)))));
    } else if (kind == "http") {
      add(std::make_unique<zr::HttpChatBackend>(
          spec.value("http", json::object()).get<zr::HttpBackendConfig>()));
    } else if (kind == "replay") {
      add(std::make_unique<zr::CachedBackend>(require(cache_dir, "cache_dir for replay"), nullptr));
    } else {
      throw zr::InvalidConfigError("unknown backend kind '" + kind + "'");
    }
    if (kind != "replay" && !cache_dir.empty())
      add(std::make_unique<zr::CachedBackend>(cache_dir, &top()));
    if (const auto limit = spec.value("max_in_flight", 0); limit > 0)
      add(std::make_unique<zr::InFlightLimit>(top(), limit));
  }

  zr::Backend& top() { return *chain_.back(); }

 private:
  void add(std::unique_ptr<zr::Backend> b) { chain_.push_back(std::move(b)); }
  std::vector<std::unique_ptr<zr::Backend>> chain_;
};

json backend_spec(const Config& c, const std::string& role, const std::string& kind_flag) {
  json spec = c.root.contains(role) ? c.root.at(role) : c.section("backend");
  if (!kind_flag.empty()) spec["kind"] = kind_flag;
  return spec;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoull(item));
  if (out.empty()) throw zr::InvalidConfigError("empty seed list");
  return out;
}

std::string ask(const std::string& prompt) {
  std::cout << prompt << std::flush;
  std::string line;
  if (!std::getline(std::cin, line)) return "";
  return zr::detail::trim(line);
}

// ---- subcommands -----------------------------------------------------------

struct GenerateArgs {
  std::string out_dir;
};

int run_generate(const Globals& g, const GenerateArgs& a) {
  const auto spec = synthetic_spec(g);
  const auto task = zr::generate_synthetic_task(spec);
  const auto ds = zr::split(task.original, spec.seed);
  const fs::path dir = require(a.out_dir, "--out-dir");
  fs::create_directories(dir);
  write_file((dir / "schema.json").string(), ds.schema.to_json().dump(2) + "\n");
  write_file((dir / "original.jsonl").string(), zr::to_jsonl(ds));
  write_file((dir / "rules.json").string(), task.rules.to_json().dump(2) + "\n");
  json spec_json = spec;
  write_file((dir / "synthetic_spec.json").string(), spec_json.dump(2) + "\n");
  std::cerr << "wrote " << ds.instances.size() << " instances (" << ds.split_size(zr::Split::train)
            << " train) to " << dir.string() << "\n";
  return 0;
}

struct RewriteArgs {
  std::string schema, data, out, report, rewriter_tpl, judge_tpl, backend, judge_backend;
  std::string target_field, candidates_out;
  std::size_t draft = 0;
  int workers = 0;
  int retries = -1;
  bool split = false;
};

int run_rewrite(const Globals& g, const RewriteArgs& a) {
  const auto schema = load_schema(g, a.schema);
  const auto ds = load_data(g, schema, g.config.path_or(a.data, "data"), a.split);
  const auto rtpl = load_template(g, a.rewriter_tpl, "rewriter_template", schema);
  const auto pj = g.config.section("pipeline");
  BackendChain rewriter(backend_spec(g.config, "rewriter_backend", a.backend), g.config);

  zr::PipelineOptions opts;
  opts.target_field = a.target_field.empty() ? pj.value("target_field", std::string())
                                             : a.target_field;
  const std::string target =
      opts.target_field.empty() ? schema.rewritable_fields().front() : opts.target_field;

  if (a.draft > 0) {
    const auto candidates =
        zr::draft_candidates(rewriter.top(), rtpl, ds, target, a.draft, call_options(pj));
    std::string text;
    for (const auto& c : candidates) text += c.to_json().dump() + "\n";
    emit(a.candidates_out.empty() ? a.out : a.candidates_out, text);
    std::cerr << "drafted " << candidates.size() << " candidates with " << rtpl.label() << "\n";
    return 0;
  }

  const auto jtpl = load_template(g, a.judge_tpl, "judge_template", schema);
  BackendChain judge(backend_spec(g.config, "judge_backend", a.judge_backend), g.config);
  opts.rewrite_retries = a.retries >= 0 ? a.retries : pj.value("rewrite_retries", 0);
  opts.workers = a.workers > 0 ? static_cast<std::size_t>(a.workers)
                               : pj.value("workers", std::size_t{1});
  opts.max_infra_failure_fraction =
      pj.value("max_infra_failure_fraction", opts.max_infra_failure_fraction);
  opts.rewriter = call_options(pj.value("rewriter", json::object()));
  opts.judge = call_options(pj.value("judge", json::object()));
  opts.judge.temperature = pj.value("judge", json::object()).value("temperature", 0.0);

  const auto [out, report] = zr::build_corpus(rewriter.top(), judge.top(), rtpl, jtpl, ds, opts);
  emit(a.out, zr::to_jsonl(out));
  if (!a.report.empty()) write_file(a.report, report.to_jsonl());
  std::cerr << report.summary().dump() << "\n";
  return 0;
}

struct JudgeArgs {
  std::string schema, data, id, rewritten, pairs, judge_tpl, backend, target_field, out;
};

int run_judge(const Globals& g, const JudgeArgs& a) {
  const auto schema = load_schema(g, a.schema);
  const auto jtpl = load_template(g, a.judge_tpl, "judge_template", schema);
  BackendChain judge(backend_spec(g.config, "judge_backend", a.backend), g.config);
  const auto opts = call_options(g.config.section("pipeline").value("judge", json::object()));
  const auto verdict_line = [](const std::string& id, const zr::Verdict& v) {
    json j{{"id", id}, {"verdict", std::string(zr::to_string(v.value))}, {"raw_text", v.raw_text}};
    if (v.error) j["error"] = *v.error;
    return j.dump() + "\n";
  };

  if (!a.pairs.empty()) {
    const auto pairs = zr::load_labeled_pairs(a.pairs, schema);
    std::string text;
    for (const auto& p : pairs)
      text += verdict_line(p.pair_id, zr::judge_pair(judge.top(), jtpl, schema, p.original,
                                                     p.target_field, p.rewritten_span, opts));
    emit(a.out, text);
    return 0;
  }
  const auto ds = load_data(g, schema, g.config.path_or(a.data, "data"), false);
  const zr::Instance* inst = ds.find(require(a.id, "--id (or --pairs)"));
  if (!inst) throw zr::Error("no instance '" + a.id + "' in the data file");
  const auto target = a.target_field.empty() ? schema.rewritable_fields().front() : a.target_field;
  emit(a.out, verdict_line(inst->id, zr::judge_pair(judge.top(), jtpl, schema, *inst, target,
                                                    require(a.rewritten, "--rewritten"), opts)));
  return 0;
}

struct CalibrateArgs {
  std::string schema, pairs, judge_tpl, backend, worksheet_dir, out;
  std::vector<std::string> revisions;
  double threshold = -1.0;
  int max_rounds = 0;
};

int run_calibrate(const Globals& g, const CalibrateArgs& a) {
  const auto schema = load_schema(g, a.schema);
  const auto cj = g.config.section("calibration");
  const auto pairs_path = a.pairs.empty() ? g.config.path(cj.value("pairs", std::string())) : a.pairs;
  const auto pairs = zr::load_labeled_pairs(require(pairs_path, "labeled pairs (--pairs)"), schema);
  const auto initial = load_template(g, a.judge_tpl, "judge_template", schema);
  BackendChain judge(backend_spec(g.config, "judge_backend", a.backend), g.config);
  const double threshold = a.threshold >= 0.0 ? a.threshold : cj.value("threshold", 0.90);
  const int max_rounds = a.max_rounds > 0 ? a.max_rounds : cj.value("max_rounds", 3);
  const std::string worksheet_dir =
      !a.worksheet_dir.empty() ? a.worksheet_dir
                               : g.config.path(cj.value("worksheet_dir", std::string("worksheets")));

  std::size_t next_revision = 0;
  const zr::RevisionProvider revise = [&](const zr::CalibrationReport& rep,
                                          const std::string& worksheet) -> std::optional<std::string> {
    std::cerr << "judge_acc " << rep.judge_acc << " below " << rep.threshold
              << "; worksheet written to " << worksheet << "\n";
    if (!a.revisions.empty()) {
      if (next_revision >= a.revisions.size()) return std::nullopt;
      return a.revisions[next_revision++];
    }
    const auto path = ask("path of the revised judge template (empty to stop): ");
    if (path.empty()) return std::nullopt;
    return path;
  };

  const auto outcome = zr::calibration_loop(judge.top(), initial, schema, pairs, revise,
                                            worksheet_dir, threshold, max_rounds,
                                            call_options(g.config.section("pipeline").value(
                                                "judge", json::object())));
  nlohmann::ordered_json j;
  j["status"] = outcome.status();
  j["final_template"] = outcome.final_template.label();
  j["rounds"] = nlohmann::ordered_json::array();
  for (const auto& r : outcome.reports) j["rounds"].push_back(r.to_json());
  emit(a.out, j.dump(2) + "\n");
  std::cerr << outcome.status() << " with " << outcome.final_template.label() << " after "
            << outcome.reports.size() << " round(s)\n";
  return outcome.calibrated ? 0 : 2;
}

struct AnnotateArgs {
  std::string schema, data, candidates, annotations, template_in, template_out;
  bool assemble = false;
};

int run_annotate(const Globals& g, const AnnotateArgs& a) {
  std::vector<zr::RewriteResult> candidates;
  {
    std::istringstream in(read_file(require(a.candidates, "--candidates")));
    std::string line;
    while (std::getline(in, line))
      if (!zr::detail::trim(line).empty())
        candidates.push_back(zr::RewriteResult::from_json(json::parse(line)));
  }
  const auto ann_path = require(a.annotations, "--annotations");

  if (a.assemble) {
    const auto schema = load_schema(g, a.schema);
    const auto ds = load_data(g, schema, g.config.path_or(a.data, "data"), false);
    const auto tpl = load_template(g, a.template_in, "rewriter_template", schema);
    std::ifstream in(ann_path);
    if (!in) throw zr::Error("cannot open annotations '" + ann_path + "'");
    const auto out = zr::assemble_few_shot(tpl, candidates, zr::parse_annotations(in), ds);
    out.save(require(a.template_out, "--template-out"));
    std::cerr << "wrote " << out.label() << " with " << out.exemplars.size() << " exemplars\n";
    return 0;
  }

  // Interactive review; existing decisions are kept so a session can resume.
  std::vector<zr::Annotation> done;
  if (fs::exists(ann_path)) {
    std::ifstream in(ann_path);
    done = zr::parse_annotations(in);
  }
  std::set<std::string> seen;
  for (const auto& d : done) seen.insert(d.id);
  for (const auto& c : candidates) {
    if (seen.count(c.instance_id)) continue;
    std::cout << "\n[" << c.instance_id << "] " << c.target_field << "\n  original:  "
              << c.original_span << "\n  rewritten: " << c.rewritten_span << "\n";
    std::string answer;
    while (answer != "a" && answer != "r" && answer != "q")
      answer = ask("approve (a), reject (r) or quit (q)? ");
    if (answer == "q") break;
    zr::Annotation ann{c.instance_id, answer == "a", ""};
    if (!ann.approved) ann.note = ask("note (optional): ");
    done.push_back(ann);
    std::ostringstream out;
    zr::write_annotations(done, out);
    write_file(ann_path, out.str());
  }
  std::cerr << done.size() << " of " << candidates.size() << " candidates annotated\n";
  return 0;
}

struct TrainArgs {
  std::string schema, original, rephrased, method = "ZO-MeZO", data_type = "Original", trace_out;
  double lr = 0.0;
  std::size_t batch_size = 0, rank = 0;
};

int run_train(const Globals& g, const TrainArgs& a) {
  const auto schema = load_schema(g, a.schema);
  const auto data_type = zr::parse_data_type(a.data_type);
  const std::string path = data_type == zr::DataType::original
                               ? g.config.path_or(a.original, "data")
                               : g.config.path_or(a.rephrased, "rephrased");
  const auto ds = load_data(g, schema, path, true);
  const auto grid = experiment_grid(g);
  const auto method = zr::parse_method(a.method);
  zr::RunConfig rc = grid.configs(method).front();
  if (a.lr > 0.0) rc.learning_rate = a.lr;
  if (a.batch_size > 0) rc.batch_size = a.batch_size;
  if (a.rank > 0) rc.rank = a.rank;
  const auto features = zr::featurize(ds, feature_extractor(g.config));
  const auto res = zr::run_one(grid, rc, features, zr::class_count(features), 50);
  if (!a.trace_out.empty()) write_file(a.trace_out, res.trace.to_jsonl());
  json j{{"config", rc.describe()},
         {"data_type", std::string(zr::to_string(data_type))},
         {"dev_accuracy", res.dev_accuracy},
         {"test_accuracy", res.test_accuracy}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

struct SweepArgs {
  std::string out, seeds;
  bool synthetic = false;
};

int run_sweep(const Globals& g, const SweepArgs& a) {
  const auto grid = experiment_grid(g);
  const auto fx = feature_extractor(g.config);
  if (a.synthetic) {
    const auto rtpl = zr::PromptTemplate::load(
        require(g.config.path_or("", "rewriter_template"), "rewriter_template in config"));
    const auto jtpl = zr::PromptTemplate::load(
        require(g.config.path_or("", "judge_template"), "judge_template in config"));
    const auto seeds = a.seeds.empty() ? std::vector<std::uint64_t>{g.resolved_seed()}
                                       : parse_seeds(a.seeds);
    const auto study = zr::run_synthetic_study(synthetic_spec(g), grid, seeds, rtpl, jtpl, fx);
    nlohmann::ordered_json j;
    j["seeds"] = study.seeds;
    j["tables"] = nlohmann::ordered_json::array();
    for (const auto& t : study.tables) j["tables"].push_back(t.to_json());
    for (const auto& [m, d] : study.mean_delta)
      j["mean_delta_points"][std::string(zr::to_string(m))] = 100.0 * d;
    emit(a.out, j.dump(2) + "\n");
    return 0;
  }

  // Tasks from the config: [{name, schema, original, rephrased}].
  const auto tasks_json = g.config.section("tasks");
  if (!tasks_json.is_array() || tasks_json.empty())
    throw zr::InvalidConfigError("config needs a nonempty 'tasks' array (or use --synthetic)");
  std::vector<zr::TaskPair> tasks;
  for (const auto& t : tasks_json) {
    const auto schema = zr::TaskSchema::from_json(
        json::parse(read_file(g.config.path(t.at("schema").get<std::string>()))));
    auto original = zr::load_jsonl(g.config.path(t.at("original").get<std::string>()), schema);
    auto rephrased = zr::load_jsonl(g.config.path(t.at("rephrased").get<std::string>()), schema);
    if (original.split_assignment.empty()) {
      original = zr::split(std::move(original), g.resolved_seed());
      rephrased = zr::split(std::move(rephrased), g.resolved_seed());
    }
    tasks.push_back({t.at("name").get<std::string>(), std::move(original), std::move(rephrased)});
  }
  const auto table = zr::run_grid(grid, tasks, fx);
  emit(a.out, table.to_json().dump(2) + "\n");
  return 0;
}

struct ReportArgs {
  std::string table, format = "plain", out;
};

int run_report(const Globals&, const ReportArgs& a) {
  const auto j = json::parse(read_file(require(a.table, "--table")));
  const auto table = zr::ResultTable::from_json(j.contains("tables") ? j.at("tables").at(0) : j);
  zr::ReportFormat fmt;
  if (a.format == "plain") fmt = zr::ReportFormat::plain;
  else if (a.format == "csv") fmt = zr::ReportFormat::delimited;
  else throw zr::InvalidConfigError("format must be plain or csv");
  emit(a.out, zr::emit_report(table, fmt));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zeroth-order fine-tuning on rephrased training data"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Shared JSON config file");
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for generation, splits and training")
                       ->capture_default_str();

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write the synthetic noisy-phrasing task");
  generate->add_option("--out-dir", gen.out_dir, "Output directory")->required();

  RewriteArgs rw;
  auto* rewrite = app.add_subcommand("rewrite", "Rephrase the train split through the judge gate");
  rewrite->add_option("--schema", rw.schema);
  rewrite->add_option("--data", rw.data, "Input JSONL");
  rewrite->add_option("--out", rw.out, "Rephrased JSONL (default stdout)");
  rewrite->add_option("--report", rw.report, "Per-instance decisions JSONL");
  rewrite->add_option("--rewriter-template", rw.rewriter_tpl);
  rewrite->add_option("--judge-template", rw.judge_tpl);
  rewrite->add_option("--backend", rw.backend, "Rewriter backend kind override");
  rewrite->add_option("--judge-backend", rw.judge_backend, "Judge backend kind override");
  rewrite->add_option("--target-field", rw.target_field);
  rewrite->add_option("--workers", rw.workers);
  rewrite->add_option("--retries", rw.retries, "Fresh rewrite attempts after a rejection");
  rewrite->add_flag("--split", rw.split, "Assign a seeded split when the data has none");
  rewrite->add_option("--draft", rw.draft, "Only draft N candidates for review");
  rewrite->add_option("--candidates-out", rw.candidates_out);

  JudgeArgs jd;
  auto* judge = app.add_subcommand("judge", "Ask the judge about one pair or a pair file");
  judge->add_option("--schema", jd.schema);
  judge->add_option("--data", jd.data);
  judge->add_option("--id", jd.id);
  judge->add_option("--rewritten", jd.rewritten);
  judge->add_option("--target-field", jd.target_field);
  judge->add_option("--pairs", jd.pairs, "Labeled pairs JSONL");
  judge->add_option("--judge-template", jd.judge_tpl);
  judge->add_option("--backend", jd.backend);
  judge->add_option("--out", jd.out);

  CalibrateArgs cal;
  auto* calibrate = app.add_subcommand("calibrate", "Score and revise the judge template");
  calibrate->add_option("--schema", cal.schema);
  calibrate->add_option("--pairs", cal.pairs);
  calibrate->add_option("--judge-template", cal.judge_tpl);
  calibrate->add_option("--backend", cal.backend);
  calibrate->add_option("--threshold", cal.threshold);
  calibrate->add_option("--max-rounds", cal.max_rounds);
  calibrate->add_option("--worksheet-dir", cal.worksheet_dir);
  calibrate->add_option("--revision", cal.revisions,
                        "Revised template for the next round (repeatable); prompts if absent");
  calibrate->add_option("--out", cal.out);

  AnnotateArgs an;
  auto* annotate = app.add_subcommand("annotate", "Review drafted candidates, build few-shot");
  annotate->add_option("--candidates", an.candidates)->required();
  annotate->add_option("--annotations", an.annotations, "TSV of decisions")->required();
  annotate->add_flag("--assemble", an.assemble, "Build the few-shot template from decisions");
  annotate->add_option("--schema", an.schema);
  annotate->add_option("--data", an.data);
  annotate->add_option("--template", an.template_in, "Zero-shot rewriter template");
  annotate->add_option("--template-out", an.template_out);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train one method on one corpus");
  train->add_option("--schema", tr.schema);
  train->add_option("--original", tr.original);
  train->add_option("--rephrased", tr.rephrased);
  train->add_option("--method", tr.method, "ZO-MeZO, FO-Full or FO-LoRA")->capture_default_str();
  train->add_option("--data-type", tr.data_type, "Original or Rephrased")->capture_default_str();
  train->add_option("--lr", tr.lr);
  train->add_option("--batch-size", tr.batch_size);
  train->add_option("--rank", tr.rank);
  train->add_option("--trace-out", tr.trace_out);

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Grid search every method on both corpora");
  sweep->add_flag("--synthetic", sw.synthetic, "Generate, rephrase and sweep the synthetic task");
  sweep->add_option("--seeds", sw.seeds, "Comma-separated seeds for --synthetic");
  sweep->add_option("--out", sw.out, "Result table JSON (default stdout)");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Render a result table");
  report->add_option("--table", rp.table)->required();
  report->add_option("--format", rp.format, "plain or csv")->capture_default_str();
  report->add_option("--out", rp.out);

  CLI11_PARSE(app, argc, argv);
  try {
    g.seed_given = seed_opt->count() > 0;
    g.config = Config::load(g.config_path);
    if (generate->parsed()) return run_generate(g, gen);
    if (rewrite->parsed()) return run_rewrite(g, rw);
    if (judge->parsed()) return run_judge(g, jd);
    if (calibrate->parsed()) return run_calibrate(g, cal);
    if (annotate->parsed()) return run_annotate(g, an);
    if (train->parsed()) return run_train(g, tr);
    if (sweep->parsed()) return run_sweep(g, sw);
    if (report->parsed()) return run_report(g, rp);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
