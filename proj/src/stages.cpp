#include "qgf/stages.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "qgf/errors.hpp"
#include "qgf/genclient.hpp"
#include "qgf/metrics.hpp"
#include "qgf/pipeline.hpp"
#include "qgf/text.hpp"

namespace qgf {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr auto kReplaceInvalid = nlohmann::json::error_handler_t::replace;

// Artifact names under the output directory.
constexpr const char* kProducts = "products.jsonl";
constexpr const char* kJudgments = "judgments.jsonl";
constexpr const char* kIngestReport = "ingest_report.json";
constexpr const char* kGenerated = "generated.jsonl";
constexpr const char* kGenFailures = "gen_failures.jsonl";
constexpr const char* kGenReport = "gen_report.json";
constexpr const char* kFiltered = "filtered.jsonl";
constexpr const char* kDedupReport = "dedup_report.json";
constexpr const char* kRelabeled = "relabeled.jsonl";
constexpr const char* kRelabelReport = "relabel_report.json";
constexpr const char* kTrain = "train.jsonl";
constexpr const char* kVal = "val.jsonl";
constexpr const char* kSplitReport = "split_report.json";
constexpr const char* kIndex = "index.qgfidx";
constexpr const char* kHardNegatives = "hard_negatives.jsonl";
constexpr const char* kTrainingPairs = "training_pairs.jsonl";
constexpr const char* kMiningReport = "mining_report.json";
constexpr const char* kEvalJson = "eval.json";
constexpr const char* kEvalText = "eval.txt";
constexpr const char* kReportJson = "report.json";
constexpr const char* kReportText = "report.txt";

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.filename().string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so a crashed stage never leaves a half-written artifact.
void write_file(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << bytes;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string json_text(const ojson& j) { return j.dump(2, ' ', false, kReplaceInvalid) + "\n"; }

std::size_t line_count(const std::string& bytes) {
  return static_cast<std::size_t>(std::count(bytes.begin(), bytes.end(), '\n'));
}

class StageContext {
 public:
  StageContext(const PipelineConfig& cfg, std::string_view stage)
      : cfg_(cfg), stage_(stage), dir_(cfg.out_dir) {}

  fs::path path(const char* name) const { return dir_ / name; }

  void require(const char* name) const {
    if (!fs::exists(path(name))) throw MissingArtifactError(path(name).string());
  }

  std::string input(const char* name) {
    require(name);
    std::string bytes = read_file(path(name));
    inputs_[name] = hex64(fnv1a64(bytes));
    return bytes;
  }

  void external_input(const std::string& label, const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::uint64_t h = kFnvBasis;
    std::string chunk(1 << 16, '\0');
    while (in.read(chunk.data(), static_cast<std::streamsize>(chunk.size())) || in.gcount() > 0) {
      h = fnv1a64(std::string_view(chunk.data(), static_cast<std::size_t>(in.gcount())), h);
    }
    inputs_[label] = hex64(h);
  }

  void output(const char* name, const std::string& bytes) {
    write_file(path(name), bytes);
    ojson o;
    o["hash"] = hex64(fnv1a64(bytes));
    o["bytes"] = bytes.size();
    if (std::string_view(name).ends_with(".jsonl")) o["records"] = line_count(bytes);
    outputs_[name] = std::move(o);
    outcome_.outputs.push_back(name);
  }

  void warn(std::string w) { outcome_.warnings.push_back(std::move(w)); }

  std::uint64_t seed() const { return derive_seed(cfg_.seed, stage_); }

  StageOutcome finish() {
    ojson m;
    m["stage"] = stage_;
    m["config_hash"] = config_hash(cfg_);
    m["stage_seed"] = hex64(seed());
    ojson in = ojson::object();
    for (const auto& [k, v] : inputs_) in[k] = v;
    m["inputs"] = std::move(in);
    ojson out = ojson::object();
    for (const auto& [k, v] : outputs_) out[k] = v;
    m["outputs"] = std::move(out);
    m["warnings"] = outcome_.warnings;
    fs::create_directories(dir_ / "manifests");
    write_file(dir_ / "manifests" / (stage_ + ".json"), json_text(m));
    outcome_.stage = stage_;
    return std::move(outcome_);
  }

 private:
  const PipelineConfig& cfg_;
  std::string stage_;
  fs::path dir_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, ojson> outputs_;
  StageOutcome outcome_;
};

std::shared_ptr<const LabelSpace> shared_space(const std::string& name) {
  return std::make_shared<const LabelSpace>(resolve_space(name));
}

Corpus load_products(StageContext& ctx, const std::string& space_name, bool with_judgments) {
  Corpus c;
  c.label_space_name = space_name;
  std::istringstream products(ctx.input(kProducts));
  c.products = read_products_jsonl(products);
  if (with_judgments) {
    std::istringstream judgments(ctx.input(kJudgments));
    c.judgments = read_judgments_jsonl(judgments);
  }
  return c;
}

SyntheticDataset load_dataset(StageContext& ctx, const char* name,
                              std::shared_ptr<const LabelSpace> space) {
  std::istringstream in(ctx.input(name));
  return read_dataset_jsonl(in, std::move(space));
}

std::string dataset_bytes(const SyntheticDataset& ds) {
  std::ostringstream out;
  write_dataset_jsonl(out, ds);
  return out.str();
}

std::unique_ptr<Scorer> make_distribution_scorer(const PipelineConfig& cfg,
                                                 std::shared_ptr<const LabelSpace> space) {
  if (cfg.scorer.kind == "mock-overlap") return std::make_unique<MockOverlapScorer>(space);
  if (cfg.scorer.kind == "http") {
    return std::make_unique<HttpScorer>(endpoint_from_env("QGF_SCORER", cfg.scorer.url), space);
  }
  throw ConfigError("scorer '" + cfg.scorer.kind + "' does not produce label distributions");
}

// ---------------------------------------------------------------------------
// Stages

void stage_ingest(const PipelineConfig& cfg, StageContext& ctx) {
  const LabelSpace space = resolve_space(cfg.corpus_space);
  ctx.external_input("corpus", cfg.corpus.path);
  IngestOptions opts;
  opts.strict = cfg.corpus.strict;
  opts.dataset_tag = cfg.corpus.dataset_tag;
  IngestResult res = ingest_table(cfg.corpus.path, cfg.corpus.format, cfg.corpus.schema, space, opts);
  const Corpus corpus = canonicalize(std::move(res.corpus));

  std::ostringstream products;
  std::ostringstream judgments;
  write_products_jsonl(products, corpus);
  write_judgments_jsonl(judgments, corpus);
  ctx.output(kProducts, products.str());
  ctx.output(kJudgments, judgments.str());

  ojson report;
  report["label_space"] = space.name;
  report["rows_read"] = res.report.rows_read;
  report["rows_skipped"] = res.report.rows_skipped;
  report["products"] = corpus.products.size();
  report["judgments"] = corpus.judgments.size();
  report["product_only_rows"] = res.report.product_only_rows;
  report["repeated_product_rows"] = res.report.repeated_product_rows;
  ojson errors = ojson::array();
  for (const auto& e : res.report.errors) errors.push_back({{"row", e.row}, {"error", e.message}});
  report["row_errors"] = std::move(errors);
  report["warnings"] = res.report.warnings;
  const ValidationReport v = validate_corpus(corpus, space);
  report["validation_issues"] = v.issue_count();
  ctx.output(kIngestReport, json_text(report));
  for (const auto& w : res.report.warnings) ctx.warn(w);
  if (res.report.rows_skipped > 0) {
    ctx.warn(std::to_string(res.report.rows_skipped) + " unparseable rows skipped");
  }
}

std::vector<Exemplar> select_exemplars(const std::vector<Exemplar>& all, const LabelSpace& space,
                                       GenMode mode) {
  std::vector<Exemplar> picked;
  if (mode == GenMode::vanilla) {
    for (const auto& e : all) {
      if (e.label.rank == 0 && picked.size() < kVanillaPromptExemplars) picked.push_back(e);
    }
    if (picked.size() < kVanillaPromptExemplars) {
      throw ConfigError("exemplar file has " + std::to_string(picked.size()) +
                        " exemplars with the top label; vanilla prompts need " +
                        std::to_string(kVanillaPromptExemplars));
    }
    return picked;
  }
  std::vector<std::size_t> taken(space.size(), 0);
  for (const auto& e : all) {
    if (taken[e.label.rank] < kLabelcondExemplarsPerLabel) {
      ++taken[e.label.rank];
      picked.push_back(e);
    }
  }
  for (std::size_t r = 0; r < space.size(); ++r) {
    if (taken[r] < kLabelcondExemplarsPerLabel) {
      throw ConfigError("exemplar file has " + std::to_string(taken[r]) + " exemplars for label '" +
                        space.labels[r] + "'; labelcond prompts need " +
                        std::to_string(kLabelcondExemplarsPerLabel));
    }
  }
  return picked;
}

void stage_gen(const PipelineConfig& cfg, StageContext& ctx) {
  const auto space = shared_space(cfg.generation_space);
  const Corpus corpus = load_products(ctx, cfg.generation_space, false);
  const auto products = product_lookup(corpus);
  const std::vector<GenTask> tasks = plan_generation(corpus, *space, cfg.mode, cfg.queries_per_cell);

  std::vector<Exemplar> exemplars;
  if (cfg.style == "prompt") {
    ctx.external_input("exemplars", cfg.exemplars);
    exemplars = select_exemplars(load_exemplars(cfg.exemplars, *space), *space, cfg.mode);
  }

  std::vector<GenRequest> reqs;
  reqs.reserve(tasks.size());
  for (const auto& t : tasks) {
    const ProductDoc& p = *products.at(t.product_id);
    std::string input;
    if (cfg.style == "prompt") {
      input = assemble_prompt(exemplars, p, cfg.mode,
                              cfg.mode == GenMode::labelcond ? std::optional<GradedLabel>(t.label)
                                                             : std::nullopt,
                              *space, cfg.template_config);
    } else if (cfg.mode == GenMode::labelcond) {
      input = format_labelcond_input(p, t.label, cfg.template_config);
    } else {
      input = format_vanilla_input(p, cfg.template_config);
    }
    reqs.push_back({task_request_id(t), std::move(input), cfg.backend.max_output_chars});
  }

  std::unique_ptr<Generator> backend;
  if (cfg.backend.kind == "mock-template") {
    backend = std::make_unique<MockTemplateGenerator>(space, ctx.seed());
  } else {
    backend = std::make_unique<HttpGenerator>(endpoint_from_env("QGF_BACKEND", cfg.backend.url));
  }
  const auto results = generate_batch(*backend, reqs, cfg.backend.max_in_flight);

  SyntheticDataset ds;
  ds.space = space;
  std::ostringstream failures;
  std::size_t failed = 0;
  std::size_t backend_failures = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (results[i].ok()) {
      const auto& r = *results[i].response;
      ds.records.push_back({tasks[i].product_id, tasks[i].label, r.query_text, r.logprob, tasks[i].label});
      continue;
    }
    ++failed;
    if (results[i].backend_failure) ++backend_failures;
    ojson f;
    f["request_id"] = reqs[i].request_id;
    f["product_id"] = tasks[i].product_id;
    f["label"] = tasks[i].label.name;
    f["error"] = results[i].error;
    failures << f.dump(-1, ' ', false, kReplaceInvalid) << '\n';
  }
  if (!tasks.empty() && failed == tasks.size() && backend_failures > 0) {
    throw BackendError("every generation request failed; first error: " + results.front().error);
  }
  ctx.output(kGenerated, dataset_bytes(ds));
  ctx.output(kGenFailures, failures.str());
  ojson report;
  report["mode"] = std::string(to_string(cfg.mode));
  report["style"] = cfg.style;
  report["tasks"] = tasks.size();
  report["succeeded"] = ds.records.size();
  report["failed"] = failed;
  ctx.output(kGenReport, json_text(report));
  if (failed > 0) ctx.warn(std::to_string(failed) + " generation tasks failed");
}

void stage_filter(const PipelineConfig& cfg, StageContext& ctx) {
  const auto space = shared_space(cfg.generation_space);
  const SyntheticDataset ds = load_dataset(ctx, kGenerated, space);
  DedupResult res;
  if (cfg.dedup) {
    res = dedup_filter(ds);
  } else {
    res.dataset = ds;
    res.report.input_records = res.report.output_records = ds.records.size();
  }
  ctx.output(kFiltered, dataset_bytes(res.dataset));
  ojson report = dedup_report_to_json(res.report, *space);
  report["enabled"] = cfg.dedup;
  ctx.output(kDedupReport, json_text(report));
}

void stage_relabel(const PipelineConfig& cfg, StageContext& ctx) {
  const auto space = shared_space(cfg.generation_space);
  const SyntheticDataset ds = load_dataset(ctx, kFiltered, space);
  const Corpus corpus = load_products(ctx, cfg.generation_space, false);
  auto scorer = make_distribution_scorer(cfg, space);
  const RelabelResult res = roundtrip_relabel(ds, product_lookup(corpus), *scorer);
  if (!ds.records.empty() && res.dataset.records.empty()) {
    throw BackendError("relabeling failed for every record: " + res.failures.front());
  }
  ctx.output(kRelabeled, dataset_bytes(res.dataset));
  ojson report;
  report["scorer"] = cfg.scorer.kind;
  report["records"] = res.dataset.records.size();
  report["dropped"] = res.dropped;
  report["mismatch_rate"] = res.mismatch_rate;
  report["failures"] = res.failures;
  ctx.output(kRelabelReport, json_text(report));
}

void stage_split(const PipelineConfig& cfg, StageContext& ctx) {
  const auto space = shared_space(cfg.generation_space);
  const SyntheticDataset ds = load_dataset(ctx, cfg.roundtrip ? kRelabeled : kFiltered, space);
  const SplitResult res = split_train_val(ds, cfg.split_ratio, ctx.seed());
  ctx.output(kTrain, dataset_bytes(res.train));
  ctx.output(kVal, dataset_bytes(res.val));
  ojson report;
  report["ratio"] = cfg.split_ratio;
  report["train_products"] = res.train_products.size();
  report["val_products"] = res.val_products.size();
  report["train_records"] = res.train.records.size();
  report["val_records"] = res.val.records.size();
  report["warnings"] = res.warnings;
  ctx.output(kSplitReport, json_text(report));
  for (const auto& w : res.warnings) ctx.warn(w);
}

void stage_mine_negatives(const PipelineConfig& cfg, StageContext& ctx) {
  const auto space = shared_space(cfg.generation_space);
  const SyntheticDataset train = load_dataset(ctx, kTrain, space);
  const Corpus corpus = load_products(ctx, cfg.generation_space, false);
  const Bm25Index index = build_index(corpus, cfg.retrieval_fields, cfg.bm25);
  std::ostringstream index_bytes;
  write_index(index_bytes, index);
  ctx.output(kIndex, index_bytes.str());

  MiningResult mined;
  if (cfg.retriever == "http") {
    HttpRetriever retriever(endpoint_from_env("QGF_RETRIEVER", cfg.retriever_url));
    mined = mine_hard_negatives(retriever, train, cfg.retrieval_k);
  } else {
    mined = mine_hard_negatives(index, train, cfg.retrieval_k);
  }
  std::ostringstream negatives;
  write_hard_negatives_jsonl(negatives, mined.sets);
  ctx.output(kHardNegatives, negatives.str());

  const LabelSpace binary = builtin_space("msmarco-binary");
  auto pairs = training_pairs(mined.sets, binary);
  std::size_t balanced_from = pairs.size();
  bool balanced = false;
  bool has_negative = std::any_of(pairs.begin(), pairs.end(), [](const TrainingPair& p) { return p.label.rank == 1; });
  if (!pairs.empty() && has_negative) {
    pairs = upsample_balance(std::move(pairs), binary, ctx.seed(),
                             [](const TrainingPair& p) { return p.label.rank; });
    balanced = true;
  } else {
    ctx.warn("no negatives retrieved; training pairs left unbalanced");
  }
  std::ostringstream pair_bytes;
  write_training_pairs_jsonl(pair_bytes, pairs);
  ctx.output(kTrainingPairs, pair_bytes.str());

  ojson report;
  report["retriever"] = cfg.retriever;
  report["k"] = cfg.retrieval_k;
  report["queries"] = mined.sets.size();
  report["empty_retrievals"] = mined.empty_retrievals;
  report["pairs_before_balance"] = balanced_from;
  report["pairs"] = pairs.size();
  report["balanced"] = balanced;
  ctx.output(kMiningReport, json_text(report));
}

std::string model_name(const PipelineConfig& cfg) {
  return cfg.preset.empty() ? cfg.scorer.kind : cfg.preset;
}

void stage_eval(const PipelineConfig& cfg, StageContext& ctx) {
  const LabelSpace gold = resolve_space(cfg.corpus_space);
  const Corpus corpus = load_products(ctx, cfg.corpus_space, true);

  std::unique_ptr<Scorer> dist_scorer;
  std::unique_ptr<ScalarScorer> scalar;
  if (cfg.scorer.kind == "random") {
    scalar = std::make_unique<RandomScorer>(ctx.seed());
  } else if (cfg.scorer.kind == "http" && cfg.scorer.mode == "scalar") {
    scalar = std::make_unique<HttpScorer>(endpoint_from_env("QGF_SCORER", cfg.scorer.url),
                                          shared_space(cfg.generation_space));
  } else {
    dist_scorer = make_distribution_scorer(cfg, shared_space(cfg.generation_space));
    scalar = std::make_unique<ExpectedScoreScorer>(*dist_scorer);
  }
  const EvalResult res = evaluate_scorer(corpus, gold, *scalar, cfg.eval_ks);
  if (res.per_query.empty() && res.failed_queries > 0 && res.skipped_queries == 0) {
    throw BackendError("scoring failed for every query: " + res.failures.front());
  }
  ojson j = eval_to_json(res, model_name(cfg));
  j["scorer"] = cfg.scorer.kind;
  j["gold_space"] = gold.name;
  ctx.output(kEvalJson, json_text(j));
  ctx.output(kEvalText, eval_table(res, model_name(cfg)).render());
  if (res.failed_queries > 0) ctx.warn(std::to_string(res.failed_queries) + " queries failed to score");
}

void stage_report(const PipelineConfig& cfg, StageContext& ctx) {
  const auto space = shared_space(cfg.generation_space);
  ojson report;
  std::string text;
  const char* dataset_file = cfg.roundtrip && fs::exists(ctx.path(kRelabeled)) ? kRelabeled : kFiltered;
  const bool have_data = fs::exists(ctx.path(dataset_file));
  const bool have_eval = fs::exists(ctx.path(kEvalJson));
  if (!have_data && !have_eval) throw MissingArtifactError(ctx.path(kFiltered).string());

  const std::string column = model_name(cfg);
  if (have_data) {
    const SyntheticDataset ds = load_dataset(ctx, dataset_file, space);
    const Table dist = label_distribution(ds, column);
    report["label_distribution"] = dist.to_json();
    text += "Generated queries (post filtering)\n" + dist.render() + "\n";
  }
  if (fs::exists(ctx.path(kDedupReport))) {
    const auto j = nlohmann::json::parse(ctx.input(kDedupReport));
    const Table dup = duplicate_stats(dedup_report_from_json(j, *space), *space, column);
    report["duplicates"] = dup.to_json();
    text += "Duplicate queries across labels\n" + dup.render() + "\n";
  }
  if (cfg.roundtrip && fs::exists(ctx.path(kRelabelReport))) {
    const auto j = nlohmann::json::parse(ctx.input(kRelabelReport));
    report["mismatch_rate"] = j.at("mismatch_rate");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", j.at("mismatch_rate").get<double>());
    text += std::string("Round-trip label mismatch rate: ") + buf + "\n\n";
  }
  if (have_eval) {
    const auto j = ojson::parse(ctx.input(kEvalJson));
    report["eval"] = j.at("mean");
    text += "Evaluation\n" + read_file(ctx.path(kEvalText));
  }
  ctx.output(kReportJson, json_text(report));
  ctx.output(kReportText, text);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"ingest", "gen",            "filter", "relabel",
                                                 "split",  "mine-negatives", "eval",   "report"};
  return names;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"zero-shot-eval",     "vanilla-finetune",
                                                 "vanilla-prompt",     "labelcond-finetune",
                                                 "labelcond-prompt",   "random-baseline"};
  return names;
}

PipelineConfig preset(std::string_view name) {
  PipelineConfig c;
  c.preset = std::string(name);
  if (name == "zero-shot-eval") {
    c.stages = {"ingest", "eval"};
    c.scorer = {"http", "", "distribution"};
  } else if (name == "vanilla-finetune" || name == "vanilla-prompt") {
    c.mode = GenMode::vanilla;
    c.style = name == "vanilla-prompt" ? "prompt" : "finetune";
    c.dedup = false;
    c.stages = {"ingest", "gen", "filter", "split", "mine-negatives", "eval", "report"};
    c.scorer = {"http", "", "scalar"};
  } else if (name == "labelcond-finetune" || name == "labelcond-prompt") {
    c.mode = GenMode::labelcond;
    c.style = name == "labelcond-prompt" ? "prompt" : "finetune";
    c.dedup = true;
    c.stages = {"ingest", "gen", "filter", "split", "eval", "report"};
    c.scorer = {"http", "", "distribution"};
  } else if (name == "random-baseline") {
    c.stages = {"ingest", "eval"};
    c.scorer = {"random", "", "scalar"};
  } else {
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + std::string(name) + "' (valid: " + valid + ")");
  }
  return c;
}

namespace {

template <class T>
void take(const ojson& j, const char* key, T& field) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) field = it->get<T>();
}

Schema schema_from_json(const ojson& j) {
  if (j.is_string()) return Schema::parse(j.get<std::string>());
  Schema s;
  for (const auto& [role, column] : j.items()) s.roles.emplace_back(role, column.get<std::string>());
  return s;
}

ojson schema_to_json(const Schema& s) {
  ojson j = ojson::object();
  for (const auto& [role, column] : s.roles) j[role] = column;
  return j;
}

std::string_view format_name(TableFormat f) {
  switch (f) {
    case TableFormat::csv: return "csv";
    case TableFormat::tsv: return "tsv";
    case TableFormat::jsonl: return "jsonl";
  }
  return "csv";
}

}  // namespace

PipelineConfig config_from_json(const ojson& j, std::optional<std::string> base_preset) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  PipelineConfig c;
  try {
    if (base_preset) {
      c = preset(*base_preset);
    } else if (j.contains("preset")) {
      c = preset(j.at("preset").get<std::string>());
    }
    take(j, "stages", c.stages);
    take(j, "seed", c.seed);
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();

    if (auto it = j.find("corpus"); it != j.end()) {
      const auto& cj = *it;
      take(cj, "path", c.corpus.path);
      if (cj.contains("format")) c.corpus.format = parse_table_format(cj.at("format").get<std::string>());
      if (cj.contains("schema")) c.corpus.schema = schema_from_json(cj.at("schema"));
      take(cj, "strict", c.corpus.strict);
      take(cj, "dataset_tag", c.corpus.dataset_tag);
      take(cj, "label_space", c.corpus_space);
    }
    if (auto it = j.find("generation"); it != j.end()) {
      const auto& g = *it;
      take(g, "label_space", c.generation_space);
      if (g.contains("mode")) c.mode = parse_gen_mode(g.at("mode").get<std::string>());
      take(g, "style", c.style);
      take(g, "exemplars", c.exemplars);
      take(g, "queries_per_cell", c.queries_per_cell);
      if (auto t = g.find("template"); t != g.end()) {
        take(*t, "include_description", c.template_config.include_description);
        take(*t, "max_input_chars", c.template_config.max_input_chars);
        take(*t, "field_order", c.template_config.field_order);
      }
      if (auto b = g.find("backend"); b != g.end()) {
        take(*b, "kind", c.backend.kind);
        take(*b, "url", c.backend.url);
        take(*b, "max_in_flight", c.backend.max_in_flight);
        take(*b, "max_output_chars", c.backend.max_output_chars);
      }
    }
    if (auto it = j.find("filter"); it != j.end()) take(*it, "dedup", c.dedup);
    if (auto it = j.find("relabel"); it != j.end()) take(*it, "enabled", c.roundtrip);
    if (auto it = j.find("split"); it != j.end()) take(*it, "ratio", c.split_ratio);
    if (auto it = j.find("retrieval"); it != j.end()) {
      take(*it, "k", c.retrieval_k);
      take(*it, "k1", c.bm25.k1);
      take(*it, "b", c.bm25.b);
      take(*it, "fields", c.retrieval_fields);
      take(*it, "retriever", c.retriever);
      take(*it, "url", c.retriever_url);
    }
    if (auto it = j.find("scorer"); it != j.end()) {
      take(*it, "kind", c.scorer.kind);
      take(*it, "url", c.scorer.url);
      take(*it, "mode", c.scorer.mode);
    }
    if (auto it = j.find("eval"); it != j.end()) take(*it, "ks", c.eval_ks);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig load_config(const fs::path& path, std::optional<std::string> base_preset) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base_preset));
}

ojson config_to_json(const PipelineConfig& c) {
  ojson j;
  j["preset"] = c.preset;
  j["stages"] = c.stages;
  j["seed"] = c.seed;
  j["out"] = c.out_dir.string();
  j["corpus"] = {{"path", c.corpus.path},
                 {"format", std::string(format_name(c.corpus.format))},
                 {"schema", schema_to_json(c.corpus.schema)},
                 {"strict", c.corpus.strict},
                 {"dataset_tag", c.corpus.dataset_tag},
                 {"label_space", c.corpus_space}};
  j["generation"] = {
      {"label_space", c.generation_space},
      {"mode", std::string(to_string(c.mode))},
      {"style", c.style},
      {"exemplars", c.exemplars},
      {"queries_per_cell", c.queries_per_cell},
      {"template",
       {{"include_description", c.template_config.include_description},
        {"max_input_chars", c.template_config.max_input_chars},
        {"field_order", c.template_config.field_order}}},
      {"backend",
       {{"kind", c.backend.kind},
        {"url", c.backend.url},
        {"max_in_flight", c.backend.max_in_flight},
        {"max_output_chars", c.backend.max_output_chars}}}};
  j["filter"] = {{"dedup", c.dedup}};
  j["relabel"] = {{"enabled", c.roundtrip}};
  j["split"] = {{"ratio", c.split_ratio}};
  j["retrieval"] = {{"k", c.retrieval_k},       {"k1", c.bm25.k1},
                    {"b", c.bm25.b},            {"fields", c.retrieval_fields},
                    {"retriever", c.retriever}, {"url", c.retriever_url}};
  j["scorer"] = {{"kind", c.scorer.kind}, {"url", c.scorer.url}, {"mode", c.scorer.mode}};
  j["eval"] = {{"ks", c.eval_ks}};
  return j;
}

std::string config_hash(const PipelineConfig& cfg) {
  ojson j = config_to_json(cfg);
  j.erase("out");
  return hex64(fnv1a64(j.dump(-1, ' ', false, kReplaceInvalid)));
}

std::vector<std::string> effective_stages(const PipelineConfig& cfg) {
  std::vector<std::string> stages = cfg.stages;
  if (cfg.roundtrip && std::find(stages.begin(), stages.end(), "relabel") == stages.end()) {
    auto it = std::find(stages.begin(), stages.end(), "filter");
    if (it != stages.end()) stages.insert(it + 1, "relabel");
  }
  return stages;
}

void validate_config(const PipelineConfig& c, const std::vector<std::string>& stages) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (stages.empty()) fail("no stages to run");
  for (const auto& s : stages) {
    if (std::find(stage_names().begin(), stage_names().end(), s) == stage_names().end()) {
      std::string valid;
      for (const auto& n : stage_names()) valid += (valid.empty() ? "" : ", ") + n;
      fail("unknown stage '" + s + "' (valid: " + valid + ")");
    }
  }
  if (c.out_dir.empty()) fail("no output directory (--out)");
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) fail("split ratio must be in (0, 1)");
  if (c.retrieval_k < 1) fail("retrieval k must be at least 1");
  if (!(c.bm25.k1 > 0.0) || !(c.bm25.b >= 0.0 && c.bm25.b <= 1.0)) fail("BM25 needs k1 > 0 and b in [0, 1]");
  if (c.eval_ks.empty()) fail("eval.ks is empty");
  for (auto k : c.eval_ks) {
    if (k < 1) fail("eval cutoffs must be at least 1");
  }
  if (c.queries_per_cell < 1) fail("queries_per_cell must be at least 1");
  if (c.backend.max_in_flight < 1) fail("max_in_flight must be at least 1");
  if (c.backend.max_output_chars < 1) fail("max_output_chars must be at least 1");
  if (c.template_config.max_input_chars < 1) fail("max_input_chars must be at least 1");
  if (c.backend.kind != "http" && c.backend.kind != "mock-template") {
    fail("backend must be 'http' or 'mock-template', got '" + c.backend.kind + "'");
  }
  if (c.scorer.kind != "http" && c.scorer.kind != "mock-overlap" && c.scorer.kind != "random") {
    fail("scorer must be 'http', 'mock-overlap' or 'random', got '" + c.scorer.kind + "'");
  }
  if (c.scorer.mode != "distribution" && c.scorer.mode != "scalar") fail("scorer mode must be distribution or scalar");
  if (c.style != "finetune" && c.style != "prompt") fail("style must be 'finetune' or 'prompt'");
  if (c.retriever != "bm25" && c.retriever != "http") fail("retriever must be 'bm25' or 'http'");

  const LabelSpace corpus_space = resolve_space(c.corpus_space);
  const LabelSpace gen_space = resolve_space(c.generation_space);
  if (gen_space.continuous) fail("generation label space must be discrete");
  auto runs = [&](const char* s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };

  if (runs("ingest")) {
    if (c.corpus.path.empty()) fail("corpus.path is not set");
    if (!fs::exists(c.corpus.path)) fail("corpus file does not exist: " + c.corpus.path);
    if (c.corpus.schema.column("product_id") == nullptr || c.corpus.schema.column("title") == nullptr) {
      fail("corpus.schema must map product_id and title");
    }
  }
  if (runs("gen") && c.style == "prompt") {
    if (c.exemplars.empty()) fail("prompt style needs generation.exemplars");
    if (!fs::exists(c.exemplars)) fail("exemplar file does not exist: " + c.exemplars);
  }
  if (runs("relabel") && c.scorer.kind == "random") fail("relabeling needs a distribution scorer");
  if (runs("eval") && c.scorer.kind != "random" && !gen_space.has_weights() &&
      c.scorer.mode == "distribution") {
    fail("label space '" + gen_space.name + "' has no weights for expected scores");
  }
  (void)corpus_space;
}

StageOutcome run_stage(const PipelineConfig& cfg, std::string_view stage) {
  fs::create_directories(cfg.out_dir);
  StageContext ctx(cfg, stage);
  if (stage == "ingest") {
    stage_ingest(cfg, ctx);
  } else if (stage == "gen") {
    stage_gen(cfg, ctx);
  } else if (stage == "filter") {
    stage_filter(cfg, ctx);
  } else if (stage == "relabel") {
    stage_relabel(cfg, ctx);
  } else if (stage == "split") {
    stage_split(cfg, ctx);
  } else if (stage == "mine-negatives") {
    stage_mine_negatives(cfg, ctx);
  } else if (stage == "eval") {
    stage_eval(cfg, ctx);
  } else if (stage == "report") {
    stage_report(cfg, ctx);
  } else {
    throw ConfigError("unknown stage '" + std::string(stage) + "'");
  }
  return ctx.finish();
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg, const std::vector<std::string>& stages) {
  validate_config(cfg, stages);
  fs::create_directories(cfg.out_dir);
  OutputLock lock(cfg.out_dir);
  std::vector<StageOutcome> outcomes;
  for (const auto& s : stages) outcomes.push_back(run_stage(cfg, s));
  return outcomes;
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".qgf.lock") {
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    throw ConfigError("output directory " + dir.string() + " is locked by another run (" +
                      path_.string() + ")");
  }
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::vector<Exemplar> load_exemplars(const fs::path& path, const LabelSpace& space) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open exemplar file " + path.string());
  std::vector<Exemplar> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Exemplar e;
      e.label = parse_label(j.at("label").get<std::string>(), space);
      e.product.product_id = j.value("product_id", "exemplar-" + std::to_string(n));
      e.product.title = j.at("title").get<std::string>();
      e.product.description = j.value("description", std::string{});
      e.query_text = j.at("query").get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("exemplar line " + std::to_string(n) + ": " + e.what());
    } catch (const LabelParseError& e) {
      throw ConfigError("exemplar line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

int exit_code_for_current_exception() {
  try {
    throw;
  } catch (const MissingArtifactError&) {
    return kExitUpstreamMissing;
  } catch (const BackendError&) {
    return kExitBackend;
  } catch (const ConfigError&) {
    return kExitValidation;
  } catch (const SchemaError&) {
    return kExitValidation;
  } catch (const PreconditionError&) {
    return kExitValidation;
  } catch (const RowParseError&) {
    return kExitValidation;
  } catch (const LabelParseError&) {
    return kExitValidation;
  } catch (...) {
    return kExitFailure;
  }
}

}  // namespace qgf
