// qgf: run query-generation pipeline stages from a preset and/or JSON config.
//
//   qgf --preset labelcond-finetune --config run.json --out runs/a
//   qgf --config run.json --stage gen --backend mock-template --seed 7
//   qgf --preset random-baseline --input wands.csv --format csv \
//       --schema product_id=product_id,title=product_name,query=query,label=label \
//       --label-space wands --out runs/random

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qgf/errors.hpp"
#include "qgf/stages.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Label-conditioned query generation pipeline"};

  std::string config_path;
  std::string preset_name;
  std::vector<std::string> stages;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string scorer;
  std::string scorer_mode;
  std::optional<std::size_t> k;
  std::optional<double> ratio;
  std::optional<std::size_t> max_in_flight;
  std::string input;
  std::string format;
  std::string schema;
  std::string label_space;
  std::string generation_space;
  std::string mode;
  bool roundtrip = false;
  bool print_config = false;
  bool list_presets = false;

  app.add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--preset", preset_name, "Base preset for the configuration");
  app.add_option("--stage", stages, "Stage(s) to run; default: the configured stage list");
  app.add_option("--out", out_dir, "Output directory for stage artifacts");
  app.add_option("--seed", seed, "Global seed");
  app.add_option("--backend", backend, "Generator backend: http | mock-template");
  app.add_option("--scorer", scorer, "Scorer: http | mock-overlap | random");
  app.add_option("--scorer-mode", scorer_mode, "distribution | scalar");
  app.add_option("--k", k, "Hard negatives retrieved per query");
  app.add_option("--ratio", ratio, "Train fraction of products for the split");
  app.add_option("--max-in-flight", max_in_flight, "Concurrent generation requests");
  app.add_option("--input", input, "Corpus table to ingest");
  app.add_option("--format", format, "Corpus table format: csv | tsv | jsonl");
  app.add_option("--schema", schema, "Column roles: product_id=colA,title=colB,...");
  app.add_option("--label-space", label_space, "Gold label space of the corpus (name or JSON file)");
  app.add_option("--generation-space", generation_space, "Label space used for generation");
  app.add_option("--mode", mode, "Generation mode: vanilla | labelcond");
  app.add_flag("--roundtrip", roundtrip, "Relabel generated queries with the scorer");
  app.add_flag("--print-config", print_config, "Print the effective configuration and exit");
  app.add_flag("--list-presets", list_presets, "List preset names and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? qgf::kExitOk : qgf::kExitValidation;
  }

  try {
    if (list_presets) {
      for (const auto& p : qgf::preset_names()) std::cout << p << '\n';
      return qgf::kExitOk;
    }
    std::optional<std::string> base;
    if (!preset_name.empty()) base = preset_name;

    qgf::PipelineConfig cfg;
    if (!config_path.empty()) {
      cfg = qgf::load_config(config_path, base);
    } else if (base) {
      cfg = qgf::preset(*base);
    } else {
      throw qgf::ConfigError("need --config and/or --preset");
    }

    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = *seed;
    if (!backend.empty()) cfg.backend.kind = backend;
    if (!scorer.empty()) cfg.scorer.kind = scorer;
    if (!scorer_mode.empty()) cfg.scorer.mode = scorer_mode;
    if (k) cfg.retrieval_k = *k;
    if (ratio) cfg.split_ratio = *ratio;
    if (max_in_flight) cfg.backend.max_in_flight = *max_in_flight;
    if (!input.empty()) cfg.corpus.path = input;
    if (!format.empty()) cfg.corpus.format = qgf::parse_table_format(format);
    if (!schema.empty()) cfg.corpus.schema = qgf::Schema::parse(schema);
    if (!label_space.empty()) cfg.corpus_space = label_space;
    if (!generation_space.empty()) cfg.generation_space = generation_space;
    if (!mode.empty()) cfg.mode = qgf::parse_gen_mode(mode);
    if (roundtrip) cfg.roundtrip = true;

    if (print_config) {
      std::cout << qgf::config_to_json(cfg).dump(2) << '\n';
      return qgf::kExitOk;
    }

    const std::vector<std::string> to_run = stages.empty() ? qgf::effective_stages(cfg) : stages;
    for (const auto& outcome : qgf::run_pipeline(cfg, to_run)) {
      std::cout << "[" << outcome.stage << "]";
      for (const auto& f : outcome.outputs) std::cout << ' ' << f;
      std::cout << '\n';
      for (const auto& w : outcome.warnings) std::cerr << "warning: " << outcome.stage << ": " << w << '\n';
    }
    return qgf::kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return qgf::exit_code_for_current_exception();
  }
}
