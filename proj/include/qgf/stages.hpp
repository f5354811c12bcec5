#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qgf/corpus.hpp"
#include "qgf/qgen_io.hpp"
#include "qgf/retrieval.hpp"

namespace qgf {

struct TableInput {
  std::string path;
  TableFormat format = TableFormat::csv;
  Schema schema;
  bool strict = false;
  std::string dataset_tag;
};

struct BackendConfig {
  std::string kind = "http";  // http | mock-template
  std::string url;            // falls back to $QGF_BACKEND_URL
  std::size_t max_in_flight = 8;
  std::size_t max_output_chars = 128;
};

struct ScorerConfig {
  std::string kind = "http";          // http | mock-overlap | random
  std::string url;                    // falls back to $QGF_SCORER_URL
  std::string mode = "distribution";  // distribution | scalar
};

// One self-contained run description. Every source of randomness derives from
// `seed` via derive_seed(seed, stage name).
struct PipelineConfig {
  std::string preset;
  std::vector<std::string> stages;
  std::uint64_t seed = 42;
  std::filesystem::path out_dir;

  TableInput corpus;
  std::string corpus_space = "wands";     // gold labels of the ingested corpus
  std::string generation_space = "esci";  // generation, relabel and scorer labels

  GenMode mode = GenMode::labelcond;
  std::string style = "finetune";  // finetune | prompt
  std::string exemplars;           // JSONL, prompt style only
  TemplateConfig template_config;
  BackendConfig backend;
  std::size_t queries_per_cell = 1;

  bool dedup = true;
  bool roundtrip = false;
  double split_ratio = 0.9;

  std::size_t retrieval_k = 35;
  Bm25Params bm25;
  std::vector<std::string> retrieval_fields = {"title", "description"};
  std::string retriever = "bm25";  // bm25 | http
  std::string retriever_url;

  ScorerConfig scorer;
  std::vector<std::size_t> eval_ks = {5, 10, 20};
};

const std::vector<std::string>& stage_names();
const std::vector<std::string>& preset_names();

// Throws ConfigError listing the valid names.
PipelineConfig preset(std::string_view name);

// Overlays a JSON config on the preset it names (or on `base_preset`).
PipelineConfig config_from_json(const nlohmann::ordered_json& j,
                                std::optional<std::string> base_preset = std::nullopt);
PipelineConfig load_config(const std::filesystem::path& path,
                           std::optional<std::string> base_preset = std::nullopt);
nlohmann::ordered_json config_to_json(const PipelineConfig& cfg);

// Hash of the configuration without the output directory.
std::string config_hash(const PipelineConfig& cfg);

// The configured stages, with relabel inserted after filter when round-trip
// relabeling is on.
std::vector<std::string> effective_stages(const PipelineConfig& cfg);

// Invariant checks done before any stage runs; throws ConfigError.
void validate_config(const PipelineConfig& cfg, const std::vector<std::string>& stages);

struct StageOutcome {
  std::string stage;
  std::vector<std::string> outputs;  // file names under out_dir
  std::vector<std::string> warnings;
};

// Runs one stage against artifacts under cfg.out_dir. Throws
// MissingArtifactError for absent upstream files, ConfigError for invalid
// configuration, BackendError when a backend is unusable.
StageOutcome run_stage(const PipelineConfig& cfg, std::string_view stage);

// Validates, takes the output-directory lock and runs `stages` in order.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg,
                                       const std::vector<std::string>& stages);

// Exclusive lock file in the output directory, released on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::vector<Exemplar> load_exemplars(const std::filesystem::path& path, const LabelSpace& space);

// CLI exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitUpstreamMissing = 3;
inline constexpr int kExitBackend = 4;

// Maps an in-flight exception to its exit code.
int exit_code_for_current_exception();

}  // namespace qgf
