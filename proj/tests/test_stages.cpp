#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "qgf/errors.hpp"
#include "qgf/stages.hpp"
#include "support/synthetic.hpp"

using namespace qgf;
namespace fs = std::filesystem;

namespace {

fs::path write_corpus(const fs::path& dir, std::size_t products, std::size_t queries,
                      std::optional<std::uint64_t> shuffle = std::nullopt) {
  auto path = dir / "corpus.csv";
  std::ofstream(path, std::ios::binary) << testing::corpus_csv(testing::synthetic_corpus(products, 17, queries), shuffle);
  return path;
}

int code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (...) {
    return exit_code_for_current_exception();
  }
  return kExitOk;
}

}  // namespace

TEST_CASE("presets") {
  auto lc = preset("labelcond-finetune");
  CHECK(lc.mode == GenMode::labelcond);
  CHECK(lc.dedup);
  CHECK(std::find(lc.stages.begin(), lc.stages.end(), "filter") != lc.stages.end());

  auto vp = preset("vanilla-prompt");
  CHECK(vp.mode == GenMode::vanilla);
  CHECK(vp.style == "prompt");
  CHECK(std::find(vp.stages.begin(), vp.stages.end(), "mine-negatives") != vp.stages.end());

  auto rb = preset("random-baseline");
  CHECK(rb.scorer.kind == "random");
  CHECK(std::find(rb.stages.begin(), rb.stages.end(), "gen") == rb.stages.end());
  CHECK(std::find(rb.stages.begin(), rb.stages.end(), "eval") != rb.stages.end());

  try {
    preset("bogus");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("labelcond-prompt") != std::string::npos);
  }
}

TEST_CASE("relabel is inserted after filter when round-trip is on") {
  auto c = preset("labelcond-finetune");
  c.roundtrip = true;
  auto s = effective_stages(c);
  auto f = std::find(s.begin(), s.end(), "filter");
  REQUIRE(f != s.end());
  CHECK(*(f + 1) == "relabel");
}

TEST_CASE("config json round trip and hash ignores out dir") {
  nlohmann::ordered_json j = {{"preset", "labelcond-finetune"},
                              {"seed", 7},
                              {"out", "/tmp/a"},
                              {"corpus", {{"path", "c.csv"}, {"schema", "product_id=id,title=t"}}},
                              {"generation", {{"backend", {{"kind", "mock-template"}, {"max_in_flight", 2}}}}},
                              {"split", {{"ratio", 0.8}}},
                              {"eval", {{"ks", {1, 3}}}}};
  auto c = config_from_json(j);
  CHECK(c.seed == 7);
  CHECK(c.backend.kind == "mock-template");
  CHECK(c.backend.max_in_flight == 2);
  CHECK(c.split_ratio == 0.8);
  CHECK(c.eval_ks == std::vector<std::size_t>{1, 3});
  auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  auto moved = c;
  moved.out_dir = "/tmp/b";
  CHECK(config_hash(moved) == config_hash(c));
  moved.seed = 8;
  CHECK(config_hash(moved) != config_hash(c));
  CHECK_THROWS_AS(config_from_json(nlohmann::ordered_json{{"seed", "x"}}), ConfigError);
}

TEST_CASE("validation happens before any work") {
  auto dir = testing::fresh_dir("stages_validate");
  auto cfg = testing::mock_pipeline_config(dir / "missing.csv", dir / "out");
  CHECK(code_of([&] { run_pipeline(cfg, cfg.stages); }) == kExitValidation);
  CHECK_FALSE(fs::exists(dir / "out" / "products.jsonl"));

  cfg = testing::mock_pipeline_config(write_corpus(dir, 5, 2), dir / "out");
  cfg.split_ratio = 1.5;
  CHECK(code_of([&] { run_pipeline(cfg, cfg.stages); }) == kExitValidation);
  cfg.split_ratio = 0.9;
  CHECK(code_of([&] { run_pipeline(cfg, {"ingest", "explode"}); }) == kExitValidation);
}

TEST_CASE("missing upstream artifact names the file") {
  auto dir = testing::fresh_dir("stages_missing");
  auto cfg = testing::mock_pipeline_config(write_corpus(dir, 3, 0), dir / "out");
  try {
    run_pipeline(cfg, {"filter"});
    FAIL("expected MissingArtifactError");
  } catch (const MissingArtifactError& e) {
    CHECK(std::string(e.what()).find("generated.jsonl") != std::string::npos);
  }
  CHECK(code_of([&] { run_pipeline(cfg, {"filter"}); }) == kExitUpstreamMissing);
}

TEST_CASE("gen on three products yields twelve records") {
  auto dir = testing::fresh_dir("stages_gen");
  auto cfg = testing::mock_pipeline_config(write_corpus(dir, 3, 0), dir / "out");
  run_pipeline(cfg, {"ingest", "gen"});
  std::ifstream in(dir / "out" / "generated.jsonl");
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  CHECK(n == 12);
  CHECK(fs::exists(dir / "out" / "manifests" / "gen.json"));
  auto m = nlohmann::json::parse(testing::slurp(dir / "out" / "manifests" / "gen.json"));
  CHECK(m.at("outputs").at("generated.jsonl").at("records") == 12);
  CHECK(m.at("inputs").contains("products.jsonl"));
  CHECK_FALSE(fs::exists(dir / "out" / ".qgf.lock"));
}

TEST_CASE("unreachable http backend exits with the backend code") {
  auto dir = testing::fresh_dir("stages_backend");
  auto cfg = testing::mock_pipeline_config(write_corpus(dir, 3, 0), dir / "out");
  cfg.backend.kind = "http";
  cfg.backend.url = "http://127.0.0.1:1";
  run_pipeline(cfg, {"ingest"});
  CHECK(code_of([&] { run_pipeline(cfg, {"gen"}); }) == kExitBackend);
}

TEST_CASE("lock prevents a concurrent run") {
  auto dir = testing::fresh_dir("stages_lock");
  auto cfg = testing::mock_pipeline_config(write_corpus(dir, 3, 0), dir / "out");
  fs::create_directories(cfg.out_dir);
  {
    OutputLock held(cfg.out_dir);
    CHECK(code_of([&] { run_pipeline(cfg, {"ingest"}); }) == kExitValidation);
  }
  CHECK(code_of([&] { run_pipeline(cfg, {"ingest"}); }) == kExitOk);
}

TEST_CASE("full mock pipeline, rerun reproduces every artifact") {
  auto dir = testing::fresh_dir("stages_full");
  auto cfg = testing::mock_pipeline_config(write_corpus(dir, 60, 25), dir / "out");
  auto outcomes = run_pipeline(cfg, effective_stages(cfg));
  CHECK(outcomes.size() == 8);
  for (const char* f : {"products.jsonl", "generated.jsonl", "filtered.jsonl", "relabeled.jsonl", "train.jsonl",
                        "val.jsonl", "hard_negatives.jsonl", "training_pairs.jsonl", "index.qgfidx", "eval.json",
                        "report.txt"}) {
    CHECK_MESSAGE(fs::exists(dir / "out" / f), f);
  }
  std::map<std::string, std::string> first;
  for (auto& e : fs::recursive_directory_iterator(dir / "out")) {
    if (e.is_regular_file()) first[e.path().lexically_relative(dir / "out").string()] = testing::slurp(e.path());
  }
  run_pipeline(cfg, effective_stages(cfg));
  for (auto& [name, bytes] : first) CHECK_MESSAGE(testing::slurp(dir / "out" / name) == bytes, name);

  auto report = testing::slurp(dir / "out" / "report.txt");
  CHECK(report.find("at least 1 duplicate") != std::string::npos);
  CHECK(report.find("All") != std::string::npos);
  CHECK(report.find("NDCG@10") != std::string::npos);
}

TEST_CASE("random baseline eval is deterministic") {
  auto dir = testing::fresh_dir("stages_random");
  auto cfg = testing::mock_pipeline_config(write_corpus(dir, 30, 12), dir / "out");
  cfg.scorer.kind = "random";
  cfg.seed = 7;
  run_pipeline(cfg, {"ingest", "eval"});
  auto a = testing::slurp(dir / "out" / "eval.json");
  run_pipeline(cfg, {"eval"});
  CHECK(testing::slurp(dir / "out" / "eval.json") == a);
  cfg.seed = 8;
  run_pipeline(cfg, {"eval"});
  CHECK(testing::slurp(dir / "out" / "eval.json") != a);
}

TEST_CASE("prompt style uses exemplars") {
  auto dir = testing::fresh_dir("stages_prompt");
  auto cfg = testing::mock_pipeline_config(write_corpus(dir, 4, 0), dir / "out");
  cfg.style = "prompt";
  cfg.exemplars = (dir / "ex.jsonl").string();
  {
    std::ofstream ex(cfg.exemplars);
    for (const char* l : {"E", "S", "C", "I"}) {
      for (int i = 0; i < 2; ++i) {
        ex << nlohmann::json{{"label", l}, {"title", std::string("Example ") + l}, {"query", "q"}}.dump() << "\n";
      }
    }
  }
  run_pipeline(cfg, {"ingest", "gen"});
  std::ifstream in(dir / "out" / "generated.jsonl");
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  CHECK(n == 16);

  cfg.exemplars = (dir / "nope.jsonl").string();
  CHECK(code_of([&] { run_pipeline(cfg, {"gen"}); }) == kExitValidation);
}
