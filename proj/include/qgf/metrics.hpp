#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qgf/corpus.hpp"
#include "qgf/genclient.hpp"
#include "qgf/labelspace.hpp"

namespace qgf {

struct DedupReport;
struct SyntheticDataset;

// Probability-weighted sum of the space's label weights.
double expected_score(const ScoreDistribution& dist);

// Ranks by the expected score of a distribution scorer.
class ExpectedScoreScorer : public ScalarScorer {
 public:
  explicit ExpectedScoreScorer(Scorer& inner) : inner_(inner) {}
  double score_scalar(std::string_view query, const ProductDoc& product) override;

 private:
  Scorer& inner_;
};

struct RankedEntry {
  std::string product_id;
  double score = 0.0;
  double gain = 0.0;
};

// Entries sorted by score descending, ties by product_id ascending.
struct RankedJudgedList {
  std::string query_id;
  std::vector<RankedEntry> entries;
};

RankedJudgedList make_ranked_list(std::string query_id, std::vector<RankedEntry> entries);

// DCG = sum gain_i / log2(i + 1) over positions 1..min(k, n), normalized by
// the DCG of the gains sorted descending. nullopt when every gain is zero.
std::optional<double> ndcg_at_k(const RankedJudgedList& list, std::size_t k);

struct QueryEval {
  std::string query_id;
  std::vector<double> ndcg;  // aligned with EvalResult::ks
};

struct EvalResult {
  std::vector<std::size_t> ks;
  std::vector<double> mean_ndcg;  // macro average over evaluated queries
  std::vector<QueryEval> per_query;
  std::size_t skipped_queries = 0;  // all-zero gains
  std::size_t failed_queries = 0;   // scorer errors
  std::vector<std::string> failures;
};

// Groups judgments by query_id (canonical order), scores every judged
// product, and averages NDCG@k over queries with a non-zero gain.
EvalResult evaluate_scorer(const Corpus& corpus, const LabelSpace& gold_space,
                           ScalarScorer& scorer, const std::vector<std::size_t>& ks = {5, 10, 20});

nlohmann::ordered_json eval_to_json(const EvalResult& result, const std::string& model_name);

// Plain aligned text table, also emitted as JSON.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const;
  nlohmann::ordered_json to_json() const;
};

Table eval_table(const EvalResult& result, const std::string& model_name);

// Products with at least one duplicate, then one row per adjacent label pair.
Table duplicate_stats(const DedupReport& report, const LabelSpace& space,
                      const std::string& column = "count");

// Per-label record counts (by final label) and the total.
Table label_distribution(const SyntheticDataset& ds, const std::string& column = "count");

}  // namespace qgf
