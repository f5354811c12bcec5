#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qgf/corpus.hpp"
#include "qgf/errors.hpp"
#include "qgf/genclient.hpp"
#include "qgf/labelspace.hpp"
#include "qgf/qgen_io.hpp"
#include "qgf/text.hpp"

namespace qgf {

struct GenTask {
  std::string product_id;
  GradedLabel label;
  std::size_t replica = 0;  // 0..queries_per_cell-1
};

// labelcond: products x labels x queries_per_cell tasks; vanilla: products x
// queries_per_cell with the top label. Product-major, then label order.
std::vector<GenTask> plan_generation(const Corpus& corpus, const LabelSpace& space, GenMode mode,
                                     std::size_t queries_per_cell);

std::string task_request_id(const GenTask& task);

struct GeneratedQuery {
  std::string product_id;
  GradedLabel desired_label;
  std::string query_text;
  double logprob = 0.0;
  GradedLabel final_label;

  friend bool operator==(const GeneratedQuery&, const GeneratedQuery&) = default;
};

struct SyntheticDataset {
  std::vector<GeneratedQuery> records;
  std::shared_ptr<const LabelSpace> space;
  nlohmann::json provenance = nlohmann::json::object();
};

struct ProductDuplicates {
  std::string product_id;
  std::size_t groups = 0;  // duplicate groups (size > 1) for this product
  std::vector<std::pair<std::size_t, std::size_t>> label_pairs;  // rank pairs, i < j
};

struct DedupReport {
  std::size_t input_records = 0;
  std::size_t output_records = 0;
  std::size_t duplicate_groups = 0;
  std::vector<ProductDuplicates> products;  // products with >= 1 duplicate, by id
  // Number of products with a duplicate spanning each label-rank pair.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_products;

  std::size_t products_with_duplicates() const { return products.size(); }
};

struct DedupResult {
  SyntheticDataset dataset;
  DedupReport report;
};

// Within each (product, normalized query) group keeps the max-logprob record;
// ties go to the more relevant desired label, then to the lexicographically
// smaller query text. Survivors keep their input order.
DedupResult dedup_filter(const SyntheticDataset& ds);

nlohmann::ordered_json dedup_report_to_json(const DedupReport& report, const LabelSpace& space);
DedupReport dedup_report_from_json(const nlohmann::json& j, const LabelSpace& space);

struct RelabelResult {
  SyntheticDataset dataset;
  double mismatch_rate = 0.0;
  std::size_t dropped = 0;
  std::vector<std::string> failures;
};

// final_label := argmax of the scorer distribution over (query, product).
// Records whose product is unknown or that the scorer fails on are dropped and
// counted.
RelabelResult roundtrip_relabel(const SyntheticDataset& ds, const ProductLookup& products,
                                Scorer& scorer);

struct SplitResult {
  SyntheticDataset train;
  SyntheticDataset val;
  std::vector<std::string> train_products;  // sorted
  std::vector<std::string> val_products;    // sorted
  std::vector<std::string> warnings;
};

// Product-disjoint split. Distinct product ids are sorted, shuffled with the
// seed and cut after round(ratio * products) ids.
SplitResult split_train_val(const SyntheticDataset& ds, double ratio, std::uint64_t seed);

std::size_t train_product_count(std::size_t products, double ratio);

// Appends seeded resamples (with replacement, per label pool) until every
// label of the space has the maximum pre-balance count. The original records
// stay first and in order. Throws PreconditionError naming a label with no
// records.
template <class T, class RankOf>
std::vector<T> upsample_balance(std::vector<T> records, const LabelSpace& space,
                                std::uint64_t seed, RankOf rank_of) {
  std::vector<std::vector<std::size_t>> pools(space.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t r = rank_of(records[i]);
    if (r >= pools.size()) throw PreconditionError("record label outside space '" + space.name + "'");
    pools[r].push_back(i);
  }
  std::size_t target = 0;
  for (std::size_t r = 0; r < pools.size(); ++r) {
    if (pools[r].empty()) {
      throw PreconditionError("cannot balance: label '" + space.labels[r] + "' has no records");
    }
    target = std::max(target, pools[r].size());
  }
  std::size_t extra = 0;
  for (const auto& pool : pools) extra += target - pool.size();
  records.reserve(records.size() + extra);
  std::mt19937_64 rng(seed);
  for (const auto& pool : pools) {
    for (std::size_t n = pool.size(); n < target; ++n) {
      T copy = records[pool[uniform_index(rng, pool.size())]];
      records.push_back(std::move(copy));
    }
  }
  return records;
}

SyntheticDataset upsample_balance(const SyntheticDataset& ds, std::uint64_t seed);

// JSONL {product_id, desired_label, final_label, query, logprob}.
void write_dataset_jsonl(std::ostream& out, const SyntheticDataset& ds);
SyntheticDataset read_dataset_jsonl(std::istream& in, std::shared_ptr<const LabelSpace> space);

}  // namespace qgf
