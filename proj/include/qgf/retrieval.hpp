#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "qgf/corpus.hpp"
#include "qgf/genclient.hpp"
#include "qgf/pipeline.hpp"

namespace qgf {

struct Posting {
  std::uint32_t doc = 0;  // ordinal
  std::uint32_t tf = 0;

  friend bool operator==(const Posting&, const Posting&) = default;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  friend bool operator==(const Bm25Params&, const Bm25Params&) = default;
};

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
};

// Okapi BM25 over lowercased alphanumeric tokens. Documents get ordinals in
// ascending product_id order, so the index does not depend on corpus order.
class Bm25Index {
 public:
  Bm25Index() = default;

  std::size_t doc_count() const { return product_ids_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  const Bm25Params& params() const { return params_; }
  const std::vector<std::string>& fields() const { return fields_; }
  const std::string& product_id(std::uint32_t ordinal) const { return product_ids_.at(ordinal); }
  std::uint32_t doc_length(std::uint32_t ordinal) const { return doc_lengths_.at(ordinal); }
  std::optional<std::uint32_t> ordinal(std::string_view product_id) const;
  std::size_t term_count() const { return postings_.size(); }

  // Postings sorted by ordinal; nullptr for unknown terms.
  const std::vector<Posting>* postings(std::string_view term) const;
  std::size_t doc_freq(std::string_view term) const;
  // max(0, ln(1 + (N - df + 0.5) / (df + 0.5)))
  double idf(std::string_view term) const;
  double term_score(double idf, std::uint32_t tf, std::uint32_t doc_length) const;

  template <class F>
  void for_each_term(F&& f) const {
    for (const auto& [term, plist] : postings_) f(std::string_view(term), plist);
  }

  friend bool operator==(const Bm25Index&, const Bm25Index&) = default;

 private:
  friend Bm25Index build_index(const Corpus&, std::vector<std::string>, Bm25Params);
  friend Bm25Index read_index(std::istream&);

  void finalize();

  std::unordered_map<std::string, std::vector<Posting>, StringHash, std::equal_to<>> postings_;
  std::vector<std::string> product_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
  Bm25Params params_;
  std::vector<std::string> fields_;
};

// Throws PreconditionError for an empty corpus or bad parameters
// (k1 <= 0, b outside [0, 1]). Duplicate product ids keep the first doc.
Bm25Index build_index(const Corpus& corpus,
                      std::vector<std::string> fields = {"title", "description"},
                      Bm25Params params = {});

// Distinct query terms in first-occurrence order.
std::vector<std::string> query_terms(std::string_view query);

double bm25_score(const Bm25Index& index, std::string_view query, std::string_view product_id);

// Documents with a positive score, best first, ties by product_id ascending.
std::vector<std::string> retrieve_topk(const Bm25Index& index, std::string_view query,
                                       std::size_t k = 35,
                                       std::optional<std::string_view> exclude = std::nullopt);

// Binary index file: "QGFIDX1", format version, then little-endian lengths,
// UTF-8 strings and postings.
void write_index(std::ostream& out, const Bm25Index& index);
Bm25Index read_index(std::istream& in);
void save_index(const Bm25Index& index, const std::filesystem::path& path);
Bm25Index load_index(const std::filesystem::path& path);

class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual std::vector<std::string> retrieve(std::string_view query, std::size_t k,
                                            std::optional<std::string_view> exclude) = 0;
};

class Bm25Retriever : public Retriever {
 public:
  explicit Bm25Retriever(const Bm25Index& index) : index_(index) {}
  std::vector<std::string> retrieve(std::string_view query, std::size_t k,
                                    std::optional<std::string_view> exclude) override {
    return retrieve_topk(index_, query, k, exclude);
  }

 private:
  const Bm25Index& index_;
};

// Wire format: POST /retrieve {id, query, k, exclude} -> {id, product_ids}.
class HttpRetriever : public Retriever {
 public:
  explicit HttpRetriever(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<std::string> retrieve(std::string_view query, std::size_t k,
                                    std::optional<std::string_view> exclude) override;

 private:
  HttpEndpoint endpoint_;
};

struct HardNegativeSet {
  std::string query_text;
  std::string positive;
  std::vector<std::string> negatives;

  friend bool operator==(const HardNegativeSet&, const HardNegativeSet&) = default;
};

struct MiningResult {
  std::vector<HardNegativeSet> sets;
  std::size_t empty_retrievals = 0;
};

// One set per top-label record (by final label); the record's product is the
// positive and is excluded from retrieval.
MiningResult mine_hard_negatives(Retriever& retriever, const SyntheticDataset& ds,
                                 std::size_t k = 35);
MiningResult mine_hard_negatives(const Bm25Index& index, const SyntheticDataset& ds,
                                 std::size_t k = 35);

struct TrainingPair {
  std::string query_text;
  std::string product_id;
  GradedLabel label;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

// Positive -> top label, each negative -> least label of `binary_space`.
std::vector<TrainingPair> training_pairs(const std::vector<HardNegativeSet>& sets,
                                         const LabelSpace& binary_space);

void write_hard_negatives_jsonl(std::ostream& out, const std::vector<HardNegativeSet>& sets);
std::vector<HardNegativeSet> read_hard_negatives_jsonl(std::istream& in);
void write_training_pairs_jsonl(std::ostream& out, const std::vector<TrainingPair>& pairs);

}  // namespace qgf
