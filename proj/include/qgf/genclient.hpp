#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "qgf/corpus.hpp"
#include "qgf/labelspace.hpp"

namespace qgf {

struct GenRequest {
  std::string request_id;
  std::string input_text;
  std::size_t max_output_chars = 128;
};

struct GenResponse {
  std::string request_id;
  std::string query_text;
  double logprob = 0.0;

  friend bool operator==(const GenResponse&, const GenResponse&) = default;
};

// Unparsed backend output.
struct RawGeneration {
  std::string request_id;
  std::string text;
  double logprob = 0.0;
};

class Generator {
 public:
  virtual ~Generator() = default;
  // Must be safe to call concurrently.
  virtual RawGeneration complete(const GenRequest& req) = 0;
};

// Per-label probabilities aligned with space->labels.
struct ScoreDistribution {
  std::shared_ptr<const LabelSpace> space;
  std::vector<double> probs;

  double prob(std::string_view label) const;
  std::size_t argmax() const;  // ties go to the more relevant label
};

inline constexpr double kDistributionTolerance = 1e-6;

// Throws DistributionError unless every label has p in [0,1] and the sum is
// within 1e-6 of 1.
void validate_distribution(const ScoreDistribution& dist);
ScoreDistribution make_distribution(std::shared_ptr<const LabelSpace> space,
                                    std::vector<double> probs);
ScoreDistribution distribution_from_map(std::shared_ptr<const LabelSpace> space,
                                        const std::map<std::string, double>& probs);

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::shared_ptr<const LabelSpace> space() const = 0;
  virtual ScoreDistribution score(std::string_view query, const ProductDoc& product) = 0;
};

class ScalarScorer {
 public:
  virtual ~ScalarScorer() = default;
  // Higher is more relevant.
  virtual double score_scalar(std::string_view query, const ProductDoc& product) = 0;
};

// Checked entry points. generate() parses the raw output into a query and
// throws BackendError (id mismatch, bad logprob) or GenerationParseError.
GenResponse generate(Generator& backend, const GenRequest& req);
ScoreDistribution score(Scorer& backend, std::string_view query, const ProductDoc& product);
double score_scalar(ScalarScorer& backend, std::string_view query, const ProductDoc& product);

struct BatchItem {
  std::optional<GenResponse> response;
  std::string error;
  bool backend_failure = false;  // transport/HTTP failure rather than bad output

  bool ok() const { return response.has_value(); }
};

// Responses come back in request order. At most max_in_flight requests are
// outstanding at once; max_in_flight == 1 issues strictly in order. Failures
// are reported positionally.
std::vector<BatchItem> generate_batch(Generator& backend, std::span<const GenRequest> reqs,
                                      std::size_t max_in_flight);

// Deterministic offline generator. Reads the "Label: " and "Product: " parts
// of a formatted input and echoes the most salient title tokens: 4 for the top
// label, with one token dropped or swapped per step down the label order.
class MockTemplateGenerator : public Generator {
 public:
  MockTemplateGenerator(std::shared_ptr<const LabelSpace> space, std::uint64_t seed);
  RawGeneration complete(const GenRequest& req) override;

 private:
  std::shared_ptr<const LabelSpace> space_;
  std::uint64_t seed_;
};

// Distribution from a softmax over how close the query/product token overlap
// is to each label's target level (top label = full overlap, least = none).
class MockOverlapScorer : public Scorer {
 public:
  explicit MockOverlapScorer(std::shared_ptr<const LabelSpace> space, double sharpness = 8.0);
  std::shared_ptr<const LabelSpace> space() const override { return space_; }
  ScoreDistribution score(std::string_view query, const ProductDoc& product) override;

  // Jaccard similarity of query tokens against the title, or against title
  // plus description, whichever is larger.
  static double overlap(std::string_view query, const ProductDoc& product);

 private:
  std::shared_ptr<const LabelSpace> space_;
  double sharpness_;
};

// Random baseline: a seeded hash of (query, product id) mapped to [0, 1).
class RandomScorer : public ScalarScorer {
 public:
  explicit RandomScorer(std::uint64_t seed) : seed_(seed) {}
  double score_scalar(std::string_view query, const ProductDoc& product) override;

 private:
  std::uint64_t seed_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
};

struct HttpEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8080
  std::string bearer_token;
  RetryPolicy retry;
  std::chrono::seconds timeout{60};
};

// Reads <prefix>_URL and optional <prefix>_TOKEN. Throws ConfigError when the
// URL variable is unset and `fallback_url` is empty.
HttpEndpoint endpoint_from_env(std::string_view prefix, std::string fallback_url = {});

// POST <base>/<path> with a JSON body. Retries transport failures and 5xx
// responses with exponential backoff; other failures throw BackendError at
// once.
nlohmann::json post_json(const HttpEndpoint& endpoint, const std::string& path,
                         const nlohmann::json& body);

// Wire format: POST /generate {id, input_text, max_output_chars} ->
// {id, query, logprob}.
class HttpGenerator : public Generator {
 public:
  explicit HttpGenerator(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  RawGeneration complete(const GenRequest& req) override;

 private:
  HttpEndpoint endpoint_;
};

// Wire format: POST /score {id, query, title, description} ->
// {id, probs: {label: p}} or {id, score}.
class HttpScorer : public Scorer, public ScalarScorer {
 public:
  HttpScorer(HttpEndpoint endpoint, std::shared_ptr<const LabelSpace> space)
      : endpoint_(std::move(endpoint)), space_(std::move(space)) {}
  std::shared_ptr<const LabelSpace> space() const override { return space_; }
  ScoreDistribution score(std::string_view query, const ProductDoc& product) override;
  // Uses "score" when present, otherwise the expected score of "probs".
  double score_scalar(std::string_view query, const ProductDoc& product) override;

 private:
  nlohmann::json request(std::string_view query, const ProductDoc& product);

  HttpEndpoint endpoint_;
  std::shared_ptr<const LabelSpace> space_;
};

std::string score_request_id(std::string_view query, std::string_view product_id);

}  // namespace qgf
