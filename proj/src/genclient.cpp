#include "qgf/genclient.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <thread>

#include "httplib.h"
#include "qgf/errors.hpp"
#include "qgf/metrics.hpp"
#include "qgf/qgen_io.hpp"
#include "qgf/text.hpp"

namespace qgf {

double ScoreDistribution::prob(std::string_view label) const {
  auto idx = space->find(label);
  if (!idx) throw PreconditionError("label '" + std::string(label) + "' not in distribution");
  return probs.at(*idx);
}

std::size_t ScoreDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return best;
}

void validate_distribution(const ScoreDistribution& dist) {
  if (!dist.space) throw DistributionError("distribution without a label space");
  if (dist.space->continuous) throw DistributionError("distribution over a continuous space");
  if (dist.probs.size() != dist.space->size()) {
    throw DistributionError("distribution has " + std::to_string(dist.probs.size()) +
                            " entries for " + std::to_string(dist.space->size()) + " labels");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    const double p = dist.probs[i];
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw DistributionError("probability for '" + dist.space->labels[i] + "' out of [0,1]: " +
                              format_double(p));
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kDistributionTolerance) {
    throw DistributionError("probabilities sum to " + format_double(sum) + ", not 1");
  }
}

ScoreDistribution make_distribution(std::shared_ptr<const LabelSpace> space,
                                    std::vector<double> probs) {
  ScoreDistribution d{std::move(space), std::move(probs)};
  validate_distribution(d);
  return d;
}

ScoreDistribution distribution_from_map(std::shared_ptr<const LabelSpace> space,
                                        const std::map<std::string, double>& probs) {
  std::vector<double> aligned(space->size(), 0.0);
  std::vector<bool> seen(space->size(), false);
  for (const auto& [label, p] : probs) {
    auto idx = space->find(label);
    if (!idx) throw DistributionError("unknown label '" + label + "' in distribution");
    if (seen[*idx]) throw DistributionError("label '" + label + "' given twice");
    seen[*idx] = true;
    aligned[*idx] = p;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw DistributionError("label '" + space->labels[i] + "' missing from distribution");
  }
  return make_distribution(std::move(space), std::move(aligned));
}

GenResponse generate(Generator& backend, const GenRequest& req) {
  if (trim(req.input_text).empty()) throw PreconditionError("empty generation input");
  RawGeneration raw = backend.complete(req);
  if (raw.request_id != req.request_id) {
    throw BackendError("response id '" + raw.request_id + "' does not match request '" +
                       req.request_id + "'");
  }
  if (!std::isfinite(raw.logprob) || raw.logprob > 0.0) {
    throw BackendError("invalid logprob " + format_double(raw.logprob));
  }
  return GenResponse{req.request_id, parse_query_output(raw.text), raw.logprob};
}

ScoreDistribution score(Scorer& backend, std::string_view query, const ProductDoc& product) {
  ScoreDistribution d = backend.score(query, product);
  validate_distribution(d);
  const auto declared = backend.space();
  if (d.space != declared && !(declared && *d.space == *declared)) {
    throw DistributionError("scorer returned a distribution over '" + d.space->name +
                            "', declared '" + (declared ? declared->name : "") + "'");
  }
  return d;
}

double score_scalar(ScalarScorer& backend, std::string_view query, const ProductDoc& product) {
  const double s = backend.score_scalar(query, product);
  if (!std::isfinite(s)) throw BackendError("scorer returned a non-finite score");
  return s;
}

std::vector<BatchItem> generate_batch(Generator& backend, std::span<const GenRequest> reqs,
                                      std::size_t max_in_flight) {
  if (max_in_flight < 1) throw PreconditionError("max_in_flight must be at least 1");
  std::vector<BatchItem> out(reqs.size());
  auto run_one = [&](std::size_t i) {
    try {
      out[i].response = generate(backend, reqs[i]);
    } catch (const BackendError& e) {
      out[i].error = e.what();
      out[i].backend_failure = true;
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  };
  const std::size_t workers = std::min(max_in_flight, reqs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < reqs.size(); ++i) run_one(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < reqs.size(); i = next.fetch_add(1)) run_one(i);
    });
  }
  pool.clear();  // joins
  return out;
}

// ---------------------------------------------------------------------------
// Mocks

namespace {

constexpr std::array<std::string_view, 8> kDistractors = {
    "cheap", "set", "pack", "black", "large", "kit", "cover", "replacement"};

// Last "Product: " line of the input (the target block of a prompt).
std::string_view target_line(std::string_view input) {
  std::string_view best = input;
  std::size_t pos = 0;
  while (pos <= input.size()) {
    std::size_t nl = input.find('\n', pos);
    std::string_view line = input.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (line.find("Product: ") != std::string_view::npos) best = line;
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return best;
}

}  // namespace

MockTemplateGenerator::MockTemplateGenerator(std::shared_ptr<const LabelSpace> space,
                                             std::uint64_t seed)
    : space_(std::move(space)), seed_(seed) {
  if (!space_ || space_->continuous) throw PreconditionError("mock generator needs a discrete space");
}

RawGeneration MockTemplateGenerator::complete(const GenRequest& req) {
  const std::string_view line = target_line(req.input_text);
  const std::uint64_t input_hash = fnv1a64(req.input_text, mix64(seed_));

  std::size_t rank = 0;
  if (line.starts_with("Label: ")) {
    std::string_view rest = line.substr(7);
    std::string_view label = rest.substr(0, rest.find(' '));
    if (auto idx = space_->find(label)) rank = *idx;
  }
  std::string_view title;
  if (auto p = line.find("Product: "); p != std::string_view::npos) {
    title = line.substr(p + 9);
    if (auto d = title.find(" Description: "); d != std::string_view::npos) title = title.substr(0, d);
  }

  std::vector<std::string> tokens;
  for (auto& t : tokenize(title)) {
    if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(std::move(t));
  }
  if (tokens.empty()) tokens.push_back("item");

  // Salience: longer tokens first, earlier position breaks ties.
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tokens[a].size() > tokens[b].size();
  });
  order.resize(std::min<std::size_t>(order.size(), 4));
  std::sort(order.begin(), order.end());
  std::vector<std::string> picked;
  for (std::size_t i : order) picked.push_back(tokens[i]);

  for (std::size_t step = 1; step <= rank; ++step) {
    const std::uint64_t h = mix64(input_hash ^ (step * 0x9E3779B97F4A7C15ull));
    const std::size_t at = static_cast<std::size_t>((h >> 1) % picked.size());
    if ((h & 1) != 0 && picked.size() > 1) {
      picked.erase(picked.begin() + static_cast<std::ptrdiff_t>(at));
    } else {
      picked[at] = std::string(kDistractors[(h >> 8) % kDistractors.size()]);
    }
  }

  std::string text = "Query:";
  for (const auto& t : picked) text += " " + t;
  text = std::string(utf8_prefix(text, req.max_output_chars));
  const double logprob = -static_cast<double>(input_hash % 1000) / 1000.0;
  return RawGeneration{req.request_id, std::move(text), logprob};
}

MockOverlapScorer::MockOverlapScorer(std::shared_ptr<const LabelSpace> space, double sharpness)
    : space_(std::move(space)), sharpness_(sharpness) {
  if (!space_ || space_->continuous || space_->size() == 0) {
    throw PreconditionError("mock scorer needs a discrete space");
  }
}

double MockOverlapScorer::overlap(std::string_view query, const ProductDoc& product) {
  auto as_set = [](std::string_view text) {
    auto toks = tokenize(text);
    return std::set<std::string>(toks.begin(), toks.end());
  };
  const auto q = as_set(query);
  if (q.empty()) return 0.0;
  auto jaccard = [&](const std::set<std::string>& d) {
    std::size_t inter = 0;
    for (const auto& t : q) inter += d.count(t);
    const std::size_t uni = q.size() + d.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
  };
  const auto title = as_set(product.title);
  auto full = title;
  for (auto& t : tokenize(product.description)) full.insert(std::move(t));
  return std::max(jaccard(title), jaccard(full));
}

ScoreDistribution MockOverlapScorer::score(std::string_view query, const ProductDoc& product) {
  const double s = overlap(query, product);
  const std::size_t n = space_->size();
  std::vector<double> logits(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double target = n == 1 ? 1.0 : 1.0 - static_cast<double>(r) / static_cast<double>(n - 1);
    logits[r] = -sharpness_ * std::abs(s - target);
  }
  const double hi = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - hi);
    z += l;
  }
  for (double& l : logits) l /= z;
  return make_distribution(space_, std::move(logits));
}

double RandomScorer::score_scalar(std::string_view query, const ProductDoc& product) {
  const std::uint64_t h = fnv1a64(product.product_id, fnv1a64(query, mix64(seed_)) ^ 0x1F);
  return unit_interval(mix64(h));
}

// ---------------------------------------------------------------------------
// HTTP

HttpEndpoint endpoint_from_env(std::string_view prefix, std::string fallback_url) {
  HttpEndpoint ep;
  const std::string url_var = std::string(prefix) + "_URL";
  const std::string token_var = std::string(prefix) + "_TOKEN";
  if (const char* url = std::getenv(url_var.c_str()); url != nullptr && *url != '\0') {
    ep.base_url = url;
  } else if (!fallback_url.empty()) {
    ep.base_url = std::move(fallback_url);
  } else {
    throw ConfigError("backend URL not configured (set " + url_var + ")");
  }
  if (const char* token = std::getenv(token_var.c_str()); token != nullptr) ep.bearer_token = token;
  return ep;
}

nlohmann::json post_json(const HttpEndpoint& endpoint, const std::string& path,
                         const nlohmann::json& body) {
  std::string host = endpoint.base_url;
  std::string prefix;
  if (auto scheme = host.find("://"); scheme != std::string::npos) {
    if (auto slash = host.find('/', scheme + 3); slash != std::string::npos) {
      prefix = host.substr(slash);
      host.resize(slash);
    }
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  const std::string target = prefix + "/" + path;
  const std::string payload = body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);

  httplib::Headers headers;
  if (!endpoint.bearer_token.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint.bearer_token);
  }
  const int attempts = std::max(1, endpoint.retry.attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(host);
    client.set_connection_timeout(endpoint.timeout);
    client.set_read_timeout(endpoint.timeout);
    client.set_write_timeout(endpoint.timeout);
    auto res = client.Post(target, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw BackendError(endpoint.base_url + target + ": HTTP " + std::to_string(res->status) +
                         ": " + res->body);
    } else {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(endpoint.base_url + target + ": invalid JSON response: " + e.what());
      }
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(endpoint.retry.initial_backoff * (1LL << (attempt - 1)));
    }
  }
  throw BackendError(endpoint.base_url + target + ": failed after " + std::to_string(attempts) +
                     " attempts (" + last_error + ")");
}

RawGeneration HttpGenerator::complete(const GenRequest& req) {
  nlohmann::json body = {{"id", req.request_id},
                         {"input_text", req.input_text},
                         {"max_output_chars", req.max_output_chars}};
  const auto res = post_json(endpoint_, "generate", body);
  try {
    return RawGeneration{res.at("id").get<std::string>(), res.at("query").get<std::string>(),
                         res.at("logprob").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed generate response: ") + e.what());
  }
}

std::string score_request_id(std::string_view query, std::string_view product_id) {
  return hex64(fnv1a64(product_id, fnv1a64(query) ^ 0x1F));
}

nlohmann::json HttpScorer::request(std::string_view query, const ProductDoc& product) {
  const std::string id = score_request_id(query, product.product_id);
  nlohmann::json body = {{"id", id},
                         {"query", std::string(query)},
                         {"title", product.title},
                         {"description", product.description}};
  auto res = post_json(endpoint_, "score", body);
  if (!res.is_object() || res.value("id", std::string{}) != id) {
    throw BackendError("score response id does not match request " + id);
  }
  return res;
}

namespace {

ScoreDistribution probs_from_response(const nlohmann::json& res,
                                      std::shared_ptr<const LabelSpace> space) {
  auto it = res.find("probs");
  if (it == res.end() || !it->is_object()) throw BackendError("score response has no 'probs'");
  std::map<std::string, double> probs;
  try {
    for (const auto& [label, p] : it->items()) probs[label] = p.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed 'probs': ") + e.what());
  }
  return distribution_from_map(std::move(space), probs);
}

}  // namespace

ScoreDistribution HttpScorer::score(std::string_view query, const ProductDoc& product) {
  return probs_from_response(request(query, product), space_);
}

double HttpScorer::score_scalar(std::string_view query, const ProductDoc& product) {
  const auto res = request(query, product);
  if (auto it = res.find("score"); it != res.end()) {
    if (!it->is_number()) throw BackendError("'score' is not a number");
    return it->get<double>();
  }
  return expected_score(probs_from_response(res, space_));
}

}  // namespace qgf
