#include "qgf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "qgf/errors.hpp"
#include "qgf/pipeline.hpp"

namespace qgf {

double expected_score(const ScoreDistribution& dist) {
  validate_distribution(dist);
  const LabelSpace& space = *dist.space;
  if (space.weights.size() != dist.probs.size()) {
    throw PreconditionError("label space '" + space.name + "' has no weight for every label");
  }
  double e = 0.0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) e += dist.probs[i] * space.weights[i];
  return e;
}

double ExpectedScoreScorer::score_scalar(std::string_view query, const ProductDoc& product) {
  return expected_score(score(inner_, query, product));
}

RankedJudgedList make_ranked_list(std::string query_id, std::vector<RankedEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
    return a.score != b.score ? a.score > b.score : a.product_id < b.product_id;
  });
  return RankedJudgedList{std::move(query_id), std::move(entries)};
}

std::optional<double> ndcg_at_k(const RankedJudgedList& list, std::size_t k) {
  if (k < 1) throw PreconditionError("NDCG cutoff must be at least 1");
  std::vector<double> ideal;
  ideal.reserve(list.entries.size());
  for (const auto& e : list.entries) ideal.push_back(e.gain);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const std::size_t n = std::min(k, list.entries.size());
  double dcg = 0.0;
  double idcg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double discount = std::log2(static_cast<double>(i) + 2.0);
    dcg += list.entries[i].gain / discount;
    idcg += ideal[i] / discount;
  }
  if (idcg <= 0.0) return std::nullopt;
  return std::min(1.0, dcg / idcg);
}

EvalResult evaluate_scorer(const Corpus& corpus, const LabelSpace& gold_space,
                           ScalarScorer& scorer, const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw PreconditionError("no NDCG cutoffs requested");
  for (auto k : ks) {
    if (k < 1) throw PreconditionError("NDCG cutoff must be at least 1");
  }
  EvalResult result;
  result.ks = ks;
  result.mean_ndcg.assign(ks.size(), 0.0);

  std::map<std::string, std::vector<const Judgment*>> by_query;
  for (const auto& j : corpus.judgments) by_query[j.query_id].push_back(&j);
  const auto products = product_lookup(corpus);

  for (const auto& [query_id, judgments] : by_query) {
    std::vector<RankedEntry> entries;
    entries.reserve(judgments.size());
    try {
      for (const Judgment* j : judgments) {
        auto it = products.find(j->product_id);
        if (it == products.end()) throw PreconditionError("unknown product '" + j->product_id + "'");
        const double gain = gain_of(gold_space, parse_label(j->raw_label, gold_space));
        entries.push_back({j->product_id, score_scalar(scorer, j->query_text, *it->second), gain});
      }
    } catch (const Error& e) {
      ++result.failed_queries;
      result.failures.push_back(query_id + ": " + e.what());
      continue;
    }
    const RankedJudgedList list = make_ranked_list(query_id, std::move(entries));
    QueryEval qe{query_id, {}};
    for (auto k : ks) {
      auto v = ndcg_at_k(list, k);
      if (!v) break;
      qe.ndcg.push_back(*v);
    }
    if (qe.ndcg.empty()) {
      ++result.skipped_queries;
      continue;
    }
    result.per_query.push_back(std::move(qe));
  }

  if (!result.per_query.empty()) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      double sum = 0.0;
      for (const auto& q : result.per_query) sum += q.ndcg[i];
      result.mean_ndcg[i] = sum / static_cast<double>(result.per_query.size());
    }
  }
  return result;
}

nlohmann::ordered_json eval_to_json(const EvalResult& result, const std::string& model_name) {
  using ojson = nlohmann::ordered_json;
  ojson j;
  j["model"] = model_name;
  j["averaging"] = "macro";
  j["ks"] = result.ks;
  ojson means = ojson::object();
  for (std::size_t i = 0; i < result.ks.size(); ++i) {
    means["ndcg@" + std::to_string(result.ks[i])] = result.mean_ndcg[i];
  }
  j["mean"] = std::move(means);
  j["queries_evaluated"] = result.per_query.size();
  j["queries_skipped"] = result.skipped_queries;
  j["queries_failed"] = result.failed_queries;
  j["failures"] = result.failures;
  ojson per_query = ojson::array();
  for (const auto& q : result.per_query) {
    ojson row;
    row["query_id"] = q.query_id;
    for (std::size_t i = 0; i < result.ks.size(); ++i) {
      row["ndcg@" + std::to_string(result.ks[i])] = q.ndcg[i];
    }
    per_query.push_back(std::move(row));
  }
  j["per_query"] = std::move(per_query);
  return j;
}

std::string Table::render() const {
  const std::size_t cols = header.size();
  std::vector<std::size_t> width(cols, 0);
  auto widen = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < cols && c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  };
  widen(header);
  for (const auto& r : rows) widen(r);

  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string cell = c < row.size() ? row[c] : std::string{};
      const std::string pad(width[c] - cell.size(), ' ');
      if (c > 0) line += "  ";
      line += c == 0 ? cell + pad : pad + cell;
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (std::size_t c = 0; c < cols; ++c) total += width[c] + (c > 0 ? 2 : 0);
  out << std::string(total, '-') << '\n';
  for (const auto& r : rows) emit(r);
  return out.str();
}

nlohmann::ordered_json Table::to_json() const {
  nlohmann::ordered_json j;
  j["header"] = header;
  j["rows"] = rows;
  return j;
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

Table eval_table(const EvalResult& result, const std::string& model_name) {
  Table t;
  t.header.push_back("Model");
  std::vector<std::string> row{model_name};
  for (std::size_t i = 0; i < result.ks.size(); ++i) {
    t.header.push_back("NDCG@" + std::to_string(result.ks[i]));
    row.push_back(fixed4(result.mean_ndcg[i]));
  }
  t.rows.push_back(std::move(row));
  return t;
}

Table duplicate_stats(const DedupReport& report, const LabelSpace& space, const std::string& column) {
  Table t;
  t.header = {"", column};
  t.rows.push_back({"at least 1 duplicate", std::to_string(report.products_with_duplicates())});
  for (std::size_t r = 0; r + 1 < space.size(); ++r) {
    auto it = report.pair_products.find({r, r + 1});
    const std::size_t n = it == report.pair_products.end() ? 0 : it->second;
    t.rows.push_back({"duplicate query for " + space.labels[r] + " and " + space.labels[r + 1],
                      std::to_string(n)});
  }
  return t;
}

Table label_distribution(const SyntheticDataset& ds, const std::string& column) {
  if (!ds.space) throw PreconditionError("dataset without a label space");
  std::vector<std::size_t> counts(ds.space->size(), 0);
  for (const auto& r : ds.records) ++counts.at(r.final_label.rank);
  Table t;
  t.header = {"", column};
  for (std::size_t r = 0; r < counts.size(); ++r) {
    t.rows.push_back({"Label: " + ds.space->labels[r], std::to_string(counts[r])});
  }
  t.rows.push_back({"All", std::to_string(ds.records.size())});
  return t;
}

}  // namespace qgf
