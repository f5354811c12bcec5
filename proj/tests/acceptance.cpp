// Acceptance gate: one line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "qgf/errors.hpp"
#include "qgf/metrics.hpp"
#include "qgf/pipeline.hpp"
#include "qgf/qgen_io.hpp"
#include "qgf/retrieval.hpp"
#include "qgf/stages.hpp"
#include "support/synthetic.hpp"

using namespace qgf;
namespace fs = std::filesystem;

namespace {

// Observed mismatch rate of the mock-overlap scorer on mock-template output for
// the fixed corpus below (800 products, seed 42, after dedup).
constexpr double kPinnedMockMismatch = 0.4440944881889764;

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

std::shared_ptr<const LabelSpace> space_ptr(const std::string& name) {
  return std::make_shared<const LabelSpace>(builtin_space(name));
}

// ---------------------------------------------------------------------------

Check ac1() {
  Check c;
  auto esci = space_ptr("esci");
  std::mt19937_64 rng(101);
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> p(4);
    double z = 0.0;
    for (auto& v : p) z += v = unit_interval(rng()) * (uniform_index(rng, 5) == 0 ? 0.0 : 1.0);
    if (z == 0.0) {
      p[uniform_index(rng, 4)] = 1.0;
      z = 1.0;
    }
    for (auto& v : p) v /= z;
    const double direct = p[0] * 3.0 + p[1] * 2.0 + p[2] * 1.0 + p[3] * 0.0;
    const double got = expected_score(make_distribution(esci, p));
    c.expect(std::abs(got - direct) <= 1e-12, "random distribution #" + std::to_string(i));
  }
  const double points[] = {3.0, 2.0, 1.0, 0.0};
  for (int j = 0; j < 4; ++j) {
    std::vector<double> p(4, 0.0);
    p[j] = 1.0;
    c.expect(expected_score(make_distribution(esci, p)) == points[j], "point mass " + esci->labels[j]);
  }
  c.expect(expected_score(make_distribution(esci, {0.25, 0.25, 0.25, 0.25})) == 1.5, "uniform");
  return c;
}

struct GainScorer : ScalarScorer {
  std::map<std::string, double> by_product;
  double score_scalar(std::string_view, const ProductDoc& p) override { return by_product.at(p.product_id); }
};

Check ac2() {
  Check c;
  std::mt19937_64 rng(202);
  std::size_t compared = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 8);
    std::vector<RankedEntry> entries;
    for (std::size_t i = 0; i < n; ++i) {
      entries.push_back({"d" + std::to_string(i), static_cast<double>(uniform_index(rng, 5)),
                         static_cast<double>(uniform_index(rng, 4))});
    }
    const auto list = make_ranked_list("q", entries);
    std::vector<double> gains;
    for (const auto& e : list.entries) gains.push_back(e.gain);
    for (std::size_t k : {5, 10, 20}) {
      const auto ours = ndcg_at_k(list, k);
      const auto oracle = testing::exhaustive_ndcg(gains, k);
      c.expect(ours.has_value() == oracle.has_value(), "skip marker mismatch on list " + std::to_string(t));
      if (ours && oracle) {
        c.expect(std::abs(*ours - *oracle) <= 1e-9, "list " + std::to_string(t) + " k=" + std::to_string(k));
        ++compared;
      }
    }
  }
  c.expect(compared > 2500, "too few non-degenerate lists");

  // Oracle scorer through the evaluation path.
  Corpus corpus = testing::synthetic_corpus(120, 9, 40);
  const LabelSpace wands = builtin_space("wands");
  std::map<std::string, std::vector<const Judgment*>> by_query;
  for (const auto& j : corpus.judgments) by_query[j.query_id].push_back(&j);
  for (const auto& [qid, js] : by_query) {
    Corpus one;
    one.products = corpus.products;
    GainScorer s;
    for (const Judgment* j : js) {
      one.judgments.push_back(*j);
      s.by_product[j->product_id] = gain_of(wands, parse_label(j->raw_label, wands));
    }
    auto r = evaluate_scorer(one, wands, s, {5, 10, 20});
    for (const auto& q : r.per_query) {
      for (double v : q.ndcg) c.expect(v == 1.0, "oracle scorer below 1 on " + qid);
    }
  }

  RankedJudgedList derived{"q", {{"a", 3, 0}, {"b", 2, 2}, {"c", 1, 3}}};
  c.expect(std::abs(*ndcg_at_k(derived, 3) - 0.6480) <= 1e-4, "derived [0,2,3] case");
  return c;
}

Check ac3() {
  Check c;
  Corpus corpus;
  corpus.label_space_name = "wands";
  corpus.products = {{"a", "alpha", "", {}}, {"b", "beta", "", {}}, {"c", "gamma", "", {}}};
  corpus.judgments = {{"q", "query", "a", "Exact", "wands"},
                      {"q", "query", "b", "Partial", "wands"},
                      {"q", "query", "c", "Irrelevant", "wands"}};
  const LabelSpace wands = builtin_space("wands");
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    RandomScorer r(seed);
    sum += evaluate_scorer(corpus, wands, r, {3}).mean_ndcg[0];
  }
  const double mean = sum / 1000.0;
  const double exact = testing::permutation_average_ndcg({2, 1, 0}, 3);
  char buf[96];
  std::snprintf(buf, sizeof buf, "mean %.4f vs exact %.4f", mean, exact);
  c.expect(std::abs(mean - exact) <= 0.02, buf);
  c.detail = c.ok ? buf : c.detail;
  return c;
}

Check ac4() {
  Check c;
  auto esci = space_ptr("esci");
  for (std::size_t n : {10u, 100u, 1000u, 10000u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const std::size_t products = std::max<std::size_t>(1, n / 8);
      auto records = testing::random_records(n, products, *esci, seed * 31 + n);
      SyntheticDataset ds;
      ds.space = esci;
      ds.records = records;
      const auto once = dedup_filter(ds);
      const std::string where = "n=" + std::to_string(n) + " seed=" + std::to_string(seed);
      c.expect(once.dataset.records == testing::brute_force_dedup(records), "retention differs " + where);
      c.expect(dedup_filter(once.dataset).dataset.records == once.dataset.records, "not idempotent " + where);

      const std::size_t brute_products = testing::brute_force_products_with_duplicates(records);
      const auto table = duplicate_stats(once.report, *esci);
      c.expect(table.rows[0][1] == std::to_string(brute_products), "at least 1 duplicate count " + where);

      std::map<std::pair<std::string, std::string>, std::size_t> groups;
      for (const auto& r : records) ++groups[{r.product_id, normalize_query(r.query_text)}];
      std::size_t multi = 0;
      for (const auto& [k, v] : groups) multi += v > 1;
      c.expect(once.report.duplicate_groups == multi, "duplicate group count " + where);
      c.expect(once.dataset.records.size() == groups.size(), "one survivor per group " + where);
    }
  }
  return c;
}

Check ac5() {
  Check c;
  Corpus corpus;
  corpus.products.reserve(42994);
  for (std::size_t i = 0; i < 42994; ++i) corpus.products.push_back({"p" + std::to_string(i), "t", "", {}});
  const auto four = plan_generation(corpus, builtin_space("esci"), GenMode::labelcond, 1);
  const auto two = plan_generation(corpus, builtin_space("msmarco-binary"), GenMode::labelcond, 1);
  c.expect(four.size() == 171976, "esci plan has " + std::to_string(four.size()) + " tasks");
  c.expect(two.size() == 85988, "binary plan has " + std::to_string(two.size()) + " tasks");
  return c;
}

Check ac6() {
  Check c;
  auto esci = space_ptr("esci");
  std::mt19937_64 rng(606);
  for (int t = 0; t < 200; ++t) {
    const std::size_t products = 2 + uniform_index(rng, 300);
    SyntheticDataset ds;
    ds.space = esci;
    ds.records = testing::random_records(products * (1 + uniform_index(rng, 4)), products, *esci, rng());
    const std::uint64_t seed = rng();
    const auto s = split_train_val(ds, 0.9, seed);

    std::set<std::string> all;
    for (const auto& r : ds.records) all.insert(r.product_id);
    std::set<std::string> train(s.train_products.begin(), s.train_products.end());
    std::set<std::string> val(s.val_products.begin(), s.val_products.end());
    const std::string where = "dataset " + std::to_string(t);
    for (const auto& p : train) c.expect(!val.count(p), "product in both splits " + where);
    std::set<std::string> uni = train;
    uni.insert(val.begin(), val.end());
    c.expect(uni == all, "splits not exhaustive " + where);
    for (const auto& r : s.train.records) c.expect(train.count(r.product_id) == 1, "train record misplaced " + where);
    for (const auto& r : s.val.records) c.expect(val.count(r.product_id) == 1, "val record misplaced " + where);
    c.expect(s.train.records.size() + s.val.records.size() == ds.records.size(), "records lost " + where);

    // Nearest product boundary: no other cut is strictly closer to 0.9.
    const double P = static_cast<double>(all.size());
    const double got = std::abs(static_cast<double>(train.size()) - 0.9 * P);
    for (std::size_t cut = 0; cut <= all.size(); ++cut) {
      c.expect(got <= std::abs(static_cast<double>(cut) - 0.9 * P) + 1e-9, "cut not nearest " + where);
    }
  }
  return c;
}

Check ac7() {
  Check c;
  std::mt19937_64 rng(707);
  for (int t = 0; t < 300; ++t) {
    const LabelSpace space = builtin_space(t % 2 == 0 ? "esci" : "msmarco-binary");
    std::vector<std::pair<std::size_t, int>> records;  // (rank, id)
    for (std::size_t r = 0; r < space.size(); ++r) {
      const std::size_t n = 1 + uniform_index(rng, 40);
      for (std::size_t i = 0; i < n; ++i) records.push_back({r, static_cast<int>(records.size())});
    }
    seeded_shuffle(records, rng);
    const auto out = upsample_balance(records, space, rng(), [](const auto& x) { return x.first; });

    std::vector<std::size_t> before(space.size(), 0), after(space.size(), 0);
    for (const auto& x : records) ++before[x.first];
    for (const auto& x : out) ++after[x.first];
    const std::size_t target = *std::max_element(before.begin(), before.end());
    for (auto n : after) c.expect(n == target, "unequal label counts in case " + std::to_string(t));

    // Strip resampled copies: each original id is kept once, in order.
    std::set<int> seen;
    std::vector<std::pair<std::size_t, int>> stripped;
    std::map<int, std::size_t> rank_of;
    for (const auto& x : records) rank_of[x.second] = x.first;
    for (const auto& x : out) {
      c.expect(rank_of.count(x.second) && rank_of[x.second] == x.first, "resample outside its pool");
      if (seen.insert(x.second).second) stripped.push_back(x);
    }
    c.expect(stripped == records, "input multiset not recovered in case " + std::to_string(t));
  }
  return c;
}

Check ac8() {
  Check c;
  std::mt19937_64 rng(808);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 200);
    Corpus corpus = testing::synthetic_corpus(n, rng());
    // Copies of existing titles force exact score ties.
    for (std::size_t i = 0; i < n / 10; ++i) {
      ProductDoc dup = corpus.products[uniform_index(rng, n)];
      dup.product_id = "dup" + std::to_string(i);
      corpus.products.push_back(dup);
    }
    seeded_shuffle(corpus.products, rng);
    const auto index = build_index(corpus);
    const testing::BruteBm25 brute(corpus, {"title", "description"});
    for (int q = 0; q < 10; ++q) {
      const ProductDoc& p = corpus.products[uniform_index(rng, corpus.products.size())];
      std::string query = q % 2 == 0 ? p.title : tokenize(p.title + " " + p.description).front();
      if (q == 9) query = "zzz nothing";
      const auto full = brute.rank(query, corpus.products.size());
      const auto full_ex = brute.rank(query, corpus.products.size(), p.product_id);
      for (std::size_t k : {1, 5, 35}) {
        std::vector<std::string> expect(full.begin(), full.begin() + std::min(k, full.size()));
        std::vector<std::string> expect_ex(full_ex.begin(), full_ex.begin() + std::min(k, full_ex.size()));
        const std::string where = "corpus " + std::to_string(t) + " query '" + query + "' k=" + std::to_string(k);
        c.expect(retrieve_topk(index, query, k) == expect, where);
        c.expect(retrieve_topk(index, query, k, p.product_id) == expect_ex, where + " (exclude)");
      }
    }
  }

  Corpus three;
  three.products = {{"a", "red chair lamp", "", {}}, {"b", "blue sofa bed", "", {}}, {"c", "oak desk drawer", "", {}}};
  const auto idx3 = build_index(three, {"title"});
  const double hand = 2.0 * std::log(1.0 + 2.5 / 1.5) * (1.0 * 2.2) / (1.0 + 1.2 * 1.0);
  c.expect(std::abs(bm25_score(idx3, "red chair", "a") - hand) <= 1e-9, "hand-derived 3-doc score");
  c.expect(std::abs(testing::BruteBm25(three, {"title"}).score("red chair", "a") - hand) <= 1e-9,
           "brute-force 3-doc score");

  Corpus forty;
  for (int i = 0; i < 40; ++i) forty.products.push_back({"p" + std::to_string(i), "walnut desk " + std::to_string(i), "", {}});
  SyntheticDataset ds;
  ds.space = space_ptr("esci");
  const GradedLabel top = label_at(*ds.space, 0);
  ds.records.push_back({"p0", top, "walnut desk", -0.1, top});
  const auto mined = mine_hard_negatives(build_index(forty), ds, 35);
  c.expect(mined.sets.size() == 1 && mined.sets[0].negatives.size() == 35, "35 hard negatives");
  return c;
}

std::map<std::string, std::string> artifacts(const fs::path& dir, bool with_manifests) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = e.path().lexically_relative(dir).generic_string();
    if (!with_manifests && rel.starts_with("manifests/")) continue;
    out[rel] = testing::slurp(e.path());
  }
  return out;
}

Check ac9() {
  Check c;
  // Any accidental network use would fail against these.
  ::setenv("QGF_BACKEND_URL", "http://127.0.0.1:1", 1);
  ::setenv("QGF_SCORER_URL", "http://127.0.0.1:1", 1);
  const fs::path root = testing::fresh_dir("acceptance_e2e");
  const Corpus corpus = testing::synthetic_corpus(1000, 2024, 300);
  const fs::path csv = root / "corpus.csv";
  const fs::path shuffled = root / "corpus_shuffled.csv";
  std::ofstream(csv, std::ios::binary) << testing::corpus_csv(corpus);
  std::ofstream(shuffled, std::ios::binary) << testing::corpus_csv(corpus, 77);

  auto run = [&](const fs::path& input, const std::string& out) {
    auto cfg = testing::mock_pipeline_config(input, root / out, 42);
    cfg.stages = {"ingest", "gen", "filter", "relabel", "split", "eval", "report"};
    run_pipeline(cfg, cfg.stages);
    return artifacts(root / out, true);
  };
  const auto a = run(csv, "run_a");
  const auto b = run(csv, "run_b");
  const auto s = run(shuffled, "run_shuffled");
  c.expect(a.size() > 10, "too few artifacts");
  c.expect(a == b, "two runs differ");
  for (const auto& [name, bytes] : a) {
    if (name.starts_with("manifests/")) continue;
    auto it = s.find(name);
    c.expect(it != s.end() && it->second == bytes, "row reordering changed " + name);
  }
  const auto products = nlohmann::json::parse(a.at("manifests/ingest.json"));
  c.expect(products.at("outputs").at("products.jsonl").at("records") == 1000, "ingest lost products");
  ::unsetenv("QGF_BACKEND_URL");
  ::unsetenv("QGF_SCORER_URL");
  return c;
}

// Scorer that returns a point mass on a fixed label per (product, query).
struct EchoScorer : Scorer {
  std::shared_ptr<const LabelSpace> sp;
  std::map<std::pair<std::string, std::string>, std::size_t> label;
  std::shared_ptr<const LabelSpace> space() const override { return sp; }
  ScoreDistribution score(std::string_view q, const ProductDoc& p) override {
    std::vector<double> probs(sp->size(), 0.0);
    probs.at(label.at({p.product_id, std::string(q)})) = 1.0;
    return make_distribution(sp, probs);
  }
};

struct LeastScorer : Scorer {
  std::shared_ptr<const LabelSpace> sp;
  std::shared_ptr<const LabelSpace> space() const override { return sp; }
  ScoreDistribution score(std::string_view, const ProductDoc&) override {
    std::vector<double> probs(sp->size(), 0.0);
    probs.back() = 1.0;
    return make_distribution(sp, probs);
  }
};

SyntheticDataset mock_generate(const Corpus& corpus, std::shared_ptr<const LabelSpace> space, std::uint64_t seed) {
  MockTemplateGenerator gen(space, seed);
  SyntheticDataset ds;
  ds.space = space;
  const auto lookup = product_lookup(corpus);
  for (const auto& t : plan_generation(corpus, *space, GenMode::labelcond, 1)) {
    const GenRequest req{task_request_id(t), format_labelcond_input(*lookup.at(t.product_id), t.label, {}), 128};
    const GenResponse r = generate(gen, req);
    ds.records.push_back({t.product_id, t.label, r.query_text, r.logprob, t.label});
  }
  return ds;
}

double pinned_mismatch = -1.0;

Check ac10() {
  Check c;
  auto esci = space_ptr("esci");
  const Corpus corpus = testing::synthetic_corpus(800, 42);
  const auto lookup = product_lookup(corpus);
  const SyntheticDataset planned = mock_generate(corpus, esci, 42);
  const SyntheticDataset deduped = dedup_filter(planned).dataset;

  EchoScorer echo;
  echo.sp = esci;
  for (const auto& r : deduped.records) echo.label[{r.product_id, r.query_text}] = r.desired_label.rank;
  const auto id = roundtrip_relabel(deduped, lookup, echo);
  c.expect(id.mismatch_rate == 0.0, "identity scorer mismatch " + format_double(id.mismatch_rate));
  c.expect(id.dataset.records == deduped.records, "identity scorer changed labels");

  LeastScorer least;
  least.sp = esci;
  const auto lr = roundtrip_relabel(planned, lookup, least);
  c.expect(lr.mismatch_rate == 0.75, "constant-least mismatch " + format_double(lr.mismatch_rate));

  MockOverlapScorer overlap(esci);
  const auto m1 = roundtrip_relabel(deduped, lookup, overlap);
  const auto m2 = roundtrip_relabel(dedup_filter(mock_generate(corpus, esci, 42)).dataset, lookup, overlap);
  pinned_mismatch = m1.mismatch_rate;
  c.expect(m1.mismatch_rate == m2.mismatch_rate, "mock mismatch not reproducible");
  c.expect(m1.mismatch_rate >= 0.0 && m1.mismatch_rate <= 1.0, "mock mismatch outside [0,1]");
  c.expect(std::abs(m1.mismatch_rate - kPinnedMockMismatch) <= 1e-12,
           "mock mismatch " + format_double(m1.mismatch_rate) + " != pinned " + format_double(kPinnedMockMismatch));
  return c;
}

struct Criterion {
  const char* id;
  const char* name;
  double budget_s;
  std::function<Check()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"AC1", "expected score matches the weighted dot product", 1.0, ac1},
      {"AC2", "NDCG equals the exhaustive oracle", 5.0, ac2},
      {"AC3", "random baseline matches the permutation average", 1.0, ac3},
      {"AC4", "dedup matches the brute-force grouper", 5.0, ac4},
      {"AC5", "labelcond plan counts over 42,994 products", 5.0, ac5},
      {"AC6", "product-disjoint 90:10 split", 5.0, ac6},
      {"AC7", "upsample balance", 5.0, ac7},
      {"AC8", "BM25 equals brute-force ranking, top-35 negatives", 30.0, ac8},
      {"AC9", "end-to-end mock pipeline is byte-identical", 120.0, ac9},
      {"AC10", "round-trip relabel mismatch rates", 30.0, ac10},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Check result;
    try {
      result = cr.run();
    } catch (const std::exception& e) {
      result.ok = false;
      result.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (result.ok && secs > cr.budget_s) {
      result.ok = false;
      result.detail = "over the " + format_double(cr.budget_s) + " s budget";
    }
    std::printf("[%s] %-4s %s (%.2f s)%s%s\n", result.ok ? "PASS" : "FAIL", cr.id, cr.name, secs,
                result.detail.empty() ? "" : ": ", result.detail.c_str());
    std::fflush(stdout);
    failed += !result.ok;
  }
  if (pinned_mismatch >= 0.0) std::printf("mock round-trip mismatch rate: %.17g\n", pinned_mismatch);
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
