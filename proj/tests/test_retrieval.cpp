#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "qgf/errors.hpp"
#include "qgf/retrieval.hpp"
#include "support/synthetic.hpp"

using namespace qgf;

namespace {

Corpus docs(const std::vector<std::pair<std::string, std::string>>& items) {
  Corpus c;
  for (const auto& [id, title] : items) c.products.push_back({id, title, "", {}});
  return c;
}

Corpus three_docs() { return docs({{"a", "red chair lamp"}, {"b", "blue sofa bed"}, {"c", "oak desk drawer"}}); }

std::shared_ptr<const LabelSpace> esci() {
  static auto s = std::make_shared<const LabelSpace>(builtin_space("esci"));
  return s;
}

SyntheticDataset one_query(const std::string& pid, const std::string& q) {
  SyntheticDataset ds;
  ds.space = esci();
  ds.records.push_back({pid, label_at(*esci(), 0), q, -0.1, label_at(*esci(), 0)});
  return ds;
}

}  // namespace

TEST_CASE("index statistics") {
  auto idx = build_index(docs({{"a", "one two three"}, {"b", "one"}, {"c", "x y z w"}}), {"title"});
  CHECK(idx.doc_count() == 3);
  CHECK(idx.avg_doc_length() == doctest::Approx(8.0 / 3.0));
  CHECK(idx.doc_freq("one") == 2);
  CHECK(idx.doc_freq("missing") == 0);
  const auto* p = idx.postings("one");
  REQUIRE(p != nullptr);
  CHECK(p->size() == 2);
  CHECK((*p)[0].doc < (*p)[1].doc);
  CHECK(build_index(three_docs(), {"title"}) == build_index(three_docs(), {"title"}));
  CHECK_THROWS_AS(build_index(Corpus{}), PreconditionError);
  CHECK_THROWS_AS(build_index(three_docs(), {"title"}, {0.0, 0.75}), PreconditionError);
  CHECK_THROWS_AS(build_index(three_docs(), {"title"}, {1.2, 1.5}), PreconditionError);
}

TEST_CASE("hand-computed three-doc score") {
  auto idx = build_index(three_docs(), {"title"});
  // idf = ln(1 + 2.5/1.5) = ln(8/3); each term: idf * 2.2 / 2.2.
  const double expected = 2.0 * std::log(8.0 / 3.0);
  CHECK(std::abs(bm25_score(idx, "red chair", "a") - expected) < 1e-9);
  CHECK(std::abs(bm25_score(idx, "red chair", "a") - 1.9616585060234526) < 1e-9);
  CHECK(std::abs(testing::BruteBm25(three_docs(), {"title"}).score("red chair", "a") - expected) < 1e-9);
  CHECK(bm25_score(idx, "green table", "a") == 0.0);
  CHECK(bm25_score(idx, "red red chair", "a") == bm25_score(idx, "red chair", "a"));
}

TEST_CASE("raising df lowers the idf contribution") {
  auto base = build_index(three_docs(), {"title"});
  auto more = build_index(docs({{"a", "red chair lamp"}, {"b", "blue sofa bed"}, {"c", "oak desk drawer"},
                                {"d", "red chair lamp"}}),
                          {"title"});
  CHECK(more.idf("red") < base.idf("red"));
  CHECK(bm25_score(more, "red", "a") < bm25_score(base, "red", "a"));
}

TEST_CASE("score is monotone in term frequency") {
  double prev = 0.0;
  for (int tf = 1; tf <= 6; ++tf) {
    std::string title = "chair";
    for (int i = 1; i < tf; ++i) title += " chair";
    auto idx = build_index(docs({{"a", title + " x"}, {"b", "sofa y"}, {"c", "table z"}}), {"title"});
    const double s = bm25_score(idx, "chair", "a");
    CHECK(s >= prev);
    prev = s;
  }
}

TEST_CASE("zero-token docs are indexed but never retrieved") {
  auto idx = build_index(docs({{"a", "chair"}, {"b", "!!!"}}), {"title"});
  CHECK(idx.doc_count() == 2);
  CHECK(idx.doc_length(*idx.ordinal("b")) == 0);
  CHECK(retrieve_topk(idx, "chair") == std::vector<std::string>{"a"});
}

TEST_CASE("retrieve_topk truncation, exclusion and single doc") {
  Corpus c;
  for (int i = 0; i < 10; ++i) c.products.push_back({"p" + std::to_string(i), "chair " + std::string(i, 'x'), "", {}});
  auto idx = build_index(c, {"title"});
  CHECK(retrieve_topk(idx, "chair", 35).size() == 10);
  auto all = retrieve_topk(idx, "chair", 35);
  auto without = retrieve_topk(idx, "chair", 35, all[0]);
  CHECK(without[0] == all[1]);
  CHECK(without.size() == 9);

  auto one = build_index(docs({{"only", "red chair"}}), {"title"});
  CHECK(retrieve_topk(one, "red chair blue", 35).size() <= 1);
}

TEST_CASE("ties are broken by product id") {
  auto idx = build_index(docs({{"z", "chair"}, {"m", "chair"}, {"a", "chair"}, {"q", "sofa"}}), {"title"});
  CHECK(retrieve_topk(idx, "chair", 3) == std::vector<std::string>{"a", "m", "z"});
}

TEST_CASE("retrieval matches brute force on random corpora") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto c = testing::synthetic_corpus(20 + seed * 7, seed);
    auto idx = build_index(c);
    testing::BruteBm25 brute(c, {"title", "description"});
    std::mt19937_64 rng(seed);
    for (int q = 0; q < 5; ++q) {
      const auto& p = c.products[uniform_index(rng, c.products.size())];
      for (std::size_t k : {1, 5, 35}) {
        CHECK(retrieve_topk(idx, p.title, k) == brute.rank(p.title, k));
        CHECK(retrieve_topk(idx, p.title, k, p.product_id) == brute.rank(p.title, k, p.product_id));
      }
    }
  }
}

TEST_CASE("index is invariant to corpus order") {
  auto c = testing::synthetic_corpus(80, 4);
  auto shuffled = c;
  std::mt19937_64 rng(1);
  seeded_shuffle(shuffled.products, rng);
  CHECK(build_index(c) == build_index(shuffled));
}

TEST_CASE("index file round trip") {
  auto idx = build_index(testing::synthetic_corpus(50, 2));
  std::stringstream ss;
  write_index(ss, idx);
  CHECK(ss.str().substr(0, 7) == "QGFIDX1");
  auto back = read_index(ss);
  CHECK(back == idx);

  std::stringstream again;
  write_index(again, back);
  std::stringstream first;
  write_index(first, idx);
  CHECK(again.str() == first.str());

  std::stringstream bad("NOTANIDX");
  CHECK_THROWS_AS(read_index(bad), FormatError);
  auto truncated = first.str().substr(0, first.str().size() / 2);
  std::stringstream half(truncated);
  CHECK_THROWS_AS(read_index(half), FormatError);
}

TEST_CASE("hard negatives") {
  Corpus c;
  for (int i = 0; i < 40; ++i) c.products.push_back({"p" + std::to_string(100 + i), "oak chair model " + std::to_string(i), "", {}});
  auto idx = build_index(c, {"title"});
  auto mined = mine_hard_negatives(idx, one_query("p100", "oak chair"), 35);
  REQUIRE(mined.sets.size() == 1);
  CHECK(mined.sets[0].negatives.size() == 35);
  CHECK(std::find(mined.sets[0].negatives.begin(), mined.sets[0].negatives.end(), "p100") ==
        mined.sets[0].negatives.end());
  CHECK(std::set<std::string>(mined.sets[0].negatives.begin(), mined.sets[0].negatives.end()).size() == 35);

  Corpus five;
  for (int i = 0; i < 5; ++i) five.products.push_back({"d" + std::to_string(i), "oak chair", "", {}});
  auto small = build_index(five, {"title"});
  CHECK(mine_hard_negatives(small, one_query("d0", "oak chair")).sets[0].negatives.size() == 4);

  auto a = mine_hard_negatives(idx, one_query("p101", "oak chair")).sets[0].negatives;
  auto b = mine_hard_negatives(idx, one_query("p102", "oak chair")).sets[0].negatives;
  auto full = retrieve_topk(idx, "oak chair", 40);
  auto minus = [&](const std::string& pos) {
    std::vector<std::string> out;
    for (auto& x : full) {
      if (x != pos && out.size() < 35) out.push_back(x);
    }
    return out;
  };
  CHECK(a == minus("p101"));
  CHECK(b == minus("p102"));

  auto empty = mine_hard_negatives(idx, one_query("p100", "zebra"));
  CHECK(empty.empty_retrievals == 1);
  CHECK(empty.sets[0].negatives.empty());
}

TEST_CASE("only top-label records are mined") {
  auto idx = build_index(three_docs(), {"title"});
  auto ds = one_query("a", "red chair");
  ds.records.push_back({"b", label_at(*esci(), 1), "sofa", -0.1, label_at(*esci(), 1)});
  CHECK(mine_hard_negatives(idx, ds).sets.size() == 1);
}

TEST_CASE("training pairs and jsonl") {
  auto bin = builtin_space("msmarco-binary");
  std::vector<HardNegativeSet> sets = {{"oak chair", "p1", {"p2", "p3"}}};
  auto pairs = training_pairs(sets, bin);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].label.name == "Relevant");
  CHECK(pairs[1].label.name == "Irrelevant");
  std::stringstream ss;
  write_hard_negatives_jsonl(ss, sets);
  CHECK(ss.str() == "{\"query\":\"oak chair\",\"positive\":\"p1\",\"negatives\":[\"p2\",\"p3\"]}\n");
  CHECK(read_hard_negatives_jsonl(ss) == sets);
}

TEST_CASE("http retriever") {
  httplib::Server server;
  server.Post("/retrieve", [](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    CHECK(body.at("k") == 2);
    CHECK(body.at("exclude") == "p1");
    res.set_content(nlohmann::json{{"id", body.at("id")}, {"product_ids", {"p2", "p3"}}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  HttpEndpoint ep;
  ep.base_url = "http://127.0.0.1:" + std::to_string(port);
  HttpRetriever r(ep);
  CHECK(r.retrieve("oak", 2, "p1") == std::vector<std::string>{"p2", "p3"});
  server.stop();
  t.join();
}
