#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <random>

#include "qgf/text.hpp"

using namespace qgf;

TEST_CASE("tokenize lowercases ASCII and splits on punctuation") {
  CHECK(tokenize("Solid-Wood  Platform_Bed, 21.7''") ==
        std::vector<std::string>{"solid", "wood", "platform", "bed", "21", "7"});
  CHECK(tokenize("").empty());
  CHECK(tokenize(" ,;. ").empty());
}

TEST_CASE("tokenize keeps UTF-8 words whole") {
  CHECK(tokenize("Caf\xc3\xa9 cr\xc3\xa8me") == std::vector<std::string>{"caf\xc3\xa9", "cr\xc3\xa8me"});
}

TEST_CASE("normalize_query trims, collapses and folds") {
  CHECK(normalize_query("  Red \t Chair\n") == "red chair");
  CHECK(normalize_query("red chair") == normalize_query("RED  CHAIR"));
  CHECK(normalize_query("   ").empty());
}

TEST_CASE("utf8_prefix never splits a sequence") {
  const std::string s = "ab\xc3\xa9z";
  CHECK(utf8_prefix(s, 2) == "ab");
  CHECK(utf8_prefix(s, 3) == "ab");
  CHECK(utf8_prefix(s, 4) == "ab\xc3\xa9");
  CHECK(utf8_prefix(s, 100) == s);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("derive_seed separates stages") {
  CHECK(derive_seed(42, "gen") == derive_seed(42, "gen"));
  CHECK(derive_seed(42, "gen") != derive_seed(42, "split"));
  CHECK(derive_seed(42, "gen") != derive_seed(43, "gen"));
}

TEST_CASE("unit_interval stays in [0,1)") {
  CHECK(unit_interval(0) == 0.0);
  CHECK(unit_interval(~0ull) < 1.0);
}

TEST_CASE("uniform_index is in range and roughly uniform") {
  std::mt19937_64 rng(7);
  std::map<std::uint64_t, int> hist;
  for (int i = 0; i < 60000; ++i) {
    auto v = uniform_index(rng, 6);
    REQUIRE(v < 6);
    ++hist[v];
  }
  for (auto& [v, n] : hist) CHECK(std::abs(n - 10000) < 500);
}

TEST_CASE("seeded_shuffle is a permutation and reproducible") {
  std::vector<int> a(50), b;
  for (int i = 0; i < 50; ++i) a[i] = i;
  b = a;
  std::mt19937_64 r1(3), r2(3);
  seeded_shuffle(a, r1);
  seeded_shuffle(b, r2);
  CHECK(a == b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("format_double round-trips") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(-0.25) == "-0.25");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}
