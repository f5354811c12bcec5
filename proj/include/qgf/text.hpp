#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace qgf {

// Lowercased alphanumeric tokens. Bytes >= 0x80 are word characters, so
// UTF-8 words survive intact; only ASCII letters are case-folded.
std::vector<std::string> tokenize(std::string_view text);

// Trim, collapse whitespace runs to a single space, ASCII case-fold.
std::string normalize_query(std::string_view text);

std::string_view trim(std::string_view s);

// Replace control whitespace (\t \r \n) with spaces.
std::string flatten_whitespace(std::string_view s);

// Longest prefix of `s` with at most `max_bytes` bytes that does not split a
// UTF-8 sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t max_bytes);

bool iequals(std::string_view a, std::string_view b);

inline constexpr std::uint64_t kFnvBasis = 14695981039346656037ull;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = kFnvBasis);

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Per-stage seed: the salt (e.g. a stage name) hashed into the global seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt);

// Map 64 random bits to [0, 1) using the top 53 bits.
double unit_interval(std::uint64_t bits);

// Unbiased draw from [0, n). The standard distributions are
// implementation-defined, so portable reproducibility needs this.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

template <class T>
void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

std::string hex64(std::uint64_t v);

// Shortest decimal that round-trips.
std::string format_double(double v);

}  // namespace qgf
