#include "qgf/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "qgf/errors.hpp"
#include "qgf/text.hpp"

namespace qgf {

std::optional<std::uint32_t> Bm25Index::ordinal(std::string_view product_id) const {
  auto it = std::lower_bound(product_ids_.begin(), product_ids_.end(), product_id);
  if (it == product_ids_.end() || *it != product_id) return std::nullopt;
  return static_cast<std::uint32_t>(it - product_ids_.begin());
}

const std::vector<Posting>* Bm25Index::postings(std::string_view term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

std::size_t Bm25Index::doc_freq(std::string_view term) const {
  const auto* p = postings(term);
  return p == nullptr ? 0 : p->size();
}

double Bm25Index::idf(std::string_view term) const {
  const double n = static_cast<double>(doc_count());
  const double df = static_cast<double>(doc_freq(term));
  return std::max(0.0, std::log(1.0 + (n - df + 0.5) / (df + 0.5)));
}

double Bm25Index::term_score(double idf, std::uint32_t tf, std::uint32_t doc_length) const {
  const double len_ratio = avg_doc_length_ > 0.0 ? doc_length / avg_doc_length_ : 0.0;
  const double f = static_cast<double>(tf);
  return idf * (f * (params_.k1 + 1.0)) /
         (f + params_.k1 * (1.0 - params_.b + params_.b * len_ratio));
}

void Bm25Index::finalize() {
  double total = 0.0;
  for (auto len : doc_lengths_) total += len;
  avg_doc_length_ = doc_lengths_.empty() ? 0.0 : total / static_cast<double>(doc_lengths_.size());
}

Bm25Index build_index(const Corpus& corpus, std::vector<std::string> fields, Bm25Params params) {
  if (corpus.products.empty()) throw PreconditionError("cannot index an empty corpus");
  if (!(params.k1 > 0.0) || !(params.b >= 0.0 && params.b <= 1.0)) {
    throw PreconditionError("BM25 needs k1 > 0 and 0 <= b <= 1");
  }
  if (fields.empty()) throw PreconditionError("no fields to index");

  std::vector<const ProductDoc*> docs;
  for (const auto& p : corpus.products) docs.push_back(&p);
  std::stable_sort(docs.begin(), docs.end(), [](const ProductDoc* a, const ProductDoc* b) {
    return a->product_id < b->product_id;
  });
  docs.erase(std::unique(docs.begin(), docs.end(),
                         [](const ProductDoc* a, const ProductDoc* b) {
                           return a->product_id == b->product_id;
                         }),
             docs.end());

  Bm25Index index;
  index.params_ = params;
  index.fields_ = std::move(fields);
  index.product_ids_.reserve(docs.size());
  index.doc_lengths_.reserve(docs.size());
  std::unordered_map<std::string, std::uint32_t> tf;
  for (std::uint32_t ord = 0; ord < docs.size(); ++ord) {
    tf.clear();
    std::uint32_t length = 0;
    for (const auto& field : index.fields_) {
      const std::string* text = docs[ord]->field(field);
      if (text == nullptr) continue;
      for (auto& tok : tokenize(*text)) {
        ++tf[std::move(tok)];
        ++length;
      }
    }
    index.product_ids_.push_back(docs[ord]->product_id);
    index.doc_lengths_.push_back(length);
    // Ordinals increase monotonically, so appending keeps postings sorted.
    for (auto& [term, count] : tf) index.postings_[term].push_back({ord, count});
  }
  index.finalize();
  return index;
}

std::vector<std::string> query_terms(std::string_view query) {
  std::vector<std::string> terms;
  for (auto& t : tokenize(query)) {
    if (std::find(terms.begin(), terms.end(), t) == terms.end()) terms.push_back(std::move(t));
  }
  return terms;
}

double bm25_score(const Bm25Index& index, std::string_view query, std::string_view product_id) {
  const auto ord = index.ordinal(product_id);
  if (!ord) throw PreconditionError("product '" + std::string(product_id) + "' is not indexed");
  double score = 0.0;
  for (const auto& term : query_terms(query)) {
    const auto* plist = index.postings(term);
    if (plist == nullptr) continue;
    auto it = std::lower_bound(plist->begin(), plist->end(), *ord,
                               [](const Posting& p, std::uint32_t o) { return p.doc < o; });
    if (it == plist->end() || it->doc != *ord) continue;
    score += index.term_score(index.idf(term), it->tf, index.doc_length(*ord));
  }
  return score;
}

std::vector<std::string> retrieve_topk(const Bm25Index& index, std::string_view query,
                                       std::size_t k, std::optional<std::string_view> exclude) {
  if (k < 1) throw PreconditionError("k must be at least 1");
  std::vector<double> acc(index.doc_count(), 0.0);
  std::vector<char> seen(index.doc_count(), 0);
  std::vector<std::uint32_t> touched;
  for (const auto& term : query_terms(query)) {
    const auto* plist = index.postings(term);
    if (plist == nullptr) continue;
    const double idf = index.idf(term);
    for (const auto& p : *plist) {
      if (!seen[p.doc]) {
        seen[p.doc] = 1;
        touched.push_back(p.doc);
      }
      acc[p.doc] += index.term_score(idf, p.tf, index.doc_length(p.doc));
    }
  }
  std::optional<std::uint32_t> skip;
  if (exclude) skip = index.ordinal(*exclude);
  std::vector<std::uint32_t> candidates;
  candidates.reserve(touched.size());
  for (auto d : touched) {
    if (acc[d] > 0.0 && d != skip) candidates.push_back(d);
  }
  // Ordinals follow product_id order, so ordinal ascending breaks ties.
  auto by_rank = [&](std::uint32_t a, std::uint32_t b) {
    return acc[a] != acc[b] ? acc[a] > acc[b] : a < b;
  };
  const std::size_t n = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                    candidates.end(), by_rank);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(index.product_id(candidates[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr std::string_view kIndexMagic = "QGFIDX1";
constexpr std::uint32_t kIndexVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = 0;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, sizeof v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), 8);
}

void put_str(std::ostream& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("index file truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("index file truncated");
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
  double v = 0.0;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string get_str(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw FormatError("index file truncated");
  return s;
}

}  // namespace

void write_index(std::ostream& out, const Bm25Index& index) {
  out.write(kIndexMagic.data(), static_cast<std::streamsize>(kIndexMagic.size()));
  put_u32(out, kIndexVersion);
  put_f64(out, index.params().k1);
  put_f64(out, index.params().b);
  put_u32(out, static_cast<std::uint32_t>(index.fields().size()));
  for (const auto& f : index.fields()) put_str(out, f);
  put_u32(out, static_cast<std::uint32_t>(index.doc_count()));
  for (std::uint32_t d = 0; d < index.doc_count(); ++d) {
    put_str(out, index.product_id(d));
    put_u32(out, index.doc_length(d));
  }
  // Terms sorted so the file is byte-stable.
  std::vector<std::pair<std::string_view, const std::vector<Posting>*>> terms;
  terms.reserve(index.term_count());
  index.for_each_term([&](std::string_view t, const std::vector<Posting>& p) { terms.emplace_back(t, &p); });
  std::sort(terms.begin(), terms.end());
  put_u32(out, static_cast<std::uint32_t>(terms.size()));
  for (const auto& [term, plist] : terms) {
    put_str(out, term);
    put_u32(out, static_cast<std::uint32_t>(plist->size()));
    for (const auto& p : *plist) {
      put_u32(out, p.doc);
      put_u32(out, p.tf);
    }
  }
}

Bm25Index read_index(std::istream& in) {
  std::string magic(kIndexMagic.size(), '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kIndexMagic) {
    throw FormatError("not a QGFIDX1 index file");
  }
  if (const auto version = get_u32(in); version != kIndexVersion) {
    throw FormatError("unsupported index version " + std::to_string(version));
  }
  Bm25Index index;
  index.params_.k1 = get_f64(in);
  index.params_.b = get_f64(in);
  const auto nfields = get_u32(in);
  for (std::uint32_t i = 0; i < nfields; ++i) index.fields_.push_back(get_str(in));
  const auto ndocs = get_u32(in);
  for (std::uint32_t d = 0; d < ndocs; ++d) {
    index.product_ids_.push_back(get_str(in));
    index.doc_lengths_.push_back(get_u32(in));
    if (d > 0 && !(index.product_ids_[d - 1] < index.product_ids_[d])) {
      throw FormatError("index documents out of order");
    }
  }
  const auto nterms = get_u32(in);
  for (std::uint32_t t = 0; t < nterms; ++t) {
    std::string term = get_str(in);
    const auto n = get_u32(in);
    std::vector<Posting> plist;
    plist.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      Posting p;
      p.doc = get_u32(in);
      p.tf = get_u32(in);
      if (p.doc >= ndocs || (!plist.empty() && plist.back().doc >= p.doc)) {
        throw FormatError("corrupt postings for term '" + term + "'");
      }
      plist.push_back(p);
    }
    index.postings_.emplace(std::move(term), std::move(plist));
  }
  index.finalize();
  return index;
}

void save_index(const Bm25Index& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write index " + path.string());
  write_index(out, index);
}

Bm25Index load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string());
  return read_index(in);
}

// ---------------------------------------------------------------------------

std::vector<std::string> HttpRetriever::retrieve(std::string_view query, std::size_t k,
                                                 std::optional<std::string_view> exclude) {
  const std::string id = hex64(fnv1a64(query));
  nlohmann::json body = {{"id", id}, {"query", std::string(query)}, {"k", k}};
  body["exclude"] = exclude ? nlohmann::json(std::string(*exclude)) : nlohmann::json(nullptr);
  const auto res = post_json(endpoint_, "retrieve", body);
  try {
    if (res.at("id").get<std::string>() != id) throw BackendError("retrieve response id mismatch");
    auto ids = res.at("product_ids").get<std::vector<std::string>>();
    if (exclude) std::erase(ids, std::string(*exclude));
    if (ids.size() > k) ids.resize(k);
    return ids;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed retrieve response: ") + e.what());
  }
}

MiningResult mine_hard_negatives(Retriever& retriever, const SyntheticDataset& ds, std::size_t k) {
  MiningResult out;
  for (const auto& rec : ds.records) {
    if (rec.final_label.rank != 0) continue;
    HardNegativeSet set{rec.query_text, rec.product_id,
                        retriever.retrieve(rec.query_text, k, rec.product_id)};
    if (set.negatives.empty()) ++out.empty_retrievals;
    out.sets.push_back(std::move(set));
  }
  return out;
}

MiningResult mine_hard_negatives(const Bm25Index& index, const SyntheticDataset& ds, std::size_t k) {
  Bm25Retriever retriever(index);
  return mine_hard_negatives(retriever, ds, k);
}

std::vector<TrainingPair> training_pairs(const std::vector<HardNegativeSet>& sets,
                                         const LabelSpace& binary_space) {
  if (binary_space.continuous || binary_space.size() < 2) {
    throw PreconditionError("training pairs need a discrete space with at least two labels");
  }
  const GradedLabel relevant = label_at(binary_space, 0);
  const GradedLabel irrelevant = label_at(binary_space, binary_space.size() - 1);
  std::vector<TrainingPair> pairs;
  for (const auto& s : sets) {
    pairs.push_back({s.query_text, s.positive, relevant});
    for (const auto& n : s.negatives) pairs.push_back({s.query_text, n, irrelevant});
  }
  return pairs;
}

void write_hard_negatives_jsonl(std::ostream& out, const std::vector<HardNegativeSet>& sets) {
  for (const auto& s : sets) {
    nlohmann::ordered_json j;
    j["query"] = s.query_text;
    j["positive"] = s.positive;
    j["negatives"] = s.negatives;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

std::vector<HardNegativeSet> read_hard_negatives_jsonl(std::istream& in) {
  std::vector<HardNegativeSet> sets;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      sets.push_back({j.at("query").get<std::string>(), j.at("positive").get<std::string>(),
                      j.at("negatives").get<std::vector<std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("hard negatives: ") + e.what());
    }
  }
  return sets;
}

void write_training_pairs_jsonl(std::ostream& out, const std::vector<TrainingPair>& pairs) {
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["query"] = p.query_text;
    j["product_id"] = p.product_id;
    j["label"] = p.label.name;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

}  // namespace qgf
