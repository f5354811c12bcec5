#include "qgf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_map>

namespace qgf {

std::vector<GenTask> plan_generation(const Corpus& corpus, const LabelSpace& space, GenMode mode,
                                     std::size_t queries_per_cell) {
  if (corpus.products.empty()) throw PreconditionError("cannot plan generation over an empty corpus");
  if (queries_per_cell < 1) throw PreconditionError("queries_per_cell must be at least 1");
  if (space.continuous) throw PreconditionError("generation needs a discrete label space");
  const std::size_t labels = mode == GenMode::labelcond ? space.size() : 1;
  std::vector<GenTask> tasks;
  tasks.reserve(corpus.products.size() * labels * queries_per_cell);
  for (const auto& p : corpus.products) {
    for (std::size_t r = 0; r < labels; ++r) {
      const GradedLabel label = label_at(space, r);
      for (std::size_t n = 0; n < queries_per_cell; ++n) tasks.push_back({p.product_id, label, n});
    }
  }
  return tasks;
}

std::string task_request_id(const GenTask& task) {
  return task.product_id + "#" + task.label.name + "#" + std::to_string(task.replica);
}

// ---------------------------------------------------------------------------
// Duplicate filtration

namespace {

bool better(const GeneratedQuery& a, std::size_t ia, const GeneratedQuery& b, std::size_t ib) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  if (a.desired_label.rank != b.desired_label.rank) return a.desired_label.rank < b.desired_label.rank;
  if (a.query_text != b.query_text) return a.query_text < b.query_text;
  return ia < ib;
}

}  // namespace

DedupResult dedup_filter(const SyntheticDataset& ds) {
  const auto& recs = ds.records;
  std::unordered_map<std::string, std::vector<std::size_t>> groups;
  std::vector<const std::vector<std::size_t>*> group_order;
  groups.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::string key = recs[i].product_id;
    key.push_back('\x1f');
    key += normalize_query(recs[i].query_text);
    auto [it, inserted] = groups.try_emplace(std::move(key));
    it->second.push_back(i);
    if (inserted) group_order.push_back(&it->second);
  }

  std::vector<bool> keep(recs.size(), false);
  DedupReport report;
  report.input_records = recs.size();
  std::map<std::string, ProductDuplicates> per_product;
  std::map<std::string, std::set<std::pair<std::size_t, std::size_t>>> pairs_by_product;

  for (const auto* members : group_order) {
    std::size_t best = members->front();
    for (std::size_t i : *members) {
      if (better(recs[i], i, recs[best], best)) best = i;
    }
    keep[best] = true;
    if (members->size() < 2) continue;

    ++report.duplicate_groups;
    const std::string& pid = recs[best].product_id;
    auto& pd = per_product[pid];
    pd.product_id = pid;
    ++pd.groups;
    std::set<std::size_t> ranks;
    for (std::size_t i : *members) ranks.insert(recs[i].desired_label.rank);
    auto& pairs = pairs_by_product[pid];
    for (auto a = ranks.begin(); a != ranks.end(); ++a) {
      for (auto b = std::next(a); b != ranks.end(); ++b) pairs.emplace(*a, *b);
    }
  }

  for (auto& [pid, pd] : per_product) {
    const auto& pairs = pairs_by_product[pid];
    pd.label_pairs.assign(pairs.begin(), pairs.end());
    for (const auto& pr : pairs) ++report.pair_products[pr];
    report.products.push_back(std::move(pd));
  }

  DedupResult out;
  out.dataset.space = ds.space;
  out.dataset.provenance = ds.provenance;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (keep[i]) out.dataset.records.push_back(recs[i]);
  }
  report.output_records = out.dataset.records.size();
  out.report = std::move(report);
  return out;
}

nlohmann::ordered_json dedup_report_to_json(const DedupReport& report, const LabelSpace& space) {
  using ojson = nlohmann::ordered_json;
  ojson j;
  j["input_records"] = report.input_records;
  j["output_records"] = report.output_records;
  j["duplicate_groups"] = report.duplicate_groups;
  j["products_with_duplicates"] = report.products_with_duplicates();
  ojson pairs = ojson::array();
  for (const auto& [pr, n] : report.pair_products) {
    pairs.push_back({{"labels", {space.labels.at(pr.first), space.labels.at(pr.second)}},
                     {"products", n}});
  }
  j["pair_products"] = std::move(pairs);
  ojson products = ojson::array();
  for (const auto& pd : report.products) {
    ojson lp = ojson::array();
    for (const auto& [a, b] : pd.label_pairs) lp.push_back({space.labels.at(a), space.labels.at(b)});
    products.push_back({{"product_id", pd.product_id}, {"groups", pd.groups}, {"label_pairs", lp}});
  }
  j["products"] = std::move(products);
  return j;
}

DedupReport dedup_report_from_json(const nlohmann::json& j, const LabelSpace& space) {
  DedupReport r;
  auto rank = [&](const nlohmann::json& name) {
    auto idx = space.find(name.get<std::string>());
    if (!idx) throw FormatError("dedup report label '" + name.get<std::string>() + "' not in space");
    return *idx;
  };
  try {
    r.input_records = j.at("input_records").get<std::size_t>();
    r.output_records = j.at("output_records").get<std::size_t>();
    r.duplicate_groups = j.at("duplicate_groups").get<std::size_t>();
    for (const auto& p : j.at("pair_products")) {
      r.pair_products[{rank(p.at("labels").at(0)), rank(p.at("labels").at(1))}] =
          p.at("products").get<std::size_t>();
    }
    for (const auto& p : j.at("products")) {
      ProductDuplicates pd;
      pd.product_id = p.at("product_id").get<std::string>();
      pd.groups = p.at("groups").get<std::size_t>();
      for (const auto& lp : p.at("label_pairs")) pd.label_pairs.emplace_back(rank(lp.at(0)), rank(lp.at(1)));
      r.products.push_back(std::move(pd));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dedup report: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------

RelabelResult roundtrip_relabel(const SyntheticDataset& ds, const ProductLookup& products,
                                Scorer& scorer) {
  const auto scorer_space = scorer.space();
  if (!scorer_space || !ds.space || scorer_space->name != ds.space->name ||
      scorer_space->labels != ds.space->labels) {
    throw PreconditionError("scorer label space does not match the dataset's");
  }
  RelabelResult out;
  out.dataset.space = ds.space;
  out.dataset.provenance = ds.provenance;
  std::size_t mismatches = 0;
  for (const auto& rec : ds.records) {
    auto it = products.find(rec.product_id);
    if (it == products.end()) {
      ++out.dropped;
      out.failures.push_back(rec.product_id + ": unknown product");
      continue;
    }
    try {
      const ScoreDistribution dist = score(scorer, rec.query_text, *it->second);
      GeneratedQuery relabeled = rec;
      relabeled.final_label = label_at(*ds.space, dist.argmax());
      if (relabeled.final_label.rank != relabeled.desired_label.rank) ++mismatches;
      out.dataset.records.push_back(std::move(relabeled));
    } catch (const Error& e) {
      ++out.dropped;
      out.failures.push_back(rec.product_id + ": " + e.what());
    }
  }
  const std::size_t n = out.dataset.records.size();
  out.mismatch_rate = n == 0 ? 0.0 : static_cast<double>(mismatches) / static_cast<double>(n);
  return out;
}

std::size_t train_product_count(std::size_t products, double ratio) {
  const double exact = ratio * static_cast<double>(products);
  const auto n = static_cast<std::size_t>(std::llround(exact));
  return std::min(n, products);
}

SplitResult split_train_val(const SyntheticDataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw PreconditionError("split ratio must be in (0, 1)");
  if (ds.records.empty()) throw PreconditionError("cannot split an empty dataset");
  std::set<std::string> distinct;
  for (const auto& r : ds.records) distinct.insert(r.product_id);
  std::vector<std::string> ids(distinct.begin(), distinct.end());
  std::mt19937_64 rng(seed);
  seeded_shuffle(ids, rng);
  const std::size_t cut = train_product_count(ids.size(), ratio);

  SplitResult out;
  out.train_products.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
  out.val_products.assign(ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
  std::sort(out.train_products.begin(), out.train_products.end());
  std::sort(out.val_products.begin(), out.val_products.end());
  const std::set<std::string> train_set(out.train_products.begin(), out.train_products.end());

  out.train.space = out.val.space = ds.space;
  out.train.provenance = out.val.provenance = ds.provenance;
  for (const auto& r : ds.records) {
    (train_set.contains(r.product_id) ? out.train : out.val).records.push_back(r);
  }
  if (out.val_products.empty()) {
    out.warnings.push_back(ids.size() == 1 ? "single-product dataset: validation split is empty"
                                           : "validation split is empty");
  }
  if (out.train_products.empty()) out.warnings.push_back("training split is empty");
  return out;
}

SyntheticDataset upsample_balance(const SyntheticDataset& ds, std::uint64_t seed) {
  SyntheticDataset out;
  out.space = ds.space;
  out.provenance = ds.provenance;
  out.records = upsample_balance(ds.records, *ds.space, seed,
                                 [](const GeneratedQuery& q) { return q.final_label.rank; });
  return out;
}

void write_dataset_jsonl(std::ostream& out, const SyntheticDataset& ds) {
  for (const auto& r : ds.records) {
    nlohmann::ordered_json j;
    j["product_id"] = r.product_id;
    j["desired_label"] = r.desired_label.name;
    j["final_label"] = r.final_label.name;
    j["query"] = r.query_text;
    j["logprob"] = r.logprob;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

SyntheticDataset read_dataset_jsonl(std::istream& in, std::shared_ptr<const LabelSpace> space) {
  SyntheticDataset ds;
  ds.space = std::move(space);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      GeneratedQuery q;
      q.product_id = j.at("product_id").get<std::string>();
      q.desired_label = parse_label(j.at("desired_label").get<std::string>(), *ds.space);
      q.final_label = parse_label(j.at("final_label").get<std::string>(), *ds.space);
      q.query_text = j.at("query").get<std::string>();
      q.logprob = j.at("logprob").get<double>();
      ds.records.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("dataset line " + std::to_string(n) + ": " + e.what());
    } catch (const LabelParseError& e) {
      throw FormatError("dataset line " + std::to_string(n) + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace qgf
