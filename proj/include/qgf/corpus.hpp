#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qgf/labelspace.hpp"

namespace qgf {

struct ProductDoc {
  std::string product_id;
  std::string title;
  std::string description;
  std::vector<std::pair<std::string, std::string>> extras;  // ordered

  // "title", "description", or an extras key; nullptr when absent.
  const std::string* field(std::string_view name) const;

  friend bool operator==(const ProductDoc&, const ProductDoc&) = default;
};

struct Judgment {
  std::string query_id;
  std::string query_text;
  std::string product_id;
  std::string raw_label;
  std::string dataset_tag;

  friend bool operator==(const Judgment&, const Judgment&) = default;
};

struct Corpus {
  std::vector<ProductDoc> products;
  std::vector<Judgment> judgments;
  std::string label_space_name;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

using ProductLookup = std::unordered_map<std::string_view, const ProductDoc*>;

// First occurrence wins for duplicated ids. Views point into `corpus`.
ProductLookup product_lookup(const Corpus& corpus);

enum class TableFormat { csv, tsv, jsonl };

TableFormat parse_table_format(std::string_view name);

// Column-role map. Known roles: product_id, title, description, query_id,
// query, label, dataset. Any other role name becomes an extras field of the
// product, in schema order.
struct Schema {
  std::vector<std::pair<std::string, std::string>> roles;  // role -> column

  // "product_id=colA,title=colB,..."
  static Schema parse(std::string_view spec);

  const std::string* column(std::string_view role) const;
  bool has_judgments() const { return column("query") != nullptr; }
};

struct IngestOptions {
  bool strict = false;
  std::string dataset_tag;  // used when the schema has no dataset column
};

struct RowError {
  std::size_t row = 0;  // 1-based data record number (header excluded)
  std::string message;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::size_t products_added = 0;
  std::size_t repeated_product_rows = 0;
  std::size_t judgments = 0;
  std::size_t product_only_rows = 0;  // query and label both empty
  std::vector<RowError> errors;
  std::vector<std::string> warnings;
};

struct IngestResult {
  Corpus corpus;
  IngestReport report;
};

// Streaming ingestion: one record is buffered at a time. Products are keyed by
// product_id; a repeated id keeps its first row's product fields. Judgment
// labels are checked against `space`. Non-strict mode skips and reports bad
// rows; strict mode throws RowParseError on the first one.
IngestResult ingest_table(const std::filesystem::path& path, TableFormat format,
                          const Schema& schema, const LabelSpace& space,
                          const IngestOptions& options = {});
IngestResult ingest_stream(std::istream& in, TableFormat format,
                           const Schema& schema, const LabelSpace& space,
                           const IngestOptions& options = {});

struct ValidationReport {
  std::vector<std::string> dangling_references;  // product ids
  std::vector<std::string> duplicate_ids;
  std::vector<std::string> empty_titles;         // product ids
  std::vector<std::string> empty_ids;            // "product #n"
  std::vector<std::string> empty_queries;        // query ids
  std::vector<std::string> unparseable_labels;   // raw labels

  bool empty() const;
  std::size_t issue_count() const;
};

ValidationReport validate_corpus(const Corpus& corpus, const LabelSpace& space);

// Products sorted by id, judgments by (query_id, product_id, query, label,
// dataset). Row-order independent form used for on-disk stage artifacts.
Corpus canonicalize(Corpus corpus);

void write_products_jsonl(std::ostream& out, const Corpus& corpus);
void write_judgments_jsonl(std::ostream& out, const Corpus& corpus);

// products.jsonl + judgments.jsonl under `dir`, in the corpus's order.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir, std::string label_space_name);

std::vector<ProductDoc> read_products_jsonl(std::istream& in);
std::vector<Judgment> read_judgments_jsonl(std::istream& in);

}  // namespace qgf
