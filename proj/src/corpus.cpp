#include "qgf/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <streambuf>
#include <tuple>
#include <unordered_set>

#include "json.hpp"
#include "qgf/errors.hpp"
#include "qgf/text.hpp"

namespace qgf {
namespace {

using ojson = nlohmann::ordered_json;

constexpr auto kReplaceInvalid = nlohmann::json::error_handler_t::replace;

// RFC 4180 records (quoted fields, "" escapes, embedded newlines, CRLF) or
// plain tab-split lines.
class DelimitedReader {
 public:
  enum class Status { record, eof, malformed };

  DelimitedReader(std::istream& in, char delim, bool quoting)
      : buf_(in.rdbuf()), delim_(delim), quoting_(quoting) {}

  Status next(std::vector<std::string>& fields, std::string& error) {
    fields.clear();
    if (buf_ == nullptr || buf_->sgetc() == EOF) return Status::eof;
    return quoting_ ? next_quoted(fields, error) : next_plain(fields);
  }

 private:
  using traits = std::char_traits<char>;

  Status next_plain(std::vector<std::string>& fields) {
    std::string field;
    for (;;) {
      int c = buf_->sbumpc();
      if (c == EOF || c == '\n') {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        fields.push_back(std::move(field));
        return Status::record;
      }
      if (c == delim_) {
        fields.push_back(std::move(field));
        field.clear();
      } else {
        field.push_back(static_cast<char>(c));
      }
    }
  }

  void skip_line() {
    for (int c = buf_->sbumpc(); c != EOF && c != '\n'; c = buf_->sbumpc()) {
    }
  }

  bool at_line_end(int c) {
    if (c == '\n' || c == EOF) return true;
    if (c == '\r') {
      if (buf_->sgetc() == '\n') buf_->sbumpc();
      return true;
    }
    return false;
  }

  Status next_quoted(std::vector<std::string>& fields, std::string& error) {
    enum class State { field_start, unquoted, quoted, after_quote };
    State state = State::field_start;
    std::string field;
    for (;;) {
      int c = buf_->sbumpc();
      switch (state) {
        case State::field_start:
        case State::unquoted:
          if (c == '"' && state == State::field_start) {
            state = State::quoted;
          } else if (c == '"') {
            error = "stray quote inside unquoted field";
            skip_line();
            return Status::malformed;
          } else if (c == delim_) {
            fields.push_back(std::move(field));
            field.clear();
            state = State::field_start;
          } else if (at_line_end(c)) {
            fields.push_back(std::move(field));
            return Status::record;
          } else {
            field.push_back(static_cast<char>(c));
            state = State::unquoted;
          }
          break;
        case State::quoted:
          if (c == EOF) {
            error = "unterminated quoted field";
            return Status::malformed;
          }
          if (c == '"') {
            if (buf_->sgetc() == '"') {
              buf_->sbumpc();
              field.push_back('"');
            } else {
              state = State::after_quote;
            }
          } else {
            field.push_back(static_cast<char>(c));
          }
          break;
        case State::after_quote:
          if (c == delim_) {
            fields.push_back(std::move(field));
            field.clear();
            state = State::field_start;
          } else if (at_line_end(c)) {
            fields.push_back(std::move(field));
            return Status::record;
          } else {
            error = "unexpected character after closing quote";
            skip_line();
            return Status::malformed;
          }
          break;
      }
    }
  }

  std::streambuf* buf_;
  char delim_;
  bool quoting_;
};

bool is_blank_record(const std::vector<std::string>& fields) {
  return fields.size() == 1 && trim(fields[0]).empty();
}

void strip_bom(std::string& s) {
  if (s.size() >= 3 && s.compare(0, 3, "\xEF\xBB\xBF") == 0) s.erase(0, 3);
}

bool is_known_role(std::string_view role) {
  static const std::set<std::string_view> known = {
      "product_id", "title", "description", "query_id", "query", "label", "dataset"};
  return known.contains(role);
}

using CellGetter = std::function<std::optional<std::string>(const std::string& role)>;

class CorpusBuilder {
 public:
  CorpusBuilder(const Schema& schema, const LabelSpace& space, const IngestOptions& options)
      : schema_(schema), space_(space), options_(options) {
    result_.corpus.label_space_name = space.name;
  }

  // Returns an error message, or empty on success.
  std::string add_row(const CellGetter& get) {
    auto cell = [&](std::string_view role) -> std::string {
      if (schema_.column(role) == nullptr) return {};
      return get(std::string(role)).value_or(std::string{});
    };
    ProductDoc doc;
    doc.product_id = cell("product_id");
    doc.title = cell("title");
    doc.description = cell("description");
    if (trim(doc.product_id).empty()) return "empty product_id";
    if (trim(doc.title).empty()) return "empty title";
    for (const auto& [role, column] : schema_.roles) {
      if (!is_known_role(role)) doc.extras.emplace_back(role, cell(role));
    }

    std::optional<Judgment> judgment;
    bool product_only = false;
    if (schema_.has_judgments()) {
      product_only = trim(cell("query")).empty() && trim(cell("label")).empty();
    }
    if (schema_.has_judgments() && !product_only) {
      Judgment j;
      j.query_text = cell("query");
      if (trim(j.query_text).empty()) return "empty query";
      j.query_id = schema_.column("query_id") ? cell("query_id") : j.query_text;
      if (j.query_id.empty()) j.query_id = j.query_text;
      j.product_id = doc.product_id;
      j.raw_label = cell("label");
      try {
        parse_label(j.raw_label, space_);
      } catch (const LabelParseError& e) {
        return e.what();
      }
      j.dataset_tag = schema_.column("dataset") ? cell("dataset") : options_.dataset_tag;
      if (j.dataset_tag.empty()) j.dataset_tag = space_.name;
      judgment = std::move(j);
    }

    if (seen_.insert(doc.product_id).second) {
      result_.corpus.products.push_back(std::move(doc));
      ++result_.report.products_added;
    } else {
      ++result_.report.repeated_product_rows;
    }
    if (judgment) {
      result_.corpus.judgments.push_back(std::move(*judgment));
      ++result_.report.judgments;
    } else if (product_only) {
      ++result_.report.product_only_rows;
    }
    return {};
  }

  void record(std::size_t row, const std::string& error) {
    ++result_.report.rows_read;
    if (error.empty()) return;
    if (options_.strict) throw RowParseError(row, error);
    ++result_.report.rows_skipped;
    result_.report.errors.push_back({row, error});
  }

  IngestResult finish() { return std::move(result_); }
  IngestReport& report() { return result_.report; }

 private:
  const Schema& schema_;
  const LabelSpace& space_;
  const IngestOptions& options_;
  std::unordered_set<std::string> seen_;
  IngestResult result_;
};

void require_schema_roles(const Schema& schema) {
  for (const char* role : {"product_id", "title"}) {
    if (schema.column(role) == nullptr) {
      throw SchemaError(std::string("schema does not map required role '") + role + "'");
    }
  }
  if (schema.column("query") != nullptr && schema.column("label") == nullptr) {
    throw SchemaError("schema maps 'query' but not 'label'");
  }
}

IngestResult ingest_delimited(std::istream& in, char delim, bool quoting,
                              const Schema& schema, const LabelSpace& space,
                              const IngestOptions& options) {
  CorpusBuilder builder(schema, space, options);
  DelimitedReader reader(in, delim, quoting);
  std::vector<std::string> fields;
  std::string error;

  auto status = reader.next(fields, error);
  while (status == DelimitedReader::Status::record && is_blank_record(fields)) {
    status = reader.next(fields, error);
  }
  if (status == DelimitedReader::Status::eof) {
    builder.report().warnings.push_back("empty input: no header row");
    return builder.finish();
  }
  if (status == DelimitedReader::Status::malformed) {
    throw SchemaError("unreadable header row: " + error);
  }
  std::vector<std::string> header = fields;
  if (!header.empty()) strip_bom(header.front());

  std::unordered_map<std::string, std::size_t> role_index;
  for (const auto& [role, column] : schema.roles) {
    auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) {
      throw SchemaError("missing column '" + column + "' (role " + role + ")");
    }
    role_index[role] = static_cast<std::size_t>(it - header.begin());
  }

  std::size_t row = 0;
  for (;;) {
    error.clear();
    status = reader.next(fields, error);
    if (status == DelimitedReader::Status::eof) break;
    if (status == DelimitedReader::Status::record && is_blank_record(fields)) continue;
    ++row;
    if (status == DelimitedReader::Status::malformed) {
      builder.record(row, error);
      continue;
    }
    if (fields.size() != header.size()) {
      builder.record(row, "expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
      continue;
    }
    builder.record(row, builder.add_row([&](const std::string& role) -> std::optional<std::string> {
      return fields[role_index.at(role)];
    }));
  }
  if (row == 0) builder.report().warnings.push_back("no data rows");
  return builder.finish();
}

std::optional<std::string> json_cell(const nlohmann::json& obj, const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_primitive()) return it->dump();
  return it->dump(-1, ' ', false, kReplaceInvalid);
}

IngestResult ingest_jsonl(std::istream& in, const Schema& schema, const LabelSpace& space,
                          const IngestOptions& options) {
  CorpusBuilder builder(schema, space, options);
  std::string line;
  std::size_t row = 0;
  bool any_line = false;
  while (std::getline(in, line)) {
    any_line = true;
    if (trim(line).empty()) continue;
    ++row;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      builder.record(row, std::string("invalid JSON: ") + e.what());
      continue;
    }
    if (!obj.is_object()) {
      builder.record(row, "record is not a JSON object");
      continue;
    }
    builder.record(row, builder.add_row([&](const std::string& role) {
      return json_cell(obj, *schema.column(role));
    }));
  }
  if (!any_line) {
    builder.report().warnings.push_back("empty input");
  } else if (row == 0) {
    builder.report().warnings.push_back("no data rows");
  }
  return builder.finish();
}

std::string dump_line(const ojson& j) { return j.dump(-1, ' ', false, kReplaceInvalid); }

}  // namespace

const std::string* ProductDoc::field(std::string_view name) const {
  if (name == "title") return &title;
  if (name == "description") return &description;
  for (const auto& [key, value] : extras) {
    if (key == name) return &value;
  }
  return nullptr;
}

ProductLookup product_lookup(const Corpus& corpus) {
  ProductLookup lookup;
  lookup.reserve(corpus.products.size());
  for (const auto& p : corpus.products) lookup.try_emplace(p.product_id, &p);
  return lookup;
}

TableFormat parse_table_format(std::string_view name) {
  if (name == "csv") return TableFormat::csv;
  if (name == "tsv") return TableFormat::tsv;
  if (name == "jsonl") return TableFormat::jsonl;
  throw ConfigError("unknown table format '" + std::string(name) + "' (csv, tsv, jsonl)");
}

Schema Schema::parse(std::string_view spec) {
  Schema s;
  while (!spec.empty()) {
    auto comma = spec.find(',');
    std::string_view item = trim(spec.substr(0, comma));
    spec = comma == std::string_view::npos ? std::string_view{} : spec.substr(comma + 1);
    if (item.empty()) continue;
    auto eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0 || eq + 1 == item.size()) {
      throw SchemaError("bad schema entry '" + std::string(item) + "' (want role=column)");
    }
    std::string role(trim(item.substr(0, eq)));
    if (s.column(role) != nullptr) throw SchemaError("role '" + role + "' mapped twice");
    s.roles.emplace_back(std::move(role), std::string(trim(item.substr(eq + 1))));
  }
  return s;
}

const std::string* Schema::column(std::string_view role) const {
  for (const auto& [r, c] : roles) {
    if (r == role) return &c;
  }
  return nullptr;
}

IngestResult ingest_stream(std::istream& in, TableFormat format, const Schema& schema,
                           const LabelSpace& space, const IngestOptions& options) {
  require_schema_roles(schema);
  switch (format) {
    case TableFormat::csv:
      return ingest_delimited(in, ',', true, schema, space, options);
    case TableFormat::tsv:
      return ingest_delimited(in, '\t', false, schema, space, options);
    case TableFormat::jsonl:
      return ingest_jsonl(in, schema, space, options);
  }
  throw ConfigError("unknown table format");
}

IngestResult ingest_table(const std::filesystem::path& path, TableFormat format,
                          const Schema& schema, const LabelSpace& space,
                          const IngestOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open input table " + path.string());
  return ingest_stream(in, format, schema, space, options);
}

bool ValidationReport::empty() const { return issue_count() == 0; }

std::size_t ValidationReport::issue_count() const {
  return dangling_references.size() + duplicate_ids.size() + empty_titles.size() +
         empty_ids.size() + empty_queries.size() + unparseable_labels.size();
}

ValidationReport validate_corpus(const Corpus& corpus, const LabelSpace& space) {
  ValidationReport report;
  std::unordered_set<std::string_view> ids;
  std::set<std::string> dups;
  for (std::size_t i = 0; i < corpus.products.size(); ++i) {
    const auto& p = corpus.products[i];
    if (trim(p.product_id).empty()) report.empty_ids.push_back("product #" + std::to_string(i));
    if (!ids.insert(p.product_id).second) dups.insert(p.product_id);
    if (trim(p.title).empty()) report.empty_titles.push_back(p.product_id);
  }
  report.duplicate_ids.assign(dups.begin(), dups.end());
  for (const auto& j : corpus.judgments) {
    if (!ids.contains(j.product_id)) report.dangling_references.push_back(j.product_id);
    if (trim(j.query_text).empty()) report.empty_queries.push_back(j.query_id);
    try {
      parse_label(j.raw_label, space);
    } catch (const LabelParseError&) {
      report.unparseable_labels.push_back(j.raw_label);
    }
  }
  return report;
}

Corpus canonicalize(Corpus corpus) {
  std::stable_sort(corpus.products.begin(), corpus.products.end(),
                   [](const ProductDoc& a, const ProductDoc& b) { return a.product_id < b.product_id; });
  auto key = [](const Judgment& j) {
    return std::tie(j.query_id, j.product_id, j.query_text, j.raw_label, j.dataset_tag);
  };
  std::stable_sort(corpus.judgments.begin(), corpus.judgments.end(),
                   [&](const Judgment& a, const Judgment& b) { return key(a) < key(b); });
  return corpus;
}

void write_products_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const auto& p : corpus.products) {
    ojson j;
    j["product_id"] = p.product_id;
    j["title"] = p.title;
    j["description"] = p.description;
    ojson extras = ojson::object();
    for (const auto& [k, v] : p.extras) extras[k] = v;
    j["extras"] = std::move(extras);
    out << dump_line(j) << '\n';
  }
}

void write_judgments_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const auto& jd : corpus.judgments) {
    ojson j;
    j["query_id"] = jd.query_id;
    j["query"] = jd.query_text;
    j["product_id"] = jd.product_id;
    j["label"] = jd.raw_label;
    j["dataset"] = jd.dataset_tag;
    out << dump_line(j) << '\n';
  }
}

std::vector<ProductDoc> read_products_jsonl(std::istream& in) {
  std::vector<ProductDoc> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      auto j = ojson::parse(line);
      ProductDoc p;
      p.product_id = j.at("product_id").get<std::string>();
      p.title = j.at("title").get<std::string>();
      p.description = j.value("description", std::string{});
      if (auto it = j.find("extras"); it != j.end()) {
        for (const auto& [k, v] : it->items()) p.extras.emplace_back(k, v.get<std::string>());
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("products.jsonl line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Judgment> read_judgments_jsonl(std::istream& in) {
  std::vector<Judgment> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      Judgment jd;
      jd.query_id = j.at("query_id").get<std::string>();
      jd.query_text = j.at("query").get<std::string>();
      jd.product_id = j.at("product_id").get<std::string>();
      jd.raw_label = j.at("label").get<std::string>();
      jd.dataset_tag = j.value("dataset", std::string{});
      out.push_back(std::move(jd));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("judgments.jsonl line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream products(dir / "products.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream judgments(dir / "judgments.jsonl", std::ios::binary | std::ios::trunc);
  if (!products || !judgments) throw Error("cannot write corpus files under " + dir.string());
  write_products_jsonl(products, corpus);
  write_judgments_jsonl(judgments, corpus);
}

Corpus load_corpus(const std::filesystem::path& dir, std::string label_space_name) {
  Corpus c;
  c.label_space_name = std::move(label_space_name);
  std::ifstream products(dir / "products.jsonl", std::ios::binary);
  if (!products) throw MissingArtifactError((dir / "products.jsonl").string());
  c.products = read_products_jsonl(products);
  std::ifstream judgments(dir / "judgments.jsonl", std::ios::binary);
  if (judgments) c.judgments = read_judgments_jsonl(judgments);
  return c;
}

}  // namespace qgf
