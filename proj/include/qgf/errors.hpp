#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qgf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Required column absent from the table header (or schema map incomplete).
struct SchemaError : Error {
  using Error::Error;
};

// Bad input row under strict ingestion.
struct RowParseError : Error {
  RowParseError(std::size_t row, const std::string& what)
      : Error("row " + std::to_string(row) + ": " + what), row(row) {}
  std::size_t row;
};

struct LabelParseError : Error {
  LabelParseError(std::string raw_text, const std::string& space)
      : Error("label '" + raw_text + "' is not in label space '" + space + "'"),
        raw(std::move(raw_text)) {}
  std::string raw;
};

struct PreconditionError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct BackendError : Error {
  using Error::Error;
};

struct GenerationParseError : Error {
  using Error::Error;
};

// Score distribution that violates the probability invariants.
struct DistributionError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct MissingArtifactError : Error {
  explicit MissingArtifactError(std::string file)
      : Error("missing upstream artifact: " + file), path(std::move(file)) {}
  std::string path;
};

}  // namespace qgf
