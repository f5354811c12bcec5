#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace qgf {

enum class GainMode { linear, exponential };

// An ordered set of graded relevance labels, most relevant first.
//
// `weights` feed the expected-relevance score of a predicted distribution and
// may be empty for spaces that are only ever used as gold labels. `gains` are
// the NDCG gains of gold labels. A continuous space has no label list: raw
// labels are decimal scores in [min_value, max_value] and act as their own
// gain.
struct LabelSpace {
  std::string name;
  std::vector<std::string> labels;
  std::vector<double> weights;
  std::vector<double> gains;
  bool continuous = false;
  double min_value = 0.0;
  double max_value = 0.0;
  GainMode gain_mode = GainMode::linear;

  std::size_t size() const { return labels.size(); }
  bool has_weights() const { return !weights.empty(); }

  // Case-insensitive exact match on label names.
  std::optional<std::size_t> find(std::string_view raw) const;

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;
};

struct GradedLabel {
  std::string name;
  std::size_t rank = 0;  // position in the label order; 0 for continuous
  double value = 0.0;    // numeric score on continuous spaces

  friend bool operator==(const GradedLabel&, const GradedLabel&) = default;
};

// esci, msmarco-binary, wands, homedepot-continuous.
LabelSpace builtin_space(std::string_view name);
const std::vector<std::string>& builtin_space_names();

// Throws ConfigError when the ordering/weight invariants do not hold.
void validate_space(const LabelSpace& space);

// {name, labels, weights, gains} plus optional continuous/min/max/gain_mode.
LabelSpace space_from_json(const nlohmann::json& j);
nlohmann::json space_to_json(const LabelSpace& space);
LabelSpace load_space_file(const std::filesystem::path& path);

// A built-in name, or a path to a JSON definition.
LabelSpace resolve_space(std::string_view name_or_path);

GradedLabel parse_label(std::string_view raw, const LabelSpace& space);
GradedLabel label_at(const LabelSpace& space, std::size_t rank);
inline const std::string& render_label(const GradedLabel& l) { return l.name; }

double gain_of(const LabelSpace& space, const GradedLabel& label);

}  // namespace qgf
