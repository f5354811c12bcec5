#include "qgf/labelspace.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "qgf/errors.hpp"
#include "qgf/text.hpp"

namespace qgf {

std::optional<std::size_t> LabelSpace::find(std::string_view raw) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (iequals(labels[i], raw)) return i;
  }
  return std::nullopt;
}

const std::vector<std::string>& builtin_space_names() {
  static const std::vector<std::string> names = {
      "esci", "msmarco-binary", "wands", "homedepot-continuous"};
  return names;
}

LabelSpace builtin_space(std::string_view name) {
  LabelSpace s;
  s.name = std::string(name);
  if (name == "esci") {
    s.labels = {"E", "S", "C", "I"};
    s.weights = {3.0, 2.0, 1.0, 0.0};
    s.gains = {3.0, 2.0, 1.0, 0.0};
  } else if (name == "msmarco-binary") {
    s.labels = {"Relevant", "Irrelevant"};
    s.weights = {1.0, 0.0};
    s.gains = {1.0, 0.0};
  } else if (name == "wands") {
    s.labels = {"Exact", "Partial", "Irrelevant"};
    s.weights = {2.0, 1.0, 0.0};
    s.gains = {2.0, 1.0, 0.0};
  } else if (name == "homedepot-continuous") {
    s.continuous = true;
    s.min_value = 1.0;
    s.max_value = 3.0;
  } else {
    std::string known;
    for (const auto& n : builtin_space_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown label space '" + std::string(name) +
                      "' (built-in: " + known + ")");
  }
  return s;
}

void validate_space(const LabelSpace& s) {
  if (s.name.empty()) throw ConfigError("label space without a name");
  if (s.continuous) {
    if (!(std::isfinite(s.min_value) && std::isfinite(s.max_value)) ||
        s.min_value < 0.0 || s.min_value > s.max_value) {
      throw ConfigError("label space '" + s.name + "': bad continuous range");
    }
    return;
  }
  if (s.labels.empty()) throw ConfigError("label space '" + s.name + "' has no labels");
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (s.labels[i].empty()) throw ConfigError("label space '" + s.name + "': empty label name");
    for (std::size_t j = 0; j < i; ++j) {
      if (iequals(s.labels[i], s.labels[j])) {
        throw ConfigError("label space '" + s.name + "': duplicate label '" + s.labels[i] + "'");
      }
    }
  }
  if (s.has_weights()) {
    if (s.weights.size() != s.labels.size()) {
      throw ConfigError("label space '" + s.name + "': weights do not match labels");
    }
    for (std::size_t i = 0; i < s.weights.size(); ++i) {
      if (!std::isfinite(s.weights[i]) || s.weights[i] < 0.0) {
        throw ConfigError("label space '" + s.name + "': weights must be non-negative");
      }
      if (i > 0 && !(s.weights[i - 1] > s.weights[i])) {
        throw ConfigError("label space '" + s.name + "': weights must strictly decrease");
      }
    }
  }
  if (s.gains.size() != s.labels.size()) {
    throw ConfigError("label space '" + s.name + "': gains do not match labels");
  }
  for (std::size_t i = 0; i < s.gains.size(); ++i) {
    if (!std::isfinite(s.gains[i]) || s.gains[i] < 0.0) {
      throw ConfigError("label space '" + s.name + "': gains must be non-negative");
    }
    if (i > 0 && s.gains[i - 1] < s.gains[i]) {
      throw ConfigError("label space '" + s.name + "': gains must not increase");
    }
  }
}

LabelSpace space_from_json(const nlohmann::json& j) {
  LabelSpace s;
  try {
    // A built-in name with overrides (e.g. swapped WANDS gains) is allowed.
    const std::string name = j.at("name").get<std::string>();
    bool builtin = false;
    for (const auto& n : builtin_space_names()) builtin = builtin || n == name;
    if (builtin && !j.contains("labels") && !j.value("continuous", false)) {
      s = builtin_space(name);
    }
    s.name = name;
    if (j.contains("labels")) s.labels = j.at("labels").get<std::vector<std::string>>();
    if (j.contains("weights")) s.weights = j.at("weights").get<std::vector<double>>();
    if (j.contains("gains")) s.gains = j.at("gains").get<std::vector<double>>();
    if (j.contains("continuous")) s.continuous = j.at("continuous").get<bool>();
    if (j.contains("min")) s.min_value = j.at("min").get<double>();
    if (j.contains("max")) s.max_value = j.at("max").get<double>();
    if (j.contains("gain_mode")) {
      const auto mode = j.at("gain_mode").get<std::string>();
      if (mode == "linear") {
        s.gain_mode = GainMode::linear;
      } else if (mode == "exponential") {
        s.gain_mode = GainMode::exponential;
      } else {
        throw ConfigError("gain_mode must be 'linear' or 'exponential'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("label space definition: ") + e.what());
  }
  validate_space(s);
  return s;
}

nlohmann::json space_to_json(const LabelSpace& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  if (s.continuous) {
    j["continuous"] = true;
    j["min"] = s.min_value;
    j["max"] = s.max_value;
  } else {
    j["labels"] = s.labels;
    j["weights"] = s.weights;
    j["gains"] = s.gains;
  }
  j["gain_mode"] = s.gain_mode == GainMode::linear ? "linear" : "exponential";
  return nlohmann::json::parse(j.dump());
}

LabelSpace load_space_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open label space file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("label space file " + path.string() + ": " + e.what());
  }
  return space_from_json(j);
}

LabelSpace resolve_space(std::string_view name_or_path) {
  for (const auto& n : builtin_space_names()) {
    if (n == name_or_path) return builtin_space(name_or_path);
  }
  if (name_or_path.ends_with(".json")) return load_space_file(std::string(name_or_path));
  return builtin_space(name_or_path);
}

GradedLabel parse_label(std::string_view raw, const LabelSpace& space) {
  const std::string_view text = trim(raw);
  if (space.continuous) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() ||
        !std::isfinite(v) || v < space.min_value || v > space.max_value) {
      throw LabelParseError(std::string(raw), space.name);
    }
    return GradedLabel{std::string(text), 0, v};
  }
  auto idx = space.find(text);
  if (!idx) throw LabelParseError(std::string(raw), space.name);
  return label_at(space, *idx);
}

GradedLabel label_at(const LabelSpace& space, std::size_t rank) {
  if (space.continuous || rank >= space.labels.size()) {
    throw PreconditionError("label rank " + std::to_string(rank) +
                            " out of range for space '" + space.name + "'");
  }
  return GradedLabel{space.labels[rank], rank, space.gains[rank]};
}

double gain_of(const LabelSpace& space, const GradedLabel& label) {
  const double g = space.continuous ? label.value : space.gains.at(label.rank);
  return space.gain_mode == GainMode::exponential ? std::exp2(g) - 1.0 : g;
}

}  // namespace qgf
