#include "qgf/qgen_io.hpp"

#include <algorithm>

#include "qgf/errors.hpp"
#include "qgf/text.hpp"

namespace qgf {
namespace {

constexpr std::string_view kLabelMarker = "Label: ";
constexpr std::string_view kProductMarker = "Product: ";
constexpr std::string_view kQueryMarker = "Query:";

std::string format_input(const ProductDoc& product, const GradedLabel* label,
                         const TemplateConfig& cfg) {
  std::string out;
  if (label != nullptr) {
    out += kLabelMarker;
    out += label->name;
    out += ' ';
  }
  out += kProductMarker;
  out += flatten_whitespace(product.title);

  for (const auto& name : cfg.field_order) {
    if (out.size() >= cfg.max_input_chars) break;
    std::string marker;
    if (name == "description") {
      if (!cfg.include_description) continue;
      marker = " Description: ";
    } else if (name == "title") {
      continue;
    } else {
      marker = " " + name + ": ";
    }
    const std::string* value = product.field(name);
    if (value == nullptr || trim(*value).empty()) continue;

    const std::size_t room = cfg.max_input_chars - out.size();
    if (room <= marker.size()) break;
    const std::string flat = flatten_whitespace(*value);
    const std::string_view kept = utf8_prefix(flat, room - marker.size());
    if (kept.empty()) break;
    out += marker;
    out += kept;
  }
  return out;
}

}  // namespace

GenMode parse_gen_mode(std::string_view name) {
  if (name == "vanilla") return GenMode::vanilla;
  if (name == "labelcond") return GenMode::labelcond;
  throw ConfigError("unknown generation mode '" + std::string(name) + "' (vanilla, labelcond)");
}

std::string_view to_string(GenMode mode) {
  return mode == GenMode::vanilla ? "vanilla" : "labelcond";
}

std::string format_labelcond_input(const ProductDoc& product, const GradedLabel& label,
                                   const TemplateConfig& cfg) {
  return format_input(product, &label, cfg);
}

std::string format_vanilla_input(const ProductDoc& product, const TemplateConfig& cfg) {
  return format_input(product, nullptr, cfg);
}

std::string parse_query_output(std::string_view raw) {
  std::string_view s = trim(raw);
  if (s.starts_with(kQueryMarker)) s.remove_prefix(kQueryMarker.size());
  // A marker directly followed by a line break leaves nothing on the line.
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  if (auto nl = s.find_first_of("\r\n"); nl != std::string_view::npos) s = s.substr(0, nl);
  s = trim(s);
  if (s.empty()) {
    throw GenerationParseError("generator output has no query text: '" + std::string(raw) + "'");
  }
  return std::string(s);
}

std::string assemble_prompt(std::span<const Exemplar> exemplars, const ProductDoc& target,
                            GenMode mode, const std::optional<GradedLabel>& target_label,
                            const LabelSpace& space, const TemplateConfig& cfg) {
  if (space.continuous) throw PreconditionError("prompts need a discrete label space");
  std::vector<const Exemplar*> ordered;
  for (const auto& e : exemplars) {
    if (trim(e.query_text).empty()) throw PreconditionError("exemplar with empty query");
    ordered.push_back(&e);
  }

  if (mode == GenMode::vanilla) {
    if (exemplars.size() != kVanillaPromptExemplars) {
      throw PreconditionError("vanilla prompt needs exactly " +
                              std::to_string(kVanillaPromptExemplars) + " exemplars, got " +
                              std::to_string(exemplars.size()));
    }
    for (const auto& e : exemplars) {
      if (e.label.rank != 0) {
        throw PreconditionError("vanilla prompt exemplars must carry the top label '" +
                                space.labels.front() + "', got '" + e.label.name + "'");
      }
    }
  } else {
    if (!target_label) throw PreconditionError("labelcond prompt needs a target label");
    if (target_label->rank >= space.size() || target_label->name != space.labels[target_label->rank]) {
      throw PreconditionError("target label '" + target_label->name + "' not in space '" +
                              space.name + "'");
    }
    std::vector<std::size_t> counts(space.size(), 0);
    for (const auto& e : exemplars) {
      if (e.label.rank >= space.size()) {
        throw PreconditionError("exemplar label '" + e.label.name + "' not in space '" +
                                space.name + "'");
      }
      ++counts[e.label.rank];
    }
    for (std::size_t r = 0; r < space.size(); ++r) {
      if (counts[r] != kLabelcondExemplarsPerLabel) {
        throw PreconditionError("labelcond prompt needs " +
                                std::to_string(kLabelcondExemplarsPerLabel) +
                                " exemplars for label '" + space.labels[r] + "', got " +
                                std::to_string(counts[r]));
      }
    }
    std::stable_sort(ordered.begin(), ordered.end(), [](const Exemplar* a, const Exemplar* b) {
      return a->label.rank < b->label.rank;
    });
  }

  std::string prompt;
  for (const Exemplar* e : ordered) {
    prompt += mode == GenMode::vanilla ? format_vanilla_input(e->product, cfg)
                                       : format_labelcond_input(e->product, e->label, cfg);
    prompt += '\n';
    prompt += kQueryMarker;
    prompt += ' ';
    prompt += flatten_whitespace(trim(e->query_text));
    prompt += "\n\n";
  }
  prompt += mode == GenMode::vanilla ? format_vanilla_input(target, cfg)
                                     : format_labelcond_input(target, *target_label, cfg);
  prompt += '\n';
  prompt += kQueryMarker;
  return prompt;
}

}  // namespace qgf
