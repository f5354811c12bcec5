#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qgf/corpus.hpp"
#include "qgf/labelspace.hpp"

namespace qgf {

// Generation input layout. The scaffold is
//   [Label: <label> ]Product: <title>[ Description: <description>]...
// with one " <Name>: <value>" segment per entry of `field_order`.
// "description" renders as "Description" and is skipped when
// include_description is off; any other name is looked up in the product's
// extras and rendered under its own name. Empty fields are omitted.
struct TemplateConfig {
  bool include_description = true;
  // Character (byte) budget. The default approximates a 256-token input.
  std::size_t max_input_chars = 1200;
  std::vector<std::string> field_order = {"description"};
};

enum class GenMode { vanilla, labelcond };

GenMode parse_gen_mode(std::string_view name);
std::string_view to_string(GenMode mode);

// Fields after the title are truncated from the tail to fit the budget; the
// label and title are never cut. A field whose marker no longer fits is
// dropped whole.
std::string format_labelcond_input(const ProductDoc& product, const GradedLabel& label,
                                   const TemplateConfig& cfg);
std::string format_vanilla_input(const ProductDoc& product, const TemplateConfig& cfg);

// Strips one leading "Query:" marker, stops at the first newline, trims.
// Throws GenerationParseError when nothing is left.
std::string parse_query_output(std::string_view raw);

struct Exemplar {
  GradedLabel label;
  ProductDoc product;
  std::string query_text;
};

inline constexpr std::size_t kVanillaPromptExemplars = 8;
inline constexpr std::size_t kLabelcondExemplarsPerLabel = 2;

// Few-shot prompt: one "<input>\nQuery: <q>" block per exemplar separated by
// blank lines, then the target input and a final "Query:" line awaiting
// completion. Vanilla mode takes exactly 8 top-label exemplars; labelcond
// mode takes exactly 2 per label, rendered label-order-major, and a target
// label. Violations throw PreconditionError.
std::string assemble_prompt(std::span<const Exemplar> exemplars, const ProductDoc& target,
                            GenMode mode, const std::optional<GradedLabel>& target_label,
                            const LabelSpace& space, const TemplateConfig& cfg);

}  // namespace qgf
