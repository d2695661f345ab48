#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segvae/core/types.hpp"

namespace segvae::core {

// Unknown names are rejected with the offending name; duplicates are allowed.
LabelSet make_label_set(const std::vector<std::string>& classes, const ClassCatalog& catalog);
std::vector<std::string> label_set_names(const LabelSet& labels, const ClassCatalog& catalog);

// Pixel value = 1 + the last class in `order` whose channel is set there.
IndexMap compose_index_map(const SemanticMap& map, const GenerationOrder& order);
// Inverse view: one binary channel per class, background sets none.
SemanticMap explode_index_map(const IndexMap& index, int classes);

GenerationOrder parse_order(const std::string& comma_list, const ClassCatalog& catalog);

struct ValidationIssue {
    std::string code;     // "shape" or "non_binary"
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
};

struct Resolution {
    int height = 0, width = 0;
    bool operator==(const Resolution&) const = default;
};

// Never throws. Non-binary entries are reported individually up to a cap,
// then summarized.
ValidationReport validate_semantic_map(const SemanticMap& map, const ClassCatalog& catalog,
                                       std::optional<Resolution> resolution = std::nullopt);

}  // namespace segvae::core
