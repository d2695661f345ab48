#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "segvae/core/types.hpp"
#include "segvae/model/networks.hpp"

namespace segvae::editing {

enum class EditKind { remove, add, new_style };

std::string to_string(EditKind kind);
EditKind parse_edit_kind(const std::string& name);  // accepts "restyle" for new_style

struct EditRequest {
    EditKind kind = EditKind::remove;
    int target = 0;
    core::SemanticMap map;
    core::LabelSet labels;
    std::uint64_t seed = 0;
    std::optional<core::GenerationOrder> order;  // defaults to the model's order
};

struct EditResult {
    core::SemanticMap map;
    core::LabelSet labels;
    int regenerated = 0;  // classes produced by the model
};

// Precondition failures (target present/absent, malformed input).
class EditConflict : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Zeroes the target; classes after it in the order are regenerated on top of
// the preserved prefix.
EditResult remove_class(const model::StepNetworks& net, const EditRequest& req);
// One generation step for the target with every existing channel on the canvas.
EditResult add_class(const model::StepNetworks& net, const EditRequest& req);
// Regenerates the target with a fresh latent on a canvas of all other channels.
EditResult restyle_class(const model::StepNetworks& net, const EditRequest& req);

EditResult apply_edit(const model::StepNetworks& net, const EditRequest& req);

}  // namespace segvae::editing
