#include "segvae/editing/edit.hpp"

#include <algorithm>
#include <functional>

#include "segvae/core/ops.hpp"
#include "segvae/model/forward.hpp"

namespace segvae::editing {

namespace {

struct Prepared {
    const core::ClassCatalog* catalog;
    core::GenerationOrder order;
    std::uint64_t noise_base;
};

Prepared prepare(const model::StepNetworks& net, const EditRequest& req, bool target_present) {
    const auto& config = net.config();
    const auto report = core::validate_semantic_map(req.map, config.catalog, core::Resolution{config.height, config.width});
    if (!report.ok()) throw EditConflict("edit input is not a valid map: " + report.issues.front().message);
    if (req.labels.size() != config.catalog.size()) throw EditConflict("label-set length does not match the catalog");
    if (!(req.labels == req.map.extract_label_set())) {
        throw EditConflict("label-set does not match the map's non-empty channels");
    }
    if (req.target < 0 || req.target >= config.catalog.size()) {
        throw EditConflict("target class " + std::to_string(req.target) + " out of range");
    }
    const std::string& name = config.catalog.name(req.target);
    if (target_present && !req.labels.contains(req.target)) {
        throw EditConflict(to_string(req.kind) + ": class " + name + " is not present in the map");
    }
    if (!target_present && req.labels.contains(req.target)) {
        throw EditConflict("add: class " + name + " is already present in the map");
    }
    core::GenerationOrder order = req.order ? *req.order : config.order;
    if (order.size() != config.catalog.size()) throw EditConflict("generation order does not cover the catalog");
    // Same draw as the first call a generation run makes on Rng(seed).
    Rng rng(req.seed);
    return {&config.catalog, std::move(order), rng.next_u64()};
}

// A model step that keeps the class present: when thresholding leaves nothing,
// the most probable pixel is kept.
std::vector<float> step_nonempty(const model::StepNetworks& net, const core::LabelSet& labels, int k,
                                 const core::Canvas& canvas, model::RecurrentState& state, std::uint64_t noise_base) {
    std::vector<double> soft;
    std::vector<float> mask = model::generation_step(net, labels, k, canvas, state, noise_base, &soft);
    if (std::none_of(mask.begin(), mask.end(), [](float v) { return v != 0.0f; })) {
        mask[std::max_element(soft.begin(), soft.end()) - soft.begin()] = 1.0f;
    }
    return mask;
}

std::vector<int> present_in_order(const core::GenerationOrder& order, const core::LabelSet& labels,
                                  const std::function<bool(int)>& keep) {
    std::vector<int> out;
    for (int k : order.sequence()) {
        if (labels.contains(k) && keep(k)) out.push_back(k);
    }
    return out;
}

}  // namespace

std::string to_string(EditKind kind) {
    switch (kind) {
        case EditKind::remove: return "remove";
        case EditKind::add: return "add";
        case EditKind::new_style: return "new_style";
    }
    return "remove";
}

EditKind parse_edit_kind(const std::string& name) {
    if (name == "remove") return EditKind::remove;
    if (name == "add") return EditKind::add;
    if (name == "new_style" || name == "restyle") return EditKind::new_style;
    throw std::invalid_argument("unknown edit kind: " + name + " (remove, add, new_style)");
}

EditResult remove_class(const model::StepNetworks& net, const EditRequest& req) {
    const Prepared p = prepare(net, req, true);
    core::LabelSet labels = req.labels;
    labels.set(req.target, false);
    const int t = req.target;
    const auto prefix = present_in_order(p.order, labels, [&](int k) { return p.order.before(k, t); });
    const auto suffix = present_in_order(p.order, labels, [&](int k) { return p.order.before(t, k); });

    const auto& cfg = net.config();
    core::Canvas canvas = core::Canvas::blank(cfg.catalog.size(), cfg.height, cfg.width);
    model::RecurrentState state = model::replay_prior(net, labels, prefix, req.map);
    for (int k : prefix) canvas.fill_from(req.map, k);
    for (int k : suffix) {
        const auto mask = step_nonempty(net, labels, k, canvas, state, p.noise_base);
        canvas.fill(k, mask);
    }
    return {canvas.map(), labels, static_cast<int>(suffix.size())};
}

EditResult add_class(const model::StepNetworks& net, const EditRequest& req) {
    const Prepared p = prepare(net, req, false);
    core::LabelSet labels = req.labels;
    labels.set(req.target);
    const int t = req.target;
    const auto before = present_in_order(p.order, req.labels, [&](int k) { return p.order.before(k, t); });

    const auto& cfg = net.config();
    core::Canvas canvas = core::Canvas::blank(cfg.catalog.size(), cfg.height, cfg.width);
    for (int k : req.labels.members()) canvas.fill_from(req.map, k);
    model::RecurrentState state = model::replay_prior(net, labels, before, req.map);
    const auto mask = step_nonempty(net, labels, t, canvas, state, p.noise_base);
    core::SemanticMap out = req.map;
    std::copy(mask.begin(), mask.end(), out.channel(t).begin());
    return {std::move(out), labels, 1};
}

EditResult restyle_class(const model::StepNetworks& net, const EditRequest& req) {
    const Prepared p = prepare(net, req, true);
    const int t = req.target;
    const auto before = present_in_order(p.order, req.labels, [&](int k) { return p.order.before(k, t); });

    const auto& cfg = net.config();
    core::Canvas canvas = core::Canvas::blank(cfg.catalog.size(), cfg.height, cfg.width);
    for (int k : req.labels.members()) {
        if (k != t) canvas.fill_from(req.map, k);
    }
    model::RecurrentState state = model::replay_prior(net, req.labels, before, req.map);
    const auto mask = step_nonempty(net, req.labels, t, canvas, state, p.noise_base);
    core::SemanticMap out = req.map;
    std::copy(mask.begin(), mask.end(), out.channel(t).begin());
    return {std::move(out), req.labels, 1};
}

EditResult apply_edit(const model::StepNetworks& net, const EditRequest& req) {
    switch (req.kind) {
        case EditKind::remove: return remove_class(net, req);
        case EditKind::add: return add_class(net, req);
        case EditKind::new_style: return restyle_class(net, req);
    }
    throw std::invalid_argument("unknown edit kind");
}

}  // namespace segvae::editing
