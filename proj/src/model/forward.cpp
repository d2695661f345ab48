#include "segvae/model/forward.hpp"

#include "json.hpp"

#include <algorithm>
#include <stdexcept>

namespace segvae::model {

namespace {

using nlohmann::json;

void check_example(const ModelConfig& config, const TrainingExample& ex) {
    if (!ex.map || !ex.labels) {
        throw std::invalid_argument("training example is missing its map or label-set");
    }
    const auto& m = *ex.map;
    if (m.classes() != config.catalog.size() || m.height() != config.height || m.width() != config.width) {
        throw std::invalid_argument("training example shape does not match the model configuration");
    }
    if (ex.labels->size() != m.classes()) {
        throw std::invalid_argument("label-set length does not match the map channel count");
    }
    for (int k = 0; k < m.classes(); ++k) {
        if (ex.labels->contains(k) == m.channel_empty(k)) {
            throw std::invalid_argument("label-set and map disagree on class " + config.catalog.name(k) +
                                        (ex.labels->contains(k) ? " (labelled but empty)" : " (unlabelled but drawn)"));
        }
    }
}

nn::Tensor channel_batch(const std::vector<const core::SemanticMap*>& maps, int k) {
    const int n = static_cast<int>(maps.size());
    const int h = maps[0]->height(), w = maps[0]->width();
    nn::Tensor out({n, 1, h, w});
    for (int b = 0; b < n; ++b) {
        const auto ch = maps[b]->channel(k);
        std::copy(ch.begin(), ch.end(), out.data.begin() + static_cast<std::size_t>(b) * h * w);
    }
    return out;
}

void write_channel(nn::Tensor& canvas, int classes, int k, const nn::Tensor& masks) {
    const int n = canvas.dim(0);
    const std::size_t plane = static_cast<std::size_t>(canvas.dim(2)) * canvas.dim(3);
    for (int b = 0; b < n; ++b) {
        std::copy_n(masks.data.begin() + b * plane, plane,
                    canvas.data.begin() + (static_cast<std::size_t>(b) * classes + k) * plane);
    }
}

nn::Var add_terms(const std::vector<nn::Var>& terms) {
    nn::Var total = nn::constant(nn::Tensor({1}, {0.0}));
    for (const auto& t : terms) total = nn::add(total, t);
    return total;
}

nn::Tensor canvas_tensor(const core::Canvas& canvas) {
    const auto& m = canvas.map();
    nn::Tensor t({1, m.classes(), m.height(), m.width()});
    std::copy(m.values().begin(), m.values().end(), t.data.begin());
    return t;
}

RecurrentState to_state(const RecurrentVars& vars) {
    RecurrentState s;
    for (const auto& h : vars.hidden) s.hidden.emplace_back(h->value.data.begin(), h->value.data.end());
    for (const auto& c : vars.cell) s.cell.emplace_back(c->value.data.begin(), c->value.data.end());
    return s;
}

RecurrentVars to_vars(const RecurrentState& state, const RecurrentVars& like) {
    if (state.hidden.size() != like.hidden.size() || state.cell.size() != like.cell.size()) {
        throw std::invalid_argument("recurrent state has " + std::to_string(state.hidden.size()) +
                                    " layers, expected " + std::to_string(like.hidden.size()));
    }
    RecurrentVars out;
    for (std::size_t l = 0; l < state.hidden.size(); ++l) {
        const auto& shape = like.hidden[l]->value.shape;
        if (state.hidden[l].size() != like.hidden[l]->value.numel() ||
            state.cell[l].size() != like.cell[l]->value.numel()) {
            throw std::invalid_argument("recurrent state width mismatch at layer " + std::to_string(l));
        }
        out.hidden.push_back(nn::constant(nn::Tensor(shape, state.hidden[l])));
        out.cell.push_back(nn::constant(nn::Tensor(shape, state.cell[l])));
    }
    return out;
}

DiagonalGaussian to_gaussian(const GaussianVars& g) {
    return {g.mean->value.data, g.log_var->value.data};
}

nn::Var context_var(const ContextCode& context) {
    nn::Shape shape{1};
    shape.insert(shape.end(), context.features.shape.begin(), context.features.shape.end());
    return nn::constant(nn::Tensor(shape, context.features.data));
}

void check_context(const StepNetworks& net, const ContextCode& context) {
    if (context.features.shape != net.config().context_shape()) {
        throw std::invalid_argument("context shape " + nn::shape_string(context.features.shape) + ", expected " +
                                    nn::shape_string(net.config().context_shape()));
    }
}

void run_group(const StepNetworks& net, std::span<const TrainingExample> batch, const std::vector<int>& members,
               const core::GenerationOrder& order, const LossWeights& weights, double batch_size, Rng& rng,
               std::vector<nn::Var>& terms, std::vector<LossBreakdown>& results) {
    const auto& config = net.config();
    const int classes = config.catalog.size();
    const int n = static_cast<int>(members.size());
    std::vector<const core::SemanticMap*> maps;
    std::vector<core::LabelSet> labels;
    for (int i : members) {
        maps.push_back(batch[i].map);
        labels.push_back(*batch[i].labels);
    }

    nn::Tensor canvas({n, classes, config.height, config.width});
    RecurrentVars posterior_state = net.fresh_posterior_state(n);
    RecurrentVars prior_state = net.fresh_prior_state(n);

    for (int k : order.sequence()) {
        std::vector<double> mask(n);
        bool any = false;
        for (int b = 0; b < n; ++b) {
            mask[b] = labels[b].contains(k) ? 1.0 : 0.0;
            any = any || mask[b] > 0.0;
        }
        if (!any) continue;

        const nn::Tensor gt = channel_batch(maps, k);
        const nn::Var context = net.context(labels, k, canvas);
        const StepOutput posterior = net.posterior(context, nn::constant(gt), posterior_state);
        const StepOutput prior = net.prior(context, prior_state);
        posterior_state = blend_states(mask, posterior.state, posterior_state);
        prior_state = blend_states(mask, prior.state, prior_state);

        nn::Tensor eps({n, config.latent_dim});
        for (double& e : eps.data) e = rng.normal();
        const auto& q = posterior.gaussian;
        const nn::Var z = nn::add(q.mean, nn::mul(nn::exp(nn::scale(q.log_var, 0.5)), nn::constant(std::move(eps))));
        const nn::Var soft = net.decode(z, context);

        const nn::Var recon = nn::l1_per_example(soft, gt);
        const nn::Var kl = nn::kl_diag_gaussian(q.mean, q.log_var, prior.gaussian.mean, prior.gaussian.log_var);
        std::vector<double> w_recon(n), w_kl(n);
        for (int b = 0; b < n; ++b) {
            w_recon[b] = weights.recon * mask[b] / batch_size;
            w_kl[b] = weights.kl * mask[b] / batch_size;
            if (mask[b] > 0.0) {
                results[members[b]].per_step.push_back({k, recon->value.data[b], kl->value.data[b]});
            }
        }
        terms.push_back(nn::weighted_sum(recon, w_recon));
        terms.push_back(nn::weighted_sum(kl, w_kl));
        write_channel(canvas, classes, k, gt);
    }
}

}  // namespace

ForwardResult training_forward(const StepNetworks& net, std::span<const TrainingExample> batch,
                               const LossWeights& weights, Rng& rng) {
    const auto& config = net.config();
    for (const auto& ex : batch) check_example(config, ex);

    // Group examples by generation order, keeping first-appearance order.
    std::vector<std::pair<const core::GenerationOrder*, std::vector<int>>> groups;
    for (int i = 0; i < static_cast<int>(batch.size()); ++i) {
        const core::GenerationOrder* order = batch[i].order ? batch[i].order : &config.order;
        if (order->size() != config.catalog.size()) {
            throw std::invalid_argument("generation order does not cover the catalog");
        }
        auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return *g.first == *order; });
        if (it == groups.end()) {
            groups.push_back({order, {i}});
        } else {
            it->second.push_back(i);
        }
    }

    ForwardResult out;
    out.examples.resize(batch.size());
    std::vector<nn::Var> terms;
    const double batch_size = std::max<double>(1.0, static_cast<double>(batch.size()));
    for (const auto& [order, members] : groups) {
        run_group(net, batch, members, *order, weights, batch_size, rng, terms, out.examples);
    }
    for (auto& ex : out.examples) {
        for (const auto& s : ex.per_step) {
            ex.recon += s.recon;
            ex.kl += s.kl;
        }
        ex.total = weights.recon * ex.recon + weights.kl * ex.kl;
    }
    out.total = add_terms(terms);
    return out;
}

ForwardResult training_forward(const StepNetworks& net, const core::SemanticMap& map, const core::LabelSet& labels,
                               const LossWeights& weights, Rng& rng) {
    const TrainingExample ex{&map, &labels, nullptr};
    return training_forward(net, std::span<const TrainingExample>(&ex, 1), weights, rng);
}

// ------------------------------------------------------------- value-level API

RecurrentState initial_prior_state(const StepNetworks& net) { return to_state(net.fresh_prior_state(1)); }
RecurrentState initial_posterior_state(const StepNetworks& net) { return to_state(net.fresh_posterior_state(1)); }

ContextCode encode_context(const StepNetworks& net, const core::LabelSet& labels, int target,
                           const core::Canvas& canvas) {
    const auto& config = net.config();
    if (target < 0 || target >= config.catalog.size()) {
        throw std::invalid_argument("target class " + std::to_string(target) + " out of range");
    }
    const bool ignores_labels = config.variant == Variant::cvae_sep || config.variant == Variant::cvae_global;
    if (!ignores_labels && !labels.contains(target)) {
        throw std::invalid_argument("target class " + config.catalog.name(target) + " is not in the label-set");
    }
    nn::NoGradGuard guard;
    const nn::Var ctx = net.context({labels}, target, canvas_tensor(canvas));
    ContextCode out;
    out.features = nn::Tensor(config.context_shape(), ctx->value.data);
    return out;
}

std::pair<DiagonalGaussian, RecurrentState> prior_step(const StepNetworks& net, const ContextCode& context,
                                                       const RecurrentState& state) {
    check_context(net, context);
    nn::NoGradGuard guard;
    const StepOutput out = net.prior(context_var(context), to_vars(state, net.fresh_prior_state(1)));
    return {to_gaussian(out.gaussian), to_state(out.state)};
}

std::pair<DiagonalGaussian, RecurrentState> posterior_step(const StepNetworks& net, const ContextCode& context,
                                                           std::span<const float> gt_mask,
                                                           const RecurrentState& state) {
    check_context(net, context);
    const auto& config = net.config();
    if (gt_mask.size() != static_cast<std::size_t>(config.height) * config.width) {
        throw std::invalid_argument("posterior_step: mask has " + std::to_string(gt_mask.size()) +
                                    " pixels, expected " + std::to_string(config.height * config.width));
    }
    nn::NoGradGuard guard;
    nn::Tensor mask({1, 1, config.height, config.width});
    std::copy(gt_mask.begin(), gt_mask.end(), mask.data.begin());
    const StepOutput out =
        net.posterior(context_var(context), nn::constant(std::move(mask)), to_vars(state, net.fresh_posterior_state(1)));
    return {to_gaussian(out.gaussian), to_state(out.state)};
}

std::vector<double> decode_mask(const StepNetworks& net, std::span<const double> z, const ContextCode& context) {
    check_context(net, context);
    const int dim = net.config().latent_dim;
    if (static_cast<int>(z.size()) != dim) {
        throw std::invalid_argument("decode_mask: latent has " + std::to_string(z.size()) + " entries, expected " +
                                    std::to_string(dim));
    }
    nn::NoGradGuard guard;
    const nn::Var soft =
        net.decode(nn::constant(nn::Tensor({1, dim}, std::vector<double>(z.begin(), z.end()))), context_var(context));
    return soft->value.data;
}

// ------------------------------------------------------------------ inference

std::vector<float> generation_step(const StepNetworks& net, const core::LabelSet& labels, int target,
                                   const core::Canvas& canvas, RecurrentState& prior_state,
                                   std::uint64_t noise_base, std::vector<double>* soft_out) {
    const ContextCode context = encode_context(net, labels, target, canvas);
    auto [gaussian, next_state] = prior_step(net, context, prior_state);
    prior_state = std::move(next_state);
    Rng noise = Rng::derive(noise_base, static_cast<std::uint64_t>(target));
    const std::vector<double> z = sample_gaussian(gaussian, noise);
    const std::vector<double> soft = decode_mask(net, z, context);
    std::vector<float> mask(soft.size());
    std::transform(soft.begin(), soft.end(), mask.begin(),
                   [](double v) { return v >= kBinarizeThreshold ? 1.0f : 0.0f; });
    if (soft_out) *soft_out = soft;
    return mask;
}

RecurrentState replay_prior(const StepNetworks& net, const core::LabelSet& labels, const std::vector<int>& classes,
                            const core::SemanticMap& source) {
    RecurrentState state = initial_prior_state(net);
    core::Canvas canvas = core::Canvas::blank(source.classes(), source.height(), source.width());
    for (int k : classes) {
        const ContextCode context = encode_context(net, labels, k, canvas);
        state = prior_step(net, context, state).second;
        canvas.fill_from(source, k);
    }
    return state;
}

GenerationRun::GenerationRun(const StepNetworks& net, core::LabelSet labels, Rng& rng,
                             std::optional<core::GenerationOrder> order)
    : net_(&net), labels_(std::move(labels)), order_(order ? *order : net.config().order) {
    const auto& config = net.config();
    if (labels_.size() != config.catalog.size()) {
        throw std::invalid_argument("label-set length does not match the model catalog");
    }
    if (order_.size() != config.catalog.size()) {
        throw std::invalid_argument("generation order does not cover the catalog");
    }
    snapshot_.canvas = core::Canvas::blank(config.catalog.size(), config.height, config.width);
    snapshot_.prior_state = initial_prior_state(net);
    snapshot_.noise_base = rng.next_u64();
    snapshot_.cursor = 0;
    skip_absent();
}

GenerationRun::GenerationRun(const StepNetworks& net, core::LabelSet labels, core::GenerationOrder order,
                             Snapshot snapshot)
    : net_(&net), labels_(std::move(labels)), order_(std::move(order)), snapshot_(std::move(snapshot)) {
    skip_absent();
}

bool GenerationRun::done() const { return snapshot_.cursor >= order_.size(); }

void GenerationRun::skip_absent() {
    while (!done() && !labels_.contains(order_.sequence()[snapshot_.cursor])) ++snapshot_.cursor;
}

void GenerationRun::step() {
    if (done()) return;
    const int k = order_.sequence()[snapshot_.cursor];
    const std::vector<float> mask =
        generation_step(*net_, labels_, k, snapshot_.canvas, snapshot_.prior_state, snapshot_.noise_base);
    snapshot_.canvas.fill(k, mask);
    ++evaluations_;
    ++snapshot_.cursor;
    skip_absent();
}

void GenerationRun::run() {
    while (!done()) step();
}

std::string serialize_snapshot(const GenerationRun::Snapshot& s) {
    const auto& m = s.canvas.map();
    json j;
    j["cursor"] = s.cursor;
    j["noise_base"] = s.noise_base;
    j["shape"] = {m.classes(), m.height(), m.width()};
    j["filled"] = s.canvas.filled();
    std::vector<std::uint8_t> bits(m.values().size());
    std::transform(m.values().begin(), m.values().end(), bits.begin(), [](float v) { return v != 0.0f ? 1 : 0; });
    j["canvas"] = bits;
    j["hidden"] = s.prior_state.hidden;
    j["cell"] = s.prior_state.cell;
    return j.dump();
}

GenerationRun::Snapshot deserialize_snapshot(const std::string& text) {
    const json j = json::parse(text);
    GenerationRun::Snapshot s;
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw std::invalid_argument("snapshot: malformed shape");
    s.canvas = core::Canvas::blank(shape[0], shape[1], shape[2]);
    const auto bits = j.at("canvas").get<std::vector<std::uint8_t>>();
    core::SemanticMap source(shape[0], shape[1], shape[2]);
    if (bits.size() != source.values().size()) throw std::invalid_argument("snapshot: canvas size mismatch");
    std::transform(bits.begin(), bits.end(), source.values().begin(), [](std::uint8_t b) { return b ? 1.0f : 0.0f; });
    for (int k : j.at("filled").get<std::vector<int>>()) s.canvas.fill_from(source, k);
    s.prior_state.hidden = j.at("hidden").get<std::vector<std::vector<double>>>();
    s.prior_state.cell = j.at("cell").get<std::vector<std::vector<double>>>();
    s.noise_base = j.at("noise_base").get<std::uint64_t>();
    s.cursor = j.at("cursor").get<int>();
    return s;
}

core::SemanticMap generate(const StepNetworks& net, const core::LabelSet& labels, Rng& rng,
                           std::optional<core::GenerationOrder> order_override) {
    GenerationRun run(net, labels, rng, std::move(order_override));
    run.run();
    return run.result();
}

}  // namespace segvae::model
