#include "segvae/model/networks.hpp"

#include <stdexcept>

#include "segvae/model/gaussian.hpp"

namespace segvae::model {

namespace {

constexpr double kSlope = 0.2;

nn::Var flatten(const nn::Var& x) {
    const int n = x->value.dim(0);
    return nn::reshape(x, {n, static_cast<int>(x->value.numel() / n)});
}

}  // namespace

RecurrentVars blend_states(const std::vector<double>& mask, const RecurrentVars& next, const RecurrentVars& previous) {
    RecurrentVars out;
    for (std::size_t l = 0; l < next.hidden.size(); ++l) {
        out.hidden.push_back(nn::blend_rows(mask, next.hidden[l], previous.hidden[l]));
        out.cell.push_back(nn::blend_rows(mask, next.cell[l], previous.cell[l]));
    }
    return out;
}

SegVae::SegVae(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const int classes = config_.catalog.size();
    const int ds = config_.downsamples;
    const int bh = config_.bottleneck_height(), bw = config_.bottleneck_width();
    const bool sn = config_.spectral_norm;

    // Context encoder.
    label_hidden_ = nn::Linear(store_, "context/label_mlp/0", classes, config_.embed_hidden, rng);
    label_out_ = nn::Linear(store_, "context/label_mlp/1", config_.embed_hidden, config_.embed_dim, rng);
    target_hidden_ = nn::Linear(store_, "context/target_mlp/0", classes, config_.embed_hidden, rng);
    target_out_ = nn::Linear(store_, "context/target_mlp/1", config_.embed_hidden, config_.embed_dim, rng);
    embed_project_ =
        nn::Linear(store_, "context/embed_project", 2 * config_.embed_dim, config_.embed_channels * bh * bw, rng);
    int channels = classes;
    for (int i = 0; i < ds; ++i) {
        const int out = config_.context_widths[i];
        canvas_convs_.emplace_back(store_, "context/canvas_conv" + std::to_string(i), channels, out, 3, 2, 1, sn, rng);
        channels = out;
    }
    channels += config_.embed_channels;
    for (std::size_t i = ds; i < config_.context_widths.size(); ++i) {
        const int out = config_.context_widths[i];
        fuse_convs_.emplace_back(store_, "context/fuse_conv" + std::to_string(i - ds), channels, out, 3, 1, 1, sn, rng);
        channels = out;
    }
    const int context_channels = channels;
    const int context_flat = context_channels * bh * bw;

    // Posterior encoder.
    channels = 1;
    for (std::size_t i = 0; i < config_.mask_widths.size(); ++i) {
        const int out = config_.mask_widths[i];
        const int stride = static_cast<int>(i) < ds ? 2 : 1;
        mask_convs_.emplace_back(store_, "posterior/mask_conv" + std::to_string(i), channels, out, 3, stride, 1, sn,
                                 rng);
        channels = out;
    }
    build_recurrence(posterior_, "posterior", (channels + context_channels) * bh * bw, rng);

    // Learned prior.
    if (config_.has_learned_prior()) {
        build_recurrence(prior_, "prior", context_flat, rng);
    }

    // Decoder.
    latent_project_ = nn::Linear(store_, "decoder/latent_project", config_.latent_dim,
                                 config_.latent_channels * bh * bw, rng);
    channels = config_.latent_channels + context_channels;
    const int layers = static_cast<int>(config_.decoder_widths.size()) + 1;
    for (int i = 0; i < layers; ++i) {
        const int out = i + 1 < layers ? config_.decoder_widths[i] : 1;
        const bool up = i < ds;
        decoder_.emplace_back(store_, "decoder/deconv" + std::to_string(i), channels, out, up ? 4 : 3, up ? 2 : 1, 1,
                              sn, rng);
        channels = out;
    }
}

void SegVae::build_recurrence(Recurrence& r, const std::string& path, int input, Rng& rng) {
    const int hidden = config_.hidden_dim;
    r.project = nn::Linear(store_, path + "/project", input, hidden, rng);
    if (config_.uses_recurrence()) {
        for (int l = 0; l < config_.lstm_layers; ++l) {
            r.lstm.emplace_back(store_, path + "/lstm" + std::to_string(l), hidden, hidden, rng);
        }
    } else {
        r.feedforward = nn::Linear(store_, path + "/feedforward", hidden, hidden, rng);
    }
    r.mean_hidden = nn::Linear(store_, path + "/mean_mlp/0", hidden, hidden, rng);
    r.mean_out = nn::Linear(store_, path + "/mean_mlp/1", hidden, config_.latent_dim, rng);
    r.logvar_hidden = nn::Linear(store_, path + "/logvar_mlp/0", hidden, hidden, rng);
    r.logvar_out = nn::Linear(store_, path + "/logvar_mlp/1", hidden, config_.latent_dim, rng);
}

nn::Var SegVae::context(const std::vector<core::LabelSet>& labels, int target, const nn::Tensor& canvas) const {
    const int classes = config_.catalog.size();
    const int n = static_cast<int>(labels.size());
    if (target < 0 || target >= classes) {
        throw std::invalid_argument("target class " + std::to_string(target) + " out of range [0, " +
                                    std::to_string(classes) + ")");
    }
    const nn::Shape canvas_shape{n, classes, config_.height, config_.width};
    if (canvas.shape != canvas_shape) {
        throw std::invalid_argument("context: canvas shape " + nn::shape_string(canvas.shape) + ", expected " +
                                    nn::shape_string(canvas_shape));
    }
    const bool sees_labels = config_.variant != Variant::cvae_sep;
    const bool sees_canvas = config_.variant != Variant::cvae_sep && config_.variant != Variant::cvae_global;

    nn::Tensor label_bits({n, classes});
    nn::Tensor target_hot({n, classes});
    for (int b = 0; b < n; ++b) {
        if (labels[b].size() != classes) {
            throw std::invalid_argument("context: label-set length does not match catalog");
        }
        for (int k = 0; k < classes; ++k) {
            label_bits[b * classes + k] = sees_labels && labels[b].contains(k) ? 1.0 : 0.0;
        }
        target_hot[b * classes + target] = 1.0;
    }
    const nn::Var label_embed =
        label_out_(nn::leaky_relu(label_hidden_(nn::constant(std::move(label_bits))), kSlope));
    const nn::Var target_embed =
        target_out_(nn::leaky_relu(target_hidden_(nn::constant(std::move(target_hot))), kSlope));
    const nn::Var planes = nn::reshape(
        nn::leaky_relu(embed_project_(nn::concat_cols({label_embed, target_embed})), kSlope),
        {n, config_.embed_channels, config_.bottleneck_height(), config_.bottleneck_width()});

    nn::Var x = nn::constant(sees_canvas ? canvas : nn::Tensor(canvas_shape));
    for (const auto& conv : canvas_convs_) {
        x = conv(x);
        if (config_.instance_norm) x = nn::instance_norm(x);
        x = nn::leaky_relu(x, kSlope);
    }
    x = nn::concat_channels({x, planes});
    for (std::size_t i = 0; i < fuse_convs_.size(); ++i) {
        x = fuse_convs_[i](x);
        if (config_.instance_norm && i + 1 < fuse_convs_.size()) x = nn::instance_norm(x);
        x = nn::leaky_relu(x, kSlope);
    }
    return x;
}

RecurrentVars SegVae::fresh_state(int batch) const {
    RecurrentVars s;
    if (!config_.uses_recurrence()) return s;
    for (int l = 0; l < config_.lstm_layers; ++l) {
        s.hidden.push_back(nn::constant(nn::Tensor::zeros({batch, config_.hidden_dim})));
        s.cell.push_back(nn::constant(nn::Tensor::zeros({batch, config_.hidden_dim})));
    }
    return s;
}

RecurrentVars SegVae::fresh_prior_state(int batch) const {
    return config_.has_learned_prior() ? fresh_state(batch) : RecurrentVars{};
}

RecurrentVars SegVae::fresh_posterior_state(int batch) const { return fresh_state(batch); }

StepOutput SegVae::run_recurrence(const Recurrence& r, const nn::Var& features, const RecurrentVars& state) const {
    nn::Var h = nn::leaky_relu(r.project(features), kSlope);
    StepOutput out;
    if (!r.lstm.empty()) {
        if (state.hidden.size() != r.lstm.size() || state.cell.size() != r.lstm.size()) {
            throw std::invalid_argument("recurrent state has " + std::to_string(state.hidden.size()) +
                                        " layers, expected " + std::to_string(r.lstm.size()));
        }
        for (std::size_t l = 0; l < r.lstm.size(); ++l) {
            const auto& hs = state.hidden[l]->value.shape;
            if (hs != h->value.shape || state.cell[l]->value.shape != h->value.shape) {
                throw std::invalid_argument("recurrent state shape " + nn::shape_string(hs) + ", expected " +
                                            nn::shape_string(h->value.shape));
            }
            auto [h_next, c_next] = r.lstm[l](h, state.hidden[l], state.cell[l]);
            out.state.hidden.push_back(h_next);
            out.state.cell.push_back(c_next);
            h = h_next;
        }
    } else {
        h = nn::tanh(r.feedforward(h));
        out.state = state;
    }
    out.gaussian.mean = r.mean_out(nn::leaky_relu(r.mean_hidden(h), kSlope));
    out.gaussian.log_var =
        nn::clamp(r.logvar_out(nn::leaky_relu(r.logvar_hidden(h), kSlope)), kLogVarMin, kLogVarMax);
    return out;
}

StepOutput SegVae::prior(const nn::Var& context, const RecurrentVars& state) const {
    if (!config_.has_learned_prior()) {
        const int n = context->value.dim(0);
        return {{nn::constant(nn::Tensor::zeros({n, config_.latent_dim})),
                 nn::constant(nn::Tensor::zeros({n, config_.latent_dim}))},
                state};
    }
    return run_recurrence(prior_, flatten(context), state);
}

StepOutput SegVae::posterior(const nn::Var& context, const nn::Var& gt_mask, const RecurrentVars& state) const {
    const nn::Shape expected{context->value.dim(0), 1, config_.height, config_.width};
    if (gt_mask->value.shape != expected) {
        throw std::invalid_argument("posterior: mask shape " + nn::shape_string(gt_mask->value.shape) +
                                    ", expected " + nn::shape_string(expected));
    }
    nn::Var x = gt_mask;
    for (const auto& conv : mask_convs_) {
        x = conv(x);
        if (config_.instance_norm) x = nn::instance_norm(x);
        x = nn::leaky_relu(x, kSlope);
    }
    return run_recurrence(posterior_, flatten(nn::concat_channels({x, context})), state);
}

nn::Var SegVae::decode(const nn::Var& z, const nn::Var& context) const {
    const int n = context->value.dim(0);
    if (z->value.rank() != 2 || z->value.dim(0) != n || z->value.dim(1) != config_.latent_dim) {
        throw std::invalid_argument("decode: latent shape " + nn::shape_string(z->value.shape) + ", expected [" +
                                    std::to_string(n) + ", " + std::to_string(config_.latent_dim) + "]");
    }
    const nn::Var projected = nn::reshape(nn::leaky_relu(latent_project_(z), kSlope),
                                          {n, config_.latent_channels, config_.bottleneck_height(),
                                           config_.bottleneck_width()});
    nn::Var x = nn::concat_channels({projected, context});
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        x = decoder_[i](x);
        if (i + 1 < decoder_.size()) {
            if (config_.instance_norm) x = nn::instance_norm(x);
            x = nn::leaky_relu(x, kSlope);
        }
    }
    return nn::sigmoid(x);
}

void SegVae::refresh_spectral() {
    for (auto& c : canvas_convs_) c.refresh_spectral();
    for (auto& c : fuse_convs_) c.refresh_spectral();
    for (auto& c : mask_convs_) c.refresh_spectral();
    for (auto& c : decoder_) c.refresh_spectral();
}

std::vector<std::pair<std::string, nn::Var>> SegVae::trainable_parameters() const {
    return {store_.params().begin(), store_.params().end()};
}

}  // namespace segvae::model
