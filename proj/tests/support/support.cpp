#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "segvae/model/forward.hpp"
#include "segvae/nn/autograd.hpp"
#include "segvae/training/train.hpp"

namespace segvae::testing {

model::ModelConfig toy_config(model::Variant variant) {
    model::ModelConfig c;
    c.height = c.width = 32;
    c.latent_dim = 16;
    c.downsamples = 3;
    c.context_widths = {8, 16, 16, 16};
    c.mask_widths = {8, 16, 16};
    c.decoder_widths = {16, 8, 8};
    c.hidden_dim = 32;
    c.variant = variant;
    return c;
}

data::Dataset synth_set(int n, std::uint64_t seed, int size) {
    data::SynthSpec spec;
    spec.n_examples = n;
    spec.seed = seed;
    spec.resolution = {size, size};
    return data::synthesize(spec);
}

core::SemanticMap random_map(int classes, int height, int width, Rng& rng, double density) {
    core::SemanticMap map(classes, height, width);
    for (auto& v : map.values()) v = rng.bernoulli(density) ? 1.0f : 0.0f;
    return map;
}

std::unique_ptr<model::SegVae> train_toy(std::int64_t steps, std::uint64_t seed, model::Variant variant) {
    const data::Dataset ds = synth_set(64, seed + 100, 32);
    training::TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.batch_size = 8;
    tc.max_steps = steps;
    tc.seed = seed;
    tc.eval_every = 0;
    return training::train(ds, toy_config(variant), tc).model;
}

GradCheckResult gradient_check(model::SegVae& net, const core::SemanticMap& map, const core::LabelSet& labels,
                               std::uint64_t noise_seed, std::size_t per_param, double step, double floor) {
    const model::LossWeights weights;
    auto loss = [&] {
        nn::NoGradGuard guard;
        Rng rng(noise_seed);
        return model::training_forward(net, map, labels, weights, rng).total->value[0];
    };
    net.store().zero_grad();
    {
        Rng rng(noise_seed);
        nn::backward(model::training_forward(net, map, labels, weights, rng).total);
    }
    GradCheckResult result;
    for (const auto& [name, var] : net.store().params()) {
        const nn::Tensor analytic = var->grad.empty() ? nn::Tensor(var->value.shape, 0.0) : var->grad;
        const std::size_t n = var->value.numel();
        const std::size_t count = per_param == 0 ? n : std::min(n, per_param);
        double worst = 0.0;
        for (std::size_t j = 0; j < count; ++j) {
            // Spread probes over the tensor when only a few are taken.
            const std::size_t i = count == n ? j : (j * 7919) % n;
            const double saved = var->value[i];
            var->value[i] = saved + step;
            const double up = loss();
            var->value[i] = saved - step;
            const double down = loss();
            var->value[i] = saved;
            const double numeric = (up - down) / (2 * step);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            worst = std::max(worst, rel);
            if (rel >= result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                               std::to_string(numeric);
            }
            ++result.checked;
        }
        result.per_param[name] = worst;
    }
    net.store().zero_grad();
    return result;
}

void jitter_parameters(model::SegVae& net, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& [name, var] : net.store().params()) {
        for (auto& v : var->value.data) v += sigma * rng.normal();
    }
}

std::string fresh_dir(const std::string& stem) {
    namespace fs = std::filesystem;
    Rng rng(std::random_device{}());
    const fs::path dir = fs::temp_directory_path() / (stem + "-" + std::to_string(rng.next_u64() % 1000000007));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

}  // namespace segvae::testing
