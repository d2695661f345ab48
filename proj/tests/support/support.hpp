#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "segvae/core/types.hpp"
#include "segvae/data/dataset.hpp"
#include "segvae/model/config.hpp"
#include "segvae/model/networks.hpp"
#include "segvae/util/rng.hpp"

namespace segvae::testing {

// Synthetic catalog at 32x32 with narrow layers; trains in seconds.
model::ModelConfig toy_config(model::Variant variant = model::Variant::full);

data::Dataset synth_set(int n, std::uint64_t seed, int size = 64);

core::SemanticMap random_map(int classes, int height, int width, Rng& rng, double density = 0.3);

// Short Adam run of the toy config on a synthetic set.
std::unique_ptr<model::SegVae> train_toy(std::int64_t steps, std::uint64_t seed,
                                         model::Variant variant = model::Variant::full);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;            // "param[index]"
    std::size_t checked = 0;
    std::map<std::string, double> per_param;  // max relative error per parameter tensor
};

// Central finite differences of the total training loss against the tape's
// gradients. Relative error is |a - n| / max(|a|, |n|, floor). `per_param`
// limits how many entries of each tensor are probed (0: all).
GradCheckResult gradient_check(model::SegVae& net, const core::SemanticMap& map, const core::LabelSet& labels,
                               std::uint64_t noise_seed, std::size_t per_param = 0, double step = 1e-5,
                               double floor = 1e-6);

// Adds N(0, sigma^2) noise to every parameter entry.
void jitter_parameters(model::SegVae& net, double sigma, std::uint64_t seed);

// Fresh, empty directory under the system temp dir.
std::string fresh_dir(const std::string& stem);

}  // namespace segvae::testing
