#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segvae/core/types.hpp"
#include "segvae/model/gaussian.hpp"
#include "segvae/model/networks.hpp"
#include "segvae/util/rng.hpp"

namespace segvae::model {

// ------------------------------------------------------------------ training

struct LossWeights {
    double recon = 1.0;
    double kl = 1e-4;
};

struct StepLoss {
    int class_index = 0;
    double recon = 0.0;
    double kl = 0.0;
};

struct LossBreakdown {
    double recon = 0.0;  // sum over steps
    double kl = 0.0;     // sum over steps
    double total = 0.0;  // weights.recon * recon + weights.kl * kl
    std::vector<StepLoss> per_step;

    double mean_step_recon() const { return per_step.empty() ? 0.0 : recon / static_cast<double>(per_step.size()); }
};

struct TrainingExample {
    const core::SemanticMap* map = nullptr;
    const core::LabelSet* labels = nullptr;
    const core::GenerationOrder* order = nullptr;  // null: the model's configured order
};

struct ForwardResult {
    nn::Var total;                         // batch mean of per-example totals; differentiable
    std::vector<LossBreakdown> examples;   // one per input example
};

// Teacher-forced pass: each class present in an example is reconstructed from
// a posterior sample, conditioned on the ground-truth masks of the classes
// before it. Examples sharing an order are stepped together over the union of
// their classes; absent classes are masked out of losses and state updates.
ForwardResult training_forward(const StepNetworks& net, std::span<const TrainingExample> batch,
                               const LossWeights& weights, Rng& rng);

ForwardResult training_forward(const StepNetworks& net, const core::SemanticMap& map, const core::LabelSet& labels,
                               const LossWeights& weights, Rng& rng);

// ------------------------------------------------------- single-step values

struct ContextCode {
    nn::Tensor features;  // [channels, h', w']
    bool operator==(const ContextCode& o) const { return features.shape == o.features.shape && features.data == o.features.data; }
};

struct RecurrentState {
    std::vector<std::vector<double>> hidden;
    std::vector<std::vector<double>> cell;
    bool operator==(const RecurrentState&) const = default;
};

RecurrentState initial_prior_state(const StepNetworks& net);
RecurrentState initial_posterior_state(const StepNetworks& net);

ContextCode encode_context(const StepNetworks& net, const core::LabelSet& labels, int target,
                           const core::Canvas& canvas);
std::pair<DiagonalGaussian, RecurrentState> prior_step(const StepNetworks& net, const ContextCode& context,
                                                       const RecurrentState& state);
std::pair<DiagonalGaussian, RecurrentState> posterior_step(const StepNetworks& net, const ContextCode& context,
                                                           std::span<const float> gt_mask,
                                                           const RecurrentState& state);
std::vector<double> decode_mask(const StepNetworks& net, std::span<const double> z, const ContextCode& context);

// ---------------------------------------------------------------- inference

inline constexpr double kBinarizeThreshold = 0.5;

// Noise for class k during a run comes from Rng::derive(noise_base, k), so a
// class's latent does not depend on which other classes are generated.
// `soft`, when given, receives the decoder output before thresholding.
std::vector<float> generation_step(const StepNetworks& net, const core::LabelSet& labels, int target,
                                   const core::Canvas& canvas, RecurrentState& prior_state,
                                   std::uint64_t noise_base, std::vector<double>* soft = nullptr);

// Advances the prior recurrence over `classes` (in the given sequence), each
// step seeing a canvas built from `source` channels of the classes before it.
RecurrentState replay_prior(const StepNetworks& net, const core::LabelSet& labels, const std::vector<int>& classes,
                            const core::SemanticMap& source);

class GenerationRun {
public:
    struct Snapshot {
        core::Canvas canvas;
        RecurrentState prior_state;
        std::uint64_t noise_base = 0;
        int cursor = 0;  // position in the generation order
        bool operator==(const Snapshot&) const = default;
    };

    GenerationRun(const StepNetworks& net, core::LabelSet labels, Rng& rng,
                  std::optional<core::GenerationOrder> order = std::nullopt);
    GenerationRun(const StepNetworks& net, core::LabelSet labels, core::GenerationOrder order, Snapshot snapshot);

    bool done() const;
    // Generates the next present class; skipped classes cost nothing.
    void step();
    void run();

    const Snapshot& snapshot() const { return snapshot_; }
    const core::SemanticMap& result() const { return snapshot_.canvas.map(); }
    int evaluations() const { return evaluations_; }

private:
    void skip_absent();

    const StepNetworks* net_;
    core::LabelSet labels_;
    core::GenerationOrder order_;
    Snapshot snapshot_;
    int evaluations_ = 0;
};

std::string serialize_snapshot(const GenerationRun::Snapshot& snapshot);
GenerationRun::Snapshot deserialize_snapshot(const std::string& text);

core::SemanticMap generate(const StepNetworks& net, const core::LabelSet& labels, Rng& rng,
                           std::optional<core::GenerationOrder> order_override = std::nullopt);

}  // namespace segvae::model
