#pragma once

#include <utility>
#include <vector>

#include "segvae/core/types.hpp"
#include "segvae/model/config.hpp"
#include "segvae/nn/autograd.hpp"
#include "segvae/nn/layers.hpp"

namespace segvae::model {

// Batched graph values for one recurrence: hidden and cell per layer, each [N, hidden].
// Empty for feed-forward variants.
struct RecurrentVars {
    std::vector<nn::Var> hidden;
    std::vector<nn::Var> cell;
};

struct GaussianVars {
    nn::Var mean;     // [N, Z]
    nn::Var log_var;  // [N, Z]
};

struct StepOutput {
    GaussianVars gaussian;
    RecurrentVars state;
};

// The four networks of one generation step. `training_forward` and the
// generation loop are written against this interface.
class StepNetworks {
public:
    virtual ~StepNetworks() = default;

    virtual const ModelConfig& config() const = 0;
    // canvas: [N, C, H, W]; returns the context code [N, Cc, h', w'].
    virtual nn::Var context(const std::vector<core::LabelSet>& labels, int target, const nn::Tensor& canvas) const = 0;
    virtual RecurrentVars fresh_prior_state(int batch) const = 0;
    virtual RecurrentVars fresh_posterior_state(int batch) const = 0;
    virtual StepOutput prior(const nn::Var& context, const RecurrentVars& state) const = 0;
    // gt_mask: [N, 1, H, W]
    virtual StepOutput posterior(const nn::Var& context, const nn::Var& gt_mask, const RecurrentVars& state) const = 0;
    // z: [N, Z]; returns soft masks [N, 1, H, W] in [0, 1].
    virtual nn::Var decode(const nn::Var& z, const nn::Var& context) const = 0;
};

// Per-row blend of two recurrent states (rows with mask 0 keep `previous`).
RecurrentVars blend_states(const std::vector<double>& mask, const RecurrentVars& next, const RecurrentVars& previous);

// The SegVAE networks: context encoder, prior and posterior encoders with
// their recurrences, and the mask decoder. Parameters live in `store()`.
class SegVae final : public StepNetworks {
public:
    SegVae(ModelConfig config, std::uint64_t seed);
    SegVae(const SegVae&) = delete;
    SegVae& operator=(const SegVae&) = delete;

    const ModelConfig& config() const override { return config_; }
    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }

    nn::Var context(const std::vector<core::LabelSet>& labels, int target, const nn::Tensor& canvas) const override;
    RecurrentVars fresh_prior_state(int batch) const override;
    RecurrentVars fresh_posterior_state(int batch) const override;
    StepOutput prior(const nn::Var& context, const RecurrentVars& state) const override;
    StepOutput posterior(const nn::Var& context, const nn::Var& gt_mask, const RecurrentVars& state) const override;
    nn::Var decode(const nn::Var& z, const nn::Var& context) const override;

    // One power-iteration update on every spectrally normalized weight.
    void refresh_spectral();

    // Parameters updated by the optimizer, in sorted path order.
    std::vector<std::pair<std::string, nn::Var>> trainable_parameters() const;

private:
    struct Recurrence {
        nn::Linear project;                 // flattened features -> hidden
        std::vector<nn::LSTMCell> lstm;     // recurrent variants
        nn::Linear feedforward;             // no-recurrence variants
        nn::Linear mean_hidden, mean_out;
        nn::Linear logvar_hidden, logvar_out;
    };

    void build_recurrence(Recurrence& r, const std::string& path, int input, Rng& rng);
    StepOutput run_recurrence(const Recurrence& r, const nn::Var& features, const RecurrentVars& state) const;
    RecurrentVars fresh_state(int batch) const;

    ModelConfig config_;
    nn::ParamStore store_;

    nn::Linear label_hidden_, label_out_, target_hidden_, target_out_, embed_project_;
    std::vector<nn::Conv2d> canvas_convs_;   // downsampling trunk over the canvas
    std::vector<nn::Conv2d> fuse_convs_;     // bottleneck layers over canvas features + embeddings
    std::vector<nn::Conv2d> mask_convs_;
    Recurrence prior_, posterior_;
    nn::Linear latent_project_;
    std::vector<nn::ConvTranspose2d> decoder_;
};

}  // namespace segvae::model
