#pragma once

#include <string>
#include <vector>

#include "segvae/core/types.hpp"

namespace segvae::model {

enum class Variant { full, no_lstm, fixed_prior, cvae_sep, cvae_global };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);  // throws on unknown kinds

// Network shape. Encoder stacks downsample by 2 in their first `downsamples`
// layers; remaining context layers run at the bottleneck and fuse the
// label-set/target embeddings with the canvas features.
struct ModelConfig {
    core::ClassCatalog catalog = core::synthetic_catalog();
    int height = 64;
    int width = 64;
    int latent_dim = 64;
    int embed_dim = 16;         // output width of each label/target MLP
    int embed_hidden = 32;
    int embed_channels = 8;     // embedding planes fused at the bottleneck
    int latent_channels = 16;   // decoder projection of z at the bottleneck
    int downsamples = 4;
    std::vector<int> context_widths{8, 16, 32, 32, 32, 32};
    std::vector<int> mask_widths{8, 16, 32, 32};
    std::vector<int> decoder_widths{32, 16, 8, 8};
    int hidden_dim = 128;
    int lstm_layers = 1;
    Variant variant = Variant::full;
    core::GenerationOrder order = core::GenerationOrder::identity(6);
    bool instance_norm = true;
    bool spectral_norm = true;

    void validate() const;  // throws std::invalid_argument
    int bottleneck_height() const { return height >> downsamples; }
    int bottleneck_width() const { return width >> downsamples; }
    std::vector<int> context_shape() const;  // {channels, h', w'}
    bool uses_recurrence() const { return variant == Variant::full || variant == Variant::fixed_prior; }
    bool has_learned_prior() const { return variant != Variant::fixed_prior; }
};

// 64x64, Z=64, synthetic catalog.
ModelConfig desk_config();
// 128x128, Z=384, widths scaled up; catalog order is the generation order.
ModelConfig paper_config(const core::ClassCatalog& catalog);
// 8x8, Z=4, three classes; sized for finite-difference checks.
ModelConfig tiny_config();

// Same trunk widths with the variant switched.
ModelConfig make_variant(const ModelConfig& config, Variant kind);
ModelConfig make_variant(const ModelConfig& config, const std::string& kind);

}  // namespace segvae::model
