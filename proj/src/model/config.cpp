#include "segvae/model/config.hpp"

#include <stdexcept>

namespace segvae::model {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_lstm: return "no_lstm";
        case Variant::fixed_prior: return "fixed_prior";
        case Variant::cvae_sep: return "cvae_sep";
        case Variant::cvae_global: return "cvae_global";
    }
    return "unknown";
}

Variant parse_variant(const std::string& name) {
    for (Variant v : {Variant::full, Variant::no_lstm, Variant::fixed_prior, Variant::cvae_sep,
                      Variant::cvae_global}) {
        if (to_string(v) == name) return v;
    }
    throw std::invalid_argument("unknown model variant: " + name +
                                " (expected full, no_lstm, fixed_prior, cvae_sep, cvae_global)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (latent_dim < 1) fail("latent_dim must be >= 1");
    if (height < 1 || width < 1) fail("resolution must be positive");
    if (downsamples < 0) fail("downsamples must be >= 0");
    if ((height % (1 << downsamples)) != 0 || (width % (1 << downsamples)) != 0) {
        fail("resolution must be divisible by 2^downsamples");
    }
    if (static_cast<int>(context_widths.size()) <= downsamples) {
        fail("context_widths needs more layers than downsamples (at least one fusion layer)");
    }
    if (mask_widths.empty() || static_cast<int>(mask_widths.size()) < downsamples) {
        fail("mask_widths needs at least downsamples layers");
    }
    if (static_cast<int>(decoder_widths.size()) + 1 < downsamples) {
        fail("decoder needs at least downsamples layers");
    }
    if (embed_dim < 1 || embed_hidden < 1 || embed_channels < 1 || latent_channels < 1 || hidden_dim < 1) {
        fail("embedding and hidden widths must be positive");
    }
    if (lstm_layers < 1) fail("lstm_layers must be >= 1");
    if (order.size() != catalog.size()) fail("generation order does not cover the catalog");
    for (int w : context_widths) if (w < 1) fail("widths must be positive");
    for (int w : mask_widths) if (w < 1) fail("widths must be positive");
    for (int w : decoder_widths) if (w < 1) fail("widths must be positive");
}

std::vector<int> ModelConfig::context_shape() const {
    return {context_widths.back(), bottleneck_height(), bottleneck_width()};
}

ModelConfig desk_config() { return ModelConfig{}; }

ModelConfig paper_config(const core::ClassCatalog& catalog) {
    ModelConfig c;
    c.catalog = catalog;
    c.height = c.width = 128;
    c.latent_dim = 384;
    c.embed_dim = 64;
    c.embed_hidden = 128;
    c.embed_channels = 32;
    c.latent_channels = 64;
    c.downsamples = 5;
    c.context_widths = {32, 64, 128, 256, 256, 256};
    c.mask_widths = {32, 64, 128, 256, 256};
    c.decoder_widths = {256, 128, 64, 32};
    c.hidden_dim = 512;
    c.order = core::GenerationOrder::identity(catalog.size());
    return c;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.catalog = core::ClassCatalog({"a", "b", "c"});
    c.height = c.width = 8;
    c.latent_dim = 4;
    c.embed_dim = 3;
    c.embed_hidden = 4;
    c.embed_channels = 2;
    c.latent_channels = 2;
    c.downsamples = 2;
    c.context_widths = {3, 4, 4};
    c.mask_widths = {2, 3};
    c.decoder_widths = {3, 2};
    c.hidden_dim = 5;
    c.order = core::GenerationOrder::identity(3);
    return c;
}

ModelConfig make_variant(const ModelConfig& config, Variant kind) {
    ModelConfig out = config;
    out.variant = kind;
    return out;
}

ModelConfig make_variant(const ModelConfig& config, const std::string& kind) {
    return make_variant(config, parse_variant(kind));
}

}  // namespace segvae::model
