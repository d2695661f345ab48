#pragma once

#include <map>
#include <string>
#include <vector>

#include "segvae/model/config.hpp"
#include "segvae/training/train.hpp"

namespace segvae::training {

// Plain-text configuration: one `key = value` per line, `#` starts a comment.
// Keys name ModelConfig and TrainConfig fields directly:
//
//   model:  catalog (synthetic | human_parsing | celeba_mask), classes (comma
//           list, overrides catalog), height, width, latent_dim, embed_dim,
//           embed_hidden, embed_channels, latent_channels, downsamples,
//           context_widths, mask_widths, decoder_widths (comma lists),
//           hidden_dim, lstm_layers, variant, order (comma list of class
//           names), instance_norm, spectral_norm (true | false)
//   train:  learning_rate, batch_size, beta1, beta2, lambda_recon, lambda_kl,
//           max_steps, seed, order_mode (fixed | random_per_example),
//           eval_every, clip_norm
//
// Unknown keys and malformed values are rejected with the line number.
struct ConfigEntry {
    std::string value;
    int line = 0;
};
using KeyValues = std::map<std::string, ConfigEntry>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::string& path);

// Parses a single `key=value` override (as given on the command line).
std::pair<std::string, std::string> split_override(const std::string& arg);

struct RunConfig {
    model::ModelConfig model = model::desk_config();
    TrainConfig train;
};

// Applies entries on top of `base`; model keys that change the catalog also
// reset the order to the identity unless `order` is given.
RunConfig apply_key_values(const KeyValues& entries, RunConfig base = {});

bool is_model_key(const std::string& key);
bool is_train_key(const std::string& key);

std::string render_key_values(const RunConfig& config);

}  // namespace segvae::training
