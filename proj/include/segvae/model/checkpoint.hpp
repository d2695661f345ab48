#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "segvae/model/config.hpp"
#include "segvae/model/networks.hpp"
#include "segvae/nn/tensor.hpp"

namespace segvae::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    CheckpointError(const std::string& message, std::size_t offset)
        : std::runtime_error(message + " (at byte offset " + std::to_string(offset) + ")"), detail_(message),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }
    const std::string& detail() const { return detail_; }  // message without the offset

private:
    std::string detail_;
    std::size_t offset_;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

// In-memory image of a checkpoint file. Tensors are keyed by module path;
// parameters and spectral-norm buffers share the namespace.
struct Checkpoint {
    ModelConfig config;
    std::int64_t step = 0;
    std::map<std::string, nn::Tensor> params;
    std::map<std::string, nn::Tensor> buffers;
    std::optional<std::string> rng_state;
};

Checkpoint capture(const SegVae& net, std::int64_t step = 0, std::optional<std::string> rng_state = std::nullopt);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);  // throws CheckpointError

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

// Builds a model from the checkpoint's own config and copies every tensor in.
std::unique_ptr<SegVae> instantiate(const Checkpoint& ck);

// Copies the checkpoint into an existing model. The catalog, resolution and
// every tensor shape are verified before anything is written, so a rejected
// checkpoint leaves `net` untouched.
void restore(SegVae& net, const Checkpoint& ck);

std::unique_ptr<SegVae> load_model(const std::string& path);

}  // namespace segvae::model
