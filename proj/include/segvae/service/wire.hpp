#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segvae/core/types.hpp"
#include "json.hpp"

namespace segvae::service {

// Run-length code for a binary plane: alternating run lengths starting with a
// run of zeros (possibly empty), each as an unsigned LEB128 varint.
std::vector<std::uint8_t> rle_encode(std::span<const float> plane);
std::vector<float> rle_decode(const std::vector<std::uint8_t>& bytes, std::size_t length);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// {"height", "width", "channels": [{"class", "rle"}], "index"}; only
// non-empty channels are listed, "index" is the composed 1 + class map.
nlohmann::json encode_map(const core::SemanticMap& map, const core::ClassCatalog& catalog,
                          const core::GenerationOrder& order);
core::SemanticMap decode_map(const nlohmann::json& payload, const core::ClassCatalog& catalog);

}  // namespace segvae::service
