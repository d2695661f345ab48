#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segvae/nn/layers.hpp"

namespace segvae::nn {

// Small self-checking container for a ParamStore plus a free-form text
// header; used for the evaluation networks.
std::vector<std::uint8_t> encode_store(const ParamStore& store, const std::string& header);

// Verifies names and shapes against `store` before writing anything and
// returns the header. Throws std::runtime_error on any mismatch.
std::string decode_into_store(const std::vector<std::uint8_t>& bytes, ParamStore& store);
std::string peek_header(const std::vector<std::uint8_t>& bytes);

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_bytes(const std::string& path);

}  // namespace segvae::nn
