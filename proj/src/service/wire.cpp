#include "segvae/service/wire.hpp"

#include <sodium.h>

#include <stdexcept>

#include "segvae/core/ops.hpp"

namespace segvae::service {

namespace {

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<std::uint8_t>(v | 0x80));
        v >>= 7;
    }
    out.push_back(static_cast<std::uint8_t>(v));
}

void ensure_sodium() {
    if (sodium_init() < 0) throw std::runtime_error("libsodium failed to initialise");
}

}  // namespace

std::vector<std::uint8_t> rle_encode(std::span<const float> plane) {
    std::vector<std::uint8_t> out;
    bool current = false;
    std::uint64_t run = 0;
    for (float v : plane) {
        const bool bit = v != 0.0f;
        if (bit != current) {
            put_varint(out, run);
            current = bit;
            run = 0;
        }
        ++run;
    }
    put_varint(out, run);
    return out;
}

std::vector<float> rle_decode(const std::vector<std::uint8_t>& bytes, std::size_t length) {
    std::vector<float> out;
    out.reserve(length);
    bool current = false;
    std::size_t i = 0;
    while (i < bytes.size()) {
        std::uint64_t run = 0;
        int shift = 0;
        while (true) {
            if (i >= bytes.size() || shift > 56) throw std::invalid_argument("rle: malformed varint");
            const std::uint8_t b = bytes[i++];
            run |= static_cast<std::uint64_t>(b & 0x7f) << shift;
            if (!(b & 0x80)) break;
            shift += 7;
        }
        if (run > length - out.size()) throw std::invalid_argument("rle: runs exceed the plane size");
        out.insert(out.end(), run, current ? 1.0f : 0.0f);
        current = !current;
    }
    if (out.size() != length) {
        throw std::invalid_argument("rle: decoded " + std::to_string(out.size()) + " pixels, expected " +
                                    std::to_string(length));
    }
    return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    ensure_sodium();
    const std::size_t size = sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL);
    std::string out(size, '\0');
    sodium_bin2base64(out.data(), size, bytes.data(), bytes.size(), sodium_base64_VARIANT_ORIGINAL);
    out.resize(size - 1);  // drop the terminator
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    ensure_sodium();
    std::vector<std::uint8_t> out(text.size() / 4 * 3 + 3);
    std::size_t len = 0;
    if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len, nullptr,
                          sodium_base64_VARIANT_ORIGINAL) != 0) {
        throw std::invalid_argument("invalid base64 payload");
    }
    out.resize(len);
    return out;
}

nlohmann::json encode_map(const core::SemanticMap& map, const core::ClassCatalog& catalog,
                          const core::GenerationOrder& order) {
    nlohmann::json channels = nlohmann::json::array();
    for (int k = 0; k < map.classes(); ++k) {
        if (map.channel_empty(k)) continue;
        channels.push_back({{"class", catalog.name(k)}, {"rle", base64_encode(rle_encode(map.channel(k)))}});
    }
    const core::IndexMap index = core::compose_index_map(map, order);
    return {{"height", map.height()}, {"width", map.width()}, {"channels", channels},
            {"index", base64_encode(index.pixels)}};
}

core::SemanticMap decode_map(const nlohmann::json& payload, const core::ClassCatalog& catalog) {
    const int h = payload.at("height").get<int>();
    const int w = payload.at("width").get<int>();
    if (h <= 0 || w <= 0) throw std::invalid_argument("map payload: size must be positive");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (payload.contains("channels")) {
        core::SemanticMap map(catalog.size(), h, w);
        for (const auto& ch : payload.at("channels")) {
            const int k = catalog.index_of(ch.at("class").get<std::string>());
            const auto bits = rle_decode(base64_decode(ch.at("rle").get<std::string>()), plane);
            std::copy(bits.begin(), bits.end(), map.channel(k).begin());
        }
        return map;
    }
    core::IndexMap index{h, w, base64_decode(payload.at("index").get<std::string>())};
    if (index.pixels.size() != plane) throw std::invalid_argument("map payload: index size mismatch");
    return core::explode_index_map(index, catalog.size());
}

}  // namespace segvae::service
