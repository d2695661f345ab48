#include "segvae/core/types.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace segvae::core {

std::vector<Rgb> default_palette(int count) {
    // PASCAL VOC bit-interleaved colormap, skipping the background entry.
    std::vector<Rgb> out;
    out.reserve(count);
    for (int i = 1; i <= count; ++i) {
        int cid = i;
        std::uint8_t r = 0, g = 0, b = 0;
        for (int j = 0; j < 8; ++j) {
            r |= static_cast<std::uint8_t>(((cid >> 0) & 1) << (7 - j));
            g |= static_cast<std::uint8_t>(((cid >> 1) & 1) << (7 - j));
            b |= static_cast<std::uint8_t>(((cid >> 2) & 1) << (7 - j));
            cid >>= 3;
        }
        out.push_back({r, g, b});
    }
    return out;
}

ClassCatalog::ClassCatalog(std::vector<std::string> names, std::vector<Rgb> palette)
    : names_(std::move(names)), palette_(std::move(palette)) {
    if (names_.empty()) {
        throw std::invalid_argument("class catalog must contain at least one class");
    }
    if (names_.size() > 255) {
        throw std::invalid_argument("class catalog supports at most 255 classes");
    }
    if (palette_.size() != names_.size()) {
        throw std::invalid_argument("palette has " + std::to_string(palette_.size()) + " entries for " +
                                    std::to_string(names_.size()) + " classes");
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) {
            throw std::invalid_argument("class names must be non-empty");
        }
        if (!seen.insert(n).second) {
            throw std::invalid_argument("duplicate class name: " + n);
        }
    }
}

ClassCatalog::ClassCatalog(std::vector<std::string> names)
    : ClassCatalog(names, default_palette(static_cast<int>(names.size()))) {}

std::optional<int> ClassCatalog::find(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<int>(it - names_.begin());
}

int ClassCatalog::index_of(const std::string& name) const {
    if (auto k = find(name)) return *k;
    throw std::invalid_argument("unknown class: " + name);
}

ClassCatalog synthetic_catalog() {
    return ClassCatalog({"torso", "head", "left_limb", "right_limb", "garment", "accessory"});
}

ClassCatalog human_parsing_catalog() {
    return ClassCatalog({"face", "hair", "left_arm", "right_arm", "left_leg", "right_leg", "upper_clothes", "dress",
                         "skirt", "pants", "left_shoe", "right_shoe", "hat", "sunglasses", "belt", "scarf", "bag"});
}

ClassCatalog celeba_mask_catalog() {
    return ClassCatalog({"skin", "neck", "hair", "left_eyebrow", "right_eyebrow", "left_ear", "right_ear",
                         "left_eye", "right_eye", "nose", "lower_lip", "upper_lip", "mouth", "hat", "cloth",
                         "eyeglass", "earrings", "necklace"});
}

LabelSet LabelSet::from_bits(std::vector<std::uint8_t> bits) {
    LabelSet out;
    for (auto& b : bits) {
        if (b > 1) throw std::invalid_argument("label-set entries must be 0 or 1");
    }
    out.bits_ = std::move(bits);
    return out;
}

int LabelSet::count() const {
    return static_cast<int>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<int> LabelSet::members() const {
    std::vector<int> out;
    for (int k = 0; k < size(); ++k) {
        if (bits_[k]) out.push_back(k);
    }
    return out;
}

SemanticMap::SemanticMap(int classes, int height, int width)
    : classes_(classes), height_(height), width_(width),
      values_(static_cast<std::size_t>(classes) * height * width, 0.0f) {
    if (classes < 0 || height < 0 || width < 0) {
        throw std::invalid_argument("semantic map dimensions must be nonnegative");
    }
}

std::span<float> SemanticMap::channel(int c) {
    return std::span<float>(values_).subspan(static_cast<std::size_t>(c) * plane(), plane());
}

std::span<const float> SemanticMap::channel(int c) const {
    return std::span<const float>(values_).subspan(static_cast<std::size_t>(c) * plane(), plane());
}

bool SemanticMap::channel_empty(int c) const {
    const auto ch = channel(c);
    return std::all_of(ch.begin(), ch.end(), [](float v) { return v == 0.0f; });
}

void SemanticMap::clear_channel(int c) {
    auto ch = channel(c);
    std::fill(ch.begin(), ch.end(), 0.0f);
}

void SemanticMap::copy_channel(const SemanticMap& from, int c) {
    if (from.classes_ != classes_ || from.height_ != height_ || from.width_ != width_) {
        throw std::invalid_argument("copy_channel: map shapes differ");
    }
    const auto src = from.channel(c);
    std::copy(src.begin(), src.end(), channel(c).begin());
}

LabelSet SemanticMap::extract_label_set() const {
    LabelSet out(classes_);
    for (int c = 0; c < classes_; ++c) {
        out.set(c, !channel_empty(c));
    }
    return out;
}

Canvas Canvas::blank(int classes, int height, int width) {
    Canvas c;
    c.map_ = SemanticMap(classes, height, width);
    c.filled_.assign(classes, 0);
    return c;
}

std::vector<int> Canvas::filled() const {
    std::vector<int> out;
    for (int k = 0; k < static_cast<int>(filled_.size()); ++k) {
        if (filled_[k]) out.push_back(k);
    }
    return out;
}

void Canvas::fill(int k, std::span<const float> mask) {
    if (mask.size() != map_.plane()) {
        throw std::invalid_argument("Canvas::fill: mask size mismatch");
    }
    std::copy(mask.begin(), mask.end(), map_.channel(k).begin());
    filled_.at(k) = 1;
}

void Canvas::fill_from(const SemanticMap& source, int k) {
    map_.copy_channel(source, k);
    filled_.at(k) = 1;
}

GenerationOrder::GenerationOrder(std::vector<int> sequence) : sequence_(std::move(sequence)) {
    const int n = static_cast<int>(sequence_.size());
    position_.assign(n, -1);
    for (int i = 0; i < n; ++i) {
        const int k = sequence_[i];
        if (k < 0 || k >= n || position_[k] != -1) {
            throw std::invalid_argument("generation order must be a permutation of 0.." + std::to_string(n - 1));
        }
        position_[k] = i;
    }
}

GenerationOrder GenerationOrder::identity(int count) {
    std::vector<int> seq(count);
    for (int i = 0; i < count; ++i) seq[i] = i;
    return GenerationOrder(std::move(seq));
}

}  // namespace segvae::core
