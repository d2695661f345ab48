#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace segvae::core {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

std::vector<Rgb> default_palette(int count);

// Ordered class universe. Index k in [0, C) is the channel of class k; on disk
// class k is pixel value k + 1 (0 is background), so C is capped at 255.
class ClassCatalog {
public:
    ClassCatalog(std::vector<std::string> names, std::vector<Rgb> palette);
    explicit ClassCatalog(std::vector<std::string> names);

    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(int k) const { return names_.at(k); }
    const std::vector<Rgb>& palette() const { return palette_; }

    std::optional<int> find(const std::string& name) const;
    int index_of(const std::string& name) const;  // throws std::invalid_argument

    bool operator==(const ClassCatalog&) const = default;

private:
    std::vector<std::string> names_;
    std::vector<Rgb> palette_;
};

// Desk-scale synthetic catalog and the two paper-scale catalogs in their
// generation order.
ClassCatalog synthetic_catalog();
ClassCatalog human_parsing_catalog();
ClassCatalog celeba_mask_catalog();

class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(int num_classes) : bits_(num_classes, 0) {}
    static LabelSet from_bits(std::vector<std::uint8_t> bits);

    int size() const { return static_cast<int>(bits_.size()); }
    bool contains(int k) const { return bits_.at(k) != 0; }
    void set(int k, bool present = true) { bits_.at(k) = present ? 1 : 0; }
    int count() const;
    bool empty() const { return count() == 0; }
    std::vector<int> members() const;
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    bool operator==(const LabelSet&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

// C x H x W mask stack. Values are stored as floats so that malformed maps can
// be represented and reported by validation; valid maps hold only 0 and 1.
class SemanticMap {
public:
    SemanticMap() = default;
    SemanticMap(int classes, int height, int width);

    int classes() const { return classes_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }

    float at(int c, int y, int x) const { return values_[index(c, y, x)]; }
    void set(int c, int y, int x, float v) { values_[index(c, y, x)] = v; }

    std::span<float> channel(int c);
    std::span<const float> channel(int c) const;
    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

    bool channel_empty(int c) const;
    void clear_channel(int c);
    void copy_channel(const SemanticMap& from, int c);
    LabelSet extract_label_set() const;

    bool operator==(const SemanticMap&) const = default;

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }
    int classes_ = 0, height_ = 0, width_ = 0;
    std::vector<float> values_;
};

// Partially generated map; only channels in `filled` may be nonzero.
class Canvas {
public:
    Canvas() = default;
    static Canvas blank(int classes, int height, int width);

    const SemanticMap& map() const { return map_; }
    bool is_filled(int k) const { return filled_.at(k) != 0; }
    std::vector<int> filled() const;

    // Writes channel k from a binary H*W mask and marks it filled.
    void fill(int k, std::span<const float> mask);
    // Copies channel k of `source` and marks it filled.
    void fill_from(const SemanticMap& source, int k);

    bool operator==(const Canvas&) const = default;

private:
    SemanticMap map_;
    std::vector<std::uint8_t> filled_;
};

class GenerationOrder {
public:
    GenerationOrder() = default;
    explicit GenerationOrder(std::vector<int> sequence);  // throws unless a permutation
    static GenerationOrder identity(int count);

    int size() const { return static_cast<int>(sequence_.size()); }
    const std::vector<int>& sequence() const { return sequence_; }
    int position(int k) const { return position_.at(k); }
    bool before(int a, int b) const { return position(a) < position(b); }

    bool operator==(const GenerationOrder& o) const { return sequence_ == o.sequence_; }

private:
    std::vector<int> sequence_;
    std::vector<int> position_;
};

struct IndexMap {
    int height = 0, width = 0;
    std::vector<std::uint8_t> pixels;  // 0 = background, k + 1 = class k
    bool operator==(const IndexMap&) const = default;
};

}  // namespace segvae::core
