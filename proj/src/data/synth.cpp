#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "segvae/data/dataset.hpp"

namespace segvae::data {

namespace {

enum Part { kTorso = 0, kHead, kLeftLimb, kRightLimb, kGarment, kAccessory, kParts };

// Geometry is laid out on a 64x64 design grid and scaled to the target size.
class Painter {
public:
    Painter(int height, int width) : index_{height, width, std::vector<std::uint8_t>(height * width, 0)} {}

    void rect(int part, double y0, double x0, double y1, double x1) {
        for (int y = row(y0); y < row(y1); ++y) {
            for (int x = col(x0); x < col(x1); ++x) put(part, y, x);
        }
    }
    void disk(int part, double cy, double cx, double r) {
        for (int y = row(cy - r); y <= row(cy + r); ++y) {
            for (int x = col(cx - r); x <= col(cx + r); ++x) {
                const double dy = (y + 0.5) / sy() - cy, dx = (x + 0.5) / sx() - cx;
                if (dy * dy + dx * dx <= r * r) put(part, y, x);
            }
        }
    }
    const core::IndexMap& index() const { return index_; }

private:
    double sy() const { return index_.height / 64.0; }
    double sx() const { return index_.width / 64.0; }
    int row(double v) const { return static_cast<int>(std::lround(v * sy())); }
    int col(double v) const { return static_cast<int>(std::lround(v * sx())); }
    void put(int part, int y, int x) {
        if (y < 0 || y >= index_.height || x < 0 || x >= index_.width) return;
        index_.pixels[static_cast<std::size_t>(y) * index_.width + x] = static_cast<std::uint8_t>(part + 1);
    }
    core::IndexMap index_;
};

int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

// Parts are painted torso, head, limbs, garment, accessory; later parts win
// where they overlap, so channels stay disjoint.
core::SemanticMap draw_figure(const SynthSpec& spec, const std::array<bool, kParts>& present, Rng& rng) {
    const int tw = uniform_int(rng, 14, 22);
    const int th = uniform_int(rng, 18, 26);
    const int cx = uniform_int(rng, 24, 40);
    const int top = uniform_int(rng, 22, 30);
    const double left = cx - tw / 2.0, right = cx + tw / 2.0, bottom = top + th;

    Painter p(spec.resolution.height, spec.resolution.width);
    p.rect(kTorso, top, left, bottom, right);

    const double head_r = uniform_int(rng, 5, 8);
    const double head_cx = cx + uniform_int(rng, -2, 2);
    const double head_cy = top - head_r + 1;
    if (present[kHead]) p.disk(kHead, head_cy, head_cx, head_r);

    const int lw = uniform_int(rng, 4, 6), ll = uniform_int(rng, 14, 24);
    const int rw = uniform_int(rng, 4, 6), rl = uniform_int(rng, 14, 24);
    const int limb_top = top + uniform_int(rng, 1, 3);
    if (present[kLeftLimb]) p.rect(kLeftLimb, limb_top, left - lw, limb_top + ll, left);
    if (present[kRightLimb]) p.rect(kRightLimb, limb_top, right, limb_top + rl, right + rw);

    if (present[kGarment]) {
        const int a = uniform_int(rng, 0, th / 3);
        const int len = uniform_int(rng, th / 3, (th * 7) / 10 - 1);
        p.rect(kGarment, top + a, left - 2, top + a + len, right + 2);
    }

    if (present[kAccessory]) {
        // Anchors: left hand, right hand, hat on the head, belt buckle.
        std::vector<std::pair<double, double>> anchors;
        if (present[kLeftLimb]) anchors.push_back({limb_top + ll - 4, left - lw / 2.0 - 2});
        if (present[kRightLimb]) anchors.push_back({limb_top + rl - 4, right + rw / 2.0 - 2});
        if (present[kHead]) anchors.push_back({head_cy - head_r + 1, head_cx - 2});
        if (anchors.empty()) anchors.push_back({bottom - 5, cx - 2});
        const auto [ay, ax] = anchors[rng.below(anchors.size())];
        p.rect(kAccessory, ay, ax, ay + 4, ax + 4);
    }

    core::SemanticMap map = core::explode_index_map(p.index(), spec.catalog.size());
    for (int k = 0; k < kParts; ++k) {
        if (present[k] && map.channel_empty(k)) {
            throw std::logic_error("synthetic generator produced an empty " + spec.catalog.name(k) + " mask");
        }
    }
    return map;
}

double bbox_aspect(const core::SemanticMap& map) {
    int y0 = map.height(), y1 = -1, x0 = map.width(), x1 = -1;
    for (int c = 0; c < map.classes(); ++c) {
        for (int y = 0; y < map.height(); ++y) {
            for (int x = 0; x < map.width(); ++x) {
                if (map.at(c, y, x) != 0.0f) {
                    y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
                }
            }
        }
    }
    return static_cast<double>(y1 - y0 + 1) / static_cast<double>(x1 - x0 + 1);
}

}  // namespace

void SynthSpec::validate() const {
    if (n_examples < 1) throw std::invalid_argument("synth: n_examples must be at least 1");
    for (double p : {p_head, p_limb, p_garment, p_accessory}) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synth: probabilities must lie in [0, 1]");
    }
    if (catalog.size() != kParts) {
        throw std::invalid_argument("synth: the generator draws exactly " + std::to_string(kParts) + " parts");
    }
    if (resolution.height < 32 || resolution.width < 32) {
        throw std::invalid_argument("synth: resolution must be at least 32x32");
    }
}

core::SemanticMap synthesize_with_labels(const SynthSpec& spec, const core::LabelSet& labels, Rng& rng) {
    spec.validate();
    if (labels.size() != kParts || !labels.contains(kTorso)) {
        throw std::invalid_argument("synth: label-set must include the torso");
    }
    std::array<bool, kParts> present{};
    for (int k = 0; k < kParts; ++k) present[k] = labels.contains(k);
    return draw_figure(spec, present, rng);
}

Dataset synthesize(const SynthSpec& spec) {
    spec.validate();
    Dataset out(spec.catalog, spec.resolution);
    Rng rng(spec.seed);
    for (int i = 0; i < spec.n_examples; ++i) {
        std::array<bool, kParts> present{};
        present[kTorso] = true;
        present[kHead] = rng.bernoulli(spec.p_head);
        present[kLeftLimb] = rng.bernoulli(spec.p_limb);
        present[kRightLimb] = rng.bernoulli(spec.p_limb);
        present[kGarment] = rng.bernoulli(spec.p_garment);
        present[kAccessory] = rng.bernoulli(spec.p_accessory);
        core::SemanticMap map = draw_figure(spec, present, rng);
        const double aspect = bbox_aspect(map);
        out.add(std::move(map), "synth_" + std::to_string(i), aspect);
    }
    return out;
}

}  // namespace segvae::data
