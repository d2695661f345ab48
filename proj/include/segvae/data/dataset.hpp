#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "segvae/core/ops.hpp"
#include "segvae/core/types.hpp"
#include "segvae/util/rng.hpp"

namespace segvae::data {

enum class SplitTag { train, val, test, all };

std::string to_string(SplitTag tag);
SplitTag parse_split_tag(const std::string& name);

struct Example {
    core::SemanticMap map;
    core::LabelSet labels;
    std::string source_id;
    double aspect_ratio = 1.0;  // original height / width before any resize
};

class Dataset {
public:
    Dataset(core::ClassCatalog catalog, core::Resolution resolution, SplitTag split = SplitTag::all);

    const core::ClassCatalog& catalog() const { return catalog_; }
    core::Resolution resolution() const { return resolution_; }
    SplitTag split() const { return split_; }
    void set_split(SplitTag tag) { split_ = tag; }

    const std::vector<Example>& examples() const { return examples_; }
    const Example& operator[](std::size_t i) const { return examples_.at(i); }
    std::size_t size() const { return examples_.size(); }
    bool empty() const { return examples_.empty(); }

    // Rejects maps of the wrong shape and recomputes the label-set from the map.
    void add(core::SemanticMap map, std::string source_id = {}, double aspect_ratio = 1.0);

    // Examples in the given index order, same catalog and resolution.
    Dataset subset(const std::vector<std::size_t>& indices, SplitTag tag) const;

private:
    core::ClassCatalog catalog_;
    core::Resolution resolution_;
    SplitTag split_;
    std::vector<Example> examples_;
};

// ------------------------------------------------------------ disk format

inline constexpr int kManifestVersion = 1;

// Reads `dir/manifest.json` and the paletted PNG it lists. When `catalog` is
// given it must match the manifest's class names.
Dataset ingest(const std::string& dir, const std::optional<core::ClassCatalog>& catalog = std::nullopt);

// Writes manifest.json plus one PNG per example (pixel = 1 + class index).
// Overlapping channels are composed in catalog order.
void export_dataset(const Dataset& dataset, const std::string& dir);

// Paletted 8-bit PNG I/O. Palette entry 0 is background.
void write_index_png(const std::string& path, const core::IndexMap& index, const std::vector<core::Rgb>& palette);
core::IndexMap read_index_png(const std::string& path);

// ----------------------------------------------------------------- cleaning

// Keeps examples whose aspect ratio lies in [m - s, m + s]. Datasets smaller
// than two pass through unchanged and `warning` (if given) is filled in.
Dataset clean_aspect_ratio(const Dataset& dataset, std::string* warning = nullptr);

// Crops to the union bounding box of all channels and resizes back to
// (height, width) with nearest-neighbour sampling.
core::SemanticMap crop_to_bbox(const core::SemanticMap& map, int height, int width);
core::SemanticMap resize_nearest(const core::SemanticMap& map, int height, int width);

struct SplitFractions {
    double train = 0.8, val = 0.1, test = 0.1;
};

std::tuple<Dataset, Dataset, Dataset> split(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed);
// Sizes used by `split`: floor of each fraction, the remainder goes to train.
std::array<std::size_t, 3> split_sizes(std::size_t n, SplitFractions fractions);

// ---------------------------------------------------------------- synthetic

struct SynthSpec {
    int n_examples = 1000;
    core::ClassCatalog catalog = core::synthetic_catalog();
    core::Resolution resolution{64, 64};
    double p_head = 0.9;
    double p_limb = 0.8;  // each limb independently
    double p_garment = 0.7;
    double p_accessory = 0.3;
    std::uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

Dataset synthesize(const SynthSpec& spec);

// One synthetic figure with exactly the requested parts (torso is always
// drawn). Used to build reference sets for fixed label-sets.
core::SemanticMap synthesize_with_labels(const SynthSpec& spec, const core::LabelSet& labels, Rng& rng);

// ----------------------------------------------------- real-dataset manifests

// Writes a manifest for a directory of paletted annotation PNGs whose pixel
// values already follow the 1 + class-index convention of `catalog`. Files are
// taken in sorted name order; `aspect_ratios` may be empty (all 1.0).
void write_manifest_for(const std::string& dir, const core::ClassCatalog& catalog, core::Resolution resolution,
                        const std::vector<double>& aspect_ratios = {});

}  // namespace segvae::data
