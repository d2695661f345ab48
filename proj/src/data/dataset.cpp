#include "segvae/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace segvae::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::train: return "train";
        case SplitTag::val: return "val";
        case SplitTag::test: return "test";
        case SplitTag::all: return "all";
    }
    return "all";
}

SplitTag parse_split_tag(const std::string& name) {
    if (name == "train") return SplitTag::train;
    if (name == "val") return SplitTag::val;
    if (name == "test") return SplitTag::test;
    if (name == "all") return SplitTag::all;
    throw std::invalid_argument("unknown split tag: " + name);
}

Dataset::Dataset(core::ClassCatalog catalog, core::Resolution resolution, SplitTag split)
    : catalog_(std::move(catalog)), resolution_(resolution), split_(split) {
    if (resolution_.height <= 0 || resolution_.width <= 0) {
        throw std::invalid_argument("dataset resolution must be positive");
    }
}

void Dataset::add(core::SemanticMap map, std::string source_id, double aspect_ratio) {
    const auto report = core::validate_semantic_map(map, catalog_, resolution_);
    if (!report.ok()) {
        throw std::invalid_argument("example " + (source_id.empty() ? std::to_string(examples_.size()) : source_id) +
                                    ": " + report.issues.front().message);
    }
    if (!std::isfinite(aspect_ratio) || aspect_ratio <= 0.0) {
        throw std::invalid_argument("example " + source_id + ": aspect ratio must be positive");
    }
    Example ex;
    ex.labels = map.extract_label_set();
    ex.map = std::move(map);
    ex.source_id = std::move(source_id);
    ex.aspect_ratio = aspect_ratio;
    examples_.push_back(std::move(ex));
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices, SplitTag tag) const {
    Dataset out(catalog_, resolution_, tag);
    out.examples_.reserve(indices.size());
    for (std::size_t i : indices) out.examples_.push_back(examples_.at(i));
    return out;
}

// ------------------------------------------------------------ disk format

namespace {

json catalog_json(const core::ClassCatalog& catalog) {
    json palette = json::array();
    for (const auto& c : catalog.palette()) palette.push_back({c.r, c.g, c.b});
    return palette;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu.png", i);
    return buf;
}

}  // namespace

Dataset ingest(const std::string& dir, const std::optional<core::ClassCatalog>& catalog) {
    const fs::path root(dir);
    const fs::path manifest_path = root / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("no manifest.json in " + dir);
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error(manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("version", 0) != kManifestVersion) {
        throw std::runtime_error(manifest_path.string() + ": unsupported manifest version");
    }
    const auto names = manifest.at("classes").get<std::vector<std::string>>();
    std::vector<core::Rgb> palette;
    for (const auto& p : manifest.at("palette")) {
        palette.push_back({p.at(0).get<std::uint8_t>(), p.at(1).get<std::uint8_t>(), p.at(2).get<std::uint8_t>()});
    }
    core::ClassCatalog file_catalog(names, palette);
    if (catalog && catalog->names() != file_catalog.names()) {
        throw std::invalid_argument(manifest_path.string() + ": class list does not match the requested catalog");
    }
    const core::Resolution resolution{manifest.at("height").get<int>(), manifest.at("width").get<int>()};
    Dataset out(catalog ? *catalog : file_catalog, resolution,
                parse_split_tag(manifest.value("split", std::string("all"))));

    const int classes = file_catalog.size();
    for (const auto& entry : manifest.at("examples")) {
        const std::string file = entry.at("file").get<std::string>();
        const core::IndexMap index = read_index_png((root / file).string());
        if (index.height != resolution.height || index.width != resolution.width) {
            throw std::invalid_argument(file + ": resolution " + std::to_string(index.height) + "x" +
                                        std::to_string(index.width) + " does not match manifest " +
                                        std::to_string(resolution.height) + "x" + std::to_string(resolution.width));
        }
        for (std::uint8_t v : index.pixels) {
            if (v > classes) {
                throw std::invalid_argument(file + ": unknown palette index " + std::to_string(v) + " (catalog has " +
                                            std::to_string(classes) + " classes)");
            }
        }
        out.add(core::explode_index_map(index, classes), entry.value("id", file), entry.value("aspect_ratio", 1.0));
    }
    return out;
}

void export_dataset(const Dataset& dataset, const std::string& dir) {
    const fs::path root(dir);
    fs::create_directories(root);
    const auto order = core::GenerationOrder::identity(dataset.catalog().size());
    json examples = json::array();
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& ex = dataset[i];
        const std::string file = file_name(i);
        write_index_png((root / file).string(), core::compose_index_map(ex.map, order), dataset.catalog().palette());
        examples.push_back({{"file", file}, {"id", ex.source_id.empty() ? file : ex.source_id},
                            {"aspect_ratio", ex.aspect_ratio}});
    }
    const json manifest{
        {"version", kManifestVersion},
        {"classes", dataset.catalog().names()},
        {"palette", catalog_json(dataset.catalog())},
        {"height", dataset.resolution().height},
        {"width", dataset.resolution().width},
        {"split", to_string(dataset.split())},
        {"examples", examples},
    };
    write_text(root / "manifest.json", manifest.dump(2) + "\n");
}

void write_manifest_for(const std::string& dir, const core::ClassCatalog& catalog, core::Resolution resolution,
                        const std::vector<double>& aspect_ratios) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path().filename());
    }
    std::sort(files.begin(), files.end());
    if (!aspect_ratios.empty() && aspect_ratios.size() != files.size()) {
        throw std::invalid_argument("write_manifest_for: " + std::to_string(aspect_ratios.size()) +
                                    " aspect ratios for " + std::to_string(files.size()) + " images");
    }
    json examples = json::array();
    for (std::size_t i = 0; i < files.size(); ++i) {
        examples.push_back({{"file", files[i]}, {"id", fs::path(files[i]).stem().string()},
                            {"aspect_ratio", aspect_ratios.empty() ? 1.0 : aspect_ratios[i]}});
    }
    const json manifest{
        {"version", kManifestVersion},
        {"classes", catalog.names()},
        {"palette", catalog_json(catalog)},
        {"height", resolution.height},
        {"width", resolution.width},
        {"split", "all"},
        {"examples", examples},
    };
    write_text(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

// ----------------------------------------------------------------- cleaning

Dataset clean_aspect_ratio(const Dataset& dataset, std::string* warning) {
    const std::size_t n = dataset.size();
    if (n < 2) {
        if (warning) *warning = "clean_aspect_ratio: fewer than two examples, nothing removed";
        return dataset;
    }
    double mean = 0.0;
    for (const auto& ex : dataset.examples()) mean += ex.aspect_ratio;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& ex : dataset.examples()) var += (ex.aspect_ratio - mean) * (ex.aspect_ratio - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = dataset[i].aspect_ratio;
        if (r >= mean - sd && r <= mean + sd) keep.push_back(i);
    }
    return dataset.subset(keep, dataset.split());
}

core::SemanticMap resize_nearest(const core::SemanticMap& map, int height, int width) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("resize_nearest: target size must be positive");
    core::SemanticMap out(map.classes(), height, width);
    for (int c = 0; c < map.classes(); ++c) {
        for (int y = 0; y < height; ++y) {
            const int sy = static_cast<int>(static_cast<long long>(y) * map.height() / height);
            for (int x = 0; x < width; ++x) {
                const int sx = static_cast<int>(static_cast<long long>(x) * map.width() / width);
                out.set(c, y, x, map.at(c, sy, sx));
            }
        }
    }
    return out;
}

core::SemanticMap crop_to_bbox(const core::SemanticMap& map, int height, int width) {
    int y0 = map.height(), y1 = -1, x0 = map.width(), x1 = -1;
    for (int c = 0; c < map.classes(); ++c) {
        for (int y = 0; y < map.height(); ++y) {
            for (int x = 0; x < map.width(); ++x) {
                if (map.at(c, y, x) != 0.0f) {
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                }
            }
        }
    }
    if (y1 < 0) throw std::invalid_argument("crop_to_bbox: map has no foreground pixels");
    core::SemanticMap cropped(map.classes(), y1 - y0 + 1, x1 - x0 + 1);
    for (int c = 0; c < map.classes(); ++c) {
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) cropped.set(c, y - y0, x - x0, map.at(c, y, x));
        }
    }
    return resize_nearest(cropped, height, width);
}

std::array<std::size_t, 3> split_sizes(std::size_t n, SplitFractions f) {
    const double total = f.train + f.val + f.test;
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must be nonnegative and sum to 1");
    }
    // A tiny epsilon keeps exact products like 100 * 0.1 from flooring to 9.
    const auto part = [n](double frac) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac + 1e-9));
    };
    const std::size_t val = part(f.val), test = part(f.test);
    return {n - val - test, val, test};
}

std::tuple<Dataset, Dataset, Dataset> split(const Dataset& dataset, SplitFractions fractions, std::uint64_t seed) {
    const auto sizes = split_sizes(dataset.size(), fractions);
    std::vector<std::size_t> idx(dataset.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    const auto take = [&](std::size_t from, std::size_t count) {
        return std::vector<std::size_t>(idx.begin() + from, idx.begin() + from + count);
    };
    return {dataset.subset(take(0, sizes[0]), SplitTag::train),
            dataset.subset(take(sizes[0], sizes[1]), SplitTag::val),
            dataset.subset(take(sizes[0] + sizes[1], sizes[2]), SplitTag::test)};
}

}  // namespace segvae::data
