#include "doctest.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "segvae/core/ops.hpp"
#include "segvae/data/dataset.hpp"
#include "support.hpp"

using namespace segvae;
using namespace segvae::data;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_examples(const Dataset& a, const Dataset& b) {
    if (a.size() != b.size() || !(a.catalog() == b.catalog()) || !(a.resolution() == b.resolution())) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i].map == b[i].map) || !(a[i].labels == b[i].labels) || a[i].source_id != b[i].source_id ||
            a[i].aspect_ratio != b[i].aspect_ratio) {
            return false;
        }
    }
    return true;
}

Dataset with_ratios(const std::vector<double>& ratios) {
    Dataset ds(core::synthetic_catalog(), {4, 4});
    for (std::size_t i = 0; i < ratios.size(); ++i) ds.add(core::SemanticMap(6, 4, 4), "ex" + std::to_string(i), ratios[i]);
    return ds;
}

std::set<std::string> ids(const Dataset& ds) {
    std::set<std::string> out;
    for (const auto& ex : ds.examples()) out.insert(ex.source_id);
    return out;
}

double centroid_x(const core::SemanticMap& map, int k) {
    double sum = 0, count = 0;
    for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
            if (map.at(k, y, x) != 0) {
                sum += x;
                ++count;
            }
        }
    }
    return sum / count;
}

void write_gray_png(const std::string& path, int h, int w, const std::vector<std::uint8_t>& pixels) {
    FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * w);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

}  // namespace

// ------------------------------------------------------------------ ingest

TEST_CASE("index PNG semantics") {
    const std::string dir = testing::fresh_dir("segvae-data");
    const auto catalog = core::synthetic_catalog();
    write_index_png(dir + "/000.png", core::IndexMap{4, 4, std::vector<std::uint8_t>(16, 0)}, catalog.palette());
    std::vector<std::uint8_t> px(16, 0);
    px[0] = 1;
    px[5] = 3;
    px[6] = 3;
    write_index_png(dir + "/001.png", core::IndexMap{4, 4, px}, catalog.palette());
    write_manifest_for(dir, catalog, {4, 4}, {1.0, 1.5});
    const Dataset ds = ingest(dir);
    REQUIRE(ds.size() == 2u);
    CHECK(ds[0].labels.count() == 0);
    CHECK(ds[0].map == core::SemanticMap(6, 4, 4));
    CHECK(ds[1].labels.members() == std::vector<int>{0, 2});
    CHECK(ds[1].map.at(2, 1, 1) == 1.0f);
    CHECK(ds[1].aspect_ratio == 1.5);
    fs::remove_all(dir);
}

TEST_CASE("ingest -> export -> ingest is lossless and export is byte-stable") {
    const Dataset original = testing::synth_set(12, 3, 32);
    const std::string a = testing::fresh_dir("segvae-rt-a"), b = testing::fresh_dir("segvae-rt-b");
    export_dataset(original, a);
    const Dataset first = ingest(a);
    CHECK(same_examples(original, first));
    export_dataset(first, b);
    const Dataset second = ingest(b);
    CHECK(same_examples(first, second));
    for (const auto& entry : fs::directory_iterator(a)) {
        CHECK(slurp(entry.path()) == slurp(fs::path(b) / entry.path().filename()));
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("ingest rejects malformed inputs") {
    const auto catalog = core::synthetic_catalog();
    const std::string dir = testing::fresh_dir("segvae-bad");
    CHECK_THROWS(ingest(dir));  // no manifest

    std::vector<std::uint8_t> px(16, 0);
    px[3] = 9;
    write_index_png(dir + "/000.png", core::IndexMap{4, 4, px}, catalog.palette());
    write_manifest_for(dir, catalog, {4, 4});
    try {
        ingest(dir);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("9") != std::string::npos);
    }

    write_index_png(dir + "/000.png", core::IndexMap{4, 4, std::vector<std::uint8_t>(16, 0)}, catalog.palette());
    write_manifest_for(dir, catalog, {8, 8});
    CHECK_THROWS(ingest(dir));  // resolution mismatch

    write_manifest_for(dir, catalog, {4, 4});
    CHECK_THROWS(ingest(dir, core::ClassCatalog({"x", "y"})));
    fs::remove_all(dir);
}

TEST_CASE("grayscale annotations are read as indices") {
    const std::string dir = testing::fresh_dir("segvae-gray");
    std::vector<std::uint8_t> px(16, 0);
    px[15] = 2;
    write_gray_png(dir + "/a.png", 4, 4, px);
    const auto index = read_index_png(dir + "/a.png");
    CHECK(index.pixels == px);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------- cleaning

TEST_CASE("clean_aspect_ratio keeps the closed one-sigma band") {
    SUBCASE("equal ratios") {
        const auto ds = with_ratios(std::vector<double>(10, 0.75));
        CHECK(clean_aspect_ratio(ds).size() == 10u);
    }
    SUBCASE("two outliers") {
        std::vector<double> ratios(98, 1.0);
        ratios.push_back(5.0);
        ratios.push_back(0.1);
        // Independent oracle: population moments by direct summation.
        double m = 0;
        for (double r : ratios) m += r;
        m /= ratios.size();
        double v = 0;
        for (double r : ratios) v += (r - m) * (r - m);
        const double s = std::sqrt(v / ratios.size());
        CHECK(m == doctest::Approx(1.031));
        CHECK(s == doctest::Approx(0.408826).epsilon(1e-5));
        std::set<std::string> expected;
        for (std::size_t i = 0; i < ratios.size(); ++i) {
            if (ratios[i] >= m - s && ratios[i] <= m + s) expected.insert("ex" + std::to_string(i));
        }
        REQUIRE(expected.size() == 98u);
        const auto ds = with_ratios(ratios);
        const auto kept = clean_aspect_ratio(ds);
        CHECK(ids(kept) == expected);

        // Order independence.
        std::vector<std::size_t> perm(ds.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng rng(4);
        rng.shuffle(perm);
        CHECK(ids(clean_aspect_ratio(ds.subset(perm, SplitTag::all))) == expected);
    }
    SUBCASE("tiny datasets pass through with a warning") {
        std::string warning;
        CHECK(clean_aspect_ratio(with_ratios({2.0}), &warning).size() == 1u);
        CHECK_FALSE(warning.empty());
    }
}

TEST_CASE("crop_to_bbox") {
    core::SemanticMap blob(2, 8, 8);
    blob.set(1, 6, 6, 1);
    blob.set(1, 6, 7, 1);
    blob.set(1, 7, 6, 1);
    blob.set(1, 7, 7, 1);
    const auto cropped = crop_to_bbox(blob, 8, 8);
    for (float v : cropped.channel(1)) CHECK(v == 1.0f);
    for (float v : cropped.channel(0)) CHECK(v == 0.0f);

    Rng rng(3);
    auto full = testing::random_map(2, 8, 8, rng);
    full.set(0, 0, 0, 1);
    full.set(0, 7, 7, 1);
    CHECK(crop_to_bbox(full, 8, 8) == full);

    const auto big = crop_to_bbox(full, 13, 5);
    for (float v : big.values()) CHECK((v == 0.0f || v == 1.0f));
    const auto resized = resize_nearest(testing::random_map(3, 7, 9, rng), 16, 4);
    CHECK(resized.height() == 16);
    CHECK(resized.width() == 4);
    for (float v : resized.values()) CHECK((v == 0.0f || v == 1.0f));
}

// ------------------------------------------------------------------- split

TEST_CASE("split sizes and partitions") {
    CHECK(split_sizes(100, {}) == std::array<std::size_t, 3>{80, 10, 10});
    CHECK(split_sizes(10, {}) == std::array<std::size_t, 3>{8, 1, 1});
    CHECK(split_sizes(7, {}) == std::array<std::size_t, 3>{7, 0, 0});

    std::vector<double> ratios(100, 1.0);
    const auto ds = with_ratios(ratios);
    const auto [train, val, test] = split(ds, {}, 5);
    CHECK(train.size() == 80u);
    CHECK(val.size() == 10u);
    CHECK(test.size() == 10u);
    CHECK(train.split() == SplitTag::train);
    std::set<std::string> all;
    for (const auto* part : {&train, &val, &test}) {
        for (const auto& id : ids(*part)) CHECK(all.insert(id).second);
    }
    CHECK(all == ids(ds));

    const auto [train2, val2, test2] = split(ds, {}, 5);
    CHECK(same_examples(train, train2));
    CHECK(same_examples(test, test2));
    const auto [train3, val3, test3] = split(ds, {}, 6);
    CHECK_FALSE(same_examples(train, train3));
}

// --------------------------------------------------------------- synthetic

TEST_CASE("synthesize is seed-deterministic and valid") {
    const auto a = testing::synth_set(50, 9);
    const auto b = testing::synth_set(50, 9);
    CHECK(same_examples(a, b));
    CHECK_FALSE(same_examples(a, testing::synth_set(50, 10)));
    for (const auto& ex : a.examples()) {
        CHECK(core::validate_semantic_map(ex.map, a.catalog(), core::Resolution{64, 64}).ok());
        CHECK(ex.labels == ex.map.extract_label_set());
        CHECK(ex.labels.contains(0));
        CHECK(ex.aspect_ratio > 0.0);
    }
}

TEST_CASE("synthesize honours zero probabilities") {
    SynthSpec spec;
    spec.n_examples = 200;
    spec.p_accessory = 0.0;
    spec.seed = 4;
    const int accessory = spec.catalog.index_of("accessory");
    const auto ds = synthesize(spec);
    for (const auto& ex : ds.examples()) CHECK_FALSE(ex.labels.contains(accessory));
    spec.p_head = 1.5;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("synthetic left limb sits left of the torso") {
    const auto ds = testing::synth_set(1000, 21);
    const int torso = ds.catalog().index_of("torso");
    const int limb = ds.catalog().index_of("left_limb");
    int with_limb = 0, left = 0;
    for (const auto& ex : ds.examples()) {
        if (!ex.labels.contains(limb)) continue;
        ++with_limb;
        left += centroid_x(ex.map, limb) < centroid_x(ex.map, torso);
    }
    REQUIRE(with_limb > 500);
    CHECK(left >= 0.99 * with_limb);
}

TEST_CASE("synthesize_with_labels draws exactly the requested parts") {
    SynthSpec spec;
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        core::LabelSet labels(6);
        labels.set(0);
        for (int k = 1; k < 6; ++k) labels.set(k, rng.bernoulli(0.5));
        const auto map = synthesize_with_labels(spec, labels, rng);
        CHECK(map.extract_label_set() == labels);
    }
}
