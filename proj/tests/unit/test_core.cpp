#include "doctest.h"

#include "segvae/core/ops.hpp"
#include "segvae/core/types.hpp"
#include "support.hpp"

using namespace segvae;
using namespace segvae::core;

TEST_CASE("make_label_set edge cases") {
    const auto catalog = synthetic_catalog();
    CHECK(make_label_set({}, catalog).count() == 0);
    CHECK(make_label_set(catalog.names(), catalog).count() == catalog.size());
    CHECK(make_label_set({"head", "torso", "head"}, catalog) == make_label_set({"torso", "head"}, catalog));
    CHECK_THROWS_AS(make_label_set({"wing"}, catalog), std::invalid_argument);
}

TEST_CASE("label-set names round-trip for every subset") {
    const auto catalog = synthetic_catalog();
    for (int bits = 0; bits < (1 << catalog.size()); ++bits) {
        LabelSet labels(catalog.size());
        for (int k = 0; k < catalog.size(); ++k) labels.set(k, (bits >> k) & 1);
        CHECK(make_label_set(label_set_names(labels, catalog), catalog) == labels);
    }
}

TEST_CASE("compose_index_map on hand-worked maps") {
    SemanticMap blank(3, 2, 2);
    const auto order = GenerationOrder::identity(3);
    CHECK(compose_index_map(blank, order).pixels == std::vector<std::uint8_t>{0, 0, 0, 0});

    SemanticMap full(3, 2, 2);
    for (auto& v : full.channel(1)) v = 1.0f;
    CHECK(compose_index_map(full, order).pixels == std::vector<std::uint8_t>{2, 2, 2, 2});

    // channel 0 covers the top row, channel 2 the left column; they meet at (0,0).
    SemanticMap overlap(3, 2, 2);
    overlap.set(0, 0, 0, 1);
    overlap.set(0, 0, 1, 1);
    overlap.set(2, 0, 0, 1);
    overlap.set(2, 1, 0, 1);
    CHECK(compose_index_map(overlap, GenerationOrder({0, 1, 2})).pixels == std::vector<std::uint8_t>{3, 1, 3, 0});
    CHECK(compose_index_map(overlap, GenerationOrder({2, 1, 0})).pixels == std::vector<std::uint8_t>{1, 1, 3, 0});
}

TEST_CASE("compose_index_map range, determinism and order independence for disjoint maps") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const SemanticMap map = testing::random_map(4, 6, 5, rng, 0.5);
        const auto a = compose_index_map(map, GenerationOrder({3, 1, 0, 2}));
        CHECK(a == compose_index_map(map, GenerationOrder({3, 1, 0, 2})));
        for (auto v : a.pixels) CHECK(v <= 4);

        // Round-trip through the index view gives a disjoint map.
        const SemanticMap disjoint = explode_index_map(a, 4);
        CHECK(compose_index_map(disjoint, GenerationOrder::identity(4)) ==
              compose_index_map(disjoint, GenerationOrder({2, 0, 3, 1})));
        CHECK(compose_index_map(disjoint, GenerationOrder::identity(4)) == a);
    }
}

TEST_CASE("validate_semantic_map reports") {
    const auto catalog = synthetic_catalog();
    SemanticMap ok(6, 4, 4);
    ok.set(0, 1, 1, 1);
    CHECK(validate_semantic_map(ok, catalog).ok());

    SemanticMap half = ok;
    half.set(2, 3, 1, 0.5f);
    const auto report = validate_semantic_map(half, catalog);
    REQUIRE(report.issues.size() == 1);
    CHECK(report.issues[0].code == "non_binary");
    CHECK(report.issues[0].message.find("left_limb") != std::string::npos);
    CHECK(report.issues[0].message.find("y 3, x 1") != std::string::npos);

    SemanticMap wrong(5, 4, 4);
    const auto shape = validate_semantic_map(wrong, catalog);
    REQUIRE_FALSE(shape.ok());
    CHECK(shape.issues[0].code == "shape");

    CHECK_FALSE(validate_semantic_map(ok, catalog, Resolution{8, 8}).ok());
}

TEST_CASE("extract_label_set follows non-empty channels") {
    SemanticMap map(4, 3, 3);
    map.set(1, 2, 2, 1);
    map.set(3, 0, 0, 1);
    const auto labels = map.extract_label_set();
    CHECK(labels.members() == std::vector<int>{1, 3});
}

TEST_CASE("generation order rejects non-permutations") {
    CHECK_THROWS(GenerationOrder({0, 0, 1}));
    CHECK_THROWS(GenerationOrder({0, 3}));
    const GenerationOrder order({2, 0, 1});
    CHECK(order.before(2, 1));
    CHECK(order.position(1) == 2);
}

TEST_CASE("canvas fill marks channels") {
    Canvas canvas = Canvas::blank(3, 2, 2);
    CHECK(canvas.filled().empty());
    canvas.fill(1, std::vector<float>{1, 0, 0, 1});
    CHECK(canvas.is_filled(1));
    CHECK(canvas.map().at(1, 1, 1) == 1.0f);
}
