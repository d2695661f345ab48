#include "doctest.h"

#include <filesystem>
#include <thread>

#include "httplib.h"
#include "segvae/core/ops.hpp"
#include "segvae/data/dataset.hpp"
#include "segvae/service/service.hpp"
#include "segvae/service/wire.hpp"
#include "support.hpp"

using namespace segvae;
using namespace segvae::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::shared_ptr<const model::SegVae> toy_model() {
    static const auto net = std::make_shared<const model::SegVae>(testing::toy_config(), 3);
    return net;
}

struct FakeClock {
    std::chrono::steady_clock::time_point now{};
    ServiceOptions options(std::chrono::seconds idle) {
        ServiceOptions o;
        o.idle_timeout = idle;
        o.clock = [this] { return now; };
        return o;
    }
};

Response post(const Service& svc, const std::string& path, const json& body) {
    return svc.handle("POST", path, body.dump());
}

}  // namespace

// --------------------------------------------------------------------- wire

TEST_CASE("run-length code round-trips and matches a hand-worked case") {
    const std::vector<float> plane{1, 1, 0, 0, 0, 1};
    // runs: 0 zeros, 2 ones, 3 zeros, 1 one
    CHECK(rle_encode(plane) == std::vector<std::uint8_t>{0, 2, 3, 1});
    CHECK(rle_decode({0, 2, 3, 1}, 6) == plane);

    std::vector<float> long_run(300, 0.0f);
    long_run.back() = 1.0f;
    CHECK(rle_encode(long_run) == std::vector<std::uint8_t>{0xAB, 0x02, 1});  // 299 as LEB128

    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto map = testing::random_map(1, 13, 11, rng, rng.uniform());
        const auto ch = map.channel(0);
        CHECK(rle_decode(rle_encode(ch), ch.size()) == std::vector<float>(ch.begin(), ch.end()));
    }
    CHECK_THROWS(rle_decode({0, 2, 3}, 6));      // short
    CHECK_THROWS(rle_decode({0, 2, 3, 9}, 6));   // long
    CHECK_THROWS(rle_decode({0, 0x80}, 6));      // truncated varint
}

TEST_CASE("base64 and map payloads") {
    const std::vector<std::uint8_t> bytes{0, 1, 2, 250, 251, 255, 7};
    CHECK(base64_encode({'f', 'o', 'o', 'b'}) == "Zm9vYg==");
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
    CHECK_THROWS(base64_decode("not base64!"));

    const auto catalog = core::synthetic_catalog();
    const auto ds = testing::synth_set(5, 2, 32);
    for (const auto& ex : ds.examples()) {
        const json payload = encode_map(ex.map, catalog, core::GenerationOrder::identity(6));
        CHECK(payload["channels"].size() == static_cast<std::size_t>(ex.labels.count()));
        CHECK(decode_map(payload, catalog) == ex.map);
        json index_only = payload;
        index_only.erase("channels");
        CHECK(decode_map(index_only, catalog) == ex.map);  // synthetic channels are disjoint
    }
}

// ------------------------------------------------------------------ routing

TEST_CASE("catalog and routing") {
    const Service svc(toy_model());
    const auto r = svc.handle("GET", "/catalog", "");
    CHECK(r.status == 200);
    CHECK(r.body["classes"].get<std::vector<std::string>>() == core::synthetic_catalog().names());
    CHECK(r.body["palette"].size() == 6u);
    CHECK(r.body["height"] == 32);

    CHECK(svc.handle("GET", "/nowhere", "").status == 404);
    CHECK(svc.handle("POST", "/catalog", "").status == 405);
    const auto bad = svc.handle("POST", "/sample", "{not json");
    CHECK(bad.status == 400);
    CHECK(bad.body["code"] == "bad_request");
    CHECK(post(svc, "/sample", {{"labels", {"hat"}}, {"seed", 1}}).status == 400);
    CHECK(post(svc, "/sample", {{"labels", "torso"}, {"seed", 1}}).status == 400);
}

TEST_CASE("sampling is byte-identical for a fixed seed") {
    const Service svc(toy_model());
    const json req{{"labels", {"torso", "head", "garment"}}, {"seed", 42}};
    const auto a = post(svc, "/sample", req);
    const auto b = post(svc, "/sample", req);
    REQUIRE(a.status == 200);
    CHECK(a.body.dump() == b.body.dump());
    CHECK(a.body["seed"] == 42);
    const auto other = post(svc, "/sample", {{"labels", {"torso", "head", "garment"}}, {"seed", 43}});
    CHECK(other.body["seed"] == 43);

    const auto empty = post(svc, "/sample", {{"labels", json::array()}, {"seed", 1}});
    CHECK(empty.status == 200);
    CHECK(empty.body["map"]["channels"].empty());

    const auto ordered = post(svc, "/sample", {{"labels", {"torso", "head"}},
                                               {"seed", 42},
                                               {"order", {"head", "torso", "left_limb", "right_limb", "garment",
                                                          "accessory"}}});
    CHECK(ordered.status == 200);
    CHECK(post(svc, "/sample", {{"labels", {"torso"}}, {"seed", 1}, {"order", {"torso"}}}).status == 400);
}

// ----------------------------------------------------------------- sessions

TEST_CASE("session lifecycle with edits and conflicts") {
    const Service svc(toy_model());
    const auto created = post(svc, "/session", {{"labels", {"torso", "head"}}, {"seed", 7}});
    REQUIRE(created.status == 201);
    const std::string id = created.body["session"];
    CHECK(id.size() == 32u);
    CHECK(created.body["map"] == post(svc, "/sample", {{"labels", {"torso", "head"}}, {"seed", 7}}).body["map"]);

    const auto labels = created.body["labels"].get<std::vector<std::string>>();
    REQUIRE(std::find(labels.begin(), labels.end(), "head") != labels.end());

    const auto conflict = post(svc, "/edit", {{"session", id}, {"kind", "add"}, {"target", "head"}, {"seed", 1}});
    CHECK(conflict.status == 409);
    CHECK(conflict.body["code"] == "conflict");
    CHECK(conflict.body["message"].get<std::string>().find("head") != std::string::npos);

    const auto added = post(svc, "/edit", {{"session", id}, {"kind", "add"}, {"target", "accessory"}, {"seed", 3}});
    REQUIRE(added.status == 200);
    CHECK(added.body["seed"] == 3);
    CHECK(added.body["kind"] == "add");
    CHECK(added.body["edits"] == 1);
    const auto restyled =
        post(svc, "/edit", {{"session", id}, {"kind", "restyle"}, {"target", "accessory"}, {"seed", 4}});
    CHECK(restyled.status == 200);
    CHECK(restyled.body["kind"] == "new_style");
    const auto removed = post(svc, "/edit", {{"session", id}, {"kind", "remove"}, {"target", "accessory"}, {"seed", 5}});
    CHECK(removed.status == 200);
    CHECK(removed.body["labels"] == created.body["labels"]);

    const auto got = svc.handle("GET", "/session/" + id, "");
    CHECK(got.status == 200);
    CHECK(got.body["edits"] == 3);
    CHECK(got.body["seed"] == 5);
    CHECK(got.body["map"] == removed.body["map"]);

    CHECK(post(svc, "/edit", {{"session", id}, {"kind", "paint"}, {"target", "head"}, {"seed", 1}}).status == 400);
    CHECK(post(svc, "/edit", {{"session", "0123"}, {"kind", "add"}, {"target", "head"}, {"seed", 1}}).status ==
          404);
    CHECK(svc.handle("GET", "/session/ffffffffffffffffffffffffffffffff", "").status == 404);
}

TEST_CASE("session from an upload and export to an ingestible directory") {
    const Service svc(toy_model());
    const auto ds = testing::synth_set(3, 6, 32);
    const json payload = encode_map(ds[1].map, ds.catalog(), core::GenerationOrder::identity(6));
    const auto created = post(svc, "/session", {{"map", payload}, {"seed", 9}});
    REQUIRE(created.status == 201);
    const std::string id = created.body["session"];
    CHECK(decode_map(created.body["map"], ds.catalog()) == ds[1].map);

    const auto exported = svc.handle("GET", "/session/" + id + "/export", "");
    REQUIRE(exported.status == 200);
    CHECK(exported.body["seed"] == 9);
    const std::string dir = testing::fresh_dir("segvae-export");
    {
        std::ofstream(dir + "/manifest.json") << exported.body["manifest"].dump();
        for (const auto& [name, b64] : exported.body["files"].items()) {
            const auto bytes = base64_decode(b64.get<std::string>());
            std::ofstream(dir + "/" + name, std::ios::binary)
                .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        }
    }
    const auto back = data::ingest(dir);
    REQUIRE(back.size() == 1u);
    CHECK(back[0].map == ds[1].map);
    fs::remove_all(dir);

    json bad = payload;
    bad["height"] = 31;
    CHECK(post(svc, "/session", {{"map", bad}}).status == 400);
    json unknown = payload;
    unknown["channels"][0]["class"] = "wing";
    CHECK(post(svc, "/session", {{"map", unknown}}).status == 400);
}

TEST_CASE("idle sessions expire and the session cap holds") {
    FakeClock clock;
    const Service svc(toy_model(), clock.options(std::chrono::seconds(60)));
    const std::string a = post(svc, "/session", {{"labels", {"torso"}}, {"seed", 1}}).body["session"];
    clock.now += std::chrono::seconds(40);
    const std::string b = post(svc, "/session", {{"labels", {"torso"}}, {"seed", 2}}).body["session"];
    CHECK(svc.session_count() == 2u);
    clock.now += std::chrono::seconds(30);  // a idle for 70 s, b for 30 s
    CHECK(svc.handle("GET", "/session/" + a, "").status == 404);
    CHECK(svc.handle("GET", "/session/" + b, "").status == 200);  // touching b resets its timer
    clock.now += std::chrono::seconds(50);
    CHECK(svc.handle("GET", "/session/" + b, "").status == 200);
    clock.now += std::chrono::seconds(61);
    CHECK(svc.handle("GET", "/session/" + b, "").status == 404);
    CHECK(svc.session_count() == 0u);

    ServiceOptions capped;
    capped.max_sessions = 2;
    const Service small(toy_model(), capped);
    CHECK(post(small, "/session", {{"labels", {"torso"}}, {"seed", 1}}).status == 201);
    CHECK(post(small, "/session", {{"labels", {"torso"}}, {"seed", 1}}).status == 201);
    const auto full = post(small, "/session", {{"labels", {"torso"}}, {"seed", 1}});
    CHECK(full.status == 503);
    CHECK(full.body["code"] == "too_many_sessions");
}

TEST_CASE("concurrent sessions never observe each other") {
    const Service svc(toy_model());
    const auto run = [&](const std::string& id, std::uint64_t seed) {
        for (int i = 0; i < 3; ++i) {
            const auto r = post(svc, "/edit", {{"session", id}, {"kind", "restyle"}, {"target", "torso"},
                                               {"seed", seed + i}});
            REQUIRE(r.status == 200);
        }
    };
    const auto create = [&](std::uint64_t seed) {
        return post(svc, "/session", {{"labels", {"torso", "head"}}, {"seed", seed}}).body["session"].get<std::string>();
    };
    // Sequential reference.
    const std::string r1 = create(1), r2 = create(2);
    run(r1, 10);
    run(r2, 20);
    const auto expect1 = svc.handle("GET", "/session/" + r1, "").body["map"];
    const auto expect2 = svc.handle("GET", "/session/" + r2, "").body["map"];

    const std::string c1 = create(1), c2 = create(2);
    CHECK(c1 != r1);
    std::thread t1([&] { run(c1, 10); });
    std::thread t2([&] { run(c2, 20); });
    t1.join();
    t2.join();
    CHECK(svc.handle("GET", "/session/" + c1, "").body["map"] == expect1);
    CHECK(svc.handle("GET", "/session/" + c2, "").body["map"] == expect2);
}

// --------------------------------------------------------------------- HTTP

TEST_CASE("live HTTP round trip on an ephemeral port") {
    const Service svc(toy_model());
    HttpServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    std::thread loop([&] { server.listen(); });

    httplib::Client client("127.0.0.1", port);
    client.set_connection_timeout(5);
    auto catalog = client.Get("/catalog");
    for (int retry = 0; !catalog && retry < 50; ++retry) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        catalog = client.Get("/catalog");
    }
    REQUIRE(catalog);
    CHECK(catalog->status == 200);
    CHECK(json::parse(catalog->body)["classes"].size() == 6u);

    const json req{{"labels", {"torso", "head"}}, {"seed", 11}};
    const auto sampled = client.Post("/sample", req.dump(), "application/json");
    REQUIRE(sampled);
    CHECK(sampled->status == 200);
    CHECK(json::parse(sampled->body) == post(svc, "/sample", req).body);

    const auto missing = client.Get("/session/abc");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(json::parse(missing->body)["code"] == "not_found");

    server.stop();
    loop.join();

    HttpServer clash(svc);
    const int taken = clash.bind("127.0.0.1", 0);
    HttpServer second(svc);
    CHECK_THROWS(second.bind("127.0.0.1", taken));
}
