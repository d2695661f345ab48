#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "segvae/cli/cli.hpp"
#include "segvae/data/dataset.hpp"
#include "segvae/training/config_file.hpp"
#include "support.hpp"

using namespace segvae;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

int exit_code(const std::string& args) {
    const std::string cmd = std::string(SEGVAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++n;
        if (slurp(e.path()) != slurp(b / e.path().filename())) return false;
    }
    return n == static_cast<std::size_t>(std::distance(fs::directory_iterator(b), fs::directory_iterator{}));
}

}  // namespace

TEST_CASE("exit codes of the installed binary") {
    CHECK(exit_code("--help") == 0);
    CHECK(exit_code("") == 2);
    CHECK(exit_code("frobnicate") == 2);
    CHECK(exit_code("sample --labels torso") == 2);  // missing required flags
    CHECK(exit_code("serve --checkpoint /nonexistent/model.ckpt") == 1);
}

TEST_CASE("every verb end to end") {
    const fs::path root = testing::fresh_dir("segvae-cli");
    const std::string raw = (root / "raw").string(), split = (root / "split").string();

    auto r = invoke({"synth-data", "--n", "60", "--seed", "1", "--out", raw, "height=32", "width=32"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(data::ingest(raw).size() == 60u);

    r = invoke({"ingest", "--data", raw, "--out", split, "--seed", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto train_set = data::ingest(split + "/train");
    const auto test_set = data::ingest(split + "/test");
    CHECK(train_set.size() + test_set.size() + data::ingest(split + "/val").size() <= 60u);
    CHECK(test_set.size() >= 1u);

    training::RunConfig run;
    run.model = testing::toy_config();
    run.train.batch_size = 4;
    run.train.learning_rate = 1e-3;
    run.train.eval_every = 0;
    const std::string config = (root / "toy.txt").string();
    std::ofstream(config) << training::render_key_values(run);

    const std::string ckdir = (root / "ck").string();
    r = invoke({"train", "--data", split + "/train", "--out", ckdir, "--seed", "3", "--config", config, "max_steps=4"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const std::string ckpt = ckdir + "/final.ckpt";
    REQUIRE(fs::exists(ckpt));
    CHECK(fs::exists(ckdir + "/config.txt"));

    const std::string s1 = (root / "s1").string(), s2 = (root / "s2").string();
    r = invoke({"sample", "--checkpoint", ckpt, "--labels", "torso,head", "--seed", "5", "--n", "3", "--out", s1});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = invoke({"sample", "--checkpoint", ckpt, "--labels", "torso,head", "--seed", "5", "--n", "3", "--out", s2});
    REQUIRE(r.code == 0);
    CHECK(data::ingest(s1).size() == 3u);
    CHECK(same_tree(s1, s2));

    r = invoke({"sample", "--checkpoint", ckpt, "--labels", "torso,wing", "--out", s1});
    CHECK(r.code == 1);
    CHECK(r.err.find("wing") != std::string::npos);

    const std::string edited = (root / "edited").string();
    r = invoke({"edit", "--checkpoint", ckpt, "--data", split + "/test", "--index", "0", "--kind", "remove", "--target",
             "torso", "--seed", "4", "--out", edited});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto out = data::ingest(edited);
    REQUIRE(out.size() == 1u);
    CHECK_FALSE(out[0].labels.contains(0));
    r = invoke({"edit", "--checkpoint", ckpt, "--data", split + "/test", "--index", "999", "--kind", "remove",
             "--target", "torso", "--out", edited});
    CHECK(r.code == 1);

    const std::string report = (root / "report").string();
    r = invoke({"eval", "--checkpoint", ckpt, "--data", split + "/test", "--reference", split + "/train", "--aux-steps",
             "3", "--feature-dim", "4", "--pairs", "4", "--seed", "1", "--out", report});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto parsed = nlohmann::json::parse(std::ifstream(report + "/report.json"));
    CHECK(parsed.contains("diversity"));
    CHECK(fs::exists(report + "/report.csv"));
    CHECK(fs::exists(report + "/feature_net.bin"));

    // Reusing the stored scoring networks gives the same report.
    const std::string again = (root / "again").string();
    r = invoke({"eval", "--checkpoint", ckpt, "--data", split + "/test", "--feature-net", report + "/feature_net.bin",
             "--shape-net", report + "/shape_net.bin", "--pairs", "4", "--seed", "1", "--out", again});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(slurp(again + "/report.json") == slurp(report + "/report.json"));

    const std::string junk = (root / "junk.ckpt").string();
    std::ofstream(junk) << "not a checkpoint";
    r = invoke({"serve", "--checkpoint", junk, "--bind", "127.0.0.1:0"});
    CHECK(r.code == 1);
    CHECK(r.err.find("junk.ckpt") != std::string::npos);

    fs::remove_all(root);
}
