#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fracdiag/cli.hpp"
#include "support.hpp"

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "fracdiag");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = fracdiag::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("scales") {
    auto r = run({"scales", "--n", "9", "--m", "9"});
    CHECK(r.code == 0);
    CHECK(r.out == "{\"scales\":[2,3,4,5]}\n");

    r = run({"scales", "--n", "2", "--m", "5"});
    CHECK(r.code == 1);
    CHECK(r.err.find("dimension too small") != std::string::npos);
    CHECK(r.err.starts_with("dimension_too_small: "));
}

TEST_CASE("usage errors") {
    CHECK(run({}).code == 1);
    CHECK(run({"scales", "--n", "9", "--m", "9", "--bogus"}).code == 1);
    CHECK(run({"train", "--data", "synth", "--mnist-dir", "x", "--out", "y"}).code == 1);
    CHECK(run({"graph", "--run", "r", "--scale", "2", "--sign", "sideways"}).code == 1);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("missing run file exits 2") {
    auto r = run({"fd", "--run", "missing.fsnp", "--tensor", "conv1.weight", "--scale", "2"});
    CHECK(r.code == 2);
    CHECK(r.err.starts_with("io_error: "));
}

TEST_CASE("pipeline subcommands on a small synthetic run") {
    testing::TempDir dir("cli");
    const auto run_path = (dir.path / "s.fsnp").string();
    auto t = run({"--quiet", "train", "--data", "synth", "--classes", "4", "--samples", "48", "--epochs", "4",
                  "--batch-size", "16", "--out", run_path});
    REQUIRE(t.code == 0);
    CHECK(nlohmann::json::parse(t.out)["epoch_loss"].size() == 4);

    auto seg = run({"segment", "--run", run_path, "--tensor", "conv1.weight", "--scale", "2", "--epoch", "0"});
    REQUIRE(seg.code == 0);
    CHECK(nlohmann::json::parse(seg.out)["segments"].size() == 8 * 4);

    auto fd = run({"fd", "--run", run_path, "--tensor", "conv1.weight", "--scale", "2"});
    REQUIRE(fd.code == 0);
    CHECK(fd.out.starts_with("layer,channel_path,grid_i,grid_j,value\nconv1,0:0,0,0,"));
    CHECK(std::count(fd.out.begin(), fd.out.end(), '\n') == 1 + 32);

    auto big = run({"fd", "--run", run_path, "--tensor", "conv1.weight", "--scale", "3"});
    CHECK(big.code == 1);

    auto h = run({"entropy", "--run", run_path, "--tensor", "conv2.weight", "--scale", "2", "--bins", "4"});
    CHECK(h.code == 0);

    auto g = run({"graph", "--run", run_path, "--scale", "2", "--out", (dir.path / "g").string()});
    REQUIRE(g.code == 0);
    CHECK(nlohmann::json::parse(g.out)["nodes"] == 32 + 128 * 4);
    CHECK(std::filesystem::exists(dir.path / "g" / "adjacency.csv"));

    auto pf = run({"phaseflow", "--run", run_path, "--scale", "2", "--out", (dir.path / "pf").string()});
    REQUIRE(pf.code == 0);
    CHECK(std::filesystem::exists(dir.path / "pf" / "phase_d1_vs_d2.svg"));

    auto rep1 = run({"report", "--run", run_path, "--out", (dir.path / "r1").string()});
    auto rep2 = run({"--threads", "3", "report", "--run", run_path, "--out", (dir.path / "r2").string()});
    REQUIRE(rep1.code == 0);
    REQUIRE(rep2.code == 0);
    for (const char* f : {"adjacency.csv", "nodes.csv", "omega.csv", "hypergraph.json", "phaseflow.csv",
                          "phase_grad_vs_loss.svg", "phase_d1_vs_d2.svg", "summary.json"}) {
        CHECK(slurp(dir.path / "r1" / f) == slurp(dir.path / "r2" / f));
        CHECK_FALSE(slurp(dir.path / "r1" / f).empty());
    }
}

TEST_CASE("corrupted run file exits 2 with its category") {
    testing::TempDir dir("cli_bad");
    std::ofstream(dir.path / "bad.fsnp", std::ios::binary) << "NOPE0000000000000000";
    auto r = run({"segment", "--run", (dir.path / "bad.fsnp").string(), "--tensor", "w", "--scale", "2"});
    CHECK(r.code == 2);
    CHECK(r.err.starts_with("bad_magic: "));
}
