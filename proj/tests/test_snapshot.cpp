#include <doctest.h>

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "fracdiag/error.hpp"
#include "fracdiag/snapshot.hpp"
#include "support.hpp"

using namespace fracdiag;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::usage;
}

const std::string kOneTensor =
    R"({"run_id":"r","created_utc":"1970-01-01T00:00:00Z","model_desc":"m","seed":1,)"
    R"("epochs":[{"epoch":1,"loss":0.5,"tensors":[{"name":"w","dtype":"f32","shape":[2,2],)"
    R"("byte_offset":0,"byte_length":16}]}]})";

}  // namespace

TEST_CASE("2x2 f32 tensor decodes row-major") {
    auto file = testing::raw_container(kOneTensor, testing::f32_bytes({1, 2, 3, 4}));
    auto run = parse_run(file);
    auto t = run.tensor(1, "w");
    CHECK(t.shape == std::vector<std::size_t>{2, 2});
    CHECK(t.values == std::vector<double>{1, 2, 3, 4});
    CHECK(run.manifest().run_id == "r");
    CHECK(run.manifest().epochs[0].loss == 0.5);
}

TEST_CASE("writer output matches the hand-built container") {
    RunBuilder b("r", "1970-01-01T00:00:00Z", "m", 1);
    b.begin_epoch(1, 0.5);
    b.add_tensor("w", DType::f32, Tensor{{2, 2}, {1, 2, 3, 4}});
    auto run = b.finish();
    auto bytes = serialize_run(run.manifest(), [&](const EpochSnapshot&, const TensorRecord& r) {
        auto s = run.bytes(r);
        return std::vector<std::byte>(s.begin(), s.end());
    });
    CHECK(bytes == testing::raw_container(kOneTensor, testing::f32_bytes({1, 2, 3, 4})));
}

TEST_CASE("empty epoch list round-trips") {
    RunBuilder b("empty", "1970-01-01T00:00:00Z", "none", 0);
    auto run = b.finish();
    testing::TempDir dir("snap_empty");
    write_run(run, dir.path / "e.fsnp");
    auto back = read_run(dir.path / "e.fsnp");
    CHECK(back.manifest() == run.manifest());
    CHECK(back.manifest().epochs.empty());
}

TEST_CASE("f64 values survive bit-for-bit") {
    std::vector<double> values{0.1, -0.0, std::numeric_limits<double>::denorm_min(), 1e300, -3.25,
                               std::nextafter(1.0, 2.0)};
    RunBuilder b("f64", "1970-01-01T00:00:00Z", "m", 7);
    b.begin_epoch(0, 1.0);
    b.add_tensor("x", DType::f64, Tensor{{6}, values});
    testing::TempDir dir("snap_f64");
    write_run(b.finish(), dir.path / "x.fsnp");
    auto t = read_run(dir.path / "x.fsnp").tensor(0, "x");
    REQUIRE(t.values.size() == values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
        CHECK(std::bit_cast<std::uint64_t>(t.values[k]) == std::bit_cast<std::uint64_t>(values[k]));
    }
}

TEST_CASE("missing tensor names the epoch") {
    auto run = parse_run(testing::raw_container(kOneTensor, testing::f32_bytes({1, 2, 3, 4})));
    try {
        (void)run.tensor(1, "nope");
        FAIL("expected not_found");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::not_found);
        CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
        CHECK(std::string(e.what()).find("tensor not found") != std::string::npos);
    }
}

TEST_CASE("malformed containers map to their error categories") {
    const auto payload = testing::f32_bytes({1, 2, 3, 4});
    CHECK(code_of([&] { parse_run(testing::raw_container(kOneTensor, payload, 1, "FSNQ")); }) ==
          ErrorCode::bad_magic);
    CHECK(code_of([&] { parse_run(testing::raw_container(kOneTensor, payload, 2)); }) ==
          ErrorCode::unsupported_version);
    auto truncated = testing::raw_container(kOneTensor, payload);
    truncated.resize(truncated.size() - 1);
    CHECK(code_of([&] { parse_run(truncated); }) == ErrorCode::truncated_payload);
    CHECK(code_of([&] { parse_run(testing::raw_container("{\"run_id\":", payload)); }) ==
          ErrorCode::malformed_header);

    const std::string overlapping =
        R"({"run_id":"r","created_utc":"t","model_desc":"m","seed":1,"epochs":[{"epoch":1,"loss":0.5,"tensors":[)"
        R"({"name":"a","dtype":"f32","shape":[2],"byte_offset":0,"byte_length":8},)"
        R"({"name":"b","dtype":"f32","shape":[2],"byte_offset":4,"byte_length":8}]}]})";
    CHECK(code_of([&] { parse_run(testing::raw_container(overlapping, payload)); }) ==
          ErrorCode::overlapping_extents);

    const std::string bad_length =
        R"({"run_id":"r","created_utc":"t","model_desc":"m","seed":1,"epochs":[{"epoch":1,"loss":0.5,"tensors":[)"
        R"({"name":"a","dtype":"f32","shape":[2,2],"byte_offset":0,"byte_length":12}]}]})";
    CHECK(code_of([&] { parse_run(testing::raw_container(bad_length, payload)); }) ==
          ErrorCode::invariant_violation);
}

TEST_CASE("exit codes by category") {
    CHECK(exit_code(ErrorCode::bad_magic) == 2);
    CHECK(exit_code(ErrorCode::truncated_payload) == 2);
    CHECK(exit_code(ErrorCode::scale_exceeds_dimension) == 1);
    CHECK(exit_code(ErrorCode::numerical) == 3);
    CHECK(code_name(ErrorCode::io) == "io_error");
}

TEST_CASE("manifest invariants") {
    RunManifest m;
    m.epochs.push_back(EpochSnapshot{1, 0.3, {{"conv1.weight", DType::f32, {2, 2}, 0, 0}}});
    assign_offsets(m);
    CHECK_NOTHROW(validate_manifest(m, true));

    auto non_monotone = m;
    non_monotone.epochs.push_back(non_monotone.epochs[0]);
    CHECK(code_of([&] { validate_manifest(non_monotone, false); }) == ErrorCode::invariant_violation);

    auto nan_loss = m;
    nan_loss.epochs[0].loss = std::nan("");
    CHECK(code_of([&] { validate_manifest(nan_loss, false); }) == ErrorCode::invariant_violation);

    auto lone_grad = m;
    lone_grad.epochs[0].tensors.push_back({"conv1.grad", DType::f32, {4}, 0, 0});
    assign_offsets(lone_grad);
    CHECK(code_of([&] { validate_manifest(lone_grad, true); }) == ErrorCode::invariant_violation);
}

TEST_CASE("directory ingestion equals the built archive") {
    testing::TempDir dir("ingest");
    {
        std::ofstream(dir.path / "manifest.json")
            << R"({"run_id":"ext","created_utc":"t","model_desc":"m","seed":3,"epochs":[)"
               R"({"epoch":0,"loss":2.0,"tensors":[{"name":"w","dtype":"f32","shape":[2,2],"file":"w0.bin"}]},)"
               R"({"epoch":1,"loss":1.0,"tensors":[{"name":"w","dtype":"f32","shape":[2,2],"file":"w1.bin"}]}]})";
        auto write_bin = [&](const char* name, const std::vector<float>& v) {
            auto bytes = testing::f32_bytes(v);
            std::ofstream(dir.path / name, std::ios::binary)
                .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        };
        write_bin("w0.bin", {1, 2, 3, 4});
        write_bin("w1.bin", {5, 6, 7, 8});
    }
    auto run = open_run(dir.path);
    CHECK(run.tensor(1, "w").values == std::vector<double>{5, 6, 7, 8});
    CHECK(run.manifest().epochs[1].tensors[0].byte_offset == 16);

    std::ofstream(dir.path / "w1.bin", std::ios::binary | std::ios::trunc) << "abc";
    CHECK(code_of([&] { ingest_directory(dir.path); }) == ErrorCode::truncated_payload);
}

TEST_CASE("missing run file is an io error") {
    CHECK(code_of([] { read_run("/nonexistent/run.fsnp"); }) == ErrorCode::io);
}
