#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fracdiag/error.hpp"
#include "fracdiag/trainer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace fracdiag;

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b, 4);
}

void write_idx(const std::filesystem::path& dir, std::uint32_t img_magic, std::uint32_t n_img, std::uint32_t n_lab,
               std::size_t pixels_written) {
    std::ofstream img(dir / "train-images-idx3-ubyte", std::ios::binary);
    write_be32(img, img_magic);
    write_be32(img, n_img);
    write_be32(img, 28);
    write_be32(img, 28);
    for (std::size_t k = 0; k < pixels_written; ++k) img.put(static_cast<char>(k % 256));
    std::ofstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
    write_be32(lab, 2049);
    write_be32(lab, n_lab);
    for (std::uint32_t k = 0; k < n_lab; ++k) lab.put(static_cast<char>(k % 10));
}

ErrorCode load_error(const std::filesystem::path& dir, std::size_t limit = 10) {
    try {
        load_mnist_dir(dir, limit);
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::usage;
}

ModelConfig tiny_synth_config(const Dataset& d) {
    auto c = desk_preset(d.shape, d.classes);
    c.epochs = 3;
    c.batch_size = 16;
    return c;
}

}  // namespace

TEST_CASE("IDX loading") {
    testing::TempDir dir("idx");
    write_idx(dir.path, 2051, 3, 3, 3 * 784);
    auto d = load_mnist_dir(dir.path, 10);
    CHECK(d.count() == 3);
    CHECK(d.shape == SampleShape{1, 28, 28});
    CHECK(d.labels == std::vector<int>{0, 1, 2});
    CHECK(d.images[1] == doctest::Approx(1.0 / 255.0));
    CHECK(d.images[255] == 1.0);
    CHECK(load_mnist_dir(dir.path, 2).count() == 2);

    write_idx(dir.path, 2052, 3, 3, 3 * 784);
    CHECK(load_error(dir.path) == ErrorCode::bad_magic);
    write_idx(dir.path, 2051, 3, 4, 3 * 784);
    CHECK(load_error(dir.path) == ErrorCode::invariant_violation);
    write_idx(dir.path, 2051, 3, 3, 2 * 784);
    CHECK(load_error(dir.path) == ErrorCode::truncated_payload);
    CHECK(load_error(dir.path / "absent") == ErrorCode::io);
}

TEST_CASE("synthetic dataset") {
    auto a = synth_dataset(1, 40, 4);
    auto b = synth_dataset(1, 40, 4);
    CHECK(a.images == b.images);
    CHECK(a.labels[5] == 1);
    CHECK(a.shape == SampleShape{1, 8, 8});
    for (double v : a.images) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    auto rgb = replicate_channels(a, 3);
    CHECK(rgb.shape == SampleShape{3, 8, 8});
    CHECK(rgb.images[64] == a.images[0]);
}

TEST_CASE("presets and shapes") {
    auto desk = desk_preset({1, 28, 28}, 10);
    auto shapes = validate_config(desk);
    CHECK(shapes.back() == SampleShape{10, 1, 1});
    Model m(desk);
    CHECK(m.params()[0].name == "conv1.weight");
    CHECK(m.params()[0].shape == std::vector<std::size_t>{8, 1, 3, 3});
    CHECK(m.params()[2].shape == std::vector<std::size_t>{16, 8, 3, 3});

    auto paper = paper_preset({3, 28, 28}, 10);
    Model p(paper);
    CHECK(p.params()[0].shape == std::vector<std::size_t>{32, 3, 3, 3});
    CHECK(p.params()[2].shape == std::vector<std::size_t>{64, 32, 3, 3});

    auto broken = desk;
    broken.layers.push_back(DenseSpec{3, 7});
    CHECK_THROWS_AS(validate_config(broken), Error);
    broken = desk;
    broken.lr = 0.0;
    CHECK_THROWS_AS(validate_config(broken), Error);
}

TEST_CASE("softmax cross-entropy") {
    Matrix logits(2, 3, std::vector<double>{1, 2, 3, 0, 0, 0});
    std::vector<int> labels{2, 0};
    auto lg = loss_and_grad(logits, labels);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    const double expected = (-(3.0 - std::log(z)) + std::log(3.0)) / 2.0;
    CHECK(lg.loss == doctest::Approx(expected).epsilon(1e-12));
    CHECK(lg.dlogits(0, 2) == doctest::Approx((std::exp(3.0) / z - 1.0) / 2.0));
    CHECK(lg.dlogits(1, 1) == doctest::Approx((1.0 / 3.0) / 2.0));
}

TEST_CASE("adam step with bias correction") {
    std::vector<double> w{1.0, -2.0}, g{0.5, -0.25}, m(2, 0.0), v(2, 0.0);
    AdamHyper h{0.1, 0.9, 0.999, 1e-8};
    adam_step(w, g, m, v, 1, h);
    // First step: m-hat = g, v-hat = g^2, so the update is lr * g / (|g| + eps).
    CHECK(w[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(-2.0 + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-12));
    CHECK(m[0] == doctest::Approx(0.05));
    CHECK(v[0] == doctest::Approx(0.001 * 0.25));
}

TEST_CASE("analytic gradients match finite differences") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto r = testing::gradient_check(seed);
        CHECK(r.checked > 0);
        CHECK(r.max_rel_error < 1e-5);
    }
}

TEST_CASE("training writes an init snapshot and one per epoch") {
    auto data = synth_dataset(3, 64, 4);
    auto result = train(tiny_synth_config(data), data);
    const auto& m = result.run.manifest();
    REQUIRE(m.epochs.size() == 4);
    CHECK(m.epochs[0].epoch == 0);
    CHECK(m.epochs[3].epoch == 3);
    CHECK(m.epochs[0].loss == result.initial_loss);
    CHECK(m.epochs[3].loss == result.epoch_loss[2]);
    CHECK(m.created_utc.size() == 20);
    auto w = result.run.tensor(0, "conv1.weight");
    CHECK(w.shape == std::vector<std::size_t>{8, 1, 3, 3});
    CHECK(result.run.tensor(2, "conv1.grad").shape == w.shape);
    CHECK(result.run.tensor(2, "conv1.act").shape == std::vector<std::size_t>{8, 8, 8, 8});
    CHECK(result.run.tensor(2, "fc1.act").shape == std::vector<std::size_t>{8, 64});
    CHECK(result.run.tensor(2, "fc2.bias").shape == std::vector<std::size_t>{4});
    CHECK(std::abs(result.initial_loss - std::log(4.0)) < 0.1 * std::log(4.0));
    for (double v : result.run.tensor(3, "conv1.act").values) CHECK(v >= 0.0);
}

TEST_CASE("thread count never changes the run") {
    auto data = synth_dataset(5, 48, 4);
    auto cfg = tiny_synth_config(data);
    TrainOptions one, four;
    four.threads = 4;
    auto a = train(cfg, data, one);
    auto b = train(cfg, data, four);
    CHECK(a.run.manifest() == b.run.manifest());
    CHECK(std::ranges::equal(a.run.payload(), b.run.payload()));
}

TEST_CASE("training rejects mismatched data") {
    auto data = synth_dataset(1, 8, 4);
    auto cfg = desk_preset({1, 28, 28}, 4);
    CHECK_THROWS_AS(train(cfg, data), Error);
    auto bad = data;
    bad.labels[0] = 9;
    CHECK_THROWS_AS(train(tiny_synth_config(data), bad), Error);
}
