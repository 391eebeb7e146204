#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fracdiag/fractal.hpp"
#include "support.hpp"

using namespace fracdiag;

namespace {

Segment segment_of(Matrix m) {
    Segment s;
    s.size = m.rows();
    s.values = std::move(m);
    return s;
}

BoolGrid grid_from(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& on) {
    BoolGrid g(n, n);
    for (auto [r, c] : on) g.set(r, c, true);
    return g;
}

}  // namespace

TEST_CASE("threshold policies") {
    std::vector<double> v{1, -2, 3, 4};
    CHECK(ThresholdPolicy::parse("median").threshold(v) == doctest::Approx(2.5));
    CHECK(ThresholdPolicy::parse("mean").threshold(v) == doctest::Approx(2.5));
    CHECK(ThresholdPolicy::parse("abs:0.1").threshold(v) == 0.1);
    CHECK(ThresholdPolicy::parse("quantile:1").threshold(v) == doctest::Approx(4.0));
    CHECK(ThresholdPolicy::parse("quantile:0.5").to_string() == "quantile:0.5");
    CHECK_THROWS(ThresholdPolicy::parse("mode"));
    CHECK_THROWS(ThresholdPolicy::parse("quantile:1.5"));
}

TEST_CASE("binarization examples") {
    auto g = binarize(Matrix(2, 2, std::vector<double>{0, 5, 0, 5}), 0.0);
    CHECK(g(0, 1));
    CHECK(g(1, 1));
    CHECK(g.active_count() == 2);

    Matrix zeros(3, 3);
    CHECK(binarize(zeros, ThresholdPolicy{}.threshold(zeros.values())).active_count() == 0);

    Matrix m(2, 2, std::vector<double>{1, 2, 3, 4});
    auto h = binarize(m, ThresholdPolicy{}.threshold(m.values()));
    CHECK(h.active_count() == 2);
    CHECK(h(1, 0));
    CHECK(h(1, 1));
}

TEST_CASE("box count examples") {
    BoolGrid full(4, 4);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) full.set(r, c, true);
    CHECK(box_count(full, 2).occupied == 4);
    CHECK(box_count(grid_from(4, {{2, 3}}), 2).occupied == 1);

    BoolGrid diag(8, 8);
    for (std::size_t k = 0; k < 8; ++k) diag.set(k, k, true);
    auto bc = box_count(diag, 2);
    CHECK(bc.occupied == 4);
    CHECK(bc.grid_boxes == 16);

    CHECK(box_count(BoolGrid(5, 5), 2).grid_boxes == 9);
}

TEST_CASE("fractal dimension examples") {
    auto full = fractal_dimension(segment_of(Matrix(4, 4, 1.0)), 4, 0.5);
    CHECK(full.fd == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(full.box_size == 2);
    CHECK_FALSE(full.degenerate);

    auto empty = fractal_dimension(segment_of(Matrix(4, 4, 0.0)), 4, 0.5);
    CHECK(empty.fd == 0.0);
    CHECK(empty.degenerate);

    auto two = fractal_dimension(segment_of(Matrix(2, 2, std::vector<double>{1, 0, 0, 1})), 2, 0.5);
    CHECK(two.box_size == 1);
    CHECK(two.fd == doctest::Approx(1.0));

    CHECK(sub_box_size(2) == 1);
    CHECK(sub_box_size(5) == 2);
}

TEST_CASE("fractal dimension is non-negative and 2 on even filled segments") {
    std::mt19937_64 rng(11);
    for (std::size_t r = 2; r <= 12; ++r) {
        for (int trial = 0; trial < 50; ++trial) {
            auto est = fractal_dimension(segment_of(testing::random_matrix(rng, r, r)), r, 0.5);
            CHECK(est.fd >= 0.0);
            CHECK(std::isfinite(est.fd));
        }
        if (r % 2 == 0) CHECK(fractal_dimension(segment_of(Matrix(r, r, 1.0)), r, 0).fd == doctest::Approx(2.0));
    }
}

TEST_CASE("entropy examples") {
    CHECK(entropy(segment_of(Matrix(3, 3, 0.7)), 9).h == 0.0);
    CHECK(entropy(segment_of(Matrix(2, 2, std::vector<double>{0, 0, 1, 1})), 2).h ==
          doctest::Approx(std::log(2.0)));
    CHECK(entropy(segment_of(Matrix(2, 2, std::vector<double>{0, 1, 2, 3})), 4).h ==
          doctest::Approx(std::log(4.0)));
    CHECK(default_bins(2) == 4);
    CHECK(default_bins(5) == 16);
}

TEST_CASE("entropy is invariant under permutation and scaling") {
    std::mt19937_64 rng(3);
    std::vector<double> v(25);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& x : v) x = u(rng);
    const double h = entropy(std::span<const double>(v), 16).h;
    std::shuffle(v.begin(), v.end(), rng);
    CHECK(entropy(std::span<const double>(v), 16).h == doctest::Approx(h));
    for (auto& x : v) x = 2.0 * x;
    CHECK(entropy(std::span<const double>(v), 16).h == doctest::Approx(h));
}
