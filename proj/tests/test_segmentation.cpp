#include <doctest.h>

#include <set>

#include "fracdiag/error.hpp"
#include "fracdiag/segmentation.hpp"
#include "support.hpp"

using namespace fracdiag;

namespace {

std::vector<std::size_t> range_2_to(std::size_t upper) {
    std::vector<std::size_t> out;
    for (std::size_t r = 2; r <= upper; ++r) out.push_back(r);
    return out;
}

}  // namespace

TEST_CASE("valid scale examples") {
    CHECK(valid_scales(9, 9).scales == range_2_to(5));
    CHECK(valid_scales(3, 3).scales == range_2_to(2));
    CHECK(valid_scales(6, 10).scales == range_2_to(3));
    CHECK(valid_scales(8, 8).scales == range_2_to(4));
    CHECK(valid_scales(7, 12).scales == range_2_to(4));
    CHECK(valid_scales(9, 9).contains(5));
    CHECK_FALSE(valid_scales(9, 9).contains(6));
}

TEST_CASE("too-small dimensions are rejected") {
    CHECK_THROWS_AS(valid_scales(2, 5), Error);
    try {
        valid_scales(5, 2);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension_too_small);
    }
}

TEST_CASE("segment start examples") {
    CHECK(segment_starts(3, 2) == std::vector<std::size_t>{0, 1});
    CHECK(segment_starts(4, 2) == std::vector<std::size_t>{0, 2});
    CHECK(segment_starts(5, 2) == std::vector<std::size_t>{0, 2, 3});
    CHECK(segment_starts(6, 6) == std::vector<std::size_t>{0});
    try {
        segment_starts(3, 4);
        FAIL("expected scale error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::scale_exceeds_dimension);
    }
}

TEST_CASE("starts cover the axis and overlap only when r does not divide dim") {
    for (std::size_t dim = 2; dim <= 40; ++dim) {
        for (std::size_t r = 1; r <= dim; ++r) {
            auto starts = segment_starts(dim, r);
            CHECK(starts.size() == (dim + r - 1) / r);
            std::vector<int> hits(dim, 0);
            for (auto s : starts) {
                REQUIRE(s + r <= dim);
                for (std::size_t k = s; k < s + r; ++k) ++hits[k];
            }
            bool covered = true, overlap = false;
            for (int h : hits) {
                covered = covered && h >= 1;
                overlap = overlap || h > 1;
            }
            CHECK(covered);
            CHECK(overlap == (dim % r != 0));
        }
    }
}

TEST_CASE("3x3 at r=2 gives four overlapping segments") {
    auto segs = extract_segments(testing::iota_matrix(3, 3), "conv1", {0, 0}, 2);
    REQUIRE(segs.size() == 4);
    std::set<std::pair<std::size_t, std::size_t>> origins;
    for (const auto& s : segs) origins.insert({s.row_start, s.col_start});
    CHECK(origins == std::set<std::pair<std::size_t, std::size_t>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    CHECK(segs[3].values == Matrix(2, 2, std::vector<double>{4, 5, 7, 8}));
}

TEST_CASE("4x4 at r=2 partitions the slice") {
    auto segs = extract_segments(testing::iota_matrix(4, 4), "fc", {}, 2);
    REQUIRE(segs.size() == 4);
    CHECK(segs[0].values == Matrix(2, 2, std::vector<double>{0, 1, 4, 5}));
    std::multiset<double> cells;
    for (const auto& s : segs) cells.insert(s.values.values().begin(), s.values.values().end());
    CHECK(cells.size() == 16);
    CHECK(std::set<double>(cells.begin(), cells.end()).size() == 16);
}

TEST_CASE("segment values equal the parent window") {
    std::mt19937_64 rng(5);
    auto slice = testing::random_matrix(rng, 7, 9);
    for (auto r : valid_scales(7, 9).scales) {
        for (const auto& s : extract_segments(slice, "x", {}, r)) {
            REQUIRE(s.values.rows() == r);
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < r; ++j) CHECK(s.values(i, j) == slice(s.row_start + i, s.col_start + j));
            }
        }
    }
}

TEST_CASE("slice enumeration") {
    Tensor conv{{8, 1, 3, 3}, std::vector<double>(72)};
    for (std::size_t k = 0; k < 72; ++k) conv.values[k] = static_cast<double>(k);
    auto slices = enumerate_slices(conv);
    REQUIRE(slices.size() == 8);
    CHECK(slices[2].channel_path == std::vector<std::size_t>{2, 0});
    CHECK(slices[2].matrix(0, 0) == 18.0);

    CHECK(enumerate_slices(Tensor{{32, 3, 3, 3}, std::vector<double>(32 * 27)}).size() == 96);
    auto dense = enumerate_slices(Tensor{{4, 5}, std::vector<double>(20)});
    REQUIRE(dense.size() == 1);
    CHECK(dense[0].channel_path.empty());
    CHECK(dense[0].matrix.cols() == 5);

    try {
        enumerate_slices(Tensor{{2, 3, 3}, std::vector<double>(18)});
        FAIL("expected rank error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unsupported_rank);
    }
}

TEST_CASE("names") {
    CHECK(layer_of("conv1.weight") == "conv1");
    CHECK(layer_of("plain") == "plain");
    CHECK(format_channel_path({3, 0}) == "3:0");
    CHECK(format_channel_path({}).empty());
}
