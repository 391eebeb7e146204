#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fracdiag/segmentation.hpp"
#include "fracdiag/tensor.hpp"

namespace fracdiag {

// How the activity threshold tau is derived. Statistics are taken over |w|
// of the reference values (normally the parent slice of a segment).
struct ThresholdPolicy {
    enum class Kind { absolute, median, mean, quantile };
    Kind kind = Kind::median;
    double value = 0.0;  // constant for absolute, q in [0, 1] for quantile

    static ThresholdPolicy parse(std::string_view text);  // "median", "mean", "abs:0.1", "quantile:0.75"
    std::string to_string() const;
    double threshold(std::span<const double> reference) const;
};

class BoolGrid {
public:
    BoolGrid() = default;
    BoolGrid(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), cells_(rows * cols, 0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool operator()(std::size_t r, std::size_t c) const { return cells_[r * cols_ + c] != 0; }
    void set(std::size_t r, std::size_t c, bool on) { cells_[r * cols_ + c] = on ? 1 : 0; }
    std::size_t active_count() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<unsigned char> cells_;
};

// Active iff |value| > tau.
BoolGrid binarize(const Matrix& matrix, double tau);

struct BoxCountResult {
    std::size_t box_size = 0;
    std::size_t occupied = 0;
    std::size_t grid_boxes = 0;
};

// Non-overlapping ceil(n/b)^2 tiling; edge tiles may be smaller than b.
BoxCountResult box_count(const BoolGrid& grid, std::size_t b);

struct FractalEstimate {
    double fd = 0.0;
    std::size_t box_size = 0;
    bool degenerate = false;
};

std::size_t sub_box_size(std::size_t r_q);

// FD = ln N(b) / ln(r_q / b) with b = max(1, floor(r_q / 2)); tau is the
// activity threshold taken from the parent slice.
FractalEstimate fractal_dimension(const Segment& segment, std::size_t r_q, double tau);

struct EntropyEstimate {
    double h = 0.0;
    std::size_t bins = 0;
};

std::size_t default_bins(std::size_t r_q);

// Shannon entropy (nats) of a K-bin equal-width histogram over [min, max].
EntropyEstimate entropy(const Segment& segment, std::size_t bins);
EntropyEstimate entropy(std::span<const double> values, std::size_t bins);

}  // namespace fracdiag
