#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fracdiag/tensor.hpp"

namespace fracdiag {

// Valid box sizes for an n x m parameter matrix: the contiguous range
// [2, upper(n, m)] with upper determined by the parity of the square side
// (n == m) or of min(n, m).
struct ScaleRange {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<std::size_t> scales;

    bool contains(std::size_t r) const;
};

std::size_t scale_upper_bound(std::size_t n, std::size_t m);
ScaleRange valid_scales(std::size_t n, std::size_t m);

// Start offsets along one axis: ceil(dim / r) starts, start_k = min(k*r, dim - r).
// Overlap happens exactly when r does not divide dim.
std::vector<std::size_t> segment_starts(std::size_t dim, std::size_t r);

struct Segment {
    std::string layer;
    std::vector<std::size_t> channel_path;  // [out, in] for conv kernels, empty for matrices
    std::size_t grid_i = 0;
    std::size_t grid_j = 0;
    std::size_t row_start = 0;
    std::size_t col_start = 0;
    std::size_t size = 0;
    Matrix values;

    bool operator==(const Segment&) const = default;
};

// Row-major over (grid_i, grid_j). Requires r in valid_scales(rows, cols).
std::vector<Segment> extract_segments(const Matrix& slice, const std::string& layer,
                                      const std::vector<std::size_t>& channel_path, std::size_t r);

struct TensorSlice {
    std::vector<std::size_t> channel_path;
    Matrix matrix;
};

// Rank 2 yields the matrix itself; rank 4 [out, in, kh, kw] yields one
// kh x kw kernel per (out, in) pair in row-major order.
std::vector<TensorSlice> enumerate_slices(const Tensor& tensor);

// "conv1.weight" -> "conv1"; names without a suffix are returned unchanged.
std::string layer_of(const std::string& tensor_name);

std::string format_channel_path(const std::vector<std::size_t>& path);

}  // namespace fracdiag
