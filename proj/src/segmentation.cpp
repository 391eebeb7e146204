#include "fracdiag/segmentation.hpp"

#include <algorithm>

#include "fracdiag/error.hpp"

namespace fracdiag {

bool ScaleRange::contains(std::size_t r) const {
    return std::find(scales.begin(), scales.end(), r) != scales.end();
}

std::size_t scale_upper_bound(std::size_t n, std::size_t m) {
    if (n < 3 || m < 3) {
        throw Error(ErrorCode::dimension_too_small,
                    "dimension too small: " + std::to_string(n) + "x" + std::to_string(m) +
                        " (both sides must be at least 3)");
    }
    const std::size_t side = n == m ? n : std::min(n, m);
    return side % 2 != 0 ? (side + 1) / 2 : side / 2;
}

ScaleRange valid_scales(std::size_t n, std::size_t m) {
    ScaleRange range{n, m, {}};
    for (std::size_t r = 2; r <= scale_upper_bound(n, m); ++r) range.scales.push_back(r);
    return range;
}

std::vector<std::size_t> segment_starts(std::size_t dim, std::size_t r) {
    if (r < 1) throw Error(ErrorCode::invalid_argument, "scale must be positive");
    if (r > dim) {
        throw Error(ErrorCode::scale_exceeds_dimension,
                    "scale exceeds dimension: r=" + std::to_string(r) + " > " + std::to_string(dim));
    }
    const std::size_t count = (dim + r - 1) / r;
    std::vector<std::size_t> starts(count);
    for (std::size_t k = 0; k < count; ++k) starts[k] = std::min(k * r, dim - r);
    return starts;
}

std::vector<Segment> extract_segments(const Matrix& slice, const std::string& layer,
                                      const std::vector<std::size_t>& channel_path, std::size_t r) {
    if (!valid_scales(slice.rows(), slice.cols()).contains(r)) {
        throw Error(ErrorCode::scale_exceeds_dimension,
                    "scale " + std::to_string(r) + " is not valid for a " + std::to_string(slice.rows()) +
                        "x" + std::to_string(slice.cols()) + " slice");
    }
    const auto rows = segment_starts(slice.rows(), r);
    const auto cols = segment_starts(slice.cols(), r);
    std::vector<Segment> out;
    out.reserve(rows.size() * cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            Segment s{layer, channel_path, i, j, rows[i], cols[j], r, Matrix(r, r)};
            for (std::size_t a = 0; a < r; ++a) {
                for (std::size_t b = 0; b < r; ++b) s.values(a, b) = slice(rows[i] + a, cols[j] + b);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<TensorSlice> enumerate_slices(const Tensor& tensor) {
    if (tensor.rank() == 2) {
        return {TensorSlice{{}, Matrix(tensor.shape[0], tensor.shape[1], tensor.values)}};
    }
    if (tensor.rank() != 4) {
        throw Error(ErrorCode::unsupported_rank,
                    "unsupported rank " + std::to_string(tensor.rank()) + " (expected 2 or 4)");
    }
    const auto out_ch = tensor.shape[0], in_ch = tensor.shape[1];
    const auto kh = tensor.shape[2], kw = tensor.shape[3];
    std::vector<TensorSlice> slices;
    slices.reserve(out_ch * in_ch);
    for (std::size_t o = 0; o < out_ch; ++o) {
        for (std::size_t i = 0; i < in_ch; ++i) {
            const auto base = (o * in_ch + i) * kh * kw;
            std::vector<double> v(tensor.values.begin() + static_cast<std::ptrdiff_t>(base),
                                  tensor.values.begin() + static_cast<std::ptrdiff_t>(base + kh * kw));
            slices.push_back(TensorSlice{{o, i}, Matrix(kh, kw, std::move(v))});
        }
    }
    return slices;
}

std::string layer_of(const std::string& tensor_name) {
    auto dot = tensor_name.rfind('.');
    return dot == std::string::npos ? tensor_name : tensor_name.substr(0, dot);
}

std::string format_channel_path(const std::vector<std::size_t>& path) {
    std::string out;
    for (std::size_t k = 0; k < path.size(); ++k) {
        if (k) out += ':';
        out += std::to_string(path[k]);
    }
    return out;
}

}  // namespace fracdiag
