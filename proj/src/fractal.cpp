#include "fracdiag/fractal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "fracdiag/error.hpp"

namespace fracdiag {

namespace {

double parse_number(std::string_view text, std::string_view what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw Error(ErrorCode::invalid_argument, "bad number '" + std::string(text) + "' in " + std::string(what));
    }
    return v;
}

// Linear interpolation between order statistics.
double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + (v[hi] - v[lo]) * frac;
}

}  // namespace

ThresholdPolicy ThresholdPolicy::parse(std::string_view text) {
    if (text == "median") return {Kind::median, 0.0};
    if (text == "mean") return {Kind::mean, 0.0};
    auto colon = text.find(':');
    if (colon != std::string_view::npos) {
        auto head = text.substr(0, colon);
        auto value = parse_number(text.substr(colon + 1), "threshold policy");
        if (head == "abs" || head == "absolute") return {Kind::absolute, value};
        if (head == "quantile") {
            if (value < 0.0 || value > 1.0) {
                throw Error(ErrorCode::invalid_argument, "quantile must lie in [0, 1]");
            }
            return {Kind::quantile, value};
        }
    }
    throw Error(ErrorCode::invalid_argument,
                "unknown threshold policy '" + std::string(text) + "' (median|mean|abs:C|quantile:Q)");
}

std::string ThresholdPolicy::to_string() const {
    auto num = [](double v) {
        char buf[32];
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, end);
    };
    switch (kind) {
    case Kind::median: return "median";
    case Kind::mean: return "mean";
    case Kind::absolute: return "abs:" + num(value);
    case Kind::quantile: return "quantile:" + num(value);
    }
    return "median";
}

double ThresholdPolicy::threshold(std::span<const double> reference) const {
    if (kind == Kind::absolute) return value;
    if (reference.empty()) throw Error(ErrorCode::invalid_argument, "threshold reference is empty");
    std::vector<double> mags(reference.size());
    std::transform(reference.begin(), reference.end(), mags.begin(), [](double x) { return std::abs(x); });
    switch (kind) {
    case Kind::mean: return std::accumulate(mags.begin(), mags.end(), 0.0) / static_cast<double>(mags.size());
    case Kind::quantile: return quantile(std::move(mags), value);
    default: return quantile(std::move(mags), 0.5);
    }
}

std::size_t BoolGrid::active_count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 1));
}

BoolGrid binarize(const Matrix& matrix, double tau) {
    if (matrix.empty()) throw Error(ErrorCode::invalid_argument, "cannot binarize an empty matrix");
    BoolGrid grid(matrix.rows(), matrix.cols());
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
        for (std::size_t c = 0; c < matrix.cols(); ++c) grid.set(r, c, std::abs(matrix(r, c)) > tau);
    }
    return grid;
}

BoxCountResult box_count(const BoolGrid& grid, std::size_t b) {
    const auto n = std::max(grid.rows(), grid.cols());
    if (b < 1 || b > n) {
        throw Error(ErrorCode::invalid_argument,
                    "box size " + std::to_string(b) + " outside [1, " + std::to_string(n) + "]");
    }
    const auto tiles_r = (grid.rows() + b - 1) / b;
    const auto tiles_c = (grid.cols() + b - 1) / b;
    BoxCountResult out{b, 0, tiles_r * tiles_c};
    for (std::size_t tr = 0; tr < tiles_r; ++tr) {
        for (std::size_t tc = 0; tc < tiles_c; ++tc) {
            bool hit = false;
            for (std::size_t r = tr * b; r < std::min((tr + 1) * b, grid.rows()) && !hit; ++r) {
                for (std::size_t c = tc * b; c < std::min((tc + 1) * b, grid.cols()); ++c) {
                    if (grid(r, c)) {
                        hit = true;
                        break;
                    }
                }
            }
            out.occupied += hit ? 1 : 0;
        }
    }
    return out;
}

std::size_t sub_box_size(std::size_t r_q) { return std::max<std::size_t>(1, r_q / 2); }

FractalEstimate fractal_dimension(const Segment& segment, std::size_t r_q, double tau) {
    if (segment.values.rows() != r_q || segment.values.cols() != r_q) {
        throw Error(ErrorCode::invalid_argument, "segment is not " + std::to_string(r_q) + "x" +
                                                     std::to_string(r_q));
    }
    const auto b = sub_box_size(r_q);
    const auto counted = box_count(binarize(segment.values, tau), b);
    if (counted.occupied == 0) return {0.0, b, true};
    const double fd = std::log(static_cast<double>(counted.occupied)) /
                      std::log(static_cast<double>(r_q) / static_cast<double>(b));
    return {fd, b, false};
}

std::size_t default_bins(std::size_t r_q) { return std::min<std::size_t>(16, r_q * r_q); }

EntropyEstimate entropy(std::span<const double> values, std::size_t bins) {
    if (bins < 1) throw Error(ErrorCode::invalid_argument, "entropy needs at least one bin");
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "entropy of an empty segment");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<std::size_t> counts(bins, 0);
    if (hi == lo) {
        counts[0] = values.size();
    } else {
        const double span = hi - lo;
        for (double x : values) {
            auto k = static_cast<std::size_t>(std::floor((x - lo) * static_cast<double>(bins) / span));
            ++counts[std::min(k, bins - 1)];
        }
    }
    double h = 0.0;
    const double total = static_cast<double>(values.size());
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / total;
        h -= p * std::log(p);
    }
    return {std::max(0.0, h), bins};
}

EntropyEstimate entropy(const Segment& segment, std::size_t bins) {
    return entropy(segment.values.values(), bins);
}

}  // namespace fracdiag
