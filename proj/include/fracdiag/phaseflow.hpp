#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fracdiag/graph.hpp"
#include "fracdiag/snapshot.hpp"

namespace fracdiag {

// Trajectory of one weight segment's gradient norm across epochs. d1[t-1]
// pairs with epoch index t (backward difference), d2[t-2] likewise.
struct PhaseFlowSeries {
    SegmentId id;
    std::vector<std::uint64_t> epochs;
    std::vector<double> grad_norm;
    std::vector<double> loss;
    std::vector<double> d1;
    std::vector<double> d2;
};

struct Differences {
    std::vector<double> d1;
    std::vector<double> d2;
};

// First and second backward differences on the unit epoch grid.
Differences finite_differences(std::span<const double> values);

// Segments "<layer>.grad" with the same geometry as "<layer>.weight" and
// records the Frobenius norm of every gradient segment per epoch.
std::vector<PhaseFlowSeries> gradient_norm_series(const RunArchive& run, std::size_t scale,
                                                  const std::vector<std::string>& weight_tensors);

// Keeps only epochs >= first_epoch and recomputes the differences.
PhaseFlowSeries trim_series(const PhaseFlowSeries& series, std::uint64_t first_epoch);

// gradient_norm_series restricted to training epochs: the epoch-0 snapshot
// (the untrained model) is dropped when at least 3 later epochs remain.
std::vector<PhaseFlowSeries> training_series(const RunArchive& run, std::size_t scale,
                                             const std::vector<std::string>& weight_tensors);

struct ContractionReport {
    SegmentId id;
    double early_radius = 0.0;
    double late_radius = 0.0;
    std::optional<double> ratio;  // unset when early_radius == 0
    std::size_t window = 0;
};

std::size_t default_window(std::size_t epochs);

// RMS distance from the centroid of the (d1, d2) cloud over the first and the
// last `window` entries of each difference sequence. Needs
// grad_norm.size() >= 2 * window + 1.
ContractionReport contraction(const PhaseFlowSeries& series, std::size_t window);

// Ordinary least-squares slope of y on x (0 when x has no spread).
double least_squares_slope(std::span<const double> x, std::span<const double> y);

struct PlotExtent {
    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
};

// Data bounding box widened by 5% of its span on every side.
PlotExtent plot_extent(std::span<const double> x, std::span<const double> y);

std::string phaseflow_csv(const std::vector<PhaseFlowSeries>& series);
std::string grad_loss_svg(const std::vector<PhaseFlowSeries>& series);
std::string derivative_svg(const std::vector<PhaseFlowSeries>& series);

// Writes phaseflow.csv, phase_grad_vs_loss.svg and phase_d1_vs_d2.svg.
void trajectory_export(const std::vector<PhaseFlowSeries>& series, const std::filesystem::path& out_dir);

}  // namespace fracdiag
