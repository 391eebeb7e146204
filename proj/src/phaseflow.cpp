#include "fracdiag/phaseflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fracdiag/error.hpp"
#include "fracdiag/segmentation.hpp"

namespace fracdiag {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

// Blue-to-red ramp over the epoch ordinal.
std::string ramp(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(44 + (215 - 44) * t));
    const int g = static_cast<int>(std::lround(123 + (25 - 123) * t));
    const int b = static_cast<int>(std::lround(182 + (28 - 182) * t));
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

double rms_radius(std::span<const double> a, std::span<const double> b) {
    auto spread = [](std::span<const double> v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return ss / static_cast<double>(v.size());
    };
    return std::sqrt(spread(a) + spread(b));
}

struct Point {
    double x, y;
    std::size_t ordinal;
};

std::string scatter_svg(const std::vector<std::vector<Point>>& tracks, std::size_t ordinals, const std::string& title,
                        const std::string& x_label, const std::string& y_label) {
    constexpr double W = 640, H = 480, left = 70, right = 20, top = 40, bottom = 50;
    std::vector<double> xs, ys;
    for (const auto& t : tracks) {
        for (const auto& p : t) {
            xs.push_back(p.x);
            ys.push_back(p.y);
        }
    }
    const auto ext = plot_extent(xs, ys);
    auto sx = [&](double x) { return left + (x - ext.x_min) / (ext.x_max - ext.x_min) * (W - left - right); };
    auto sy = [&](double y) { return H - bottom - (y - ext.y_min) / (ext.y_max - ext.y_min) * (H - top - bottom); };
    const double denom = ordinals > 1 ? static_cast<double>(ordinals - 1) : 1.0;

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << " " << H << "\">\n";
    s << "<desc>x-range [" << num(ext.x_min) << ", " << num(ext.x_max) << "] y-range [" << num(ext.y_min) << ", "
      << num(ext.y_max) << "]</desc>\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
      << title << "</text>\n";
    s << "<g stroke=\"black\" stroke-width=\"1\">\n";
    s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
      << "\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom << "\"/>\n";
    s << "</g>\n";
    s << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    s << "<text x=\"" << left << "\" y=\"" << H - bottom + 16 << "\">" << num(ext.x_min) << "</text>\n";
    s << "<text x=\"" << W - right << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"end\">" << num(ext.x_max)
      << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << H - bottom << "\" text-anchor=\"end\">" << num(ext.y_min)
      << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\">" << num(ext.y_max)
      << "</text>\n";
    s << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label
      << "</text>\n";
    s << "<text transform=\"translate(16," << (top + H - bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << y_label << "</text>\n";
    s << "</g>\n";
    s << "<g fill=\"none\" stroke=\"#999999\" stroke-width=\"0.5\" stroke-opacity=\"0.5\">\n";
    for (const auto& t : tracks) {
        if (t.size() < 2) continue;
        s << "<polyline points=\"";
        for (std::size_t k = 0; k < t.size(); ++k) s << (k ? " " : "") << px(sx(t[k].x)) << "," << px(sy(t[k].y));
        s << "\"/>\n";
    }
    s << "</g>\n<g stroke=\"none\">\n";
    for (const auto& t : tracks) {
        for (const auto& p : t) {
            s << "<circle cx=\"" << px(sx(p.x)) << "\" cy=\"" << px(sy(p.y)) << "\" r=\"2.5\" fill=\""
              << ramp(static_cast<double>(p.ordinal) / denom) << "\"/>\n";
        }
    }
    s << "</g>\n</svg>\n";
    return s.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

}  // namespace

Differences finite_differences(std::span<const double> values) {
    if (values.size() < 3) {
        throw Error(ErrorCode::invalid_argument, "series too short: need at least 3 points, got " +
                                                     std::to_string(values.size()));
    }
    Differences d;
    for (std::size_t t = 1; t < values.size(); ++t) d.d1.push_back(values[t] - values[t - 1]);
    for (std::size_t t = 1; t < d.d1.size(); ++t) d.d2.push_back(d.d1[t] - d.d1[t - 1]);
    return d;
}

std::vector<PhaseFlowSeries> gradient_norm_series(const RunArchive& run, std::size_t scale,
                                                  const std::vector<std::string>& weight_tensors) {
    const auto& epochs = run.manifest().epochs;
    if (epochs.size() < 3) {
        throw Error(ErrorCode::invalid_argument, "too few epochs: phase flow needs at least 3, run has " +
                                                     std::to_string(epochs.size()));
    }
    std::vector<PhaseFlowSeries> out;
    for (const auto& name : weight_tensors) {
        const auto layer = layer_of(name);
        const auto grad_name = layer + ".grad";
        std::size_t first = out.size();
        for (std::size_t e = 0; e < epochs.size(); ++e) {
            if (!epochs[e].find(grad_name)) {
                throw Error(ErrorCode::not_found, "missing gradients: '" + grad_name + "' absent in epoch " +
                                                      std::to_string(epochs[e].epoch));
            }
            const auto grad = run.tensor(epochs[e].epoch, grad_name);
            std::size_t k = first;
            for (const auto& slice : enumerate_slices(grad)) {
                for (const auto& seg : extract_segments(slice.matrix, layer, slice.channel_path, scale)) {
                    if (e == 0) {
                        out.push_back({SegmentId{layer, seg.channel_path, seg.grid_i, seg.grid_j, scale}, {}, {}, {}, {}, {}});
                    }
                    double ss = 0.0;
                    for (double v : seg.values.values()) ss += v * v;
                    auto& s = out[k++];
                    s.epochs.push_back(epochs[e].epoch);
                    s.grad_norm.push_back(std::sqrt(ss));
                    s.loss.push_back(epochs[e].loss);
                }
            }
        }
    }
    for (auto& s : out) {
        auto d = finite_differences(s.grad_norm);
        s.d1 = std::move(d.d1);
        s.d2 = std::move(d.d2);
    }
    return out;
}

PhaseFlowSeries trim_series(const PhaseFlowSeries& series, std::uint64_t first_epoch) {
    PhaseFlowSeries out{series.id, {}, {}, {}, {}, {}};
    for (std::size_t k = 0; k < series.epochs.size(); ++k) {
        if (series.epochs[k] < first_epoch) continue;
        out.epochs.push_back(series.epochs[k]);
        out.grad_norm.push_back(series.grad_norm[k]);
        out.loss.push_back(series.loss[k]);
    }
    auto d = finite_differences(out.grad_norm);
    out.d1 = std::move(d.d1);
    out.d2 = std::move(d.d2);
    return out;
}

std::vector<PhaseFlowSeries> training_series(const RunArchive& run, std::size_t scale,
                                             const std::vector<std::string>& weight_tensors) {
    auto series = gradient_norm_series(run, scale, weight_tensors);
    const auto& epochs = run.manifest().epochs;
    if (epochs.front().epoch == 0 && epochs.size() >= 4) {
        for (auto& s : series) s = trim_series(s, 1);
    }
    return series;
}

std::size_t default_window(std::size_t epochs) { return std::max<std::size_t>(3, epochs / 5); }

ContractionReport contraction(const PhaseFlowSeries& series, std::size_t window) {
    if (window < 1 || series.grad_norm.size() < 2 * window + 1) {
        throw Error(ErrorCode::invalid_argument, "window too large: " + std::to_string(window) + " needs " +
                                                     std::to_string(2 * window + 1) + " epochs, series has " +
                                                     std::to_string(series.grad_norm.size()));
    }
    const std::span<const double> d1(series.d1), d2(series.d2);
    ContractionReport r;
    r.id = series.id;
    r.window = window;
    r.early_radius = rms_radius(d1.first(window), d2.first(window));
    r.late_radius = rms_radius(d1.last(window), d2.last(window));
    if (r.early_radius > 0.0) r.ratio = r.late_radius / r.early_radius;
    return r;
}

double least_squares_slope(std::span<const double> x, std::span<const double> y) {
    const auto n = std::min(x.size(), y.size());
    if (n < 2) return 0.0;
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
    }
    return sxx > 0.0 ? sxy / sxx : 0.0;
}

PlotExtent plot_extent(std::span<const double> x, std::span<const double> y) {
    auto widen = [](std::span<const double> v, double& lo, double& hi) {
        if (v.empty()) {
            lo = 0.0;
            hi = 1.0;
            return;
        }
        const auto [a, b] = std::minmax_element(v.begin(), v.end());
        double span = *b - *a;
        if (span <= 0.0) span = std::max(std::abs(*a), 1.0);
        lo = *a - 0.05 * span;
        hi = *b + 0.05 * span;
    };
    PlotExtent e;
    widen(x, e.x_min, e.x_max);
    widen(y, e.y_min, e.y_max);
    return e;
}

std::string phaseflow_csv(const std::vector<PhaseFlowSeries>& series) {
    std::ostringstream s;
    s << "segment_id,epoch,loss,grad_norm,d1,d2\n";
    for (const auto& ser : series) {
        const auto id = ser.id.to_string();
        for (std::size_t k = 0; k < ser.epochs.size(); ++k) {
            s << id << ',' << ser.epochs[k] << ',' << num(ser.loss[k]) << ',' << num(ser.grad_norm[k]) << ',';
            if (k >= 1) s << num(ser.d1[k - 1]);
            s << ',';
            if (k >= 2) s << num(ser.d2[k - 2]);
            s << '\n';
        }
    }
    return s.str();
}

std::string grad_loss_svg(const std::vector<PhaseFlowSeries>& series) {
    std::vector<std::vector<Point>> tracks;
    std::size_t ordinals = 0;
    for (const auto& s : series) {
        std::vector<Point> t;
        for (std::size_t k = 0; k < s.epochs.size(); ++k) t.push_back({s.loss[k], s.grad_norm[k], k});
        ordinals = std::max(ordinals, t.size());
        tracks.push_back(std::move(t));
    }
    return scatter_svg(tracks, ordinals, "Phase flow: gradient norm vs loss", "loss", "segment gradient norm");
}

std::string derivative_svg(const std::vector<PhaseFlowSeries>& series) {
    std::vector<std::vector<Point>> tracks;
    std::size_t ordinals = 0;
    for (const auto& s : series) {
        std::vector<Point> t;
        for (std::size_t k = 2; k < s.epochs.size(); ++k) t.push_back({s.d1[k - 1], s.d2[k - 2], k});
        ordinals = std::max(ordinals, s.epochs.size());
        tracks.push_back(std::move(t));
    }
    return scatter_svg(tracks, ordinals, "Phase flow: first vs second difference", "d/dt grad norm",
                       "d2/dt2 grad norm");
}

void trajectory_export(const std::vector<PhaseFlowSeries>& series, const std::filesystem::path& out_dir) {
    if (series.empty()) throw Error(ErrorCode::invalid_argument, "no phase-flow series to export");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create '" + out_dir.string() + "': " + ec.message());
    write_text(out_dir / "phaseflow.csv", phaseflow_csv(series));
    write_text(out_dir / "phase_grad_vs_loss.svg", grad_loss_svg(series));
    write_text(out_dir / "phase_d1_vs_d2.svg", derivative_svg(series));
}

}  // namespace fracdiag
