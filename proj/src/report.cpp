#include "fracdiag/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fracdiag/error.hpp"
#include "fracdiag/phaseflow.hpp"
#include "fracdiag/segmentation.hpp"

namespace fracdiag {

namespace {

using nlohmann::ordered_json;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error(ErrorCode::io, "write failed for '" + path.string() + "'");
}

void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create '" + dir.string() + "': " + ec.message());
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error& e) {
        throw Error(e.code(), std::string("stage ") + name + ": " + e.what());
    }
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ordered_json edge_stats(const SegmentGraph& g) {
    std::size_t count = 0;
    double sum = 0.0, lo = 0.0, hi = 0.0;
    const auto n = g.nodes.size();
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
            if (!g.admissible(u, v)) continue;
            const double w = g.adjacency(u, v);
            lo = count ? std::min(lo, w) : w;
            hi = count ? std::max(hi, w) : w;
            sum += w;
            ++count;
        }
    }
    ordered_json j;
    j["gamma"] = g.gamma;
    j["scale"] = g.scale;
    j["edges"] = count;
    j["mean"] = count ? sum / static_cast<double>(count) : 0.0;
    j["min"] = lo;
    j["max"] = hi;
    return j;
}

}  // namespace

std::uint64_t last_epoch(const RunArchive& run) {
    const auto& e = run.manifest().epochs;
    if (e.empty()) throw Error(ErrorCode::not_found, "run has no epochs");
    return e.back().epoch;
}

std::vector<std::string> default_weight_tensors(const RunArchive& run, std::uint64_t epoch) {
    std::vector<std::string> conv, dense;
    for (const auto& r : run.epoch(epoch).tensors) {
        if (!r.name.ends_with(".weight")) continue;
        if (r.shape.size() == 4) conv.push_back(r.name);
        if (r.shape.size() == 2) dense.push_back(r.name);
    }
    return conv.empty() ? dense : conv;
}

std::vector<std::size_t> available_scales(const RunArchive& run, std::uint64_t epoch,
                                          const std::vector<std::string>& tensors) {
    std::set<std::size_t> scales;
    for (const auto& name : tensors) {
        const auto* r = run.epoch(epoch).find(name);
        if (!r) throw Error(ErrorCode::not_found, "tensor not found: '" + name + "' in epoch " + std::to_string(epoch));
        if (r->shape.size() != 2 && r->shape.size() != 4) {
            throw Error(ErrorCode::unsupported_rank, "unsupported rank for '" + name + "'");
        }
        const auto rows = r->shape[r->shape.size() - 2], cols = r->shape.back();
        if (rows < 3 || cols < 3) continue;
        for (auto s : valid_scales(rows, cols).scales) scales.insert(s);
    }
    return {scales.begin(), scales.end()};
}

std::string adjacency_csv(const SegmentGraph& graph) {
    std::ostringstream s;
    s << "node_u,node_v,weight\n";
    const auto n = graph.nodes.size();
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
            if (graph.adjacency(u, v) != 0.0) s << u << ',' << v << ',' << num(graph.adjacency(u, v)) << '\n';
        }
    }
    return s.str();
}

std::string nodes_csv(const SegmentGraph& graph) {
    std::ostringstream s;
    s << "node,layer,channel_path,grid_i,grid_j,scale,row_start,col_start,fd,h,alpha_norm\n";
    for (std::size_t u = 0; u < graph.nodes.size(); ++u) {
        const auto& f = graph.nodes[u];
        s << u << ',' << f.id.layer << ',' << format_channel_path(f.id.channel_path) << ',' << f.id.grid_i << ','
          << f.id.grid_j << ',' << f.id.scale << ',' << f.row_start << ',' << f.col_start << ',' << num(f.fd) << ','
          << num(f.h) << ',' << num(f.alpha_norm()) << '\n';
    }
    return s.str();
}

std::string omega_csv(const PropagationResult& result) {
    std::ostringstream s;
    s << "node,component,value\n";
    for (std::size_t u = 0; u < result.omega.rows(); ++u) {
        for (std::size_t c = 0; c < result.omega.cols(); ++c) s << u << ',' << c << ',' << num(result.omega(u, c)) << '\n';
    }
    return s.str();
}

std::string hypergraph_json(const Hypergraph& hg) {
    ordered_json j;
    j["scales"] = hg.scales;
    j["nodes"] = ordered_json::array();
    for (std::size_t k = 0; k < hg.nodes.size(); ++k) {
        const auto& f = hg.nodes[k];
        ordered_json n;
        n["id"] = k;
        n["scale"] = f.id.scale;
        n["layer"] = f.id.layer;
        n["channel_path"] = f.id.channel_path;
        n["grid_i"] = f.id.grid_i;
        n["grid_j"] = f.id.grid_j;
        n["row_start"] = f.row_start;
        n["col_start"] = f.col_start;
        n["fd"] = f.fd;
        n["h"] = f.h;
        n["alpha_norm"] = f.alpha_norm();
        j["nodes"].push_back(std::move(n));
    }
    auto edges = [](const std::vector<HyperEdge>& list) {
        auto arr = ordered_json::array();
        for (const auto& e : list) arr.push_back(ordered_json{{"u", e.u}, {"v", e.v}, {"weight", e.weight}});
        return arr;
    };
    j["intra_edges"] = edges(hg.intra_edges);
    j["containment_edges"] = edges(hg.containment_edges);
    return j.dump() + "\n";
}

std::optional<SegmentGraph> graph_at_scale(std::vector<std::vector<SegmentFeature>> features,
                                           const GraphOptions& options) {
    std::erase_if(features, [](const auto& layer) { return layer.empty(); });
    if (features.empty()) return std::nullopt;
    if (options.edges == EdgePolicy::consecutive_layers && features.size() < 2) return std::nullopt;
    return build_graph(features, options.gamma, options.edges, options.sign);
}

void write_graph_outputs(const SegmentGraph& graph, const PropagationResult& omega, const std::filesystem::path& dir) {
    make_dir(dir);
    write_text(dir / "adjacency.csv", adjacency_csv(graph));
    write_text(dir / "nodes.csv", nodes_csv(graph));
    write_text(dir / "omega.csv", omega_csv(omega));
}

std::string full_report(const RunArchive& run, const std::filesystem::path& out_dir, const ReportConfig& config) {
    make_dir(out_dir);
    const auto epoch = config.epoch.value_or(last_epoch(run));
    const auto tensors = config.tensors.empty() ? default_weight_tensors(run, epoch) : config.tensors;
    if (tensors.empty()) throw Error(ErrorCode::not_found, "run has no weight tensors to analyse");
    auto scales = stage("scales", [&] { return available_scales(run, epoch, tensors); });
    if (!config.scales.empty()) {
        for (auto s : config.scales) {
            if (std::find(scales.begin(), scales.end(), s) == scales.end()) {
                throw Error(ErrorCode::scale_exceeds_dimension,
                            "stage scales: scale " + std::to_string(s) + " is not valid for any selected tensor");
            }
        }
        scales = config.scales;
        std::sort(scales.begin(), scales.end());
        scales.erase(std::unique(scales.begin(), scales.end()), scales.end());
    }
    if (scales.empty()) throw Error(ErrorCode::dimension_too_small, "stage scales: no valid scale for the selected tensors");

    ordered_json summary;
    summary["run_id"] = run.manifest().run_id;
    summary["epoch"] = epoch;
    summary["tensors"] = tensors;
    summary["scales"] = scales;
    summary["per_scale"] = ordered_json::array();
    summary["gamma_sweep"] = ordered_json::array();

    std::vector<SegmentGraph> graphs;
    for (std::size_t si = 0; si < scales.size(); ++si) {
        const auto r = scales[si];
        auto features = stage("features", [&] { return collect_features(run, epoch, tensors, r, config.features); });
        ordered_json entry;
        entry["scale"] = r;
        entry["layers"] = ordered_json::array();
        for (std::size_t t = 0; t < tensors.size(); ++t) {
            if (features[t].empty()) continue;
            double fd = 0.0, h = 0.0;
            for (const auto& f : features[t]) {
                fd += f.fd;
                h += f.h;
            }
            const auto n = static_cast<double>(features[t].size());
            entry["layers"].push_back(ordered_json{{"layer", layer_of(tensors[t])},
                                                   {"segments", features[t].size()},
                                                   {"mean_fd", fd / n},
                                                   {"mean_h", h / n}});
        }
        auto graph = stage("graph", [&] { return graph_at_scale(features, config.graph); });
        if (!graph) {
            entry["graph"] = nullptr;
            summary["per_scale"].push_back(std::move(entry));
            continue;
        }
        const auto omega = stage("propagate", [&] {
            return propagate(*graph, node_inputs(*graph), config.graph.activation, config.graph.norm);
        });
        stage("export", [&] {
            write_graph_outputs(*graph, omega, graphs.empty() ? out_dir : out_dir / ("scale_" + std::to_string(r)));
            return 0;
        });
        entry["graph"] = edge_stats(*graph);
        for (double gamma : config.gamma_sweep) {
            auto opts = config.graph;
            opts.gamma = gamma;
            auto swept = stage("gamma sweep", [&] { return graph_at_scale(features, opts); });
            summary["gamma_sweep"].push_back(edge_stats(*swept));
        }
        summary["per_scale"].push_back(std::move(entry));
        graphs.push_back(std::move(*graph));
    }

    if (!graphs.empty()) {
        const auto hg = stage("hypergraph", [&] { return aggregate_hypergraph(graphs); });
        write_text(out_dir / "hypergraph.json", hypergraph_json(hg));
        summary["hypergraph"] = ordered_json{{"nodes", hg.nodes.size()},
                                             {"intra_edges", hg.intra_edges.size()},
                                             {"containment_edges", hg.containment_edges.size()}};
    } else {
        summary["hypergraph"] = nullptr;
    }

    // Phase flow at the smallest scale over tensors whose every slice admits it.
    const auto flow_scale = scales.front();
    std::vector<std::string> flow_tensors;
    for (const auto& name : tensors) {
        const auto& shape = run.epoch(epoch).find(name)->shape;
        const auto rows = shape[shape.size() - 2], cols = shape.back();
        if (rows >= 3 && cols >= 3 && valid_scales(rows, cols).contains(flow_scale)) flow_tensors.push_back(name);
    }
    ordered_json flow;
    flow["scale"] = flow_scale;
    if (run.manifest().epochs.size() >= 3 && !flow_tensors.empty()) {
        const auto series = stage("phaseflow", [&] { return training_series(run, flow_scale, flow_tensors); });
        stage("phaseflow export", [&] {
            trajectory_export(series, out_dir);
            return 0;
        });
        const auto epochs = series.empty() ? std::size_t{0} : series.front().grad_norm.size();
        const auto window = config.window.value_or(default_window(epochs));
        flow["window"] = window;
        flow["series"] = series.size();

        std::vector<double> d1, d2;
        for (const auto& s : series) {
            for (std::size_t k = 2; k < s.grad_norm.size(); ++k) {
                d1.push_back(s.d1[k - 1]);
                d2.push_back(s.d2[k - 2]);
            }
        }
        flow["d1_d2_slope"] = least_squares_slope(d1, d2);

        const auto edge = std::max<std::size_t>(1, epochs / 5);
        std::vector<double> first, last;
        for (const auto& s : series) {
            for (std::size_t k = 0; k < edge; ++k) first.push_back(s.grad_norm[k]);
            for (std::size_t k = epochs - edge; k < epochs; ++k) last.push_back(s.grad_norm[k]);
        }
        flow["median_grad_norm_first"] = median(first);
        flow["median_grad_norm_last"] = median(last);

        if (epochs >= 2 * window + 1) {
            ordered_json c;
            std::vector<double> ratios;
            auto list = ordered_json::array();
            for (const auto& s : series) {
                const auto rep = contraction(s, window);
                if (rep.ratio) ratios.push_back(*rep.ratio);
                list.push_back(ordered_json{{"segment", s.id.to_string()},
                                            {"early_radius", rep.early_radius},
                                            {"late_radius", rep.late_radius},
                                            {"ratio", rep.ratio ? ordered_json(*rep.ratio) : ordered_json(nullptr)}});
            }
            const auto contracting = std::count_if(ratios.begin(), ratios.end(), [](double x) { return x < 1.0; });
            c["evaluated"] = ratios.size();
            c["contracting_fraction"] =
                series.empty() ? 0.0 : static_cast<double>(contracting) / static_cast<double>(series.size());
            c["median_ratio"] = median(ratios);
            c["segments"] = std::move(list);
            flow["contraction"] = std::move(c);
        } else {
            flow["contraction"] = nullptr;
        }
    } else {
        flow["series"] = 0;
        flow["contraction"] = nullptr;
    }
    summary["phaseflow"] = std::move(flow);

    auto text = summary.dump(2) + "\n";
    write_text(out_dir / "summary.json", text);
    return text;
}

}  // namespace fracdiag
