#include "fracdiag/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fracdiag/error.hpp"
#include "fracdiag/fractal.hpp"
#include "fracdiag/graph.hpp"
#include "fracdiag/phaseflow.hpp"
#include "fracdiag/report.hpp"
#include "fracdiag/segmentation.hpp"
#include "fracdiag/snapshot.hpp"
#include "fracdiag/trainer.hpp"

namespace fracdiag {

namespace {

using nlohmann::ordered_json;

struct Globals {
    std::string precision = "f32";
    std::size_t threads = 1;
    bool quiet = false;
};

struct RunArgs {
    std::string run;
    std::optional<std::uint64_t> epoch;
    std::string tensor;
    std::size_t scale = 2;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// Segments of one tensor at one scale, together with each slice's threshold.
struct SegmentedTensor {
    std::vector<Segment> segments;
    std::vector<double> tau;
};

SegmentedTensor segment_tensor(const RunArchive& run, std::uint64_t epoch, const std::string& name, std::size_t scale,
                               const ThresholdPolicy& policy) {
    SegmentedTensor out;
    const auto layer = layer_of(name);
    for (const auto& slice : enumerate_slices(run.tensor(epoch, name))) {
        const double tau = policy.threshold(slice.matrix.values());
        for (auto& s : extract_segments(slice.matrix, layer, slice.channel_path, scale)) {
            out.segments.push_back(std::move(s));
            out.tau.push_back(tau);
        }
    }
    return out;
}

void add_run_options(CLI::App* cmd, RunArgs& args, bool with_tensor, bool with_scale) {
    cmd->add_option("--run", args.run, "run file (.fsnp) or ingestion directory")->required();
    cmd->add_option("--epoch", args.epoch, "epoch to analyse (default: last)");
    if (with_tensor) cmd->add_option("--tensor", args.tensor, "tensor name, e.g. conv1.weight")->required();
    if (with_scale) cmd->add_option("--scale", args.scale, "segmentation scale r")->required();
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"fracdiag: fractal diagnostics for neural-network training runs", "fracdiag"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals globals;
    if (const char* env = std::getenv("FRACDIAG_THREADS")) {
        try {
            globals.threads = std::stoul(env);
        } catch (...) {
            err << "usage: FRACDIAG_THREADS must be a positive integer\n";
            return 1;
        }
    }
    app.add_option("--precision", globals.precision, "parameter storage precision for training")
        ->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--threads", globals.threads, "worker threads (never changes output bytes)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--quiet", globals.quiet, "suppress progress output");

    // scales
    std::size_t n = 0, m = 0;
    auto* scales_cmd = app.add_subcommand("scales", "print the valid segmentation scales for an n x m matrix");
    scales_cmd->add_option("--n", n)->required();
    scales_cmd->add_option("--m", m)->required();

    // segment
    RunArgs seg_args;
    bool with_values = false;
    auto* segment_cmd = app.add_subcommand("segment", "list the segments of one tensor at one scale");
    add_run_options(segment_cmd, seg_args, true, true);
    segment_cmd->add_flag("--values", with_values, "include segment values");

    // fd / entropy
    RunArgs fd_args;
    std::string threshold = "median";
    auto* fd_cmd = app.add_subcommand("fd", "per-segment box-counting fractal dimension (CSV)");
    add_run_options(fd_cmd, fd_args, true, true);
    fd_cmd->add_option("--threshold", threshold, "median | mean | abs:C | quantile:Q");

    RunArgs h_args;
    std::optional<std::size_t> bins;
    auto* entropy_cmd = app.add_subcommand("entropy", "per-segment histogram entropy (CSV)");
    add_run_options(entropy_cmd, h_args, true, true);
    entropy_cmd->add_option("--bins", bins, "histogram bins (default min(16, r*r))")->check(CLI::PositiveNumber);

    // graph
    RunArgs g_args;
    double gamma = 1.0;
    std::string sign = "paper", edges = "consecutive", norm = "paper", activation = "relu", graph_out = ".";
    std::vector<std::string> graph_tensors;
    std::size_t descriptor_len = 16;
    std::string graph_threshold = "median";
    auto* graph_cmd = app.add_subcommand("graph", "segment graph, propagation and hypergraph at one scale");
    add_run_options(graph_cmd, g_args, false, true);
    graph_cmd->add_option("--gamma", gamma, "kernel spread")->check(CLI::PositiveNumber);
    graph_cmd->add_option("--sign", sign)->check(CLI::IsMember({"paper", "locality"}));
    graph_cmd->add_option("--edges", edges)->check(CLI::IsMember({"consecutive", "all"}));
    graph_cmd->add_option("--norm", norm)->check(CLI::IsMember({"paper", "symmetric"}));
    graph_cmd->add_option("--activation", activation)->check(CLI::IsMember({"relu", "identity", "tanh"}));
    graph_cmd->add_option("--tensor", graph_tensors, "weight tensors (default: conv kernels)");
    graph_cmd->add_option("--descriptor-len", descriptor_len)->check(CLI::PositiveNumber);
    graph_cmd->add_option("--threshold", graph_threshold);
    graph_cmd->add_option("--out", graph_out, "output directory");

    // train
    std::string preset = "desk", data = "mnist", train_out;
    std::optional<std::string> mnist_dir;
    std::optional<std::size_t> classes;
    std::size_t limit = 1000, samples = 200, epochs = 5, batch_size = 32, probe = 8;
    std::uint64_t seed = 42;
    double lr = 6e-4;
    auto* train_cmd = app.add_subcommand("train", "train the desk model and write a run archive");
    train_cmd->add_option("--preset", preset)->check(CLI::IsMember({"desk", "paper"}));
    train_cmd->add_option("--data", data)->check(CLI::IsMember({"mnist", "synth"}));
    train_cmd->add_option("--mnist-dir", mnist_dir, "directory holding the MNIST IDX training files");
    train_cmd->add_option("--limit", limit, "number of MNIST samples")->check(CLI::PositiveNumber);
    train_cmd->add_option("--classes", classes, "synthetic classes")->check(CLI::PositiveNumber);
    train_cmd->add_option("--samples", samples, "synthetic samples")->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
    train_cmd->add_option("--seed", seed);
    train_cmd->add_option("--lr", lr)->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
    train_cmd->add_option("--probe", probe, "probe batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--out", train_out, "output .fsnp path")->required();

    // phaseflow
    RunArgs pf_args;
    std::vector<std::string> pf_tensors;
    std::optional<std::size_t> window;
    std::string pf_out;
    auto* phase_cmd = app.add_subcommand("phaseflow", "per-segment gradient-norm trajectories and contraction");
    add_run_options(phase_cmd, pf_args, false, true);
    phase_cmd->add_option("--tensor", pf_tensors, "weight tensors (default: conv kernels)");
    phase_cmd->add_option("--window", window)->check(CLI::PositiveNumber);
    phase_cmd->add_option("--out", pf_out)->required();

    // report
    RunArgs rep_args;
    std::vector<std::size_t> rep_scales;
    std::vector<std::string> rep_tensors;
    std::vector<double> sweep{0.5, 1.0, 2.0};
    std::string rep_out;
    std::optional<std::size_t> rep_window;
    auto* report_cmd = app.add_subcommand("report", "run the full pipeline and write summary.json");
    report_cmd->add_option("--run", rep_args.run)->required();
    report_cmd->add_option("--epoch", rep_args.epoch);
    report_cmd->add_option("--scale", rep_scales, "restrict to these scales");
    report_cmd->add_option("--tensor", rep_tensors, "weight tensors (default: conv kernels)");
    report_cmd->add_option("--gamma", gamma)->check(CLI::PositiveNumber);
    report_cmd->add_option("--gamma-sweep", sweep)->delimiter(',');
    report_cmd->add_option("--sign", sign)->check(CLI::IsMember({"paper", "locality"}));
    report_cmd->add_option("--edges", edges)->check(CLI::IsMember({"consecutive", "all"}));
    report_cmd->add_option("--norm", norm)->check(CLI::IsMember({"paper", "symmetric"}));
    report_cmd->add_option("--threshold", graph_threshold);
    report_cmd->add_option("--window", rep_window)->check(CLI::PositiveNumber);
    report_cmd->add_option("--out", rep_out)->required();

    // ingest
    std::string ingest_dir, ingest_out;
    auto* ingest_cmd = app.add_subcommand("ingest", "convert a manifest.json + .bin directory into a run archive");
    ingest_cmd->add_option("--dir", ingest_dir)->required();
    ingest_cmd->add_option("--out", ingest_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        for (auto& c : msg) {
            if (c == '\n') c = ' ';
        }
        err << "usage: " << msg << "\n";
        return 1;
    }

    try {
        const auto precision = parse_precision(globals.precision);
        auto epoch_of = [](const RunArchive& run, const RunArgs& a) { return a.epoch.value_or(last_epoch(run)); };

        if (*scales_cmd) {
            const auto range = valid_scales(n, m);
            out << ordered_json{{"scales", range.scales}}.dump() << "\n";
        } else if (*segment_cmd) {
            const auto run = open_run(seg_args.run);
            const auto epoch = epoch_of(run, seg_args);
            const auto st = segment_tensor(run, epoch, seg_args.tensor, seg_args.scale, ThresholdPolicy{});
            ordered_json j;
            j["tensor"] = seg_args.tensor;
            j["epoch"] = epoch;
            j["scale"] = seg_args.scale;
            j["segments"] = ordered_json::array();
            for (const auto& s : st.segments) {
                ordered_json e{{"layer", s.layer},         {"channel_path", s.channel_path}, {"grid_i", s.grid_i},
                               {"grid_j", s.grid_j},       {"row_start", s.row_start},       {"col_start", s.col_start},
                               {"size", s.size}};
                if (with_values) {
                    auto rows = ordered_json::array();
                    for (std::size_t r = 0; r < s.size; ++r) {
                        auto row = ordered_json::array();
                        for (std::size_t c = 0; c < s.size; ++c) row.push_back(s.values(r, c));
                        rows.push_back(std::move(row));
                    }
                    e["values"] = std::move(rows);
                }
                j["segments"].push_back(std::move(e));
            }
            out << j.dump() << "\n";
        } else if (*fd_cmd || *entropy_cmd) {
            const bool is_fd = static_cast<bool>(*fd_cmd);
            const auto& a = is_fd ? fd_args : h_args;
            const auto run = open_run(a.run);
            const auto epoch = epoch_of(run, a);
            const auto policy = ThresholdPolicy::parse(threshold);
            const auto st = segment_tensor(run, epoch, a.tensor, a.scale, policy);
            out << "layer,channel_path,grid_i,grid_j,value\n";
            for (std::size_t k = 0; k < st.segments.size(); ++k) {
                const auto& s = st.segments[k];
                const double v = is_fd ? fractal_dimension(s, a.scale, st.tau[k]).fd
                                       : entropy(s, bins.value_or(default_bins(a.scale))).h;
                out << s.layer << ',' << format_channel_path(s.channel_path) << ',' << s.grid_i << ',' << s.grid_j
                    << ',' << fmt(v) << "\n";
            }
        } else if (*graph_cmd) {
            const auto run = open_run(g_args.run);
            const auto epoch = epoch_of(run, g_args);
            const auto tensors = graph_tensors.empty() ? default_weight_tensors(run, epoch) : graph_tensors;
            FeatureConfig fc;
            fc.threshold = ThresholdPolicy::parse(graph_threshold);
            fc.descriptor_length = descriptor_len;
            fc.threads = globals.threads;
            GraphOptions opts{gamma, parse_kernel_sign(sign), parse_edge_policy(edges), parse_normalization(norm),
                              parse_activation(activation)};
            auto graph = graph_at_scale(collect_features(run, epoch, tensors, g_args.scale, fc), opts);
            if (!graph) {
                throw Error(ErrorCode::invalid_argument,
                            "scale " + std::to_string(g_args.scale) + " yields fewer than two segmented layers");
            }
            const auto omega = propagate(*graph, node_inputs(*graph), opts.activation, opts.norm);
            write_graph_outputs(*graph, omega, graph_out);
            const auto hg = aggregate_hypergraph({*graph});
            std::ofstream(std::filesystem::path(graph_out) / "hypergraph.json", std::ios::binary) << hypergraph_json(hg);
            out << ordered_json{{"nodes", graph->nodes.size()}, {"edges", hg.intra_edges.size()},
                                {"scale", graph->scale}, {"gamma", gamma}}
                       .dump()
                << "\n";
        } else if (*train_cmd) {
            if (data == "synth" && mnist_dir) throw Error(ErrorCode::usage, "--mnist-dir conflicts with --data synth");
            if (data == "mnist" && classes) throw Error(ErrorCode::usage, "--classes conflicts with --data mnist");
            Dataset dataset = data == "synth" ? synth_dataset(seed, samples, classes.value_or(4))
                              : mnist_dir     ? load_mnist_dir(*mnist_dir, limit)
                                              : throw Error(ErrorCode::usage, "--data mnist requires --mnist-dir");
            ModelConfig config;
            if (preset == "paper") {
                dataset = replicate_channels(dataset, 3);
                config = paper_preset(dataset.shape, dataset.classes);
            } else {
                config = desk_preset(dataset.shape, dataset.classes);
            }
            config.seed = seed;
            config.epochs = epochs;
            config.lr = lr;
            config.batch_size = batch_size;
            config.probe_batch = probe;
            config.precision = precision;
            TrainOptions opts;
            opts.threads = globals.threads;
            opts.quiet = globals.quiet;
            const auto result = train(config, dataset, train_out, opts);
            out << ordered_json{{"out", train_out},
                                {"initial_loss", result.initial_loss},
                                {"epoch_loss", result.epoch_loss},
                                {"final_accuracy", result.final_accuracy}}
                       .dump()
                << "\n";
        } else if (*phase_cmd) {
            const auto run = open_run(pf_args.run);
            const auto epoch = epoch_of(run, pf_args);
            const auto tensors = pf_tensors.empty() ? default_weight_tensors(run, epoch) : pf_tensors;
            const auto series = training_series(run, pf_args.scale, tensors);
            trajectory_export(series, pf_out);
            const auto points = series.empty() ? std::size_t{0} : series.front().grad_norm.size();
            const auto w = window.value_or(default_window(points));
            std::size_t contracting = 0, evaluated = 0;
            if (points >= 2 * w + 1) {
                for (const auto& s : series) {
                    const auto rep = contraction(s, w);
                    if (!rep.ratio) continue;
                    ++evaluated;
                    contracting += *rep.ratio < 1.0 ? 1 : 0;
                }
            }
            out << ordered_json{{"series", series.size()}, {"window", w}, {"evaluated", evaluated},
                                {"contracting", contracting}}
                       .dump()
                << "\n";
        } else if (*report_cmd) {
            const auto run = open_run(rep_args.run);
            ReportConfig rc;
            rc.epoch = rep_args.epoch;
            rc.scales = rep_scales;
            rc.tensors = rep_tensors;
            rc.graph = GraphOptions{gamma, parse_kernel_sign(sign), parse_edge_policy(edges), parse_normalization(norm),
                                    Activation::relu};
            rc.gamma_sweep = sweep;
            rc.features.threshold = ThresholdPolicy::parse(graph_threshold);
            rc.features.threads = globals.threads;
            rc.window = rep_window;
            full_report(run, rep_out, rc);
            if (!globals.quiet) out << ordered_json{{"summary", (std::filesystem::path(rep_out) / "summary.json").string()}}.dump() << "\n";
        } else if (*ingest_cmd) {
            const auto run = ingest_directory(ingest_dir);
            write_run(run, ingest_out);
            out << ordered_json{{"out", ingest_out}, {"epochs", run.manifest().epochs.size()}}.dump() << "\n";
        }
    } catch (const Error& e) {
        err << code_name(e.code()) << ": " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        err << "internal: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace fracdiag
