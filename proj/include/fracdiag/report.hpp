#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fracdiag/graph.hpp"
#include "fracdiag/snapshot.hpp"

namespace fracdiag {

// Weight tensors analysed when none are named: every rank-4 "*.weight"
// (conv kernels); runs without any fall back to rank-2 weights.
std::vector<std::string> default_weight_tensors(const RunArchive& run, std::uint64_t epoch);

std::uint64_t last_epoch(const RunArchive& run);

// Union of valid scales over every slice of the given tensors.
std::vector<std::size_t> available_scales(const RunArchive& run, std::uint64_t epoch,
                                          const std::vector<std::string>& tensors);

std::string adjacency_csv(const SegmentGraph& graph);
std::string nodes_csv(const SegmentGraph& graph);
std::string omega_csv(const PropagationResult& result);
std::string hypergraph_json(const Hypergraph& hypergraph);

struct GraphOptions {
    double gamma = 1.0;
    KernelSign sign = KernelSign::paper_positive;
    EdgePolicy edges = EdgePolicy::consecutive_layers;
    Normalization norm = Normalization::paper_asymmetric;
    Activation activation = Activation::relu;
};

// Builds the graph at one scale from per-tensor features, dropping tensors
// that contributed no segment at that scale. Returns nullopt when fewer than
// two layers remain under consecutive-layer edges.
std::optional<SegmentGraph> graph_at_scale(std::vector<std::vector<SegmentFeature>> features,
                                           const GraphOptions& options);

void write_graph_outputs(const SegmentGraph& graph, const PropagationResult& omega,
                         const std::filesystem::path& dir);

struct ReportConfig {
    std::optional<std::uint64_t> epoch;   // last epoch when unset
    std::vector<std::size_t> scales;      // every available scale when empty
    std::vector<std::string> tensors;     // default_weight_tensors when empty
    GraphOptions graph;
    std::vector<double> gamma_sweep{0.5, 1.0, 2.0};
    FeatureConfig features;
    std::optional<std::size_t> window;    // default_window(epochs) when unset
};

// Runs every stage and writes adjacency.csv, nodes.csv, omega.csv (smallest
// scale; other scales under scale_<r>/), hypergraph.json, phaseflow.csv, two
// SVGs and summary.json into out_dir. Returns the summary JSON text.
std::string full_report(const RunArchive& run, const std::filesystem::path& out_dir, const ReportConfig& config);

}  // namespace fracdiag
