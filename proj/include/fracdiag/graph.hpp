#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fracdiag/fractal.hpp"
#include "fracdiag/segmentation.hpp"
#include "fracdiag/snapshot.hpp"
#include "fracdiag/tensor.hpp"

namespace fracdiag {

struct SegmentId {
    std::string layer;
    std::vector<std::size_t> channel_path;
    std::size_t grid_i = 0;
    std::size_t grid_j = 0;
    std::size_t scale = 0;

    std::string to_string() const;  // e.g. "conv1[3:0](1,0)@2"
    bool operator==(const SegmentId&) const = default;
};

struct SegmentFeature {
    SegmentId id;
    std::size_t row_start = 0;
    std::size_t col_start = 0;
    double fd = 0.0;
    double h = 0.0;
    std::vector<double> act_descriptor;
    std::vector<double> alpha;            // act_descriptor * (fd * h)
    std::vector<double> segment_values;   // flattened r x r parameters

    double alpha_norm() const;
};

enum class KernelSign { paper_positive, locality_negative };
enum class EdgePolicy { consecutive_layers, all_pairs };
enum class Normalization { paper_asymmetric, symmetric };
enum class Activation { relu, identity, tanh };

KernelSign parse_kernel_sign(std::string_view text);      // paper | locality
EdgePolicy parse_edge_policy(std::string_view text);      // consecutive | all
Normalization parse_normalization(std::string_view text); // paper | symmetric
Activation parse_activation(std::string_view text);       // relu | identity | tanh

// Mean-pools `values` over blocks of ceil(len / D) entries; when fewer than D
// blocks result, the last block mean is repeated.
std::vector<double> resample_mean_pool(std::span<const double> values, std::size_t length);

// Probe-batch mean of the activation map feeding a segment, resampled to D.
// Conv activations [probe, out, H, W] select channel_path[0]; dense
// activations [probe, out] select rows [row_start, row_start + rows).
std::vector<double> activation_descriptor(const RunArchive& run, std::uint64_t epoch,
                                          const std::string& layer,
                                          const std::vector<std::size_t>& channel_path, std::size_t length,
                                          std::size_t row_start = 0, std::size_t rows = 0);

SegmentFeature segment_feature(const Segment& segment, std::span<const double> descriptor, std::size_t r_q,
                               double tau, std::size_t bins);

double kernel_edge(std::span<const double> a, std::span<const double> b, double gamma,
                   KernelSign sign = KernelSign::paper_positive);

struct SegmentGraph {
    std::vector<SegmentFeature> nodes;       // layer-major, then grid-major
    std::vector<std::size_t> node_layer;     // index into the input layer list
    Matrix adjacency;                        // symmetric, zero diagonal
    double gamma = 1.0;
    std::size_t scale = 0;
    EdgePolicy edge_policy = EdgePolicy::consecutive_layers;
    KernelSign sign = KernelSign::paper_positive;

    bool admissible(std::size_t u, std::size_t v) const;
};

SegmentGraph build_graph(const std::vector<std::vector<SegmentFeature>>& layers, double gamma,
                         EdgePolicy policy = EdgePolicy::consecutive_layers,
                         KernelSign sign = KernelSign::paper_positive);

// A-hat = A + I, D-hat = diag(row sums of A-hat).
// paper_asymmetric: D^-1/2 A-hat D^+1/2; symmetric: D^-1/2 A-hat D^-1/2.
Matrix propagation_operator(const Matrix& adjacency, Normalization norm);

// Node inputs: [activation descriptor | flattened segment values] per row.
Matrix node_inputs(const SegmentGraph& graph);

struct PropagationResult {
    Matrix omega;
    Activation activation = Activation::relu;
};

PropagationResult propagate(const SegmentGraph& graph, const Matrix& inputs, Activation activation,
                            Normalization norm = Normalization::paper_asymmetric);

struct HyperEdge {
    std::size_t u = 0;
    std::size_t v = 0;
    double weight = 0.0;
};

struct Hypergraph {
    std::vector<std::size_t> scales;
    std::vector<SegmentFeature> nodes;  // scale-major; SegmentId carries the scale tag
    std::vector<HyperEdge> intra_edges;
    std::vector<HyperEdge> containment_edges;  // smaller-scale node -> enclosing larger-scale node
};

Hypergraph aggregate_hypergraph(const std::vector<SegmentGraph>& graphs);

// Settings shared by feature extraction in the CLI and the report.
struct FeatureConfig {
    ThresholdPolicy threshold;
    std::size_t descriptor_length = 16;
    std::optional<std::size_t> bins;  // default_bins(r) when unset
    std::size_t threads = 1;
};

// Segments every selected weight tensor at scale r (slices where r is not
// valid are skipped) and computes segment features. One inner vector per
// tensor, in the order given.
std::vector<std::vector<SegmentFeature>> collect_features(const RunArchive& run, std::uint64_t epoch,
                                                          const std::vector<std::string>& tensors,
                                                          std::size_t scale, const FeatureConfig& config);

}  // namespace fracdiag
