#include "fracdiag/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <map>
#include <set>
#include <tuple>

#include "fracdiag/error.hpp"
#include "fracdiag/parallel.hpp"

namespace fracdiag {

std::string SegmentId::to_string() const {
    return layer + "[" + format_channel_path(channel_path) + "](" + std::to_string(grid_i) + "," +
           std::to_string(grid_j) + ")@" + std::to_string(scale);
}

double SegmentFeature::alpha_norm() const {
    double s = 0.0;
    for (double a : alpha) s += a * a;
    return std::sqrt(s);
}

KernelSign parse_kernel_sign(std::string_view text) {
    if (text == "paper") return KernelSign::paper_positive;
    if (text == "locality") return KernelSign::locality_negative;
    throw Error(ErrorCode::invalid_argument, "unknown kernel sign '" + std::string(text) + "'");
}

EdgePolicy parse_edge_policy(std::string_view text) {
    if (text == "consecutive") return EdgePolicy::consecutive_layers;
    if (text == "all") return EdgePolicy::all_pairs;
    throw Error(ErrorCode::invalid_argument, "unknown edge policy '" + std::string(text) + "'");
}

Normalization parse_normalization(std::string_view text) {
    if (text == "paper") return Normalization::paper_asymmetric;
    if (text == "symmetric") return Normalization::symmetric;
    throw Error(ErrorCode::invalid_argument, "unknown normalization '" + std::string(text) + "'");
}

Activation parse_activation(std::string_view text) {
    if (text == "relu") return Activation::relu;
    if (text == "identity") return Activation::identity;
    if (text == "tanh") return Activation::tanh;
    throw Error(ErrorCode::invalid_argument, "unknown activation '" + std::string(text) + "'");
}

std::vector<double> resample_mean_pool(std::span<const double> values, std::size_t length) {
    if (length == 0) throw Error(ErrorCode::invalid_argument, "descriptor length must be positive");
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "cannot resample an empty activation map");
    const std::size_t block = (values.size() + length - 1) / length;
    std::vector<double> out;
    out.reserve(length);
    for (std::size_t start = 0; start < values.size(); start += block) {
        const auto end = std::min(values.size(), start + block);
        double sum = 0.0;
        for (std::size_t k = start; k < end; ++k) sum += values[k];
        out.push_back(sum / static_cast<double>(end - start));
    }
    while (out.size() < length) out.push_back(out.back());
    return out;
}

std::vector<double> activation_descriptor(const RunArchive& run, std::uint64_t epoch,
                                          const std::string& layer,
                                          const std::vector<std::size_t>& channel_path, std::size_t length,
                                          std::size_t row_start, std::size_t rows) {
    const auto name = layer + ".act";
    if (!run.has_tensor(epoch, name)) {
        throw Error(ErrorCode::not_found,
                    "missing activation tensor '" + name + "' in epoch " + std::to_string(epoch));
    }
    const auto act = run.tensor(epoch, name);
    if (act.rank() < 2) throw Error(ErrorCode::unsupported_rank, "activation '" + name + "' needs a batch axis");
    const std::size_t probe = act.shape[0];
    const std::size_t per_sample = act.size() / probe;

    std::size_t offset = 0, count = per_sample;
    if (act.rank() == 4) {
        const std::size_t channels = act.shape[1];
        const std::size_t plane = act.shape[2] * act.shape[3];
        const std::size_t ch = channel_path.empty() ? 0 : channel_path[0];
        if (ch >= channels) {
            throw Error(ErrorCode::invalid_argument, "channel " + std::to_string(ch) + " outside '" + name + "'");
        }
        offset = ch * plane;
        count = plane;
    } else if (act.rank() == 2 && rows > 0) {
        if (row_start + rows > per_sample) {
            throw Error(ErrorCode::invalid_argument, "segment rows outside '" + name + "'");
        }
        offset = row_start;
        count = rows;
    }
    std::vector<double> mean(count, 0.0);
    for (std::size_t s = 0; s < probe; ++s) {
        for (std::size_t k = 0; k < count; ++k) mean[k] += act.values[s * per_sample + offset + k];
    }
    for (auto& v : mean) v /= static_cast<double>(probe);
    return resample_mean_pool(mean, length);
}

SegmentFeature segment_feature(const Segment& segment, std::span<const double> descriptor, std::size_t r_q,
                               double tau, std::size_t bins) {
    SegmentFeature f;
    f.id = SegmentId{segment.layer, segment.channel_path, segment.grid_i, segment.grid_j, r_q};
    f.row_start = segment.row_start;
    f.col_start = segment.col_start;
    f.fd = fractal_dimension(segment, r_q, tau).fd;
    f.h = entropy(segment, bins).h;
    f.act_descriptor.assign(descriptor.begin(), descriptor.end());
    const double scale = f.fd * f.h;
    f.alpha.resize(descriptor.size());
    for (std::size_t k = 0; k < descriptor.size(); ++k) f.alpha[k] = descriptor[k] * scale;
    if (scale == 0.0) std::fill(f.alpha.begin(), f.alpha.end(), 0.0);
    auto v = segment.values.values();
    f.segment_values.assign(v.begin(), v.end());
    for (double a : f.alpha) {
        if (!std::isfinite(a)) {
            throw Error(ErrorCode::numerical, "non-finite feature for segment " + f.id.to_string());
        }
    }
    return f;
}

double kernel_edge(std::span<const double> a, std::span<const double> b, double gamma, KernelSign sign) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::invalid_argument, "feature length mismatch: " + std::to_string(a.size()) +
                                                     " vs " + std::to_string(b.size()));
    }
    if (!(gamma > 0.0)) throw Error(ErrorCode::invalid_argument, "gamma must be positive");
    double sq = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        sq += d * d;
    }
    const double dist = std::sqrt(sq);
    return gamma * std::exp(sign == KernelSign::paper_positive ? dist : -dist);
}

bool SegmentGraph::admissible(std::size_t u, std::size_t v) const {
    if (u == v) return false;
    if (edge_policy == EdgePolicy::all_pairs) return true;
    const auto a = node_layer[u], b = node_layer[v];
    return a + 1 == b || b + 1 == a;
}

SegmentGraph build_graph(const std::vector<std::vector<SegmentFeature>>& layers, double gamma,
                         EdgePolicy policy, KernelSign sign) {
    SegmentGraph g;
    g.gamma = gamma;
    g.edge_policy = policy;
    g.sign = sign;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (const auto& f : layers[l]) {
            g.nodes.push_back(f);
            g.node_layer.push_back(l);
        }
    }
    if (g.nodes.empty()) throw Error(ErrorCode::invalid_argument, "empty feature set");
    if (policy == EdgePolicy::consecutive_layers && layers.size() < 2) {
        throw Error(ErrorCode::invalid_argument, "consecutive-layer edges need at least two layers");
    }
    g.scale = g.nodes.front().id.scale;
    const auto n = g.nodes.size();
    g.adjacency = Matrix(n, n, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = u + 1; v < n; ++v) {
            if (!g.admissible(u, v)) continue;
            const double e = kernel_edge(g.nodes[u].alpha, g.nodes[v].alpha, gamma, sign);
            if (!std::isfinite(e)) {
                throw Error(ErrorCode::numerical, "edge weight overflow between " + g.nodes[u].id.to_string() +
                                                      " and " + g.nodes[v].id.to_string());
            }
            g.adjacency(u, v) = e;
            g.adjacency(v, u) = e;
        }
    }
    return g;
}

Matrix propagation_operator(const Matrix& adjacency, Normalization norm) {
    const auto n = adjacency.rows();
    if (adjacency.cols() != n) throw Error(ErrorCode::invalid_argument, "adjacency must be square");
    std::vector<double> degree(n, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) degree[u] += adjacency(u, v) + (u == v ? 1.0 : 0.0);
    }
    Matrix m(n, n);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) {
            const double a_hat = adjacency(u, v) + (u == v ? 1.0 : 0.0);
            const double right = norm == Normalization::paper_asymmetric ? std::sqrt(degree[v])
                                                                         : 1.0 / std::sqrt(degree[v]);
            m(u, v) = a_hat / std::sqrt(degree[u]) * right;
        }
    }
    return m;
}

Matrix node_inputs(const SegmentGraph& graph) {
    if (graph.nodes.empty()) return {};
    const auto width = graph.nodes.front().act_descriptor.size() + graph.nodes.front().segment_values.size();
    Matrix x(graph.nodes.size(), width);
    for (std::size_t u = 0; u < graph.nodes.size(); ++u) {
        const auto& f = graph.nodes[u];
        if (f.act_descriptor.size() + f.segment_values.size() != width) {
            throw Error(ErrorCode::invalid_argument, "node " + f.id.to_string() + " has mismatched input width");
        }
        std::size_t c = 0;
        for (double v : f.act_descriptor) x(u, c++) = v;
        for (double v : f.segment_values) x(u, c++) = v;
    }
    return x;
}

PropagationResult propagate(const SegmentGraph& graph, const Matrix& inputs, Activation activation,
                            Normalization norm) {
    const auto n = graph.nodes.size();
    if (inputs.rows() != n) {
        throw Error(ErrorCode::invalid_argument, "input rows " + std::to_string(inputs.rows()) +
                                                     " != node count " + std::to_string(n));
    }
    const auto m = propagation_operator(graph.adjacency, norm);
    Matrix omega(n, inputs.cols(), 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t k = 0; k < n; ++k) {
            const double w = m(u, k);
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < inputs.cols(); ++c) omega(u, c) += w * inputs(k, c);
        }
    }
    for (auto& v : omega.values()) {
        switch (activation) {
        case Activation::relu: v = std::max(0.0, v); break;
        case Activation::tanh: v = std::tanh(v); break;
        case Activation::identity: break;
        }
        if (!std::isfinite(v)) throw Error(ErrorCode::numerical, "non-finite propagation output");
    }
    return {std::move(omega), activation};
}

Hypergraph aggregate_hypergraph(const std::vector<SegmentGraph>& graphs) {
    Hypergraph hg;
    std::set<std::size_t> seen;
    std::vector<std::size_t> offsets;
    for (const auto& g : graphs) {
        if (!seen.insert(g.scale).second) {
            throw Error(ErrorCode::invalid_argument, "scale collision: scale " + std::to_string(g.scale) +
                                                         " appears twice");
        }
        offsets.push_back(hg.nodes.size());
        hg.scales.push_back(g.scale);
        const auto n = g.nodes.size();
        for (std::size_t u = 0; u < n; ++u) {
            for (std::size_t v = u + 1; v < n; ++v) {
                if (g.adjacency(u, v) != 0.0) {
                    hg.intra_edges.push_back({offsets.back() + u, offsets.back() + v, g.adjacency(u, v)});
                }
            }
        }
        hg.nodes.insert(hg.nodes.end(), g.nodes.begin(), g.nodes.end());
    }

    // Group nodes by source slice so containment only compares within a slice.
    std::map<std::pair<std::string, std::vector<std::size_t>>, std::vector<std::size_t>> by_slice;
    for (std::size_t k = 0; k < hg.nodes.size(); ++k) {
        by_slice[{hg.nodes[k].id.layer, hg.nodes[k].id.channel_path}].push_back(k);
    }
    for (const auto& [key, members] : by_slice) {
        for (auto u : members) {
            const auto& a = hg.nodes[u];
            for (auto v : members) {
                const auto& b = hg.nodes[v];
                if (b.id.scale <= a.id.scale) continue;
                const bool inside = a.row_start >= b.row_start &&
                                    a.row_start + a.id.scale <= b.row_start + b.id.scale &&
                                    a.col_start >= b.col_start &&
                                    a.col_start + a.id.scale <= b.col_start + b.id.scale;
                if (inside) hg.containment_edges.push_back({u, v, 1.0});
            }
        }
    }
    std::sort(hg.containment_edges.begin(), hg.containment_edges.end(),
              [](const HyperEdge& x, const HyperEdge& y) { return std::tie(x.u, x.v) < std::tie(y.u, y.v); });
    return hg;
}

std::vector<std::vector<SegmentFeature>> collect_features(const RunArchive& run, std::uint64_t epoch,
                                                          const std::vector<std::string>& tensors,
                                                          std::size_t scale, const FeatureConfig& config) {
    std::vector<std::vector<SegmentFeature>> out;
    for (const auto& name : tensors) {
        const auto layer = layer_of(name);
        const auto tensor = run.tensor(epoch, name);
        const auto slices = enumerate_slices(tensor);

        struct Job {
            const TensorSlice* slice;
            Segment segment;
            double tau;
        };
        std::vector<Job> jobs;
        for (const auto& slice : slices) {
            if (slice.matrix.rows() < 3 || slice.matrix.cols() < 3) continue;
            if (!valid_scales(slice.matrix.rows(), slice.matrix.cols()).contains(scale)) continue;
            const double tau = config.threshold.threshold(slice.matrix.values());
            for (auto& seg : extract_segments(slice.matrix, layer, slice.channel_path, scale)) {
                jobs.push_back({&slice, std::move(seg), tau});
            }
        }
        const auto bins = config.bins.value_or(default_bins(scale));
        std::vector<SegmentFeature> features(jobs.size());
        const bool dense = tensor.rank() == 2;
        parallel_for(jobs.size(), config.threads, [&](std::size_t k) {
            const auto& job = jobs[k];
            const auto descriptor = activation_descriptor(run, epoch, layer, job.segment.channel_path,
                                                          config.descriptor_length,
                                                          dense ? job.segment.row_start : 0, dense ? scale : 0);
            features[k] = segment_feature(job.segment, descriptor, scale, job.tau, bins);
        });
        out.push_back(std::move(features));
    }
    return out;
}

}  // namespace fracdiag
