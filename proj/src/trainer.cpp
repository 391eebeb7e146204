#include "fracdiag/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "fracdiag/error.hpp"
#include "fracdiag/parallel.hpp"

namespace fracdiag {

namespace {

constexpr std::size_t npos = static_cast<std::size_t>(-1);

// Portable [0, 1) double from a 64-bit engine draw.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

double store(double v, Precision p) { return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v; }

std::string utc_timestamp() {
    std::time_t t = 0;
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(env, nullptr, 10));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

std::size_t sample_elems(const SampleShape& s) { return s[0] * s[1] * s[2]; }

}  // namespace

Precision parse_precision(std::string_view text) {
    if (text == "f32") return Precision::f32;
    if (text == "f64") return Precision::f64;
    throw Error(ErrorCode::invalid_argument, "unknown precision '" + std::string(text) + "'");
}

std::vector<SampleShape> validate_config(const ModelConfig& c) {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::invalid_argument, m); };
    if (!(c.lr > 0.0)) fail("learning rate must be positive");
    if (!(c.eps_adam > 0.0)) fail("Adam epsilon must be positive");
    if (!(c.beta1 > 0.0 && c.beta1 < 1.0 && c.beta2 > 0.0 && c.beta2 < 1.0)) fail("Adam betas must lie in (0, 1)");
    if (c.epochs < 1) fail("epochs must be at least 1");
    if (c.batch_size < 1) fail("batch size must be at least 1");
    if (c.probe_batch < 1) fail("probe batch must be at least 1");
    if (c.layers.empty()) fail("model has no layers");
    std::vector<SampleShape> shapes;
    SampleShape cur = c.input;
    for (std::size_t k = 0; k < c.layers.size(); ++k) {
        const auto where = "layer " + std::to_string(k) + ": ";
        std::visit(
            [&](const auto& spec) {
                using T = std::decay_t<decltype(spec)>;
                if constexpr (std::is_same_v<T, ConvSpec>) {
                    if (spec.in_ch != cur[0]) fail(where + "conv expects " + std::to_string(spec.in_ch) +
                                                   " channels, got " + std::to_string(cur[0]));
                    if (spec.out_ch < 1 || spec.kernel < 1 || spec.stride < 1) fail(where + "bad conv spec");
                    if (cur[1] + 2 * spec.pad < spec.kernel || cur[2] + 2 * spec.pad < spec.kernel) {
                        fail(where + "conv kernel larger than padded input");
                    }
                    cur = {spec.out_ch, (cur[1] + 2 * spec.pad - spec.kernel) / spec.stride + 1,
                           (cur[2] + 2 * spec.pad - spec.kernel) / spec.stride + 1};
                } else if constexpr (std::is_same_v<T, PoolSpec>) {
                    if (spec.window < 1 || cur[1] < spec.window || cur[2] < spec.window) {
                        fail(where + "pool window does not fit");
                    }
                    cur = {cur[0], cur[1] / spec.window, cur[2] / spec.window};
                } else if constexpr (std::is_same_v<T, DenseSpec>) {
                    if (spec.in != sample_elems(cur)) fail(where + "dense expects " + std::to_string(spec.in) +
                                                           " inputs, got " + std::to_string(sample_elems(cur)));
                    if (spec.out < 1) fail(where + "dense needs outputs");
                    cur = {spec.out, 1, 1};
                }
            },
            c.layers[k]);
        shapes.push_back(cur);
    }
    if (!std::holds_alternative<DenseSpec>(c.layers.back())) fail("last layer must be dense (logits)");
    return shapes;
}

std::string describe_config(const ModelConfig& c) {
    std::ostringstream out;
    out << c.preset << ":";
    for (const auto& layer : c.layers) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, ConvSpec>) {
                    out << " conv(" << s.in_ch << "->" << s.out_ch << ",k" << s.kernel << ",p" << s.pad << ",s"
                        << s.stride << ")";
                } else if constexpr (std::is_same_v<T, ReluSpec>) {
                    out << " relu";
                } else if constexpr (std::is_same_v<T, PoolSpec>) {
                    out << " pool" << s.window;
                } else {
                    out << " dense(" << s.in << "->" << s.out << ")";
                }
            },
            layer);
    }
    out << "; adam lr=" << c.lr << " betas=(" << c.beta1 << "," << c.beta2 << ") eps=" << c.eps_adam
        << "; batch=" << c.batch_size << " probe=" << c.probe_batch
        << " precision=" << (c.precision == Precision::f32 ? "f32" : "f64");
    return out.str();
}

namespace {

ModelConfig two_conv_preset(std::string name, const SampleShape& input, std::size_t classes, std::size_t c1,
                            std::size_t c2, std::size_t hidden) {
    ModelConfig c;
    c.preset = std::move(name);
    c.input = input;
    const auto h = input[1] / 2 / 2, w = input[2] / 2 / 2;
    c.layers = {ConvSpec{c1, input[0], 3, 1, 1}, ReluSpec{}, PoolSpec{2},
                ConvSpec{c2, c1, 3, 1, 1},       ReluSpec{}, PoolSpec{2},
                DenseSpec{hidden, c2 * h * w},   ReluSpec{}, DenseSpec{classes, hidden}};
    return c;
}

}  // namespace

ModelConfig desk_preset(const SampleShape& input, std::size_t classes) {
    return two_conv_preset("desk", input, classes, 8, 16, 64);
}

ModelConfig paper_preset(const SampleShape& input, std::size_t classes) {
    return two_conv_preset("paper", input, classes, 32, 64, 128);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t limit) {
    if (limit == 0) throw Error(ErrorCode::invalid_argument, "empty dataset: limit must be positive");
    const auto img = read_bytes(images_path);
    const auto lbl = read_bytes(labels_path);
    if (img.size() < 16 || be32(img, 0) != 0x00000803) {
        throw Error(ErrorCode::bad_magic, "bad magic: '" + images_path.string() + "' is not an IDX image file");
    }
    if (lbl.size() < 8 || be32(lbl, 0) != 0x00000801) {
        throw Error(ErrorCode::bad_magic, "bad magic: '" + labels_path.string() + "' is not an IDX label file");
    }
    const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
    if (be32(lbl, 4) != n) {
        throw Error(ErrorCode::invariant_violation, "IDX count mismatch: " + std::to_string(n) + " images vs " +
                                                        std::to_string(be32(lbl, 4)) + " labels");
    }
    const auto take = std::min(limit, n);
    if (take == 0) throw Error(ErrorCode::invalid_argument, "empty dataset");
    if (img.size() < 16 + take * rows * cols || lbl.size() < 8 + take) {
        throw Error(ErrorCode::truncated_payload, "truncated IDX data");
    }
    Dataset d;
    d.shape = {1, rows, cols};
    d.classes = 10;
    d.images.resize(take * rows * cols);
    for (std::size_t k = 0; k < d.images.size(); ++k) d.images[k] = static_cast<double>(img[16 + k]) / 255.0;
    d.labels.resize(take);
    for (std::size_t k = 0; k < take; ++k) {
        d.labels[k] = lbl[8 + k];
        if (d.labels[k] > 9) throw Error(ErrorCode::invariant_violation, "IDX label out of range");
    }
    return d;
}

Dataset load_mnist_dir(const std::filesystem::path& dir, std::size_t limit) {
    return load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", limit);
}

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes, double noise) {
    if (classes < 1 || n < classes) {
        throw Error(ErrorCode::invalid_argument, "synthetic dataset needs n >= classes >= 1");
    }
    constexpr std::size_t side = 8;
    Dataset d;
    d.shape = {1, side, side};
    d.classes = classes;
    d.images.resize(n * side * side);
    d.labels.resize(n);
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < n; ++k) {
        const auto c = k % classes;
        d.labels[k] = static_cast<int>(c);
        // Each class gets its own spatial frequency pair and phase.
        const double fx = static_cast<double>(c % 4);
        const double fy = static_cast<double>(1 + c / 4);
        const double phase = 0.7 * static_cast<double>(c);
        for (std::size_t y = 0; y < side; ++y) {
            for (std::size_t x = 0; x < side; ++x) {
                const double arg = 2.0 * std::numbers::pi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) /
                                   static_cast<double>(side);
                double v = 0.5 + 0.4 * std::sin(arg + phase);
                v += noise * (2.0 * unit_draw(rng) - 1.0);
                d.images[k * side * side + y * side + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return d;
}

Dataset replicate_channels(const Dataset& data, std::size_t channels) {
    if (data.shape[0] != 1) throw Error(ErrorCode::invalid_argument, "can only replicate single-channel data");
    Dataset out = data;
    out.shape[0] = channels;
    const auto plane = data.sample_size();
    out.images.resize(data.count() * plane * channels);
    for (std::size_t k = 0; k < data.count(); ++k) {
        for (std::size_t c = 0; c < channels; ++c) {
            std::copy_n(data.images.begin() + static_cast<std::ptrdiff_t>(k * plane), plane,
                        out.images.begin() + static_cast<std::ptrdiff_t>((k * channels + c) * plane));
        }
    }
    return out;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
    shapes_ = validate_config(config_);
    std::mt19937_64 rng(config_.seed);
    std::size_t convs = 0, denses = 0;
    auto glorot = [&](Parameter& p, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : p.values) v = store((2.0 * unit_draw(rng) - 1.0) * limit, config_.precision);
    };
    for (const auto& layer : config_.layers) {
        if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
            names_.push_back("conv" + std::to_string(++convs));
            param_index_.push_back(params_.size());
            Parameter w{names_.back() + ".weight", {conv->out_ch, conv->in_ch, conv->kernel, conv->kernel}, {}};
            w.values.resize(Tensor::element_count(w.shape));
            const double k2 = static_cast<double>(conv->kernel * conv->kernel);
            glorot(w, static_cast<double>(conv->in_ch) * k2, static_cast<double>(conv->out_ch) * k2);
            params_.push_back(std::move(w));
            params_.push_back({names_.back() + ".bias", {conv->out_ch}, std::vector<double>(conv->out_ch, 0.0)});
        } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
            names_.push_back("fc" + std::to_string(++denses));
            param_index_.push_back(params_.size());
            Parameter w{names_.back() + ".weight", {dense->out, dense->in}, {}};
            w.values.resize(dense->out * dense->in);
            glorot(w, static_cast<double>(dense->in), static_cast<double>(dense->out));
            params_.push_back(std::move(w));
            params_.push_back({names_.back() + ".bias", {dense->out}, std::vector<double>(dense->out, 0.0)});
        } else {
            names_.emplace_back();
            param_index_.push_back(npos);
        }
    }
}

std::size_t Model::activation_layer(std::size_t layer) const {
    if (layer + 1 < config_.layers.size() && std::holds_alternative<ReluSpec>(config_.layers[layer + 1])) {
        return layer + 1;
    }
    return layer;
}

Gradients Model::zero_gradients() const {
    Gradients g;
    for (const auto& p : params_) g.emplace_back(p.values.size(), 0.0);
    return g;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.values.size();
    return n;
}

std::vector<double> Model::forward(std::span<const double> input, Trace* trace) const {
    if (input.size() != sample_elems(config_.input)) {
        throw Error(ErrorCode::invalid_argument, "input has " + std::to_string(input.size()) + " values, expected " +
                                                     std::to_string(sample_elems(config_.input)));
    }
    std::vector<double> cur(input.begin(), input.end());
    if (trace) {
        trace->input = cur;
        trace->outputs.assign(config_.layers.size(), {});
        trace->pool_argmax.assign(config_.layers.size(), {});
    }
    SampleShape in_shape = config_.input;
    for (std::size_t k = 0; k < config_.layers.size(); ++k) {
        const auto& out_shape = shapes_[k];
        std::vector<double> out(sample_elems(out_shape), 0.0);
        const auto& layer = config_.layers[k];
        if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
            const auto& w = params_[param_index_[k]].values;
            const auto& b = params_[param_index_[k] + 1].values;
            const auto H = in_shape[1], W = in_shape[2], OH = out_shape[1], OW = out_shape[2];
            const auto K = conv->kernel;
            for (std::size_t o = 0; o < conv->out_ch; ++o) {
                for (std::size_t y = 0; y < OH; ++y) {
                    for (std::size_t x = 0; x < OW; ++x) {
                        double acc = b[o];
                        for (std::size_t i = 0; i < conv->in_ch; ++i) {
                            for (std::size_t ky = 0; ky < K; ++ky) {
                                const auto iy = static_cast<std::ptrdiff_t>(y * conv->stride + ky) -
                                                static_cast<std::ptrdiff_t>(conv->pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t kx = 0; kx < K; ++kx) {
                                    const auto ix = static_cast<std::ptrdiff_t>(x * conv->stride + kx) -
                                                    static_cast<std::ptrdiff_t>(conv->pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                    acc += w[((o * conv->in_ch + i) * K + ky) * K + kx] *
                                           cur[(i * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
                                }
                            }
                        }
                        out[(o * OH + y) * OW + x] = acc;
                    }
                }
            }
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            for (std::size_t j = 0; j < cur.size(); ++j) out[j] = cur[j] > 0.0 ? cur[j] : 0.0;
        } else if (const auto* pool = std::get_if<PoolSpec>(&layer)) {
            const auto H = in_shape[1], W = in_shape[2], OH = out_shape[1], OW = out_shape[2];
            std::vector<std::size_t> argmax(out.size());
            for (std::size_t c = 0; c < in_shape[0]; ++c) {
                for (std::size_t y = 0; y < OH; ++y) {
                    for (std::size_t x = 0; x < OW; ++x) {
                        std::size_t best = (c * H + y * pool->window) * W + x * pool->window;
                        for (std::size_t dy = 0; dy < pool->window; ++dy) {
                            for (std::size_t dx = 0; dx < pool->window; ++dx) {
                                const auto idx = (c * H + y * pool->window + dy) * W + x * pool->window + dx;
                                if (cur[idx] > cur[best]) best = idx;
                            }
                        }
                        const auto o = (c * OH + y) * OW + x;
                        out[o] = cur[best];
                        argmax[o] = best;
                    }
                }
            }
            if (trace) trace->pool_argmax[k] = std::move(argmax);
        } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
            const auto& w = params_[param_index_[k]].values;
            const auto& b = params_[param_index_[k] + 1].values;
            for (std::size_t o = 0; o < dense->out; ++o) {
                double acc = b[o];
                const double* row = w.data() + o * dense->in;
                for (std::size_t i = 0; i < dense->in; ++i) acc += row[i] * cur[i];
                out[o] = acc;
            }
        }
        if (trace) trace->outputs[k] = out;
        cur = std::move(out);
        in_shape = out_shape;
    }
    return cur;
}

void Model::backward(const Trace& trace, std::span<const double> dlogits, Gradients& grads) const {
    std::vector<double> grad(dlogits.begin(), dlogits.end());
    for (std::size_t k = config_.layers.size(); k-- > 0;) {
        const auto& in = k == 0 ? trace.input : trace.outputs[k - 1];
        const auto& in_shape = k == 0 ? config_.input : shapes_[k - 1];
        const auto& out_shape = shapes_[k];
        std::vector<double> din(in.size(), 0.0);
        const auto& layer = config_.layers[k];
        if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
            const auto& w = params_[param_index_[k]].values;
            auto& dw = grads[param_index_[k]];
            auto& db = grads[param_index_[k] + 1];
            const auto H = in_shape[1], W = in_shape[2], OH = out_shape[1], OW = out_shape[2];
            const auto K = conv->kernel;
            for (std::size_t o = 0; o < conv->out_ch; ++o) {
                for (std::size_t y = 0; y < OH; ++y) {
                    for (std::size_t x = 0; x < OW; ++x) {
                        const double g = grad[(o * OH + y) * OW + x];
                        if (g == 0.0) continue;
                        db[o] += g;
                        for (std::size_t i = 0; i < conv->in_ch; ++i) {
                            for (std::size_t ky = 0; ky < K; ++ky) {
                                const auto iy = static_cast<std::ptrdiff_t>(y * conv->stride + ky) -
                                                static_cast<std::ptrdiff_t>(conv->pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t kx = 0; kx < K; ++kx) {
                                    const auto ix = static_cast<std::ptrdiff_t>(x * conv->stride + kx) -
                                                    static_cast<std::ptrdiff_t>(conv->pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                    const auto widx = ((o * conv->in_ch + i) * K + ky) * K + kx;
                                    const auto iidx = (i * H + static_cast<std::size_t>(iy)) * W +
                                                      static_cast<std::size_t>(ix);
                                    dw[widx] += g * in[iidx];
                                    din[iidx] += g * w[widx];
                                }
                            }
                        }
                    }
                }
            }
        } else if (std::holds_alternative<ReluSpec>(layer)) {
            const auto& out = trace.outputs[k];
            for (std::size_t j = 0; j < din.size(); ++j) din[j] = out[j] > 0.0 ? grad[j] : 0.0;
        } else if (std::holds_alternative<PoolSpec>(layer)) {
            const auto& argmax = trace.pool_argmax[k];
            for (std::size_t o = 0; o < argmax.size(); ++o) din[argmax[o]] += grad[o];
        } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
            const auto& w = params_[param_index_[k]].values;
            auto& dw = grads[param_index_[k]];
            auto& db = grads[param_index_[k] + 1];
            for (std::size_t o = 0; o < dense->out; ++o) {
                const double g = grad[o];
                db[o] += g;
                if (g == 0.0) continue;
                const double* row = w.data() + o * dense->in;
                double* drow = dw.data() + o * dense->in;
                for (std::size_t i = 0; i < dense->in; ++i) {
                    drow[i] += g * in[i];
                    din[i] += g * row[i];
                }
            }
        }
        grad = std::move(din);
    }
}

BatchForward forward(const Model& model, const Dataset& data, std::span<const std::size_t> indices) {
    const auto classes = model.output_shapes().back()[0];
    BatchForward out{Matrix(indices.size(), classes), std::vector<Trace>(indices.size())};
    for (std::size_t s = 0; s < indices.size(); ++s) {
        const auto logits = model.forward(data.sample(indices[s]), &out.traces[s]);
        for (std::size_t c = 0; c < classes; ++c) out.logits(s, c) = logits[c];
    }
    return out;
}

LossGrad loss_and_grad(const Matrix& logits, std::span<const int> labels) {
    const auto n = logits.rows(), classes = logits.cols();
    if (labels.size() != n) throw Error(ErrorCode::invalid_argument, "label count does not match logits rows");
    LossGrad out{0.0, Matrix(n, classes)};
    for (std::size_t s = 0; s < n; ++s) {
        const int label = labels[s];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw Error(ErrorCode::invalid_argument, "label " + std::to_string(label) + " out of range");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, logits(s, c));
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits(s, c) - mx);
        const double log_z = std::log(z) + mx;
        out.loss += log_z - logits(s, static_cast<std::size_t>(label));
        for (std::size_t c = 0; c < classes; ++c) {
            const double p = std::exp(logits(s, c) - log_z);
            out.dlogits(s, c) = (p - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    out.loss /= static_cast<double>(n);
    return out;
}

void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
               std::uint64_t t, const AdamHyper& hyper) {
    if (t < 1) throw Error(ErrorCode::invalid_argument, "Adam step count starts at 1");
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
        throw Error(ErrorCode::invalid_argument, "Adam buffers disagree in size");
    }
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * grads[k];
        v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * grads[k] * grads[k];
        const double m_hat = m[k] / c1;
        const double v_hat = v[k] / c2;
        params[k] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
}

double accuracy(const Model& model, const Dataset& data) {
    std::size_t correct = 0;
    for (std::size_t k = 0; k < data.count(); ++k) {
        const auto logits = model.forward(data.sample(k));
        const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
        correct += best == data.labels[k] ? 1 : 0;
    }
    return data.count() ? static_cast<double>(correct) / static_cast<double>(data.count()) : 0.0;
}

namespace {

struct BatchStats {
    double loss = 0.0;  // batch mean
    std::size_t correct = 0;
};

// Mean gradient of one batch into `batch_grad`. Per-sample gradients are
// reduced in sample order so the result does not depend on `threads`.
BatchStats batch_gradient(const Model& model, const Dataset& data, std::span<const std::size_t> indices,
                          std::size_t threads, std::vector<Gradients>& slots, Gradients& batch_grad) {
    const auto fwd = forward(model, data, indices);
    std::vector<int> labels(indices.size());
    for (std::size_t s = 0; s < indices.size(); ++s) labels[s] = data.labels[indices[s]];
    const auto lg = loss_and_grad(fwd.logits, labels);

    BatchStats stats{lg.loss, 0};
    for (std::size_t s = 0; s < indices.size(); ++s) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < fwd.logits.cols(); ++c) {
            if (fwd.logits(s, c) > fwd.logits(s, best)) best = c;
        }
        stats.correct += static_cast<int>(best) == labels[s] ? 1 : 0;
    }

    for (auto& g : batch_grad) std::fill(g.begin(), g.end(), 0.0);
    const auto classes = fwd.logits.cols();
    for (std::size_t wave = 0; wave < indices.size(); wave += slots.size()) {
        const auto width = std::min(slots.size(), indices.size() - wave);
        parallel_for(width, threads, [&](std::size_t i) {
            auto& g = slots[i];
            for (auto& p : g) std::fill(p.begin(), p.end(), 0.0);
            const auto s = wave + i;
            std::vector<double> dl(classes);
            for (std::size_t c = 0; c < classes; ++c) dl[c] = lg.dlogits(s, c);
            model.backward(fwd.traces[s], dl, g);
        });
        for (std::size_t i = 0; i < width; ++i) {
            for (std::size_t p = 0; p < batch_grad.size(); ++p) {
                for (std::size_t q = 0; q < batch_grad[p].size(); ++q) batch_grad[p][q] += slots[i][p][q];
            }
        }
    }
    return stats;
}

void snapshot(RunBuilder& builder, const Model& model, const Dataset& data, std::span<const std::size_t> probe,
              std::uint64_t epoch, double loss, const Gradients& mean_grad) {
    const auto dtype = model.config().precision == Precision::f32 ? DType::f32 : DType::f64;
    builder.begin_epoch(epoch, loss);
    const auto fwd = forward(model, data, probe);
    const auto& params = model.params();
    const auto& names = model.layer_names();
    std::size_t p = 0;
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (names[k].empty()) continue;
        const auto& w = params[p];
        const auto& b = params[p + 1];
        builder.add_tensor(w.name, dtype, Tensor{w.shape, w.values});
        builder.add_tensor(names[k] + ".grad", dtype, Tensor{w.shape, mean_grad[p]});
        builder.add_tensor(b.name, dtype, Tensor{b.shape, b.values});
        builder.add_tensor(names[k] + ".bias_grad", dtype, Tensor{b.shape, mean_grad[p + 1]});

        const auto act_layer = model.activation_layer(k);
        const auto& shape = model.output_shapes()[act_layer];
        Tensor act;
        if (std::holds_alternative<ConvSpec>(model.config().layers[k])) {
            act.shape = {probe.size(), shape[0], shape[1], shape[2]};
        } else {
            act.shape = {probe.size(), shape[0]};
        }
        for (const auto& trace : fwd.traces) {
            const auto& out = trace.outputs[act_layer];
            act.values.insert(act.values.end(), out.begin(), out.end());
        }
        builder.add_tensor(names[k] + ".act", dtype, act);
        p += 2;
    }
}

}  // namespace

TrainResult train(const ModelConfig& config, const Dataset& data, const TrainOptions& options) {
    if (data.count() == 0) throw Error(ErrorCode::invalid_argument, "empty dataset");
    if (data.shape != config.input) throw Error(ErrorCode::invalid_argument, "dataset shape does not match model input");
    Model model(config);
    if (model.output_shapes().back()[0] < data.classes) {
        throw Error(ErrorCode::invalid_argument, "model has fewer outputs than dataset classes");
    }
    for (int label : data.labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= data.classes) {
            throw Error(ErrorCode::invalid_argument, "label " + std::to_string(label) + " out of range");
        }
    }
    const std::size_t threads = std::max<std::size_t>(1, options.threads);
    const auto n = data.count();

    std::vector<std::size_t> probe(n);
    for (std::size_t k = 0; k < n; ++k) probe[k] = k;
    {
        std::mt19937_64 probe_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
        shuffle(probe, probe_rng);
        probe.resize(std::min(config.probe_batch, n));
    }

    RunBuilder builder(options.run_id.empty() ? config.preset + "-seed" + std::to_string(config.seed) : options.run_id,
                       options.created_utc.empty() ? utc_timestamp() : options.created_utc, describe_config(config),
                       config.seed);
    TrainResult result;

    std::vector<Gradients> slots(threads, model.zero_gradients());
    Gradients batch_grad = model.zero_gradients();
    Gradients epoch_grad = model.zero_gradients();
    Gradients adam_m = model.zero_gradients();
    Gradients adam_v = model.zero_gradients();
    const AdamHyper hyper{config.lr, config.beta1, config.beta2, config.eps_adam};

    auto check_loss = [](double loss, std::size_t epoch, std::size_t batch) {
        if (!std::isfinite(loss)) {
            throw Error(ErrorCode::numerical, "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                                  std::to_string(batch));
        }
    };

    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < n; ++k) order[k] = k;

    // Epoch 0: the initialized model, no updates.
    {
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (auto& g : epoch_grad) std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t start = 0; start < n; start += config.batch_size, ++batches) {
            const auto idx = std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, n - start));
            const auto stats = batch_gradient(model, data, idx, threads, slots, batch_grad);
            check_loss(stats.loss, 0, batches);
            loss_sum += stats.loss * static_cast<double>(idx.size());
            for (std::size_t p = 0; p < epoch_grad.size(); ++p) {
                for (std::size_t q = 0; q < epoch_grad[p].size(); ++q) epoch_grad[p][q] += batch_grad[p][q];
            }
        }
        for (auto& g : epoch_grad) {
            for (auto& v : g) v /= static_cast<double>(batches);
        }
        result.initial_loss = loss_sum / static_cast<double>(n);
        snapshot(builder, model, data, probe, 0, result.initial_loss, epoch_grad);
    }

    std::mt19937_64 shuffle_rng(config.seed);
    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t correct = 0, batches = 0;
        for (auto& g : epoch_grad) std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t start = 0; start < n; start += config.batch_size, ++batches) {
            const auto idx = std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, n - start));
            const auto stats = batch_gradient(model, data, idx, threads, slots, batch_grad);
            check_loss(stats.loss, epoch, batches);
            loss_sum += stats.loss * static_cast<double>(idx.size());
            correct += stats.correct;
            ++step;
            auto& params = model.params();
            for (std::size_t p = 0; p < params.size(); ++p) {
                adam_step(params[p].values, batch_grad[p], adam_m[p], adam_v[p], step, hyper);
                for (auto& v : params[p].values) v = store(v, config.precision);
                for (std::size_t q = 0; q < epoch_grad[p].size(); ++q) epoch_grad[p][q] += batch_grad[p][q];
            }
        }
        for (auto& g : epoch_grad) {
            for (auto& v : g) v /= static_cast<double>(batches);
        }
        const double epoch_loss = loss_sum / static_cast<double>(n);
        result.epoch_loss.push_back(epoch_loss);
        result.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
        if (!options.quiet) {
            std::cerr << "epoch " << epoch << " loss " << epoch_loss << " acc " << result.epoch_accuracy.back() << "\n";
        }
        snapshot(builder, model, data, probe, epoch, epoch_loss, epoch_grad);
    }
    result.final_accuracy = accuracy(model, data);
    result.run = builder.finish();
    return result;
}

TrainResult train(const ModelConfig& config, const Dataset& data, const std::filesystem::path& out_path,
                  const TrainOptions& options) {
    auto result = train(config, data, options);
    write_run(result.run, out_path);
    return result;
}

}  // namespace fracdiag
