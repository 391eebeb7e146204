#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fracdiag/snapshot.hpp"
#include "fracdiag/tensor.hpp"

namespace fracdiag {

struct ConvSpec {
    std::size_t out_ch = 0;
    std::size_t in_ch = 0;
    std::size_t kernel = 3;
    std::size_t pad = 1;
    std::size_t stride = 1;
};
struct ReluSpec {};
struct PoolSpec {
    std::size_t window = 2;
};
struct DenseSpec {
    std::size_t out = 0;
    std::size_t in = 0;
};
using LayerSpec = std::variant<ConvSpec, ReluSpec, PoolSpec, DenseSpec>;

enum class Precision { f32, f64 };

Precision parse_precision(std::string_view text);

// Shape of one sample as (channels, height, width); dense outputs are (n, 1, 1).
using SampleShape = std::array<std::size_t, 3>;

struct ModelConfig {
    std::string preset = "custom";
    SampleShape input{1, 28, 28};
    std::vector<LayerSpec> layers;
    std::uint64_t seed = 42;
    double lr = 6e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    std::size_t probe_batch = 8;
    Precision precision = Precision::f32;
};

// Throws Error(invalid_argument) when hyperparameters or shapes do not compose.
// Returns the output shape of every layer.
std::vector<SampleShape> validate_config(const ModelConfig& config);
std::string describe_config(const ModelConfig& config);

// conv 8, relu, pool, conv 16, relu, pool, dense 64, relu, dense classes.
ModelConfig desk_preset(const SampleShape& input, std::size_t classes);
// conv 32, relu, pool, conv 64, relu, pool, dense 128, relu, dense classes.
ModelConfig paper_preset(const SampleShape& input, std::size_t classes);

struct Dataset {
    SampleShape shape{1, 28, 28};
    std::size_t classes = 10;
    std::vector<double> images;  // N x C x H x W, values in [0, 1]
    std::vector<int> labels;

    std::size_t count() const { return labels.size(); }
    std::size_t sample_size() const { return shape[0] * shape[1] * shape[2]; }
    std::span<const double> sample(std::size_t k) const {
        return std::span<const double>(images).subspan(k * sample_size(), sample_size());
    }
};

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t limit);
// Locates train-images-idx3-ubyte / train-labels-idx1-ubyte inside `dir`.
Dataset load_mnist_dir(const std::filesystem::path& dir, std::size_t limit);

// 8x8 single-channel class-specific gratings plus uniform noise of the given
// amplitude; labels are assigned round-robin.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes, double noise = 0.1);

// Copies the single input channel `channels` times.
Dataset replicate_channels(const Dataset& data, std::size_t channels);

struct Parameter {
    std::string name;  // "conv1.weight", "fc2.bias", ...
    std::vector<std::size_t> shape;
    std::vector<double> values;
};

using Gradients = std::vector<std::vector<double>>;  // parallel to Model::params()

// Per-sample intermediates: outputs[k] is the output of layer k, plus the
// argmax routing of every pooling layer.
struct Trace {
    std::vector<double> input;
    std::vector<std::vector<double>> outputs;
    std::vector<std::vector<std::size_t>> pool_argmax;
};

class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& params() { return params_; }
    const std::vector<Parameter>& params() const { return params_; }
    const std::vector<SampleShape>& output_shapes() const { return shapes_; }

    // Layer names for conv/dense layers ("conv1", "fc1", ...), indexed by layer.
    const std::vector<std::string>& layer_names() const { return names_; }
    // Index of the layer output snapshotted as "<name>.act" (post-ReLU when a
    // ReLU follows the layer).
    std::size_t activation_layer(std::size_t layer) const;

    std::vector<double> forward(std::span<const double> input, Trace* trace = nullptr) const;
    // Accumulates d(loss)/d(params) for one sample into `grads`.
    void backward(const Trace& trace, std::span<const double> dlogits, Gradients& grads) const;

    Gradients zero_gradients() const;
    std::size_t parameter_count() const;

private:
    ModelConfig config_;
    std::vector<SampleShape> shapes_;
    std::vector<std::string> names_;
    std::vector<std::size_t> param_index_;  // first Parameter of each layer, or npos
    std::vector<Parameter> params_;
};

struct BatchForward {
    Matrix logits;  // N x classes
    std::vector<Trace> traces;
};

BatchForward forward(const Model& model, const Dataset& data, std::span<const std::size_t> indices);

struct LossGrad {
    double loss = 0.0;
    Matrix dlogits;  // (softmax - onehot) / N
};

LossGrad loss_and_grad(const Matrix& logits, std::span<const int> labels);

struct AdamHyper {
    double lr = 6e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update; t is the 1-based step count.
void adam_step(std::span<double> params, std::span<const double> grads, std::span<double> m,
               std::span<double> v, std::uint64_t t, const AdamHyper& hyper);

struct TrainOptions {
    std::size_t threads = 1;
    std::string run_id;       // defaults to "<preset>-seed<seed>"
    std::string created_utc;  // defaults to SOURCE_DATE_EPOCH or the Unix epoch
    bool quiet = true;
};

struct TrainResult {
    RunArchive run;
    double initial_loss = 0.0;
    std::vector<double> epoch_loss;      // index 0 is epoch 1
    std::vector<double> epoch_accuracy;  // running accuracy during each epoch
    double final_accuracy = 0.0;         // full pass after the last update
};

// Epoch 0 snapshots the initialized model (full-pass loss and mean gradient
// without updates); epochs 1..E follow each training pass.
TrainResult train(const ModelConfig& config, const Dataset& data, const TrainOptions& options = {});
TrainResult train(const ModelConfig& config, const Dataset& data, const std::filesystem::path& out_path,
                  const TrainOptions& options = {});

double accuracy(const Model& model, const Dataset& data);

}  // namespace fracdiag
