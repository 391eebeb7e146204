#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "fracdiag/trainer.hpp"

namespace testing {

// Cross-entropy of one sample computed from scratch (log-sum-exp), so the
// numerical side never touches the library's loss code.
inline double sample_loss(const fracdiag::Model& model, std::span<const double> x, int label) {
    const auto logits = model.forward(x);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    return std::log(z) + mx - logits[static_cast<std::size_t>(label)];
}

// conv -> relu -> pool -> conv -> relu -> dense, small enough for a full
// central-difference sweep over every parameter.
inline fracdiag::ModelConfig gradcheck_config(std::uint64_t seed) {
    using namespace fracdiag;
    ModelConfig c;
    c.preset = "gradcheck";
    c.input = {2, 6, 6};
    c.layers = {ConvSpec{3, 2}, ReluSpec{}, PoolSpec{2}, ConvSpec{4, 3}, ReluSpec{}, DenseSpec{5, 4 * 3 * 3}};
    c.seed = seed;
    c.precision = Precision::f64;
    return c;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Analytic backprop vs central differences with step h on every parameter.
// Relative error: |a - n| / max(|a|, |n|, 1e-6). h = 1e-4 keeps the
// cancellation error of L(w+h) - L(w-h) well below the smallest partials
// (~1e-6) while the O(h^2) truncation term stays near 1e-13.
inline GradCheck gradient_check(std::uint64_t seed, double h = 1e-4) {
    using namespace fracdiag;
    Model model(gradcheck_config(seed));
    std::mt19937_64 rng(seed * 7919 + 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> x(2 * 6 * 6);
    for (auto& v : x) v = u(rng);
    const int label = static_cast<int>(seed % 5);

    Trace trace;
    const auto logits = model.forward(x, &trace);
    // dL/dlogits for softmax cross-entropy, written out independently.
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    std::vector<double> dlogits(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        dlogits[k] = std::exp(logits[k] - mx) / z - (static_cast<int>(k) == label ? 1.0 : 0.0);
    }
    auto grads = model.zero_gradients();
    model.backward(trace, dlogits, grads);

    GradCheck out;
    auto& params = model.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t q = 0; q < params[p].values.size(); ++q) {
            const double keep = params[p].values[q];
            params[p].values[q] = keep + h;
            const double up = sample_loss(model, x, label);
            params[p].values[q] = keep - h;
            const double down = sample_loss(model, x, label);
            params[p].values[q] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = grads[p][q];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
            ++out.checked;
        }
    }
    return out;
}

}  // namespace testing
