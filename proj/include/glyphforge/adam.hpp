#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "glyphforge/parameters.hpp"

namespace glyphforge {

struct AdamOptions {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First and second moment estimates, one pair per entry of a parameter table
/// (buffers included, where they stay zero).
template <typename Scalar>
struct AdamMoments {
    using Vector = typename Tensor<Scalar>::Vector;
    std::vector<Vector> first;
    std::vector<Vector> second;

    static AdamMoments zeros_like(const ParameterTable<Scalar>& params) {
        AdamMoments m;
        for (const auto& e : params) {
            m.first.push_back(Vector::Zero(e.tensor.size()));
            m.second.push_back(Vector::Zero(e.tensor.size()));
        }
        return m;
    }
};

/// Bias-corrected Adam update of every trainable entry, using its accumulated grad
/// (zero when none). `t` is the 1-based update count.
template <typename Scalar>
void adam_step(ParameterTable<Scalar>& params, AdamMoments<Scalar>& moments, std::int64_t t, const AdamOptions& opt) {
    if (t < 1) throw ContractError("adam_step: step count must be >= 1");
    if (moments.first.size() != params.size() || moments.second.size() != params.size()) {
        throw ContractError("adam_step: moment table does not match parameter table");
    }
    const auto b1 = static_cast<Scalar>(opt.beta1);
    const auto b2 = static_cast<Scalar>(opt.beta2);
    const auto lr = static_cast<Scalar>(opt.learning_rate);
    const auto eps = static_cast<Scalar>(opt.epsilon);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(opt.beta1, static_cast<double>(t)));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(opt.beta2, static_cast<double>(t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& entry = params[i];
        if (!entry.trainable) continue;
        auto& m = moments.first[i];
        auto& v = moments.second[i];
        if (m.size() != entry.tensor.size() || v.size() != entry.tensor.size()) {
            throw ContractError("adam_step: moment shape mismatch for '" + entry.name + "'");
        }
        if (entry.tensor.has_grad()) {
            const auto g = entry.tensor.grad_buffer().array();
            m.array() = b1 * m.array() + (Scalar(1) - b1) * g;
            v.array() = b2 * v.array() + (Scalar(1) - b2) * g.square();
        } else {
            m *= b1;
            v *= b2;
        }
        if (lr == Scalar(0)) continue;
        entry.tensor.mutable_values().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
}

}  // namespace glyphforge
