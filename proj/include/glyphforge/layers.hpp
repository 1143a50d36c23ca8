#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "glyphforge/rng.hpp"
#include "glyphforge/tensor.hpp"

namespace glyphforge {

struct Activation {
    enum class Kind { relu, leaky_relu, tanh, sigmoid };

    Kind kind = Kind::relu;
    double alpha = 0.0;

    static Activation relu() { return {Kind::relu, 0.0}; }
    static Activation leaky_relu(double alpha) { return {Kind::leaky_relu, alpha}; }
    static Activation tanh() { return {Kind::tanh, 0.0}; }
    static Activation sigmoid() { return {Kind::sigmoid, 0.0}; }
};

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation act) {
    using Vector = typename Tensor<Scalar>::Vector;
    const auto alpha = static_cast<Scalar>(act.alpha);
    if (act.kind == Activation::Kind::leaky_relu && !(act.alpha > 0.0 && act.alpha < 1.0)) {
        throw ParameterError("leaky_relu: alpha must lie in (0, 1), got " + std::to_string(act.alpha));
    }
    const auto& in = x.values().array();
    Vector out;
    switch (act.kind) {
        case Activation::Kind::relu: out = in.max(Scalar(0)); break;
        case Activation::Kind::leaky_relu: out = (in > Scalar(0)).select(in, alpha * in); break;
        case Activation::Kind::tanh: out = in.tanh(); break;
        case Activation::Kind::sigmoid: out = Scalar(1) / (Scalar(1) + (-in).exp()); break;
    }
    // Derivatives use the output where that is cheaper (tanh, sigmoid).
    Vector y = out;
    return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x}, [x, y = std::move(y), act, alpha](const Vector& g) {
        const auto& in = x.values().array();
        Vector& dx = x.grad_buffer();
        switch (act.kind) {
            case Activation::Kind::relu: dx.array() += (in > Scalar(0)).select(g.array(), Scalar(0)); break;
            case Activation::Kind::leaky_relu: dx.array() += (in > Scalar(0)).select(g.array(), alpha * g.array()); break;
            case Activation::Kind::tanh: dx.array() += g.array() * (Scalar(1) - y.array().square()); break;
            case Activation::Kind::sigmoid: dx.array() += g.array() * y.array() * (Scalar(1) - y.array()); break;
        }
    });
}

/// Running per-channel statistics of a batch-norm layer. Tensors so they live in
/// the parameter table and get checkpointed alongside the weights.
template <typename Scalar>
struct BatchNormState {
    Tensor<Scalar> running_mean;
    Tensor<Scalar> running_var;
};

struct BatchNormOptions {
    double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
    double epsilon = 1e-5;
    bool update_running = true;  // train mode only
};

/// Per-channel normalization over (N, H, W). Train mode uses biased batch variance for
/// normalization and folds the unbiased estimate into the running variance.
template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                           BatchNormState<Scalar>& stats, Mode mode, const BatchNormOptions& options = {}) {
    using Vector = typename Tensor<Scalar>::Vector;
    if (x.rank() != 4) throw DimensionError("batchnorm2d: input must have rank 4");
    const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (gamma.size() != c || beta.size() != c || stats.running_mean.size() != c || stats.running_var.size() != c) {
        throw DimensionError("batchnorm2d: channel axis (1) is " + std::to_string(c) +
                             " but affine/statistics tensors disagree");
    }
    const Index count = n * plane;
    const auto eps = static_cast<Scalar>(options.epsilon);

    Vector mu(c), inv_std(c);
    if (mode == Mode::train) {
        if (count < 2) throw DegenerateBatchError("batchnorm2d: train mode needs N*H*W >= 2 per channel, got " +
                                                  std::to_string(count));
        for (Index ch = 0; ch < c; ++ch) {
            Scalar acc = 0;
            for (Index s = 0; s < n; ++s) acc += x.values().segment((s * c + ch) * plane, plane).sum();
            const Scalar m = acc / static_cast<Scalar>(count);
            Scalar sq = 0;
            for (Index s = 0; s < n; ++s) {
                sq += (x.values().segment((s * c + ch) * plane, plane).array() - m).square().sum();
            }
            const Scalar var = sq / static_cast<Scalar>(count);
            mu[ch] = m;
            inv_std[ch] = Scalar(1) / std::sqrt(var + eps);
            if (options.update_running) {
                const auto mom = static_cast<Scalar>(options.momentum);
                const Scalar unbiased = sq / static_cast<Scalar>(count - 1);
                stats.running_mean.mutable_values()[ch] = mom * stats.running_mean.values()[ch] + (Scalar(1) - mom) * m;
                stats.running_var.mutable_values()[ch] = mom * stats.running_var.values()[ch] + (Scalar(1) - mom) * unbiased;
            }
        }
    } else {
        mu = stats.running_mean.values();
        inv_std = (stats.running_var.values().array() + eps).rsqrt();
    }

    Vector xhat(x.size()), out(x.size());
    for (Index s = 0; s < n; ++s) {
        for (Index ch = 0; ch < c; ++ch) {
            const Index off = (s * c + ch) * plane;
            xhat.segment(off, plane) = (x.values().segment(off, plane).array() - mu[ch]) * inv_std[ch];
            out.segment(off, plane) = (xhat.segment(off, plane).array() * gamma.values()[ch] + beta.values()[ch]).matrix();
        }
    }

    return Tensor<Scalar>::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat = std::move(xhat), inv_std, mode, n, c, plane, count](const Vector& g) {
            for (Index ch = 0; ch < c; ++ch) {
                Scalar sum_g = 0, sum_gx = 0;
                for (Index s = 0; s < n; ++s) {
                    const Index off = (s * c + ch) * plane;
                    sum_g += g.segment(off, plane).sum();
                    sum_gx += g.segment(off, plane).dot(xhat.segment(off, plane));
                }
                if (gamma.requires_grad()) gamma.grad_buffer()[ch] += sum_gx;
                if (beta.requires_grad()) beta.grad_buffer()[ch] += sum_g;
                if (!x.requires_grad()) continue;
                const Scalar scale = gamma.values()[ch] * inv_std[ch];
                const auto m = static_cast<Scalar>(count);
                for (Index s = 0; s < n; ++s) {
                    const Index off = (s * c + ch) * plane;
                    auto dx = x.grad_buffer().segment(off, plane).array();
                    if (mode == Mode::train) {
                        dx += scale * (g.segment(off, plane).array() - sum_g / m -
                                       xhat.segment(off, plane).array() * (sum_gx / m));
                    } else {
                        dx += scale * g.segment(off, plane).array();
                    }
                }
            }
        });
}

/// Stacks b's channels after a's. Both must agree on N, H and W.
template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    using Vector = typename Tensor<Scalar>::Vector;
    if (a.rank() != 4 || b.rank() != 4) throw DimensionError("concat_channels: inputs must have rank 4");
    for (int axis : {0, 2, 3}) {
        if (a.dim(axis) != b.dim(axis)) {
            throw DimensionError("concat_channels: axis " + std::to_string(axis) + " differs (" +
                                 std::to_string(a.dim(axis)) + " vs " + std::to_string(b.dim(axis)) + ")");
        }
    }
    const Index n = a.dim(0), plane = a.dim(2) * a.dim(3);
    const Index sa = a.dim(1) * plane, sb = b.dim(1) * plane;
    Vector out(a.size() + b.size());
    for (Index s = 0; s < n; ++s) {
        out.segment(s * (sa + sb), sa) = a.values().segment(s * sa, sa);
        out.segment(s * (sa + sb) + sa, sb) = b.values().segment(s * sb, sb);
    }
    return Tensor<Scalar>::make_result({n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)}, std::move(out), {a, b},
                                       [a, b, n, sa, sb](const Vector& g) {
        for (Index s = 0; s < n; ++s) {
            if (a.requires_grad()) a.grad_buffer().segment(s * sa, sa) += g.segment(s * (sa + sb), sa);
            if (b.requires_grad()) b.grad_buffer().segment(s * sb, sb) += g.segment(s * (sa + sb) + sa, sb);
        }
    });
}

/// Channels [begin, begin + count) of x.
template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& x, Index begin, Index count) {
    using Vector = typename Tensor<Scalar>::Vector;
    if (x.rank() != 4) throw DimensionError("slice_channels: input must have rank 4");
    if (begin < 0 || count < 1 || begin + count > x.dim(1)) {
        throw DimensionError("slice_channels: range exceeds channel axis (1) of extent " + std::to_string(x.dim(1)));
    }
    const Index n = x.dim(0), plane = x.dim(2) * x.dim(3), full = x.dim(1) * plane, part = count * plane;
    Vector out(n * part);
    for (Index s = 0; s < n; ++s) out.segment(s * part, part) = x.values().segment(s * full + begin * plane, part);
    return Tensor<Scalar>::make_result({n, count, x.dim(2), x.dim(3)}, std::move(out), {x},
                                       [x, n, plane, full, part, begin](const Vector& g) {
        for (Index s = 0; s < n; ++s) x.grad_buffer().segment(s * full + begin * plane, part) += g.segment(s * part, part);
    });
}

/// Inverted dropout: survivors are scaled by 1/(1-p). One uniform draw per element
/// in train mode with p > 0; no draws otherwise.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, Mode mode, Rng& rng) {
    using Vector = typename Tensor<Scalar>::Vector;
    if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must lie in [0, 1), got " + std::to_string(p));
    if (mode == Mode::eval || p == 0.0) return x;
    const auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
    Vector mask(x.size());
    for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= p ? keep_scale : Scalar(0);
    Vector out = x.values().cwiseProduct(mask);
    return Tensor<Scalar>::make_result(x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](const Vector& g) {
        x.grad_buffer() += g.cwiseProduct(mask);
    });
}

}  // namespace glyphforge
