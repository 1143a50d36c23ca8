#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "glyphforge/tensor.hpp"

namespace glyphforge {

struct LossWeights {
    double l1 = 100.0;
    double constant = 15.0;
    double cheat = 1.0;
    double tv = 1e-4;
};

/// Unweighted loss parts of one training step and the two composites.
struct LossReport {
    double l1 = 0, constant = 0, cheat = 0, tv = 0, g_total = 0;
    double d_real = 0, d_fake = 0, d_total = 0;
    std::int64_t step = 0;
    Index batch_size = 0;
};

/// Raised when a loss turns non-finite; carries the report of the offending step.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, LossReport report) : Error(what), report_(report) {}
    const LossReport& report() const { return report_; }

private:
    LossReport report_;
};

/// Whether the constant loss averages or sums the per-sample terms over the batch.
enum class BatchReduction { mean, sum };

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean absolute difference over every element; subgradient 0 where the inputs agree.
template <typename Scalar>
Tensor<Scalar> l1_loss(const Tensor<Scalar>& target, const Tensor<Scalar>& generated) {
    using Vector = typename Tensor<Scalar>::Vector;
    detail::require_same_shape(target, generated, "l1_loss");
    const auto count = static_cast<Scalar>(target.size());
    Vector out(1);
    out[0] = (generated.values() - target.values()).cwiseAbs().sum() / count;
    return Tensor<Scalar>::make_result({1}, std::move(out), {target, generated}, [target, generated, count](const Vector& g) {
        const Vector sign = (generated.values() - target.values()).array().sign().matrix();
        if (generated.requires_grad()) generated.grad_buffer() += (g[0] / count) * sign;
        if (target.requires_grad()) target.grad_buffer() -= (g[0] / count) * sign;
    });
}

/// Squared distance between two batches of feature maps [N, f, h, w], normalized per
/// sample by M = f*h*w and then averaged (or summed) over the batch.
template <typename Scalar>
Tensor<Scalar> constant_loss(const Tensor<Scalar>& fa, const Tensor<Scalar>& fb,
                             BatchReduction reduction = BatchReduction::mean) {
    using Vector = typename Tensor<Scalar>::Vector;
    detail::require_same_shape(fa, fb, "constant_loss");
    const Index n = fa.dim(0);
    const Index per_sample = fa.size() / n;
    const auto scale = static_cast<Scalar>(reduction == BatchReduction::mean ? n * per_sample : per_sample);
    Vector out(1);
    out[0] = (fa.values() - fb.values()).squaredNorm() / scale;
    return Tensor<Scalar>::make_result({1}, std::move(out), {fa, fb}, [fa, fb, scale](const Vector& g) {
        const Vector diff = (Scalar(2) * g[0] / scale) * (fa.values() - fb.values());
        if (fa.requires_grad()) fa.grad_buffer() += diff;
        if (fb.requires_grad()) fb.grad_buffer() -= diff;
    });
}

/// Binary cross-entropy averaged over every patch score. Scores are clamped to
/// [1e-7, 1 - 1e-7]; clamped entries pass no gradient.
template <typename Scalar>
Tensor<Scalar> cheat_loss(const Tensor<Scalar>& scores, const Tensor<Scalar>& labels) {
    using Vector = typename Tensor<Scalar>::Vector;
    detail::require_same_shape(scores, labels, "cheat_loss");
    for (Index i = 0; i < labels.size(); ++i) {
        const Scalar y = labels.values()[i];
        if (y != Scalar(0) && y != Scalar(1)) throw ParameterError("cheat_loss: labels must be 0 or 1");
    }
    const auto lo = static_cast<Scalar>(kProbabilityClamp);
    const Scalar hi = Scalar(1) - lo;
    const auto count = static_cast<Scalar>(scores.size());
    const auto p = scores.values().array().max(lo).min(hi);
    const auto& y = labels.values().array();
    Vector out(1);
    out[0] = -(y * p.log() + (Scalar(1) - y) * (Scalar(1) - p).log()).sum() / count;
    return Tensor<Scalar>::make_result({1}, std::move(out), {scores}, [scores, labels, lo, hi, count](const Vector& g) {
        const auto& s = scores.values().array();
        const auto& y = labels.values().array();
        const auto inside = (s >= lo && s <= hi);
        const auto d = (-y / s + (Scalar(1) - y) / (Scalar(1) - s)) * (g[0] / count);
        scores.grad_buffer().array() += inside.select(d, Scalar(0));
    });
}

/// Same label for every score.
template <typename Scalar>
Tensor<Scalar> cheat_loss(const Tensor<Scalar>& scores, Scalar label) {
    return cheat_loss(scores, Tensor<Scalar>::full(scores.shape(), label));
}

/// Anisotropic squared total variation over the two trailing axes, divided by the
/// element count.
template <typename Scalar>
Tensor<Scalar> tv_loss(const Tensor<Scalar>& img) {
    using Vector = typename Tensor<Scalar>::Vector;
    if (img.rank() != 4) throw DimensionError("tv_loss: input must have rank 4");
    const Index h = img.dim(2), w = img.dim(3), planes = img.dim(0) * img.dim(1);
    if (h < 2 || w < 2) throw DimensionError("tv_loss: spatial extent must be at least 2x2");
    const auto count = static_cast<Scalar>(img.size());
    const Scalar* x = img.data();
    Scalar acc = 0;
    for (Index p = 0; p < planes; ++p) {
        const Scalar* plane = x + p * h * w;
        for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
                const Scalar v = plane[i * w + j];
                if (j + 1 < w) acc += (plane[i * w + j + 1] - v) * (plane[i * w + j + 1] - v);
                if (i + 1 < h) acc += (plane[(i + 1) * w + j] - v) * (plane[(i + 1) * w + j] - v);
            }
        }
    }
    Vector out(1);
    out[0] = acc / count;
    return Tensor<Scalar>::make_result({1}, std::move(out), {img}, [img, h, w, planes, count](const Vector& g) {
        const Scalar* x = img.data();
        Vector& dx = img.grad_buffer();
        const Scalar k = Scalar(2) * g[0] / count;
        for (Index p = 0; p < planes; ++p) {
            const Index base = p * h * w;
            for (Index i = 0; i < h; ++i) {
                for (Index j = 0; j < w; ++j) {
                    const Index at = base + i * w + j;
                    if (j + 1 < w) {
                        const Scalar d = k * (x[at + 1] - x[at]);
                        dx[at + 1] += d;
                        dx[at] -= d;
                    }
                    if (i + 1 < h) {
                        const Scalar d = k * (x[at + w] - x[at]);
                        dx[at + w] += d;
                        dx[at] -= d;
                    }
                }
            }
        }
    });
}

/// Weighted composite over plain numbers, as recorded in a LossReport.
inline double weighted_total(double l1, double constant, double cheat, double tv, const LossWeights& w) {
    return w.cheat * cheat + w.l1 * l1 + w.constant * constant + w.tv * tv;
}

template <typename Scalar>
struct GeneratorLossParts {
    Tensor<Scalar> l1, constant, cheat, tv;
};

/// cheat*λ_cheat + l1*λ_l1 + constant*λ_const + tv*λ_tv. The returned report carries
/// the unweighted parts. Any non-finite part raises DivergenceError.
template <typename Scalar>
std::pair<Tensor<Scalar>, LossReport> generator_objective(const GeneratorLossParts<Scalar>& parts,
                                                          const LossWeights& w) {
    LossReport report;
    report.l1 = static_cast<double>(parts.l1.item());
    report.constant = static_cast<double>(parts.constant.item());
    report.cheat = static_cast<double>(parts.cheat.item());
    report.tv = static_cast<double>(parts.tv.item());
    for (double v : {report.l1, report.constant, report.cheat, report.tv}) {
        if (!std::isfinite(v)) throw DivergenceError("generator objective has a non-finite part", report);
    }
    auto total = static_cast<Scalar>(w.cheat) * parts.cheat + static_cast<Scalar>(w.l1) * parts.l1 +
                 static_cast<Scalar>(w.constant) * parts.constant + static_cast<Scalar>(w.tv) * parts.tv;
    // Recomputed in double so the report satisfies the composition identity exactly.
    report.g_total = weighted_total(report.l1, report.constant, report.cheat, report.tv, w);
    if (!std::isfinite(report.g_total) || !std::isfinite(static_cast<double>(total.item()))) {
        throw DivergenceError("generator objective is non-finite", report);
    }
    return {std::move(total), report};
}

/// BCE(real, 1) + BCE(fake, 0). Callers pass fake scores computed from a detached candidate.
template <typename Scalar>
std::pair<Tensor<Scalar>, LossReport> discriminator_objective(const Tensor<Scalar>& real_scores,
                                                              const Tensor<Scalar>& fake_scores) {
    if (real_scores.dim(0) != fake_scores.dim(0)) {
        throw DimensionError("discriminator_objective: real and fake batch sizes differ");
    }
    auto real = cheat_loss(real_scores, Scalar(1));
    auto fake = cheat_loss(fake_scores, Scalar(0));
    auto total = real + fake;
    LossReport report;
    report.d_real = static_cast<double>(real.item());
    report.d_fake = static_cast<double>(fake.item());
    report.d_total = static_cast<double>(total.item());
    if (!std::isfinite(report.d_total)) throw DivergenceError("discriminator objective is non-finite", report);
    return {std::move(total), report};
}

}  // namespace glyphforge
