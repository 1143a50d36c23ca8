#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "glyphforge/tensor.hpp"

namespace glyphforge {

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Geometry of one zero-padded cross-correlation: an input grid (channels, height, width)
/// sampled by a kh x kw window into an out_h x out_w grid.
struct Window {
    Index channels, height, width;
    Index kh, kw, stride, pad;
    Index out_h, out_w;

    Index rows() const { return channels * kh * kw; }
    Index cols() const { return out_h * out_w; }
};

/// Unfolds one sample (channels x height x width, row-major) into a (C*kh*kw) x (out_h*out_w) matrix.
template <typename Scalar>
void im2col(const Scalar* image, const Window& w, RowMatrix<Scalar>& cols) {
    cols.resize(w.rows(), w.cols());
    for (Index c = 0; c < w.channels; ++c) {
        for (Index ki = 0; ki < w.kh; ++ki) {
            for (Index kj = 0; kj < w.kw; ++kj) {
                Scalar* row = cols.row((c * w.kh + ki) * w.kw + kj).data();
                for (Index oy = 0; oy < w.out_h; ++oy) {
                    const Index iy = oy * w.stride - w.pad + ki;
                    for (Index ox = 0; ox < w.out_w; ++ox) {
                        const Index ix = ox * w.stride - w.pad + kj;
                        const bool inside = iy >= 0 && iy < w.height && ix >= 0 && ix < w.width;
                        row[oy * w.out_w + ox] = inside ? image[(c * w.height + iy) * w.width + ix] : Scalar(0);
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters-and-adds columns back onto the image grid.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const Window& w, Scalar* image) {
    for (Index c = 0; c < w.channels; ++c) {
        for (Index ki = 0; ki < w.kh; ++ki) {
            for (Index kj = 0; kj < w.kw; ++kj) {
                const Scalar* row = cols.row((c * w.kh + ki) * w.kw + kj).data();
                for (Index oy = 0; oy < w.out_h; ++oy) {
                    const Index iy = oy * w.stride - w.pad + ki;
                    if (iy < 0 || iy >= w.height) continue;
                    for (Index ox = 0; ox < w.out_w; ++ox) {
                        const Index ix = ox * w.stride - w.pad + kj;
                        if (ix < 0 || ix >= w.width) continue;
                        image[(c * w.height + iy) * w.width + ix] += row[oy * w.out_w + ox];
                    }
                }
            }
        }
    }
}

inline void require_rank(int rank, int expected, const char* op, const char* what) {
    if (rank != expected) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(expected) +
                             ", got " + std::to_string(rank));
    }
}

inline void require_axis(Index got, Index expected, const char* op, const char* axis) {
    if (got != expected) {
        throw DimensionError(std::string(op) + ": " + axis + " is " + std::to_string(got) + ", expected " +
                             std::to_string(expected));
    }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding.
/// x: [N, C, H, W], w: [K, C, kh, kw], b: [K] -> [N, K, (H+2p-kh)/s+1, (W+2p-kw)/s+1].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b, Index stride,
                      Index pad) {
    using Vector = typename Tensor<Scalar>::Vector;
    using Matrix = detail::RowMatrix<Scalar>;
    constexpr const char* op = "conv2d";
    detail::require_rank(x.rank(), 4, op, "input");
    detail::require_rank(w.rank(), 4, op, "weight");
    detail::require_rank(b.rank(), 1, op, "bias");
    if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
    if (pad < 0) throw ParameterError("conv2d: padding must be >= 0");
    detail::require_axis(w.dim(1), x.dim(1), op, "weight input-channel axis (1)");
    detail::require_axis(b.dim(0), w.dim(0), op, "bias axis (0)");
    const Index n = x.dim(0), k = w.dim(0);
    detail::Window win{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, pad, 0, 0};
    if (win.kh > win.height + 2 * pad) throw DimensionError("conv2d: kernel height exceeds padded input height (axis 2)");
    if (win.kw > win.width + 2 * pad) throw DimensionError("conv2d: kernel width exceeds padded input width (axis 3)");
    win.out_h = (win.height + 2 * pad - win.kh) / stride + 1;
    win.out_w = (win.width + 2 * pad - win.kw) / stride + 1;

    const Index in_stride = win.channels * win.height * win.width;
    const Index out_stride = k * win.cols();
    Eigen::Map<const Matrix> wmat(w.data(), k, win.rows());
    Vector out(n * out_stride);
    Matrix cols;
    for (Index s = 0; s < n; ++s) {
        detail::im2col(x.data() + s * in_stride, win, cols);
        Eigen::Map<Matrix> y(out.data() + s * out_stride, k, win.cols());
        y.noalias() = wmat * cols;
        y.colwise() += b.values();
    }

    return Tensor<Scalar>::make_result({n, k, win.out_h, win.out_w}, std::move(out), {x, w, b},
                                       [x, w, b, win, n, k, in_stride, out_stride](const Vector& g) {
        Eigen::Map<const Matrix> wmat(w.data(), k, win.rows());
        Matrix cols, dcols;
        for (Index s = 0; s < n; ++s) {
            Eigen::Map<const Matrix> gy(g.data() + s * out_stride, k, win.cols());
            if (w.requires_grad()) {
                detail::im2col(x.data() + s * in_stride, win, cols);
                Eigen::Map<Matrix> dw(w.grad_buffer().data(), k, win.rows());
                dw.noalias() += gy * cols.transpose();
            }
            if (x.requires_grad()) {
                dcols.noalias() = wmat.transpose() * gy;
                detail::col2im(dcols, win, x.grad_buffer().data() + s * in_stride);
            }
            if (b.requires_grad()) b.grad_buffer() += gy.rowwise().sum();
        }
    });
}

/// Transposed convolution, the adjoint of conv2d with the same weight array.
/// x: [N, C, H, W], w: [C, K, kh, kw], b: [K] -> [N, K, (H-1)s - 2p + kh, (W-1)s - 2p + kw].
template <typename Scalar>
Tensor<Scalar> conv2d_transpose(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                                Index stride, Index pad) {
    using Vector = typename Tensor<Scalar>::Vector;
    using Matrix = detail::RowMatrix<Scalar>;
    constexpr const char* op = "conv2d_transpose";
    detail::require_rank(x.rank(), 4, op, "input");
    detail::require_rank(w.rank(), 4, op, "weight");
    detail::require_rank(b.rank(), 1, op, "bias");
    if (stride < 1) throw ParameterError("conv2d_transpose: stride must be >= 1");
    if (pad < 0) throw ParameterError("conv2d_transpose: padding must be >= 0");
    detail::require_axis(w.dim(0), x.dim(1), op, "weight input-channel axis (0)");
    detail::require_axis(b.dim(0), w.dim(1), op, "bias axis (0)");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), k = w.dim(1);
    const Index out_h = (h - 1) * stride - 2 * pad + w.dim(2);
    const Index out_w = (wd - 1) * stride - 2 * pad + w.dim(3);
    if (out_h < 1) throw DimensionError("conv2d_transpose: output height (axis 2) would be empty");
    if (out_w < 1) throw DimensionError("conv2d_transpose: output width (axis 3) would be empty");

    // The output grid plays the role of a conv2d input whose correlation grid is h x wd.
    const detail::Window win{k, out_h, out_w, w.dim(2), w.dim(3), stride, pad, h, wd};
    const Index in_stride = c * h * wd;
    const Index out_stride = k * out_h * out_w;
    Eigen::Map<const Matrix> wmat(w.data(), c, win.rows());
    Vector out = Vector::Zero(n * out_stride);
    Matrix cols;
    for (Index s = 0; s < n; ++s) {
        Eigen::Map<const Matrix> xs(x.data() + s * in_stride, c, h * wd);
        cols.noalias() = wmat.transpose() * xs;
        detail::col2im(cols, win, out.data() + s * out_stride);
        Eigen::Map<Matrix> y(out.data() + s * out_stride, k, out_h * out_w);
        y.colwise() += b.values();
    }

    return Tensor<Scalar>::make_result({n, k, out_h, out_w}, std::move(out), {x, w, b},
                                       [x, w, b, win, n, c, k, in_stride, out_stride](const Vector& g) {
        Eigen::Map<const Matrix> wmat(w.data(), c, win.rows());
        Matrix gcols;
        for (Index s = 0; s < n; ++s) {
            detail::im2col(g.data() + s * out_stride, win, gcols);
            if (x.requires_grad()) {
                Eigen::Map<Matrix> dx(x.grad_buffer().data() + s * in_stride, c, win.cols());
                dx.noalias() += wmat * gcols;
            }
            if (w.requires_grad()) {
                Eigen::Map<const Matrix> xs(x.data() + s * in_stride, c, win.cols());
                Eigen::Map<Matrix> dw(w.grad_buffer().data(), c, win.rows());
                dw.noalias() += xs * gcols.transpose();
            }
            if (b.requires_grad()) {
                Eigen::Map<const Matrix> gy(g.data() + s * out_stride, k, win.height * win.width);
                b.grad_buffer() += gy.rowwise().sum();
            }
        }
    });
}

/// Max pooling without padding. Ties resolve to the first maximum in row-major
/// window order, which is also where the gradient goes.
template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& x, Index window, Index stride) {
    using Vector = typename Tensor<Scalar>::Vector;
    detail::require_rank(x.rank(), 4, "maxpool2d", "input");
    if (stride < 1 || window < 1) throw ParameterError("maxpool2d: window and stride must be >= 1");
    const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (window > h) throw DimensionError("maxpool2d: window exceeds input height (axis 2)");
    if (window > w) throw DimensionError("maxpool2d: window exceeds input width (axis 3)");
    const Index out_h = (h - window) / stride + 1;
    const Index out_w = (w - window) / stride + 1;

    Vector out(n * c * out_h * out_w);
    std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
    const Scalar* src = x.data();
    Index o = 0;
    for (Index plane = 0; plane < n * c; ++plane) {
        const Index base = plane * h * w;
        for (Index oy = 0; oy < out_h; ++oy) {
            for (Index ox = 0; ox < out_w; ++ox, ++o) {
                Index best = base + (oy * stride) * w + ox * stride;
                for (Index ky = 0; ky < window; ++ky) {
                    for (Index kx = 0; kx < window; ++kx) {
                        const Index at = base + (oy * stride + ky) * w + ox * stride + kx;
                        if (src[at] > src[best]) best = at;
                    }
                }
                out[o] = src[best];
                argmax[static_cast<std::size_t>(o)] = best;
            }
        }
    }

    return Tensor<Scalar>::make_result({n, c, out_h, out_w}, std::move(out), {x},
                                       [x, argmax = std::move(argmax)](const Vector& g) {
        Vector& dx = x.grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[static_cast<Index>(i)];
    });
}

}  // namespace glyphforge
