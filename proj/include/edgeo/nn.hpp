#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "edgeo/rng.hpp"
#include "edgeo/tensor.hpp"

namespace edgeo {

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

template <typename T>
inline T sigmoid(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

/// 2D convolution with independent vertical/horizontal padding, so 1xk and
/// kx1 strip kernels pad only along their long axis. Forward and backward
/// both run as im2col + GEMM.
template <typename T>
struct Conv2d {
    int in_c = 0, out_c = 0, kh = 1, kw = 1;
    int stride = 1, pad_h = 0, pad_w = 0;
    std::vector<T> weight; // [out_c][in_c][kh][kw]
    std::vector<T> bias;   // [out_c]

    int patch_size() const { return in_c * kh * kw; }
    int out_h(int h) const { return (h + 2 * pad_h - kh) / stride + 1; }
    int out_w(int w) const { return (w + 2 * pad_w - kw) / stride + 1; }
    std::size_t param_count() const { return weight.size() + bias.size(); }

    void check_input(const Tensor3<T>& x) const {
        if (x.c != in_c) throw std::invalid_argument("Conv2d: channel mismatch");
        if (out_h(x.h) < 1 || out_w(x.w) < 1) throw std::invalid_argument("Conv2d: input smaller than kernel");
    }

    MatrixCM<T> im2col(const Tensor3<T>& x) const {
        const int oh = out_h(x.h), ow = out_w(x.w);
        MatrixCM<T> col(patch_size(), oh * ow);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int n = oy * ow + ox;
                T* dst = col.data() + static_cast<std::size_t>(n) * patch_size();
                for (int ci = 0; ci < in_c; ++ci) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - pad_h;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pad_w;
                            *dst++ = (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) ? x.at(ci, iy, ix) : T(0);
                        }
                    }
                }
            }
        }
        return col;
    }

    Tensor3<T> forward(const Tensor3<T>& x) const {
        check_input(x);
        const int oh = out_h(x.h), ow = out_w(x.w);
        const MatrixCM<T> col = im2col(x);
        Tensor3<T> y(out_c, oh, ow);
        Eigen::Map<MatrixRM<T>> ym(y.v.data(), out_c, oh * ow);
        Eigen::Map<const MatrixRM<T>> wm(weight.data(), out_c, patch_size());
        ym.noalias() = wm * col;
        for (int c = 0; c < out_c; ++c) ym.row(c).array() += bias[c];
        return y;
    }

    /// Returns dx; accumulates parameter gradients into dweight/dbias.
    Tensor3<T> backward(const Tensor3<T>& x, const Tensor3<T>& dy, std::vector<T>& dweight,
                        std::vector<T>& dbias) const {
        check_input(x);
        const int oh = out_h(x.h), ow = out_w(x.w);
        if (dy.c != out_c || dy.h != oh || dy.w != ow) throw std::invalid_argument("Conv2d: dy shape mismatch");

        Eigen::Map<const MatrixRM<T>> dym(dy.v.data(), out_c, oh * ow);
        Eigen::Map<const MatrixRM<T>> wm(weight.data(), out_c, patch_size());
        Eigen::Map<MatrixRM<T>> dwm(dweight.data(), out_c, patch_size());

        const MatrixCM<T> col = im2col(x);
        dwm.noalias() += dym * col.transpose();
        for (int c = 0; c < out_c; ++c) dbias[c] += dym.row(c).sum();

        const MatrixCM<T> dcol = wm.transpose() * dym;
        Tensor3<T> dx(x.c, x.h, x.w);
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int n = oy * ow + ox;
                const T* src = dcol.data() + static_cast<std::size_t>(n) * patch_size();
                for (int ci = 0; ci < in_c; ++ci) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - pad_h;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pad_w;
                            if (iy >= 0 && iy < x.h && ix >= 0 && ix < x.w) dx.at(ci, iy, ix) += src[0];
                            ++src;
                        }
                    }
                }
            }
        }
        return dx;
    }
};

/// Fan-in-scaled uniform init, biases zero.
template <typename T>
Conv2d<T> make_conv(int in_c, int out_c, int kh, int kw, int stride, int pad_h, int pad_w, Rng& rng) {
    Conv2d<T> conv;
    conv.in_c = in_c;
    conv.out_c = out_c;
    conv.kh = kh;
    conv.kw = kw;
    conv.stride = stride;
    conv.pad_h = pad_h;
    conv.pad_w = pad_w;
    conv.weight.resize(static_cast<std::size_t>(out_c) * in_c * kh * kw);
    conv.bias.assign(out_c, T(0));
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c) * kh * kw);
    for (auto& w : conv.weight) w = static_cast<T>(rng.uniform(-bound, bound));
    return conv;
}

/// Per-sample, per-channel normalization over the spatial extent, with
/// learnable scale/offset. Keeps forward a pure function of (input,
/// params) regardless of batch composition.
template <typename T>
struct InstanceNorm {
    int channels = 0;
    std::vector<T> gamma, beta;
    T eps = T(1e-5);

    struct Cache {
        Tensor3<T> xhat;
        std::vector<T> inv_std;
    };

    Tensor3<T> forward(const Tensor3<T>& x, Cache* cache = nullptr) const {
        if (x.c != channels) throw std::invalid_argument("InstanceNorm: channel mismatch");
        const int n = x.h * x.w;
        Tensor3<T> y(x.c, x.h, x.w);
        Tensor3<T> xhat_local(x.c, x.h, x.w);
        std::vector<T> inv_std(channels);
        for (int c = 0; c < channels; ++c) {
            const T* p = x.plane(c);
            T mean = 0;
            for (int i = 0; i < n; ++i) mean += p[i];
            mean /= static_cast<T>(n);
            T var = 0;
            for (int i = 0; i < n; ++i) {
                const T d = p[i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T is = T(1) / std::sqrt(var + eps);
            inv_std[c] = is;
            T* xh = xhat_local.plane(c);
            T* yo = y.plane(c);
            for (int i = 0; i < n; ++i) {
                xh[i] = (p[i] - mean) * is;
                yo[i] = gamma[c] * xh[i] + beta[c];
            }
        }
        if (cache) {
            cache->xhat = std::move(xhat_local);
            cache->inv_std = std::move(inv_std);
        }
        return y;
    }

    Tensor3<T> backward(const Cache& cache, const Tensor3<T>& dy, std::vector<T>& dgamma,
                        std::vector<T>& dbeta) const {
        const int n = dy.h * dy.w;
        Tensor3<T> dx(dy.c, dy.h, dy.w);
        for (int c = 0; c < channels; ++c) {
            const T* xh = cache.xhat.plane(c);
            const T* dyp = dy.plane(c);
            T sum_dy = 0, sum_dy_xhat = 0;
            for (int i = 0; i < n; ++i) {
                sum_dy += dyp[i];
                sum_dy_xhat += dyp[i] * xh[i];
            }
            dbeta[c] += sum_dy;
            dgamma[c] += sum_dy_xhat;
            const T scale = gamma[c] * cache.inv_std[c] / static_cast<T>(n);
            T* dxp = dx.plane(c);
            for (int i = 0; i < n; ++i)
                dxp[i] = scale * (static_cast<T>(n) * dyp[i] - sum_dy - xh[i] * sum_dy_xhat);
        }
        return dx;
    }
};

template <typename T>
InstanceNorm<T> make_instance_norm(int channels) {
    InstanceNorm<T> norm;
    norm.channels = channels;
    norm.gamma.assign(channels, T(1));
    norm.beta.assign(channels, T(0));
    return norm;
}

/// SiLU (x * sigmoid(x)): smooth everywhere, so analytic gradients match
/// central finite differences without kink artifacts.
template <typename T>
Tensor3<T> silu_forward(const Tensor3<T>& x) {
    Tensor3<T> y(x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] * sigmoid(x.v[i]);
    return y;
}

template <typename T>
Tensor3<T> silu_backward(const Tensor3<T>& x, const Tensor3<T>& dy) {
    Tensor3<T> dx(x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.v.size(); ++i) {
        const T s = sigmoid(x.v[i]);
        dx.v[i] = dy.v[i] * s * (T(1) + x.v[i] * (T(1) - s));
    }
    return dx;
}

} // namespace edgeo
