#pragma once

#include <cstdint>
#include <stdexcept>

#include "edgeo/nn.hpp"
#include "edgeo/tensor.hpp"

namespace edgeo {

/// Context enhancement module: 1x1 expand, parallel horizontal (1xk) and
/// vertical (kx1) strip convolutions over the same intermediate, channel
/// concat in (horizontal, vertical) order, 1x1 compress back to C. Pure
/// convolutions throughout; an optional pointwise nonlinearity after the
/// expand stage is off by default.
template <typename T>
struct CemParams {
    Conv2d<T> conv1_in;  // C -> C, 1x1
    Conv2d<T> conv_h;    // C -> C, 1xk, pad (0, k/2)
    Conv2d<T> conv_v;    // C -> C, kx1, pad (k/2, 0)
    Conv2d<T> conv1_out; // 2C -> C, 1x1
    int kernel_length = 11;
    bool expand_activation = false;

    int channels() const { return conv1_in.in_c; }
    std::size_t param_count() const {
        return conv1_in.param_count() + conv_h.param_count() + conv_v.param_count() + conv1_out.param_count();
    }
};

template <typename T>
CemParams<T> cem_init(int channels, int kernel_length, std::uint64_t seed) {
    if (channels < 1) throw std::invalid_argument("cem_init: channels must be >= 1");
    if (kernel_length < 1 || kernel_length % 2 == 0)
        throw std::invalid_argument("cem_init: kernel length must be odd");
    Rng rng(derive_seed(seed, "cem"));
    CemParams<T> p;
    p.kernel_length = kernel_length;
    p.conv1_in = make_conv<T>(channels, channels, 1, 1, 1, 0, 0, rng);
    p.conv_h = make_conv<T>(channels, channels, 1, kernel_length, 1, 0, kernel_length / 2, rng);
    p.conv_v = make_conv<T>(channels, channels, kernel_length, 1, 1, kernel_length / 2, 0, rng);
    p.conv1_out = make_conv<T>(2 * channels, channels, 1, 1, 1, 0, 0, rng);
    return p;
}

template <typename T>
struct CemCache {
    Tensor3<T> input;
    Tensor3<T> expanded_pre; // conv1_in output before the optional activation
    Tensor3<T> expanded;
    Tensor3<T> concat;
};

template <typename T>
Tensor3<T> cem_forward(const Tensor3<T>& f, const CemParams<T>& params, CemCache<T>* cache = nullptr) {
    if (f.c != params.channels()) throw std::invalid_argument("cem_forward: channel mismatch");

    Tensor3<T> expanded_pre = params.conv1_in.forward(f);
    Tensor3<T> expanded = params.expand_activation ? silu_forward(expanded_pre) : expanded_pre;

    const Tensor3<T> branch_h = params.conv_h.forward(expanded);
    const Tensor3<T> branch_v = params.conv_v.forward(expanded);

    Tensor3<T> concat(2 * f.c, f.h, f.w);
    std::copy(branch_h.v.begin(), branch_h.v.end(), concat.v.begin());
    std::copy(branch_v.v.begin(), branch_v.v.end(), concat.v.begin() + branch_h.v.size());

    Tensor3<T> out = params.conv1_out.forward(concat);
    if (cache) {
        cache->input = f;
        cache->expanded_pre = std::move(expanded_pre);
        cache->expanded = std::move(expanded);
        cache->concat = std::move(concat);
    }
    return out;
}

/// Backward through the module; parameter gradients accumulate into
/// `grads` (same shapes as `params`), returns d(input).
template <typename T>
Tensor3<T> cem_backward(const CemCache<T>& cache, const Tensor3<T>& dout, const CemParams<T>& params,
                        CemParams<T>& grads) {
    const Tensor3<T> dconcat =
        params.conv1_out.backward(cache.concat, dout, grads.conv1_out.weight, grads.conv1_out.bias);

    const int c = params.channels();
    Tensor3<T> dbranch_h(c, dout.h, dout.w), dbranch_v(c, dout.h, dout.w);
    std::copy(dconcat.v.begin(), dconcat.v.begin() + dbranch_h.v.size(), dbranch_h.v.begin());
    std::copy(dconcat.v.begin() + dbranch_h.v.size(), dconcat.v.end(), dbranch_v.v.begin());

    Tensor3<T> dexpanded = params.conv_h.backward(cache.expanded, dbranch_h, grads.conv_h.weight, grads.conv_h.bias);
    const Tensor3<T> dexpanded_v =
        params.conv_v.backward(cache.expanded, dbranch_v, grads.conv_v.weight, grads.conv_v.bias);
    for (std::size_t i = 0; i < dexpanded.v.size(); ++i) dexpanded.v[i] += dexpanded_v.v[i];

    if (params.expand_activation) dexpanded = silu_backward(cache.expanded_pre, dexpanded);

    return params.conv1_in.backward(cache.input, dexpanded, grads.conv1_in.weight, grads.conv1_in.bias);
}

template <typename T>
CemParams<T> zeros_like(const CemParams<T>& p) {
    CemParams<T> z = p;
    std::fill(z.conv1_in.weight.begin(), z.conv1_in.weight.end(), T(0));
    std::fill(z.conv1_in.bias.begin(), z.conv1_in.bias.end(), T(0));
    std::fill(z.conv_h.weight.begin(), z.conv_h.weight.end(), T(0));
    std::fill(z.conv_h.bias.begin(), z.conv_h.bias.end(), T(0));
    std::fill(z.conv_v.weight.begin(), z.conv_v.weight.end(), T(0));
    std::fill(z.conv_v.bias.begin(), z.conv_v.bias.end(), T(0));
    std::fill(z.conv1_out.weight.begin(), z.conv1_out.weight.end(), T(0));
    std::fill(z.conv1_out.bias.begin(), z.conv1_out.bias.end(), T(0));
    return z;
}

} // namespace edgeo
