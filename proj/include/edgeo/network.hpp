#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "edgeo/cem.hpp"
#include "edgeo/geometry.hpp"
#include "edgeo/nn.hpp"
#include "edgeo/posenc.hpp"
#include "edgeo/tensor.hpp"

namespace edgeo {

/// Backbone family. "tiny" is the desk-scale default (4 stride-2 blocks,
/// trainable on CPU in minutes); the -like variants are deeper stand-ins
/// with the same contract, selectable when more capacity is wanted.
struct BackboneSpec {
    std::string name = "tiny";
    int downsample_factor = 16;
    int out_channels = 128;
    int query_in_channels = 4; // image (3) + encoding field (1)
    int reference_in_channels = 3;
};

inline BackboneSpec make_backbone_spec(const std::string& name, int downsample = 16, int out_channels = 128) {
    if (name != "tiny" && name != "resnet18-like" && name != "darknet53-like")
        throw std::invalid_argument("unknown backbone: " + name);
    BackboneSpec spec;
    spec.name = name;
    spec.downsample_factor = downsample;
    spec.out_channels = out_channels;
    return spec;
}

namespace netdetail {

struct StagePlan {
    int out_c;
    int stride;
};

/// Stage layout per family: every family halves resolution log2(downsample)
/// times; deeper families add stride-1 convs inside each stage.
inline std::vector<StagePlan> stage_plan(const BackboneSpec& spec) {
    int n = 0;
    for (int d = spec.downsample_factor; d > 1; d /= 2) {
        if (d % 2 != 0) throw std::invalid_argument("downsample_factor must be a power of two");
        ++n;
    }
    if (n < 1) throw std::invalid_argument("downsample_factor must be >= 2");
    std::vector<StagePlan> plan;
    for (int i = 0; i < n; ++i) {
        const int width = std::max(8, spec.out_channels >> (n - 1 - i));
        plan.push_back({width, 2});
        const int extra = spec.name == "resnet18-like" ? 1 : (spec.name == "darknet53-like" ? 2 : 0);
        for (int e = 0; e < extra; ++e) plan.push_back({width, 1});
    }
    plan.back().out_c = spec.out_channels;
    return plan;
}

} // namespace netdetail

template <typename T>
struct ConvBlock {
    Conv2d<T> conv;
    InstanceNorm<T> norm;
};

template <typename T>
struct Encoder {
    std::vector<ConvBlock<T>> blocks; // conv -> instance norm -> SiLU
    int in_channels = 0;
    int downsample = 1;
};

template <typename T>
Encoder<T> encoder_init(const BackboneSpec& spec, int in_channels, Rng& rng) {
    Encoder<T> enc;
    enc.in_channels = in_channels;
    enc.downsample = spec.downsample_factor;
    int c = in_channels;
    for (const auto& st : netdetail::stage_plan(spec)) {
        ConvBlock<T> block;
        block.conv = make_conv<T>(c, st.out_c, 3, 3, st.stride, 1, 1, rng);
        block.norm = make_instance_norm<T>(st.out_c);
        enc.blocks.push_back(std::move(block));
        c = st.out_c;
    }
    return enc;
}

template <typename T>
struct EncoderCache {
    struct BlockCache {
        Tensor3<T> conv_in;
        Tensor3<T> conv_out; // pre-norm
        typename InstanceNorm<T>::Cache norm;
        Tensor3<T> norm_out; // pre-activation
    };
    std::vector<BlockCache> blocks;
};

template <typename T>
Tensor3<T> encoder_forward(const Encoder<T>& enc, const Tensor3<T>& x, EncoderCache<T>* cache = nullptr) {
    if (x.c != enc.in_channels) throw std::invalid_argument("encoder_forward: channel mismatch");
    if (x.h % enc.downsample != 0 || x.w % enc.downsample != 0)
        throw std::invalid_argument("encoder_forward: spatial dims must be divisible by the downsample factor");
    Tensor3<T> cur = x;
    if (cache) cache->blocks.resize(enc.blocks.size());
    for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
        const auto& block = enc.blocks[i];
        Tensor3<T> conv_out = block.conv.forward(cur);
        typename InstanceNorm<T>::Cache norm_cache;
        Tensor3<T> norm_out = block.norm.forward(conv_out, cache ? &norm_cache : nullptr);
        Tensor3<T> act = silu_forward(norm_out);
        if (cache) {
            cache->blocks[i].conv_in = std::move(cur);
            cache->blocks[i].conv_out = std::move(conv_out);
            cache->blocks[i].norm = std::move(norm_cache);
            cache->blocks[i].norm_out = std::move(norm_out);
        }
        cur = std::move(act);
    }
    return cur;
}

template <typename T>
Tensor3<T> encoder_backward(const Encoder<T>& enc, const EncoderCache<T>& cache, const Tensor3<T>& dout,
                            Encoder<T>& grads) {
    Tensor3<T> d = dout;
    for (std::size_t ri = enc.blocks.size(); ri-- > 0;) {
        const auto& block = enc.blocks[ri];
        const auto& bc = cache.blocks[ri];
        d = silu_backward(bc.norm_out, d);
        d = block.norm.backward(bc.norm, d, grads.blocks[ri].norm.gamma, grads.blocks[ri].norm.beta);
        d = block.conv.backward(bc.conv_in, d, grads.blocks[ri].conv.weight, grads.blocks[ri].conv.bias);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Cross-view feature fusion: pool the query features to a vector, score each
// reference location by a scaled dot product through a logistic gate, and
// project concat(f_r, f_r * A) back to C channels.
// ---------------------------------------------------------------------------

template <typename T>
struct FusionParams {
    Conv2d<T> proj; // 2C -> C, 1x1
};

template <typename T>
FusionParams<T> fusion_init(int channels, Rng& rng) {
    return FusionParams<T>{make_conv<T>(2 * channels, channels, 1, 1, 1, 0, 0, rng)};
}

template <typename T>
struct FusionCache {
    Tensor3<T> f_r;
    std::vector<T> query_vec;
    Grid2<T> attention;
    Tensor3<T> concat;
    int query_spatial = 0; // Hq*Wq, for the pooling gradient
};

template <typename T>
Tensor3<T> fuse_forward(const Tensor3<T>& f_q, const Tensor3<T>& f_r, const FusionParams<T>& params,
                        FusionCache<T>* cache = nullptr) {
    if (f_q.c != f_r.c) throw std::invalid_argument("fuse_forward: channel mismatch");
    const int c = f_r.c;

    std::vector<T> q(c, T(0));
    const int nq = f_q.h * f_q.w;
    for (int ci = 0; ci < c; ++ci) {
        const T* p = f_q.plane(ci);
        T acc = 0;
        for (int i = 0; i < nq; ++i) acc += p[i];
        q[ci] = acc / static_cast<T>(nq);
    }

    const T inv_sqrt_c = T(1) / std::sqrt(static_cast<T>(c));
    Grid2<T> attn(f_r.h, f_r.w);
    for (int y = 0; y < f_r.h; ++y)
        for (int x = 0; x < f_r.w; ++x) {
            T dot = 0;
            for (int ci = 0; ci < c; ++ci) dot += q[ci] * f_r.at(ci, y, x);
            attn.at(y, x) = sigmoid(dot * inv_sqrt_c);
        }

    Tensor3<T> concat(2 * c, f_r.h, f_r.w);
    for (int ci = 0; ci < c; ++ci) {
        const T* src = f_r.plane(ci);
        T* low = concat.plane(ci);
        T* high = concat.plane(c + ci);
        for (int i = 0; i < f_r.h * f_r.w; ++i) {
            low[i] = src[i];
            high[i] = src[i] * attn.v[i];
        }
    }

    Tensor3<T> out = params.proj.forward(concat);
    if (cache) {
        cache->f_r = f_r;
        cache->query_vec = std::move(q);
        cache->attention = std::move(attn);
        cache->concat = std::move(concat);
        cache->query_spatial = nq;
    }
    return out;
}

/// Backward; writes d(f_q) and d(f_r), accumulates projection grads.
template <typename T>
void fuse_backward(const FusionCache<T>& cache, const FusionParams<T>& params, const Tensor3<T>& dout,
                   FusionParams<T>& grads, Tensor3<T>& df_q, Tensor3<T>& df_r) {
    const int c = cache.f_r.c;
    const int n = cache.f_r.h * cache.f_r.w;
    const T inv_sqrt_c = T(1) / std::sqrt(static_cast<T>(c));

    const Tensor3<T> dconcat = params.proj.backward(cache.concat, dout, grads.proj.weight, grads.proj.bias);

    df_r = Tensor3<T>(c, cache.f_r.h, cache.f_r.w);
    std::vector<T> dattn(n, T(0));
    for (int ci = 0; ci < c; ++ci) {
        const T* dlow = dconcat.plane(ci);
        const T* dhigh = dconcat.plane(c + ci);
        const T* fr = cache.f_r.plane(ci);
        T* dfr = df_r.plane(ci);
        for (int i = 0; i < n; ++i) {
            dfr[i] = dlow[i] + dhigh[i] * cache.attention.v[i];
            dattn[i] += dhigh[i] * fr[i];
        }
    }

    // through the logistic gate into the dot products
    std::vector<T> dlogit(n);
    for (int i = 0; i < n; ++i) {
        const T a = cache.attention.v[i];
        dlogit[i] = dattn[i] * a * (T(1) - a) * inv_sqrt_c;
    }

    std::vector<T> dq(c, T(0));
    for (int ci = 0; ci < c; ++ci) {
        const T* fr = cache.f_r.plane(ci);
        T* dfr = df_r.plane(ci);
        const T qc = cache.query_vec[ci];
        T acc = 0;
        for (int i = 0; i < n; ++i) {
            acc += dlogit[i] * fr[i];
            dfr[i] += dlogit[i] * qc;
        }
        dq[ci] = acc;
    }

    // global average pooling spreads dq uniformly over the query map
    for (int ci = 0; ci < c; ++ci) {
        const T g = dq[ci] / static_cast<T>(cache.query_spatial);
        T* p = df_q.plane(ci);
        for (int i = 0; i < cache.query_spatial; ++i) p[i] = g;
    }
}

// ---------------------------------------------------------------------------
// Detection head: 1x1 projection to A*5 channels per cell.
// Channel layout: a*5 + {0:t_x, 1:t_y, 2:t_w, 3:t_h, 4:t_o}.
// ---------------------------------------------------------------------------

template <typename T>
struct HeadParams {
    Conv2d<T> proj;
    int num_anchors = 9;
};

template <typename T>
HeadParams<T> head_init(int channels, int num_anchors, Rng& rng) {
    return HeadParams<T>{make_conv<T>(channels, num_anchors * 5, 1, 1, 1, 0, 0, rng), num_anchors};
}

/// Raw per-cell, per-anchor predictions plus the geometry needed to decode
/// them back to reference-image pixels.
template <typename T>
struct HeadOutput {
    Tensor3<T> grid; // (A*5) x G_h x G_w
    int num_anchors = 0;
    double stride = 0; // reference pixels per cell

    int grid_h() const { return grid.h; }
    int grid_w() const { return grid.w; }
    T raw(int row, int col, int anchor, int field) const { return grid.at(anchor * 5 + field, row, col); }
    T& raw(int row, int col, int anchor, int field) { return grid.at(anchor * 5 + field, row, col); }
};

template <typename T>
HeadOutput<T> head_forward(const Tensor3<T>& f, const HeadParams<T>& params, double stride) {
    HeadOutput<T> out;
    out.grid = params.proj.forward(f);
    out.num_anchors = params.num_anchors;
    out.stride = stride;
    return out;
}

/// Target assignment for one ground-truth box: the spatial cell under the
/// box center and the co-centered anchor with maximal IoU (ties toward the
/// lower anchor index).
struct Assignment {
    int row = 0, col = 0;
    int anchor_index = 0;
    double x_star = 0, y_star = 0; // center in grid units (cx/stride, cy/stride)
    double w_star = 0, h_star = 0; // pixels
};

inline Assignment assign(const Box& gt, const AnchorSet& anchors, int grid_h, int grid_w, double stride) {
    require_valid(gt, "assign");
    if (!anchors.valid()) throw std::invalid_argument("assign: invalid anchor set");
    const double img_w = grid_w * stride, img_h = grid_h * stride;
    if (gt.cx < 0 || gt.cx >= img_w || gt.cy < 0 || gt.cy >= img_h)
        throw std::invalid_argument("assign: box center outside reference image");

    Assignment a;
    a.col = static_cast<int>(std::floor(gt.cx / stride));
    a.row = static_cast<int>(std::floor(gt.cy / stride));
    a.x_star = gt.cx / stride;
    a.y_star = gt.cy / stride;
    a.w_star = gt.w;
    a.h_star = gt.h;

    double best = -1;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const double v = iou_co_centered(anchors[i].w, anchors[i].h, gt.w, gt.h);
        if (v > best) {
            best = v;
            a.anchor_index = static_cast<int>(i);
        }
    }
    return a;
}

/// Write the raw values that decode back to the assigned ground truth:
/// t_x = logit(frac(x*)), t_w = log(w*/w_a), confidence logit high at the
/// positive. Fractional parts are clamped away from {0,1} so the logit
/// stays finite.
template <typename T>
void encode_targets(HeadOutput<T>& raw, const Assignment& a, const AnchorSet& anchors, double conf_logit = 8.0) {
    const Anchor& anc = anchors[static_cast<std::size_t>(a.anchor_index)];
    auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    const double fx = std::clamp(a.x_star - std::floor(a.x_star), 1e-6, 1.0 - 1e-6);
    const double fy = std::clamp(a.y_star - std::floor(a.y_star), 1e-6, 1.0 - 1e-6);
    raw.raw(a.row, a.col, a.anchor_index, 0) = static_cast<T>(logit(fx));
    raw.raw(a.row, a.col, a.anchor_index, 1) = static_cast<T>(logit(fy));
    raw.raw(a.row, a.col, a.anchor_index, 2) = static_cast<T>(std::log(a.w_star / anc.w));
    raw.raw(a.row, a.col, a.anchor_index, 3) = static_cast<T>(std::log(a.h_star / anc.h));
    raw.raw(a.row, a.col, a.anchor_index, 4) = static_cast<T>(conf_logit);
}

/// Decode one (cell, anchor) slot to a box + confidence. The default
/// inverts the log-ratio training parameterization (w = w_a * exp(t_w));
/// the additive form (w = t_w + w_a) is kept for fidelity experiments and
/// clamps to a small positive size.
template <typename T>
std::pair<Box, double> decode(const HeadOutput<T>& raw, int row, int col, int anchor_index, const AnchorSet& anchors,
                              bool additive = false) {
    if (row < 0 || row >= raw.grid_h() || col < 0 || col >= raw.grid_w() || anchor_index < 0 ||
        anchor_index >= raw.num_anchors)
        throw std::out_of_range("decode: cell or anchor index out of range");
    const double tx = raw.raw(row, col, anchor_index, 0);
    const double ty = raw.raw(row, col, anchor_index, 1);
    const double tw = raw.raw(row, col, anchor_index, 2);
    const double th = raw.raw(row, col, anchor_index, 3);
    const double to = raw.raw(row, col, anchor_index, 4);
    const Anchor& a = anchors[static_cast<std::size_t>(anchor_index)];

    Box box;
    box.cx = (col + sigmoid(tx)) * raw.stride;
    box.cy = (row + sigmoid(ty)) * raw.stride;
    if (additive) {
        box.w = std::max(1e-3, tw + a.w);
        box.h = std::max(1e-3, th + a.h);
    } else {
        box.w = a.w * std::exp(tw);
        box.h = a.h * std::exp(th);
    }
    return {box, sigmoid(to)};
}

/// Top-1 prediction: the (cell, anchor) with maximal confidence logit;
/// ties break toward the lowest (row, col, anchor) index.
template <typename T>
std::pair<Box, double> predict(const HeadOutput<T>& raw, const AnchorSet& anchors, bool additive = false) {
    int best_row = 0, best_col = 0, best_a = 0;
    T best = raw.raw(0, 0, 0, 4);
    for (int row = 0; row < raw.grid_h(); ++row)
        for (int col = 0; col < raw.grid_w(); ++col)
            for (int a = 0; a < raw.num_anchors; ++a) {
                const T to = raw.raw(row, col, a, 4);
                if (to > best) {
                    best = to;
                    best_row = row;
                    best_col = col;
                    best_a = a;
                }
            }
    return decode(raw, best_row, best_col, best_a, anchors, additive);
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

template <typename T>
struct Model {
    BackboneSpec spec;
    bool cem_enabled = true;
    bool additive_decode = false;
    Encoder<T> query_encoder;
    Encoder<T> reference_encoder;
    FusionParams<T> fusion;
    CemParams<T> cem;
    HeadParams<T> head;
    AnchorSet anchors;
};

struct ModelConfig {
    std::string backbone = "tiny";
    int downsample = 16;
    int channels = 128;
    bool cem_enabled = true;
    int cem_kernel_length = 11;
    bool cem_expand_activation = false;
    bool additive_decode = false;
};

template <typename T>
Model<T> model_init(const ModelConfig& cfg, AnchorSet anchors, std::uint64_t seed) {
    Model<T> m;
    m.spec = make_backbone_spec(cfg.backbone, cfg.downsample, cfg.channels);
    m.cem_enabled = cfg.cem_enabled;
    m.additive_decode = cfg.additive_decode;
    Rng rng(derive_seed(seed, "model-init"));
    m.query_encoder = encoder_init<T>(m.spec, m.spec.query_in_channels, rng);
    m.reference_encoder = encoder_init<T>(m.spec, m.spec.reference_in_channels, rng);
    m.fusion = fusion_init<T>(m.spec.out_channels, rng);
    m.cem = cem_init<T>(m.spec.out_channels, cfg.cem_kernel_length, derive_seed(seed, "model-cem"));
    m.cem.expand_activation = cfg.cem_expand_activation;
    if (!anchors.valid()) throw std::invalid_argument("model_init: invalid anchor set");
    m.head = head_init<T>(m.spec.out_channels, static_cast<int>(anchors.size()), rng);
    m.anchors = std::move(anchors);
    return m;
}

/// Enumerate every parameter vector with a stable checkpoint key.
template <typename T, typename Fn>
void visit_params(Model<T>& m, Fn&& fn) {
    auto visit_encoder = [&](Encoder<T>& enc, const std::string& prefix) {
        for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
            const std::string base = prefix + ".block" + std::to_string(i);
            fn(base + ".conv.weight", enc.blocks[i].conv.weight);
            fn(base + ".conv.bias", enc.blocks[i].conv.bias);
            fn(base + ".norm.gamma", enc.blocks[i].norm.gamma);
            fn(base + ".norm.beta", enc.blocks[i].norm.beta);
        }
    };
    visit_encoder(m.query_encoder, "query_encoder");
    visit_encoder(m.reference_encoder, "reference_encoder");
    fn("fusion.proj.weight", m.fusion.proj.weight);
    fn("fusion.proj.bias", m.fusion.proj.bias);
    if (m.cem_enabled) {
        fn("cem.conv1_in.weight", m.cem.conv1_in.weight);
        fn("cem.conv1_in.bias", m.cem.conv1_in.bias);
        fn("cem.conv_h.weight", m.cem.conv_h.weight);
        fn("cem.conv_h.bias", m.cem.conv_h.bias);
        fn("cem.conv_v.weight", m.cem.conv_v.weight);
        fn("cem.conv_v.bias", m.cem.conv_v.bias);
        fn("cem.conv1_out.weight", m.cem.conv1_out.weight);
        fn("cem.conv1_out.bias", m.cem.conv1_out.bias);
    }
    fn("head.proj.weight", m.head.proj.weight);
    fn("head.proj.bias", m.head.proj.bias);
}

template <typename T>
std::size_t model_param_count(Model<T>& m) {
    std::size_t n = 0;
    visit_params(m, [&](const std::string&, std::vector<T>& v) { n += v.size(); });
    return n;
}

template <typename T>
Model<T> zeros_like(const Model<T>& m) {
    Model<T> z = m;
    visit_params(z, [](const std::string&, std::vector<T>& v) { std::fill(v.begin(), v.end(), T(0)); });
    return z;
}

template <typename T>
struct ModelCache {
    Tensor3<T> query_input; // 4-channel
    EncoderCache<T> query_enc;
    EncoderCache<T> ref_enc;
    Tensor3<T> f_q, f_r;
    FusionCache<T> fusion;
    Tensor3<T> fused;
    CemCache<T> cem;
    Tensor3<T> head_input; // CEM output, or the fused map when CEM is off
};

/// Stack the encoding field under the query image as a 4th channel.
template <typename T>
Tensor3<T> stack_query_channels(const Tensor3<T>& image, const Grid2<T>& field) {
    if (image.c != 3) throw std::invalid_argument("stack_query_channels: query image must have 3 channels");
    if (field.h != image.h || field.w != image.w)
        throw std::invalid_argument("stack_query_channels: encoding field dims do not match the image");
    Tensor3<T> out(4, image.h, image.w);
    std::copy(image.v.begin(), image.v.end(), out.v.begin());
    std::copy(field.v.begin(), field.v.end(), out.v.begin() + image.v.size());
    return out;
}

template <typename T>
Tensor3<T> encode_query(const Model<T>& m, const Tensor3<T>& image, const Grid2<T>& field,
                        EncoderCache<T>* cache = nullptr, Tensor3<T>* stacked = nullptr) {
    Tensor3<T> input = stack_query_channels(image, field);
    Tensor3<T> out = encoder_forward(m.query_encoder, input, cache);
    if (stacked) *stacked = std::move(input);
    return out;
}

template <typename T>
Tensor3<T> encode_reference(const Model<T>& m, const Tensor3<T>& image, EncoderCache<T>* cache = nullptr) {
    return encoder_forward(m.reference_encoder, image, cache);
}

template <typename T>
HeadOutput<T> model_forward(const Model<T>& m, const Tensor3<T>& query_image, const Grid2<T>& encoding,
                            const Tensor3<T>& reference_image, ModelCache<T>* cache = nullptr) {
    EncoderCache<T>* qc = cache ? &cache->query_enc : nullptr;
    EncoderCache<T>* rc = cache ? &cache->ref_enc : nullptr;
    Tensor3<T> f_q = encode_query(m, query_image, encoding, qc, cache ? &cache->query_input : nullptr);
    Tensor3<T> f_r = encode_reference(m, reference_image, rc);

    Tensor3<T> fused = fuse_forward(f_q, f_r, m.fusion, cache ? &cache->fusion : nullptr);
    Tensor3<T> enhanced = m.cem_enabled ? cem_forward(fused, m.cem, cache ? &cache->cem : nullptr) : fused;

    const double stride = static_cast<double>(reference_image.w) / enhanced.w;
    HeadOutput<T> out = head_forward(enhanced, m.head, stride);
    if (cache) {
        cache->f_q = std::move(f_q);
        cache->f_r = std::move(f_r);
        cache->fused = std::move(fused);
        cache->head_input = std::move(enhanced);
    }
    return out;
}

/// Backward from d(head grid) into parameter gradients (accumulated into
/// `grads`, a zeros_like copy of the model).
template <typename T>
void model_backward(const Model<T>& m, const ModelCache<T>& cache, const Tensor3<T>& dgrid, Model<T>& grads) {
    Tensor3<T> d = m.head.proj.backward(cache.head_input, dgrid, grads.head.proj.weight, grads.head.proj.bias);
    if (m.cem_enabled) d = cem_backward(cache.cem, d, m.cem, grads.cem);

    Tensor3<T> df_q(cache.f_q.c, cache.f_q.h, cache.f_q.w);
    Tensor3<T> df_r;
    fuse_backward(cache.fusion, m.fusion, d, grads.fusion, df_q, df_r);

    encoder_backward(m.reference_encoder, cache.ref_enc, df_r, grads.reference_encoder);
    encoder_backward(m.query_encoder, cache.query_enc, df_q, grads.query_encoder);
}

} // namespace edgeo
