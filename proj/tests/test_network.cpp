#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "edgeo/loss.hpp"
#include "edgeo/network.hpp"
#include "testutil.hpp"

using namespace edgeo;
using testutil::central_diff;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

Grid2<double> random_field(int h, int w, Rng& rng) {
    Grid2<double> g(h, w);
    for (auto& v : g.v) v = rng.uniform();
    return g;
}

template <typename T>
Model<T> tiny_model(const ModelConfig& cfg = {}, std::uint64_t seed = 5) {
    return model_init<T>(cfg, cvogl_anchors(), seed);
}

} // namespace

TEST(Encoder, QueryShapeContract) {
    // 128x128 query, downsample 8, 64 channels -> (64, 16, 16)
    ModelConfig cfg;
    cfg.downsample = 8;
    cfg.channels = 64;
    auto m = tiny_model<float>(cfg);
    Rng rng(1);
    const auto img = random_tensor<float>(3, 128, 128, rng, 0, 1);
    Grid2<float> field(128, 128, 0.5f);
    const auto f = encode_query(m, img, field);
    EXPECT_EQ(f.c, 64);
    EXPECT_EQ(f.h, 16);
    EXPECT_EQ(f.w, 16);
}

TEST(Encoder, WrongFieldSizeRejected) {
    auto m = tiny_model<float>();
    Rng rng(2);
    const auto img = random_tensor<float>(3, 64, 64, rng, 0, 1);
    Grid2<float> field(32, 64, 0.5f);
    EXPECT_THROW(encode_query(m, img, field), std::invalid_argument);
}

TEST(Encoder, ReferenceShapeAndDivisibility) {
    auto m = tiny_model<float>();
    Rng rng(3);
    const auto img = random_tensor<float>(3, 256, 256, rng, 0, 1);
    const auto f = encode_reference(m, img);
    EXPECT_EQ(f.c, 128);
    EXPECT_EQ(f.h, 16);
    EXPECT_EQ(f.w, 16);
    const auto bad = random_tensor<float>(3, 250, 256, rng, 0, 1);
    EXPECT_THROW(encode_reference(m, bad), std::invalid_argument);
}

TEST(Encoder, Deterministic) {
    auto m = tiny_model<float>();
    Rng rng(4);
    const auto img = random_tensor<float>(3, 64, 64, rng, 0, 1);
    const auto a = encode_reference(m, img);
    const auto b = encode_reference(m, img);
    EXPECT_EQ(a.v, b.v);
}

TEST(Fusion, ZeroQueryGivesHalfAttentionEverywhere) {
    Rng rng(7);
    auto params = fusion_init<double>(16, rng);
    Tensor3d f_q(16, 4, 4); // all zeros -> pooled q = 0 -> logits 0
    const auto f_r = random_tensor<double>(16, 6, 5, rng);
    FusionCache<double> cache;
    const auto out = fuse_forward(f_q, f_r, params, &cache);
    for (double a : cache.attention.v) ASSERT_DOUBLE_EQ(a, 0.5);
    EXPECT_EQ(out.c, 16);
    EXPECT_EQ(out.h, 6);
    EXPECT_EQ(out.w, 5);
    EXPECT_TRUE(out.all_finite());
}

TEST(Fusion, MismatchedSpatialDimsAllowedChannelsNot) {
    Rng rng(8);
    auto params = fusion_init<float>(8, rng);
    const auto f_q = random_tensor<float>(8, 3, 3, rng);
    const auto f_r = random_tensor<float>(8, 7, 9, rng);
    EXPECT_NO_THROW(fuse_forward(f_q, f_r, params));
    const auto f_bad = random_tensor<float>(4, 7, 9, rng);
    EXPECT_THROW(fuse_forward(f_bad, f_r, params), std::invalid_argument);
}

TEST(Fusion, AttentionInOpenUnitInterval) {
    Rng rng(9);
    auto params = fusion_init<double>(12, rng);
    const auto f_q = random_tensor<double>(12, 4, 4, rng, -3, 3);
    const auto f_r = random_tensor<double>(12, 5, 5, rng, -3, 3);
    FusionCache<double> cache;
    fuse_forward(f_q, f_r, params, &cache);
    for (double a : cache.attention.v) {
        ASSERT_GT(a, 0.0);
        ASSERT_LT(a, 1.0);
    }
}

TEST(Head, ShapeAndZeroWeights) {
    Rng rng(11);
    auto params = head_init<float>(32, 9, rng);
    const auto f = random_tensor<float>(32, 16, 16, rng);
    auto out = head_forward(f, params, 16.0);
    EXPECT_EQ(out.grid.c, 45);
    EXPECT_EQ(out.grid_h(), 16);
    EXPECT_EQ(out.grid_w(), 16);

    std::fill(params.proj.weight.begin(), params.proj.weight.end(), 0.0f);
    std::fill(params.proj.bias.begin(), params.proj.bias.end(), 0.0f);
    out = head_forward(f, params, 16.0);
    for (float v : out.grid.v) ASSERT_EQ(v, 0.0f);
}

TEST(Decode, ZeroRawGivesCellCenterAnchorSize) {
    HeadOutput<double> raw;
    raw.grid = Tensor3d(45, 16, 16);
    raw.num_anchors = 9;
    raw.stride = 16;
    const auto [box, conf] = decode(raw, 3, 4, 0, cvogl_anchors());
    EXPECT_DOUBLE_EQ(box.cx, 72);
    EXPECT_DOUBLE_EQ(box.cy, 56);
    EXPECT_DOUBLE_EQ(box.w, 37);
    EXPECT_DOUBLE_EQ(box.h, 41);
    EXPECT_DOUBLE_EQ(conf, 0.5);
}

TEST(Decode, LogTwoDoublesAnchorWidth) {
    HeadOutput<double> raw;
    raw.grid = Tensor3d(45, 4, 4);
    raw.num_anchors = 9;
    raw.stride = 16;
    raw.raw(0, 0, 0, 2) = std::log(2.0);
    const auto [box, conf] = decode(raw, 0, 0, 0, cvogl_anchors());
    EXPECT_NEAR(box.w, 74.0, 1e-12);
}

TEST(Decode, AdditiveVariant) {
    HeadOutput<double> raw;
    raw.grid = Tensor3d(45, 4, 4);
    raw.num_anchors = 9;
    raw.stride = 16;
    raw.raw(1, 2, 3, 2) = 10.0;
    raw.raw(1, 2, 3, 3) = -5.0;
    const auto [box, conf] = decode(raw, 1, 2, 3, cvogl_anchors(), true);
    EXPECT_DOUBLE_EQ(box.w, 129 + 10);
    EXPECT_DOUBLE_EQ(box.h, 129 - 5);
}

TEST(Decode, IndexOutOfRangeRejected) {
    HeadOutput<double> raw;
    raw.grid = Tensor3d(45, 4, 4);
    raw.num_anchors = 9;
    raw.stride = 16;
    EXPECT_THROW(decode(raw, 4, 0, 0, cvogl_anchors()), std::out_of_range);
    EXPECT_THROW(decode(raw, 0, 0, 9, cvogl_anchors()), std::out_of_range);
}

TEST(Assign, PaperAnchorExactMatch) {
    const auto anchors = cvogl_anchors();
    const auto a = assign(Box(72, 56, 37, 41), anchors, 16, 16, 16.0);
    EXPECT_EQ(a.row, 3);
    EXPECT_EQ(a.col, 4);
    EXPECT_EQ(a.anchor_index, 0);

    // brute-force argmax over co-centered IoU confirms index 0
    double best = -1;
    int best_i = -1;
    for (int i = 0; i < 9; ++i) {
        const double v = iou_co_centered(anchors[i].w, anchors[i].h, 37, 41);
        if (v > best) {
            best = v;
            best_i = i;
        }
    }
    EXPECT_EQ(best_i, 0);
    EXPECT_DOUBLE_EQ(best, 1.0);
}

TEST(Assign, ExactAnchorDimsWinArgmax) {
    const auto anchors = cvogl_anchors();
    const auto a5 = assign(Box(100, 100, anchors[5].w, anchors[5].h), anchors, 16, 16, 16.0);
    EXPECT_EQ(a5.anchor_index, 5);
    const auto sq = assign(Box(100, 100, 129, 129), anchors, 16, 16, 16.0);
    EXPECT_EQ(sq.anchor_index, 3); // (129,129) is anchor 3 in the paper's list
}

TEST(Assign, CenterOutsideImageRejected) {
    EXPECT_THROW(assign(Box(300, 10, 5, 5), cvogl_anchors(), 16, 16, 16.0), std::invalid_argument);
    EXPECT_THROW(assign(Box(-1, 10, 5, 5), cvogl_anchors(), 16, 16, 16.0), std::invalid_argument);
}

TEST(Assign, TieBreaksTowardLowerAnchorIndex) {
    AnchorSet anchors{{{10, 10}, {10, 10}, {20, 20}}};
    const auto a = assign(Box(50, 50, 10, 10), anchors, 8, 8, 16.0);
    EXPECT_EQ(a.anchor_index, 0);
}

TEST(RoundTrip, AssignEncodeDecodeReproducesBox) {
    Rng rng(31);
    const auto anchors = cvogl_anchors();
    const int gh = 16, gw = 16;
    const double stride = 16;
    for (int t = 0; t < 1000; ++t) {
        Box gt(rng.uniform(1, 255), rng.uniform(1, 255), rng.uniform(5, 250), rng.uniform(5, 250));
        const auto a = assign(gt, anchors, gh, gw, stride);
        HeadOutput<double> raw;
        raw.grid = Tensor3d(45, gh, gw);
        raw.num_anchors = 9;
        raw.stride = stride;
        encode_targets(raw, a, anchors);
        const auto [box, conf] = decode(raw, a.row, a.col, a.anchor_index, anchors);
        ASSERT_NEAR(box.cx, gt.cx, 1e-4);
        ASSERT_NEAR(box.cy, gt.cy, 1e-4);
        ASSERT_NEAR(box.w, gt.w, 1e-4);
        ASSERT_NEAR(box.h, gt.h, 1e-4);
        ASSERT_GT(conf, 0.99);
    }
}

TEST(Predict, ArgmaxAndTieBreak) {
    HeadOutput<double> raw;
    raw.grid = Tensor3d(45, 4, 4);
    raw.num_anchors = 9;
    raw.stride = 16;
    for (auto& v : raw.grid.v) v = 0;
    for (int row = 0; row < 4; ++row)
        for (int col = 0; col < 4; ++col)
            for (int a = 0; a < 9; ++a) raw.raw(row, col, a, 4) = -5.0;
    raw.raw(2, 1, 4, 4) = 5.0;
    const auto [box, conf] = predict(raw, cvogl_anchors());
    EXPECT_DOUBLE_EQ(conf, sigmoid(5.0));
    EXPECT_DOUBLE_EQ(box.cx, (1 + 0.5) * 16);
    EXPECT_DOUBLE_EQ(box.cy, (2 + 0.5) * 16);
    EXPECT_DOUBLE_EQ(box.w, cvogl_anchors()[4].w);

    // uniform logits: lowest (row, col, anchor) wins
    for (int row = 0; row < 4; ++row)
        for (int col = 0; col < 4; ++col)
            for (int a = 0; a < 9; ++a) raw.raw(row, col, a, 4) = 1.0;
    const auto [box2, conf2] = predict(raw, cvogl_anchors());
    EXPECT_DOUBLE_EQ(conf2, sigmoid(1.0));
    EXPECT_DOUBLE_EQ(box2.cx, 0.5 * 16);
    EXPECT_DOUBLE_EQ(box2.cy, 0.5 * 16);
    EXPECT_DOUBLE_EQ(box2.w, cvogl_anchors()[0].w);
}

TEST(ModelForward, ShapeChainAndDeterminism) {
    ModelConfig cfg;
    cfg.channels = 32;
    auto m = tiny_model<float>(cfg, 77);
    Rng rng(13);
    const auto query = random_tensor<float>(3, 64, 64, rng, 0, 1);
    const auto ref = random_tensor<float>(3, 128, 128, rng, 0, 1);
    Grid2<float> field(64, 64, 0.25f);

    const auto out = model_forward(m, query, field, ref);
    EXPECT_EQ(out.grid.c, 45);
    EXPECT_EQ(out.grid_h(), 8);
    EXPECT_EQ(out.grid_w(), 8);
    EXPECT_DOUBLE_EQ(out.stride, 16.0);
    EXPECT_TRUE(out.grid.all_finite());

    const auto out2 = model_forward(m, query, field, ref);
    EXPECT_EQ(out.grid.v, out2.grid.v);

    // CEM off still satisfies the shape contract
    ModelConfig cfg2 = cfg;
    cfg2.cem_enabled = false;
    auto m2 = tiny_model<float>(cfg2, 77);
    const auto out3 = model_forward(m2, query, field, ref);
    EXPECT_EQ(out3.grid.c, 45);
    EXPECT_TRUE(out3.grid.all_finite());
}

TEST(ModelForward, DeeperBackbonesKeepContract) {
    for (const char* name : {"resnet18-like", "darknet53-like"}) {
        ModelConfig cfg;
        cfg.backbone = name;
        cfg.channels = 16;
        auto m = tiny_model<float>(cfg, 3);
        Rng rng(17);
        const auto query = random_tensor<float>(3, 32, 32, rng, 0, 1);
        const auto ref = random_tensor<float>(3, 64, 64, rng, 0, 1);
        Grid2<float> field(32, 32, 0.5f);
        const auto out = model_forward(m, query, field, ref);
        EXPECT_EQ(out.grid_h(), 4) << name;
        EXPECT_TRUE(out.grid.all_finite()) << name;
    }
}

TEST(VisitParams, UniqueNamesAndZerosLike) {
    auto m = tiny_model<float>();
    std::set<std::string> names;
    std::size_t total = 0;
    visit_params(m, [&](const std::string& name, std::vector<float>& v) {
        EXPECT_TRUE(names.insert(name).second) << "duplicate param name " << name;
        total += v.size();
    });
    EXPECT_EQ(total, model_param_count(m));
    EXPECT_GT(total, 100000u);

    auto z = zeros_like(m);
    visit_params(z, [&](const std::string&, std::vector<float>& v) {
        for (float x : v) ASSERT_EQ(x, 0.0f);
    });
}

TEST(ModelBackward, FullModelGradientsMatchFiniteDifferences) {
    ModelConfig cfg;
    cfg.channels = 16;
    cfg.cem_kernel_length = 5;
    auto m = model_init<double>(cfg, cvogl_anchors(), 123);
    Rng rng(19);
    const auto query = random_tensor<double>(3, 32, 32, rng, 0, 1);
    const auto ref = random_tensor<double>(3, 64, 64, rng, 0, 1);
    const auto field = random_field(32, 32, rng);
    const Box gt(30, 40, 25, 18);

    auto loss_value = [&]() {
        const auto out = model_forward(m, query, field, ref);
        const auto a = assign(gt, m.anchors, out.grid_h(), out.grid_w(), out.stride);
        return total_loss(out, a, m.anchors).total;
    };

    ModelCache<double> cache;
    const auto out = model_forward(m, query, field, ref, &cache);
    const auto a = assign(gt, m.anchors, out.grid_h(), out.grid_w(), out.stride);
    const auto dgrid = loss_backward(out, a, m.anchors);
    auto grads = zeros_like(m);
    model_backward(m, cache, dgrid, grads);

    // sample parameters across every group
    struct Entry {
        std::vector<double>* p;
        std::vector<double>* g;
        std::string name;
    };
    std::vector<Entry> entries;
    std::vector<std::vector<double>*> gptrs;
    visit_params(grads, [&](const std::string&, std::vector<double>& v) { gptrs.push_back(&v); });
    std::size_t gi = 0;
    visit_params(m, [&](const std::string& name, std::vector<double>& v) {
        entries.push_back({&v, gptrs[gi++], name});
    });

    Rng pick(29);
    int checked = 0;
    for (auto& e : entries) {
        for (int t = 0; t < 3; ++t) {
            const auto idx = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(e.p->size()) - 1));
            const double analytic = (*e.g)[idx];
            const double fd = central_diff(loss_value, (*e.p)[idx], 1e-5);
            // absolute floor where the difference quotient's own roundoff
            // (~eps * loss / step) dominates
            if (std::abs(analytic - fd) < 1e-7) { ++checked; continue; }
            EXPECT_LT(rel_err(analytic, fd), 1e-3) << e.name << "[" << idx << "] analytic=" << analytic << " fd=" << fd;
            ++checked;
        }
    }
    EXPECT_GE(checked, 60);
}
