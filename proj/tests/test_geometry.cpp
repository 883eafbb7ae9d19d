#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "edgeo/geometry.hpp"
#include "edgeo/rng.hpp"

using namespace edgeo;

namespace {

// Independent IoU oracle: rasterize integer-corner boxes on a unit pixel
// grid and count cells. Exact for boxes whose corners are integers.
double iou_rasterized(const Box& a, const Box& b) {
    const int lo_x = static_cast<int>(std::floor(std::min(a.left(), b.left())));
    const int hi_x = static_cast<int>(std::ceil(std::max(a.right(), b.right())));
    const int lo_y = static_cast<int>(std::floor(std::min(a.top(), b.top())));
    const int hi_y = static_cast<int>(std::ceil(std::max(a.bottom(), b.bottom())));
    long long na = 0, nb = 0, ni = 0;
    for (int y = lo_y; y < hi_y; ++y) {
        for (int x = lo_x; x < hi_x; ++x) {
            const bool in_a = x >= a.left() && x + 1 <= a.right() && y >= a.top() && y + 1 <= a.bottom();
            const bool in_b = x >= b.left() && x + 1 <= b.right() && y >= b.top() && y + 1 <= b.bottom();
            na += in_a;
            nb += in_b;
            ni += in_a && in_b;
        }
    }
    const long long nu = na + nb - ni;
    return nu == 0 ? 0.0 : static_cast<double>(ni) / static_cast<double>(nu);
}

Box random_integer_box(Rng& rng) {
    const int l = static_cast<int>(rng.uniform_int(-20, 40));
    const int t = static_cast<int>(rng.uniform_int(-20, 40));
    const int w = static_cast<int>(rng.uniform_int(1, 30));
    const int h = static_cast<int>(rng.uniform_int(1, 30));
    return Box((l + l + w) / 2.0, (t + t + h) / 2.0, w, h);
}

Box random_box(Rng& rng) {
    return Box(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0.5, 40), rng.uniform(0.5, 40));
}

} // namespace

TEST(Iou, IdenticalBoxes) {
    Box a(5, 5, 10, 10);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
}

TEST(Iou, DisjointBoxes) {
    EXPECT_DOUBLE_EQ(iou(Box(5, 5, 10, 10), Box(100, 100, 10, 10)), 0.0);
}

TEST(Iou, HalfOverlapMatchesRasterOracle) {
    Box a(5, 5, 10, 10), b(10, 5, 10, 10);
    EXPECT_NEAR(iou(a, b), 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(iou_rasterized(a, b), 1.0 / 3.0, 1e-12);
}

TEST(Iou, DegenerateInputRejected) {
    EXPECT_THROW(iou(Box(0, 0, 0, 5), Box(0, 0, 1, 1)), std::invalid_argument);
    EXPECT_THROW(iou(Box(0, 0, 5, -1), Box(0, 0, 1, 1)), std::invalid_argument);
}

TEST(Iou, AgreesWithRasterOracleOnIntegerBoxes) {
    Rng rng(101);
    for (int i = 0; i < 200; ++i) {
        const Box a = random_integer_box(rng);
        const Box b = random_integer_box(rng);
        EXPECT_NEAR(iou(a, b), iou_rasterized(a, b), 1e-9) << "case " << i;
    }
}

TEST(Iou, SymmetricAndBounded) {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        const Box a = random_box(rng);
        const Box b = random_box(rng);
        const double ab = iou(a, b);
        EXPECT_DOUBLE_EQ(ab, iou(b, a));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
        EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    }
}

TEST(AccAtK, PerfectPredictions) {
    std::vector<Box> boxes = {Box(5, 5, 10, 10), Box(40, 40, 8, 6)};
    EXPECT_DOUBLE_EQ(acc_at_k(boxes, boxes, 0.5), 1.0);
}

TEST(AccAtK, ExactThresholdScoresZero) {
    // IoU exactly 0.5: boxes (0..10) vs (0..10 shifted so inter/union = 1/2):
    // a spans [0,10]x[0,3], b spans [0,10]x[1,4] -> inter 20, union 40.
    Box a(5, 1.5, 10, 3), b(5, 2.5, 10, 3);
    ASSERT_DOUBLE_EQ(iou(a, b), 0.5);
    EXPECT_DOUBLE_EQ(acc_at_k({a}, {b}, 0.5), 0.0);
}

TEST(AccAtK, HandListedPhiValues) {
    // Four pairs engineered to IoUs {0.6, 0.3, 0.9, 0.1} via the raster
    // oracle; at k=0.25 the indicator values are {1, 1, 1, 0} -> 0.75.
    std::vector<Box> preds, truths;
    // Nested co-centered boxes of equal height: width ratio r gives
    // inter = r*wa*h and union = wa*h, so IoU = r exactly.
    for (double r : {0.6, 0.3, 0.9, 0.1}) {
        preds.push_back(Box(0, 0, 100 * r, 10));
        truths.push_back(Box(0, 0, 100, 10));
    }
    for (std::size_t i = 0; i < 4; ++i) {
        const double expected[] = {0.6, 0.3, 0.9, 0.1};
        ASSERT_NEAR(iou(preds[i], truths[i]), expected[i], 1e-12);
    }
    EXPECT_DOUBLE_EQ(acc_at_k(preds, truths, 0.25), 0.75);
}

TEST(AccAtK, MonotoneNonIncreasingInK) {
    Rng rng(23);
    std::vector<Box> preds, truths;
    for (int i = 0; i < 50; ++i) {
        preds.push_back(random_box(rng));
        Box t = preds.back();
        t.cx += rng.uniform(-5, 5);
        t.w = std::max(0.5, t.w + rng.uniform(-5, 5));
        truths.push_back(t);
    }
    double prev = 1.0;
    for (double k = 0.0; k < 1.0; k += 0.05) {
        const double a = acc_at_k(preds, truths, k);
        EXPECT_LE(a, prev + 1e-15);
        prev = a;
    }
}

TEST(AccAtK, RejectsBadInput) {
    std::vector<Box> one = {Box(0, 0, 1, 1)};
    std::vector<Box> two = {Box(0, 0, 1, 1), Box(0, 0, 1, 1)};
    EXPECT_THROW(acc_at_k(one, two, 0.5), std::invalid_argument);
    EXPECT_THROW(acc_at_k({}, {}, 0.5), std::invalid_argument);
}

TEST(ClusterAnchors, SinglePointCluster) {
    std::vector<Anchor> boxes(9, Anchor{37, 41});
    const AnchorSet got = cluster_anchors(boxes, 1, 0);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_DOUBLE_EQ(got[0].w, 37);
    EXPECT_DOUBLE_EQ(got[0].h, 41);
}

TEST(ClusterAnchors, TwoObviousClustersMatchBruteForce) {
    std::vector<Anchor> boxes;
    for (int i = 0; i < 5; ++i) boxes.push_back({10, 10});
    for (int i = 0; i < 5; ++i) boxes.push_back({100, 100});

    // Brute-force best 2-partition by within-cluster (1 - IoU to mean) cost.
    double best_cost = 1e18;
    std::pair<Anchor, Anchor> best_centers;
    for (unsigned m = 1; m < (1u << boxes.size()) - 1; ++m) {
        double w0 = 0, h0 = 0, w1 = 0, h1 = 0;
        int n0 = 0, n1 = 0;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            if (m & (1u << i)) { w0 += boxes[i].w; h0 += boxes[i].h; ++n0; }
            else { w1 += boxes[i].w; h1 += boxes[i].h; ++n1; }
        }
        if (n0 == 0 || n1 == 0) continue;
        const Anchor c0{w0 / n0, h0 / n0}, c1{w1 / n1, h1 / n1};
        double cost = 0;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const Anchor& c = (m & (1u << i)) ? c0 : c1;
            cost += 1.0 - iou_co_centered(boxes[i].w, boxes[i].h, c.w, c.h);
        }
        if (cost < best_cost) { best_cost = cost; best_centers = {c0, c1}; }
    }
    EXPECT_NEAR(best_cost, 0.0, 1e-12); // the obvious split is perfect

    const AnchorSet got = cluster_anchors(boxes, 2, 0);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_DOUBLE_EQ(got[0].w, 10);
    EXPECT_DOUBLE_EQ(got[0].h, 10);
    EXPECT_DOUBLE_EQ(got[1].w, 100);
    EXPECT_DOUBLE_EQ(got[1].h, 100);
}

TEST(ClusterAnchors, DeterministicGivenSeed) {
    Rng rng(55);
    std::vector<Anchor> boxes;
    for (int i = 0; i < 60; ++i) boxes.push_back({rng.uniform(5, 300), rng.uniform(5, 300)});
    const AnchorSet a = cluster_anchors(boxes, 9, 42);
    const AnchorSet b = cluster_anchors(boxes, 9, 42);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_DOUBLE_EQ(a[i].w, b[i].w);
        EXPECT_DOUBLE_EQ(a[i].h, b[i].h);
    }
}

TEST(ClusterAnchors, CoverageNonDecreasingInK) {
    Rng rng(99);
    std::vector<Anchor> boxes;
    for (int i = 0; i < 80; ++i) boxes.push_back({rng.uniform(5, 400), rng.uniform(5, 400)});
    double prev = 0;
    for (int k = 1; k <= 9; k += 2) {
        const double cov = mean_best_iou(boxes, cluster_anchors(boxes, k, 7));
        EXPECT_GE(cov, prev - 1e-9) << "k=" << k;
        prev = cov;
    }
}

TEST(ClusterAnchors, FewerBoxesThanClusters) {
    std::vector<Anchor> boxes = {{10, 10}, {20, 20}};
    EXPECT_THROW(cluster_anchors(boxes, 3, 0), std::invalid_argument);
}
