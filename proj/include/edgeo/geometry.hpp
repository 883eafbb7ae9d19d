#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edgeo/rng.hpp"

namespace edgeo {

/// Axis-aligned bounding box in center format (cx, cy, w, h), pixels.
/// Corner form is a derived view; w and h must be strictly positive.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    Box() = default;
    Box(double cx_, double cy_, double w_, double h_) : cx(cx_), cy(cy_), w(w_), h(h_) {}

    double left() const { return cx - w / 2; }
    double right() const { return cx + w / 2; }
    double top() const { return cy - h / 2; }
    double bottom() const { return cy + h / 2; }
    double area() const { return w * h; }

    bool valid() const { return w > 0 && h > 0 && std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h); }
};

/// Single user-click coordinate identifying the query object, in
/// query-image pixels.
struct MarkingPoint {
    double x = 0, y = 0;

    bool inside(int width, int height) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

/// Prior (w, h) box dimension in reference-image pixels.
struct Anchor {
    double w = 0, h = 0;
};

/// Ordered list of prior box dimensions. Index identifies the anchor in
/// the detection head's output layout, so order is part of the contract.
struct AnchorSet {
    std::vector<Anchor> anchors;

    std::size_t size() const { return anchors.size(); }
    const Anchor& operator[](std::size_t i) const { return anchors[i]; }

    bool valid() const {
        if (anchors.empty()) return false;
        for (const auto& a : anchors)
            if (!(a.w > 0 && a.h > 0)) return false;
        return true;
    }
};

inline void require_valid(const Box& b, const char* who) {
    if (!b.valid()) throw std::invalid_argument(std::string(who) + ": degenerate box (w,h must be > 0)");
}

/// Intersection over union of two boxes. Exact on continuous coordinates;
/// disjoint boxes give exactly 0.
inline double iou(const Box& a, const Box& b) {
    require_valid(a, "iou");
    require_valid(b, "iou");
    const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
    const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
    const double inter = ix * iy;
    if (inter <= 0) return 0.0;
    // Areas from the same corner arithmetic as the intersection, so
    // identical boxes give exactly 1.
    const double area_a = (a.right() - a.left()) * (a.bottom() - a.top());
    const double area_b = (b.right() - b.left()) * (b.bottom() - b.top());
    return std::clamp(inter / (area_a + area_b - inter), 0.0, 1.0);
}

/// IoU of two boxes sharing a common center, used for anchor/shape matching.
inline double iou_co_centered(double wa, double ha, double wb, double hb) {
    const double inter = std::min(wa, wb) * std::min(ha, hb);
    return inter / (wa * ha + wb * hb - inter);
}

/// Fraction of prediction/truth pairs whose IoU strictly exceeds k.
inline double acc_at_k(const std::vector<Box>& predictions, const std::vector<Box>& truths, double k) {
    if (predictions.size() != truths.size()) throw std::invalid_argument("acc_at_k: list length mismatch");
    if (predictions.empty()) throw std::invalid_argument("acc_at_k: empty lists");
    if (k < 0 || k >= 1) throw std::invalid_argument("acc_at_k: threshold must be in [0,1)");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (iou(predictions[i], truths[i]) > k) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

namespace detail {

inline std::size_t nearest_anchor(const std::vector<Anchor>& centers, double w, double h, double* best_d = nullptr) {
    std::size_t best = 0;
    double bd = 2.0;
    for (std::size_t j = 0; j < centers.size(); ++j) {
        const double d = 1.0 - iou_co_centered(w, h, centers[j].w, centers[j].h);
        if (d < bd) { // strict: ties break toward the lower index
            bd = d;
            best = j;
        }
    }
    if (best_d) *best_d = bd;
    return best;
}

} // namespace detail

/// K-means over box dimensions with d(box, center) = 1 - IoU of co-centered
/// boxes. K-means++ seeding from a fixed seed; assignment ties break toward
/// the lower center index; empty clusters are re-seeded to the farthest box.
/// Returns centers sorted by area ascending.
inline AnchorSet cluster_anchors(const std::vector<Anchor>& boxes, int k, std::uint64_t seed = 0) {
    if (k < 1) throw std::invalid_argument("cluster_anchors: k must be >= 1");
    if (static_cast<int>(boxes.size()) < k) throw std::invalid_argument("cluster_anchors: fewer boxes than clusters");
    for (const auto& b : boxes)
        if (!(b.w > 0 && b.h > 0)) throw std::invalid_argument("cluster_anchors: non-positive box dims");

    const std::size_t n = boxes.size();
    Rng rng(derive_seed(seed, "anchor-kmeans"));

    // k-means++ seeding
    std::vector<Anchor> centers;
    centers.push_back(boxes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double d;
            detail::nearest_anchor(centers, boxes[i].w, boxes[i].h, &d);
            d2[i] = d * d;
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0) {
            double r = rng.uniform() * total, acc = 0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) { pick = i; break; }
            }
        } else {
            pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
        }
        centers.push_back(boxes[pick]);
    }

    std::vector<std::size_t> assign(n, 0);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = detail::nearest_anchor(centers, boxes[i].w, boxes[i].h);
            if (j != assign[i]) { assign[i] = j; changed = true; }
        }
        if (!changed && iter > 0) break;

        std::vector<double> sw(static_cast<std::size_t>(k), 0), sh(static_cast<std::size_t>(k), 0);
        std::vector<std::size_t> cnt(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            sw[assign[i]] += boxes[i].w;
            sh[assign[i]] += boxes[i].h;
            ++cnt[assign[i]];
        }
        for (int j = 0; j < k; ++j) {
            if (cnt[j] > 0) {
                centers[j] = {sw[j] / cnt[j], sh[j] / cnt[j]};
            } else {
                // re-seed to the box farthest from its current center
                std::size_t far_i = 0;
                double far_d = -1;
                for (std::size_t i = 0; i < n; ++i) {
                    double d;
                    detail::nearest_anchor(centers, boxes[i].w, boxes[i].h, &d);
                    if (d > far_d) { far_d = d; far_i = i; }
                }
                centers[j] = boxes[far_i];
            }
        }
    }

    std::sort(centers.begin(), centers.end(), [](const Anchor& a, const Anchor& b) {
        const double aa = a.w * a.h, ba = b.w * b.h;
        if (aa != ba) return aa < ba;
        return a.w < b.w;
    });
    return AnchorSet{std::move(centers)};
}

/// Anchor sets published for the two benchmark datasets, (w, h) pixels.
inline AnchorSet cvogl_anchors() {
    return AnchorSet{{{37, 41}, {78, 84}, {96, 215}, {129, 129}, {194, 82}, {198, 179}, {246, 280}, {395, 342}, {550, 573}}};
}

inline AnchorSet vigor_building_anchors() {
    return AnchorSet{{{137, 82}, {144, 164}, {479, 243}, {255, 537}, {73, 202}, {242, 117}, {175, 359}, {259, 260}, {74, 108}}};
}

/// Mean over boxes of the best co-centered IoU against the anchor set.
/// Diagnostic for clustering quality (higher is better coverage).
inline double mean_best_iou(const std::vector<Anchor>& boxes, const AnchorSet& anchors) {
    if (boxes.empty() || anchors.size() == 0) throw std::invalid_argument("mean_best_iou: empty input");
    double total = 0;
    for (const auto& b : boxes) {
        double best = 0;
        for (const auto& a : anchors.anchors) best = std::max(best, iou_co_centered(b.w, b.h, a.w, a.h));
        total += best;
    }
    return total / static_cast<double>(boxes.size());
}

} // namespace edgeo
