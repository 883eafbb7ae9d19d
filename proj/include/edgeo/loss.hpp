#pragma once

#include <cmath>
#include <stdexcept>

#include "edgeo/network.hpp"

namespace edgeo {

struct LossBreakdown {
    double geo = 0;
    double cls = 0;
    double total = 0;
};

namespace lossdetail {

/// Binary cross-entropy in the numerically stable logits form:
/// max(z,0) - z*y + log(1 + exp(-|z|)).
inline double bce_with_logits(double z, double y) {
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

} // namespace lossdetail

/// Localization term, evaluated at the positive (cell, anchor) only:
/// squared errors of the gated center offsets against the fractional parts
/// of the target center, plus squared log-ratio size errors. The predicted
/// size enters as w = w_a * exp(t_w), so the log-ratio term is
/// (t_w - log(w*/w_a))^2.
template <typename T>
double geo_loss(const HeadOutput<T>& raw, const Assignment& a, const AnchorSet& anchors) {
    if (a.row < 0 || a.row >= raw.grid_h() || a.col < 0 || a.col >= raw.grid_w() || a.anchor_index < 0 ||
        a.anchor_index >= raw.num_anchors)
        throw std::invalid_argument("geo_loss: assignment outside grid");
    if (!(a.w_star > 0) || !(a.h_star > 0)) throw std::invalid_argument("geo_loss: non-positive target size");

    const Anchor& anc = anchors[static_cast<std::size_t>(a.anchor_index)];
    const double fx = a.x_star - std::floor(a.x_star);
    const double fy = a.y_star - std::floor(a.y_star);

    const double ex = sigmoid(double(raw.raw(a.row, a.col, a.anchor_index, 0))) - fx;
    const double ey = sigmoid(double(raw.raw(a.row, a.col, a.anchor_index, 1))) - fy;
    const double ew = double(raw.raw(a.row, a.col, a.anchor_index, 2)) - std::log(a.w_star / anc.w);
    const double eh = double(raw.raw(a.row, a.col, a.anchor_index, 3)) - std::log(a.h_star / anc.h);
    return ex * ex + ey * ey + ew * ew + eh * eh;
}

/// Confidence term: BCE over every (cell, anchor); target 1 at the
/// assigned pair, 0 elsewhere. `negative_weight` scales the background
/// terms (default 1, matching the printed objective).
template <typename T>
double cls_loss(const HeadOutput<T>& raw, const Assignment& a, double negative_weight = 1.0) {
    if (a.row < 0 || a.row >= raw.grid_h() || a.col < 0 || a.col >= raw.grid_w() || a.anchor_index < 0 ||
        a.anchor_index >= raw.num_anchors)
        throw std::invalid_argument("cls_loss: assignment outside grid");
    double total = 0;
    for (int row = 0; row < raw.grid_h(); ++row)
        for (int col = 0; col < raw.grid_w(); ++col)
            for (int an = 0; an < raw.num_anchors; ++an) {
                const bool positive = row == a.row && col == a.col && an == a.anchor_index;
                const double term = lossdetail::bce_with_logits(double(raw.raw(row, col, an, 4)), positive ? 1.0 : 0.0);
                total += positive ? term : negative_weight * term;
            }
    return total;
}

template <typename T>
LossBreakdown total_loss(const HeadOutput<T>& raw, const Assignment& a, const AnchorSet& anchors,
                         double negative_weight = 1.0) {
    LossBreakdown out;
    out.geo = geo_loss(raw, a, anchors);
    out.cls = cls_loss(raw, a, negative_weight);
    out.total = out.geo + out.cls;
    return out;
}

/// Gradient of the total loss w.r.t. the raw head grid. `scale` multiplies
/// every term (used for mean reduction over a batch).
template <typename T>
Tensor3<T> loss_backward(const HeadOutput<T>& raw, const Assignment& a, const AnchorSet& anchors,
                         double negative_weight = 1.0, double scale = 1.0) {
    Tensor3<T> dgrid(raw.grid.c, raw.grid.h, raw.grid.w);

    // cls: d/dz BCE(z, y) = sigmoid(z) - y
    for (int row = 0; row < raw.grid_h(); ++row)
        for (int col = 0; col < raw.grid_w(); ++col)
            for (int an = 0; an < raw.num_anchors; ++an) {
                const bool positive = row == a.row && col == a.col && an == a.anchor_index;
                const double z = double(raw.raw(row, col, an, 4));
                const double g = sigmoid(z) - (positive ? 1.0 : 0.0);
                dgrid.at(an * 5 + 4, row, col) = static_cast<T>(scale * (positive ? g : negative_weight * g));
            }

    const Anchor& anc = anchors[static_cast<std::size_t>(a.anchor_index)];
    const double fx = a.x_star - std::floor(a.x_star);
    const double fy = a.y_star - std::floor(a.y_star);
    const double tx = double(raw.raw(a.row, a.col, a.anchor_index, 0));
    const double ty = double(raw.raw(a.row, a.col, a.anchor_index, 1));
    const double sx = sigmoid(tx), sy = sigmoid(ty);
    dgrid.at(a.anchor_index * 5 + 0, a.row, a.col) += static_cast<T>(scale * 2.0 * (sx - fx) * sx * (1 - sx));
    dgrid.at(a.anchor_index * 5 + 1, a.row, a.col) += static_cast<T>(scale * 2.0 * (sy - fy) * sy * (1 - sy));
    dgrid.at(a.anchor_index * 5 + 2, a.row, a.col) += static_cast<T>(
        scale * 2.0 * (double(raw.raw(a.row, a.col, a.anchor_index, 2)) - std::log(a.w_star / anc.w)));
    dgrid.at(a.anchor_index * 5 + 3, a.row, a.col) += static_cast<T>(
        scale * 2.0 * (double(raw.raw(a.row, a.col, a.anchor_index, 3)) - std::log(a.h_star / anc.h)));
    return dgrid;
}

} // namespace edgeo
