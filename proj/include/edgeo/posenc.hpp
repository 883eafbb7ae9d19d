#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "edgeo/geometry.hpp"
#include "edgeo/tensor.hpp"

namespace edgeo {

/// Binary H×W object mask with a cached foreground pixel count.
struct Mask {
    Grid2<std::uint8_t> values;
    std::size_t area = 0;

    Mask() = default;
    explicit Mask(Grid2<std::uint8_t> v) : values(std::move(v)) { recount(); }

    void recount() {
        area = 0;
        for (auto x : values.v) {
            if (x > 1) throw std::invalid_argument("Mask: values must be binary");
            area += x;
        }
    }

    bool foreground(int y, int x) const { return values.at(y, x) != 0; }
    bool empty_foreground() const { return area == 0; }
};

/// Mask hypotheses returned by a mask provider for one (image, point) prompt.
/// Candidates that do not contain the prompt point are dropped on ingest.
struct MaskCandidates {
    std::vector<Mask> masks;

    static MaskCandidates ingest(std::vector<Mask> raw, const MarkingPoint& p) {
        MaskCandidates out;
        const int px = static_cast<int>(std::lround(p.x));
        const int py = static_cast<int>(std::lround(p.y));
        for (auto& m : raw) {
            if (py >= 0 && py < m.values.h && px >= 0 && px < m.values.w && m.foreground(py, px))
                out.masks.push_back(std::move(m));
        }
        return out;
    }
};

/// Area bounds for the area-compromise mask selection, as fractions of the
/// query-image area. The paper does not quantify "extreme sizes"; these
/// defaults exclude speckle and near-whole-image masks and are config keys.
struct MaskSelectParams {
    double alpha_min = 0.005;
    double alpha_max = 0.5;
};

template <typename T = float>
using EncodingField = Grid2<T>;

namespace detail {

template <typename T>
inline T kpe_value(double px_x, double px_y, const MarkingPoint& p, double diag) {
    const double dx = px_x - p.x;
    const double dy = px_y - p.y;
    const double d = std::sqrt(dx * dx + dy * dy);
    const double v = 1.0 - d / diag;
    const double vv = v * v;
    return static_cast<T>(std::clamp(vv, 0.0, 1.0));
}

} // namespace detail

/// Keypoint-based positional encoding: value(i,j) = (1 - d((j,i), p)/const)^2
/// with d the Euclidean pixel distance and const the image diagonal.
/// Integer-pixel marking points get exactly 1.0 at their own pixel.
template <typename T = float>
EncodingField<T> kpe(int height, int width, const MarkingPoint& p) {
    if (!p.inside(width, height)) throw std::invalid_argument("kpe: marking point out of bounds");
    const double diag = std::sqrt(static_cast<double>(width) * width + static_cast<double>(height) * height);
    EncodingField<T> field(height, width);
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j)
            field.at(i, j) = detail::kpe_value<T>(j, i, p, diag);
    return field;
}

/// Mask-based positional encoding: 1.0 on the mask foreground, the KPE
/// formula on the background. The foreground value equals the maximum of
/// the KPE field (its value at the marking point), keeping the two
/// encodings consistent.
template <typename T = float>
EncodingField<T> mpe(int height, int width, const MarkingPoint& p, const Mask& mask) {
    if (mask.values.h != height || mask.values.w != width)
        throw std::invalid_argument("mpe: mask dims do not match image dims");
    if (!p.inside(width, height)) throw std::invalid_argument("mpe: marking point out of bounds");
    const double diag = std::sqrt(static_cast<double>(width) * width + static_cast<double>(height) * height);
    EncodingField<T> field(height, width);
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j)
            field.at(i, j) = mask.foreground(i, j) ? T(1) : detail::kpe_value<T>(j, i, p, diag);
    return field;
}

/// Area-compromise selection: discard masks outside
/// [alpha_min, alpha_max] x image_area, return the survivor with median
/// area (lower median on even counts). If nothing survives, return the
/// candidate whose area is closest to the geometric mean of the bounds.
inline const Mask& select_mask(const MaskCandidates& candidates, double image_area,
                               const MaskSelectParams& params = {}) {
    if (candidates.masks.empty()) throw std::invalid_argument("select_mask: empty candidate list");
    const double lo = params.alpha_min * image_area;
    const double hi = params.alpha_max * image_area;

    std::vector<std::size_t> survivors;
    for (std::size_t i = 0; i < candidates.masks.size(); ++i) {
        const double a = static_cast<double>(candidates.masks[i].area);
        if (a >= lo && a <= hi) survivors.push_back(i);
    }

    if (!survivors.empty()) {
        std::sort(survivors.begin(), survivors.end(), [&](std::size_t a, std::size_t b) {
            if (candidates.masks[a].area != candidates.masks[b].area)
                return candidates.masks[a].area < candidates.masks[b].area;
            return a < b;
        });
        return candidates.masks[survivors[(survivors.size() - 1) / 2]];
    }

    const double gm = std::sqrt(lo * hi);
    std::size_t best = 0;
    double best_d = std::abs(static_cast<double>(candidates.masks[0].area) - gm);
    for (std::size_t i = 1; i < candidates.masks.size(); ++i) {
        const double d = std::abs(static_cast<double>(candidates.masks[i].area) - gm);
        if (d < best_d) { best_d = d; best = i; }
    }
    return candidates.masks[best];
}

} // namespace edgeo
