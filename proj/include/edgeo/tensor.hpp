#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace edgeo {

/// Dense C×H×W volume, row-major in (c, y, x). Used for images (C=3 or 4,
/// values in [0,1]) and for feature maps flowing through the network.
template <typename T>
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, T(0)) {
        if (c_ < 1 || h_ < 1 || w_ < 1) throw std::invalid_argument("Tensor3: dims must be >= 1");
    }

    T& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    const T& at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }

    /// Pointer to channel ci's H×W plane.
    T* plane(int ci) { return v.data() + static_cast<std::size_t>(ci) * h * w; }
    const T* plane(int ci) const { return v.data() + static_cast<std::size_t>(ci) * h * w; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor3& o) const { return c == o.c && h == o.h && w == o.w; }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Tensor3<U> cast() const {
        Tensor3<U> out(c, h, w);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

/// Single-channel H×W grid. Encoding fields use T=float/double; masks use
/// T=uint8_t with values in {0,1}.
template <typename T>
struct Grid2 {
    int h = 0, w = 0;
    std::vector<T> v;

    Grid2() = default;
    Grid2(int h_, int w_, T fill = T(0)) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {
        if (h_ < 1 || w_ < 1) throw std::invalid_argument("Grid2: dims must be >= 1");
    }

    T& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Grid2& o) const { return h == o.h && w == o.w; }
};

using Tensor3f = Tensor3<float>;
using Tensor3d = Tensor3<double>;

} // namespace edgeo
