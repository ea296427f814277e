#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

#include "deformreg/volgrid.hpp"

namespace deformreg {

// Per-voxel displacement u in voxel units, stored as three planar
// component blocks (ux, uy, uz), each x-fastest. The transform is
// phi(p) = p + u(p); phi itself is never materialised.
template <class T>
struct BasicField {
    Dims3 dims;
    std::vector<T> comps;

    BasicField() = default;
    explicit BasicField(Dims3 d, T fill = T(0)) : dims(d), comps(3 * d.count(), fill) {}

    std::size_t voxels() const { return dims.count(); }
    T& at(int c, std::size_t i) { return comps[static_cast<std::size_t>(c) * voxels() + i]; }
    const T& at(int c, std::size_t i) const { return comps[static_cast<std::size_t>(c) * voxels() + i]; }
    T* component(int c) { return comps.data() + static_cast<std::size_t>(c) * voxels(); }
    const T* component(int c) const { return comps.data() + static_cast<std::size_t>(c) * voxels(); }

    void validate() const;

    friend bool operator==(const BasicField&, const BasicField&) = default;
};

using DisplacementField = BasicField<float>;
using DisplacementFieldD = BasicField<double>;

template <class To, class From>
BasicField<To> field_cast(const BasicField<From>& u) {
    BasicField<To> out;
    out.dims = u.dims;
    out.comps.assign(u.comps.begin(), u.comps.end());
    return out;
}

// Mean Euclidean norm of a - b over voxels (endpoint error when b = 0 gives
// the mean displacement magnitude).
template <class T>
double mean_endpoint_error(const BasicField<T>& a, const BasicField<T>& b);

// The eight corners around a sample position with their trilinear weights.
// Coordinates outside [0, n-1] are clamped to the edge and flagged, since
// the positional derivative there is zero. At an integer coordinate k > 0
// the cell [k-1, k] is used.
template <class T>
struct TrilinearStencil {
    std::array<std::size_t, 8> index{};
    std::array<T, 8> weight{};
    std::array<int, 3> lo{};
    std::array<int, 3> hi{};
    std::array<T, 3> frac{};
    std::array<bool, 3> inside{};
};

template <class T>
inline void axis_cell(T pos, int n, int& lo, int& hi, T& frac, bool& inside) {
    if (n <= 1) {
        lo = hi = 0;
        frac = T(0);
        inside = false;
        return;
    }
    const T top = static_cast<T>(n - 1);
    inside = true;
    if (pos < T(0)) {
        pos = T(0);
        inside = false;
    } else if (pos > top) {
        pos = top;
        inside = false;
    }
    int l = static_cast<int>(std::ceil(pos)) - 1;
    if (l < 0) l = 0;
    lo = l;
    hi = l + 1;
    frac = pos - static_cast<T>(l);
}

template <class T>
TrilinearStencil<T> make_stencil(const Dims3& d, T px, T py, T pz) {
    TrilinearStencil<T> s;
    const T pos[3] = {px, py, pz};
    for (int a = 0; a < 3; ++a) axis_cell(pos[a], d.extent(a), s.lo[a], s.hi[a], s.frac[a], s.inside[a]);
    int k = 0;
    for (int cz = 0; cz < 2; ++cz) {
        const int z = cz ? s.hi[2] : s.lo[2];
        const T wz = cz ? s.frac[2] : T(1) - s.frac[2];
        for (int cy = 0; cy < 2; ++cy) {
            const int y = cy ? s.hi[1] : s.lo[1];
            const T wy = cy ? s.frac[1] : T(1) - s.frac[1];
            for (int cx = 0; cx < 2; ++cx) {
                const int x = cx ? s.hi[0] : s.lo[0];
                const T wx = cx ? s.frac[0] : T(1) - s.frac[0];
                s.index[k] = d.index(x, y, z);
                s.weight[k] = wx * wy * wz;
                ++k;
            }
        }
    }
    return s;
}

// V_def(p) = sum over the eight corners q of V_s(q) * prod_d (1 - |p'_d - q_d|),
// with p' = p + u(p) clamped to the grid.
template <class T>
BasicVolume<T> warp_volume(const BasicVolume<T>& v, const BasicField<T>& u);

template <class T>
struct WarpGradients {
    BasicVolume<T> grad_v;  // empty unless requested
    BasicField<T> grad_u;
};

template <class T>
WarpGradients<T> warp_volume_backward(const BasicVolume<T>& v, const BasicField<T>& u,
                                      const BasicVolume<T>& grad_out, bool want_grad_v = true);

// Nearest-neighbour label pull-back. Ties at .5 round up.
LabelVolume warp_labels(const LabelVolume& l, const DisplacementField& u);

// Writes "<stem>.mhd" listing three payloads "<stem>x.raw", "<stem>y.raw",
// "<stem>z.raw"; pass e.g. "frame_t50_u.mhd".
void save_field(const DisplacementField& u, const std::filesystem::path& header_path);
DisplacementField load_field(const std::filesystem::path& header_path);

// ---------------------------------------------------------------------------
// In-plane (coronal) 2D displacement: components (ux, uz) over an image of
// width nx and height nz. No dorsoventral component exists by construction.

template <class T>
struct BasicField2D {
    int width = 0;
    int height = 0;
    std::vector<T> comps;  // 2 planes: ux then uz

    BasicField2D() = default;
    BasicField2D(int w, int h, T fill = T(0))
        : width(w), height(h), comps(2 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    T& at(int c, std::size_t i) { return comps[static_cast<std::size_t>(c) * pixels() + i]; }
    const T& at(int c, std::size_t i) const { return comps[static_cast<std::size_t>(c) * pixels() + i]; }
};

using Dvf2D = BasicField2D<float>;
using Dvf2DD = BasicField2D<double>;

template <class T>
BasicImage<T> warp_image2d(const BasicImage<T>& img, const BasicField2D<T>& u);

template <class T>
BasicField2D<T> warp_image2d_backward_u(const BasicImage<T>& img, const BasicField2D<T>& u,
                                        const BasicImage<T>& grad_out);

} // namespace deformreg
