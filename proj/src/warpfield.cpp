#include "deformreg/warpfield.hpp"

#include <algorithm>
#include <cmath>

#include "deformreg/parallel.hpp"

namespace deformreg {

namespace fs = std::filesystem;

template <class T>
void BasicField<T>::validate() const {
    if (!dims.positive()) fail(ErrorKind::InvalidDims, "field dims must be positive, got " + to_string(dims));
    if (comps.size() != 3 * dims.count()) fail(ErrorKind::SizeMismatch, "field component count does not match dims");
    for (const T c : comps)
        if (!std::isfinite(c)) fail(ErrorKind::NonFinite, "field contains a non-finite component");
}

template struct BasicField<float>;
template struct BasicField<double>;

template <class T>
double mean_endpoint_error(const BasicField<T>& a, const BasicField<T>& b) {
    require_same_dims(a.dims, b.dims, "mean_endpoint_error");
    const std::size_t n = a.voxels();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = static_cast<double>(a.at(c, i)) - static_cast<double>(b.at(c, i));
            sq += d * d;
        }
        sum += std::sqrt(sq);
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

template double mean_endpoint_error(const BasicField<float>&, const BasicField<float>&);
template double mean_endpoint_error(const BasicField<double>&, const BasicField<double>&);

template <class T>
BasicVolume<T> warp_volume(const BasicVolume<T>& v, const BasicField<T>& u) {
    require_same_dims(v.dims, u.dims, "warp_volume");
    const Dims3 d = v.dims;
    BasicVolume<T> out(d, v.spacing);
    const T* ux = u.component(0);
    const T* uy = u.component(1);
    const T* uz = u.component(2);

    parallel_for(0, d.nz, [&](std::ptrdiff_t zi) {
        const int z = static_cast<int>(zi);
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                const auto s = make_stencil<T>(d, static_cast<T>(x) + ux[i], static_cast<T>(y) + uy[i],
                                               static_cast<T>(z) + uz[i]);
                T acc = T(0);
                for (int k = 0; k < 8; ++k) acc += v.values[s.index[k]] * s.weight[k];
                out.values[i] = acc;
            }
        }
    });
    return out;
}

template <class T>
WarpGradients<T> warp_volume_backward(const BasicVolume<T>& v, const BasicField<T>& u,
                                      const BasicVolume<T>& grad_out, bool want_grad_v) {
    require_same_dims(v.dims, u.dims, "warp_volume_backward");
    require_same_dims(v.dims, grad_out.dims, "warp_volume_backward");
    const Dims3 d = v.dims;
    WarpGradients<T> g;
    g.grad_u = BasicField<T>(d);
    const T* ux = u.component(0);
    const T* uy = u.component(1);
    const T* uz = u.component(2);

    parallel_for(0, d.nz, [&](std::ptrdiff_t zi) {
        const int z = static_cast<int>(zi);
        for (int y = 0; y < d.ny; ++y) {
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                const T go = grad_out.values[i];
                if (go == T(0)) continue;
                const auto s = make_stencil<T>(d, static_cast<T>(x) + ux[i], static_cast<T>(y) + uy[i],
                                               static_cast<T>(z) + uz[i]);
                const T w[3][2] = {{T(1) - s.frac[0], s.frac[0]},
                                   {T(1) - s.frac[1], s.frac[1]},
                                   {T(1) - s.frac[2], s.frac[2]}};
                T deriv[3] = {T(0), T(0), T(0)};
                for (int k = 0; k < 8; ++k) {
                    const int bit[3] = {k & 1, (k >> 1) & 1, (k >> 2) & 1};
                    const T val = v.values[s.index[k]];
                    for (int a = 0; a < 3; ++a) {
                        const T sign = bit[a] ? T(1) : T(-1);
                        const T other = w[(a + 1) % 3][bit[(a + 1) % 3]] * w[(a + 2) % 3][bit[(a + 2) % 3]];
                        deriv[a] += sign * other * val;
                    }
                }
                for (int a = 0; a < 3; ++a)
                    g.grad_u.at(a, i) = s.inside[a] ? go * deriv[a] : T(0);
            }
        }
    });

    if (want_grad_v) {
        // Scatter-add in fixed voxel order.
        g.grad_v = BasicVolume<T>(d, v.spacing);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const std::size_t i = d.index(x, y, z);
                    const T go = grad_out.values[i];
                    if (go == T(0)) continue;
                    const auto s = make_stencil<T>(d, static_cast<T>(x) + ux[i], static_cast<T>(y) + uy[i],
                                                   static_cast<T>(z) + uz[i]);
                    for (int k = 0; k < 8; ++k) g.grad_v.values[s.index[k]] += go * s.weight[k];
                }
    }
    return g;
}

template BasicVolume<float> warp_volume(const BasicVolume<float>&, const BasicField<float>&);
template BasicVolume<double> warp_volume(const BasicVolume<double>&, const BasicField<double>&);
template WarpGradients<float> warp_volume_backward(const BasicVolume<float>&, const BasicField<float>&,
                                                   const BasicVolume<float>&, bool);
template WarpGradients<double> warp_volume_backward(const BasicVolume<double>&, const BasicField<double>&,
                                                    const BasicVolume<double>&, bool);

LabelVolume warp_labels(const LabelVolume& l, const DisplacementField& u) {
    require_same_dims(l.dims, u.dims, "warp_labels");
    const Dims3 d = l.dims;
    LabelVolume out(d);
    auto nearest = [](double pos, int n) {
        const int r = static_cast<int>(std::floor(pos + 0.5));
        return std::clamp(r, 0, n - 1);
    };
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                const int sx = nearest(x + static_cast<double>(u.at(0, i)), d.nx);
                const int sy = nearest(y + static_cast<double>(u.at(1, i)), d.ny);
                const int sz = nearest(z + static_cast<double>(u.at(2, i)), d.nz);
                out.labels[i] = l.at(sx, sy, sz);
            }
    return out;
}

namespace {

std::array<fs::path, 3> field_payloads(const fs::path& header_path) {
    const auto stem = header_path.stem().string();
    const auto dir = header_path.parent_path();
    return {dir / (stem + "x.raw"), dir / (stem + "y.raw"), dir / (stem + "z.raw")};
}

} // namespace

void save_field(const DisplacementField& u, const fs::path& header_path) {
    u.validate();
    const auto payloads = field_payloads(header_path);
    RawHeader h{u.dims, {}, "MET_FLOAT", {}};
    for (const auto& p : payloads) h.data_files.push_back(p.filename().string());
    write_header(h, header_path);
    for (int c = 0; c < 3; ++c) {
        std::vector<float> plane(u.component(c), u.component(c) + u.voxels());
        write_f32_payload(plane, payloads[static_cast<std::size_t>(c)]);
    }
}

DisplacementField load_field(const fs::path& header_path) {
    const RawHeader h = read_header(header_path);
    if (h.element_type != "MET_FLOAT" || h.data_files.size() != 3)
        fail(ErrorKind::Validation, header_path.string() + ": a field header lists three MET_FLOAT payloads");
    DisplacementField u(h.dims);
    for (int c = 0; c < 3; ++c) {
        const auto plane = read_f32_payload(header_path.parent_path() / h.data_files[static_cast<std::size_t>(c)],
                                            h.dims.count());
        std::copy(plane.begin(), plane.end(), u.component(c));
    }
    return u;
}

// ---------------------------------------------------------------------------

template <class T>
BasicImage<T> warp_image2d(const BasicImage<T>& img, const BasicField2D<T>& u) {
    if (img.width != u.width || img.height != u.height)
        fail(ErrorKind::DimsMismatch, "warp_image2d: image and 2D field dims differ");
    BasicImage<T> out(img.width, img.height);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const std::size_t i = img.index(c, r);
            int c0, c1, r0, r1;
            T fc, fr;
            bool ic, ir;
            axis_cell(static_cast<T>(c) + u.at(0, i), img.width, c0, c1, fc, ic);
            axis_cell(static_cast<T>(r) + u.at(1, i), img.height, r0, r1, fr, ir);
            out.values[i] = img.at(c0, r0) * (T(1) - fc) * (T(1) - fr) + img.at(c1, r0) * fc * (T(1) - fr) +
                            img.at(c0, r1) * (T(1) - fc) * fr + img.at(c1, r1) * fc * fr;
        }
    return out;
}

template <class T>
BasicField2D<T> warp_image2d_backward_u(const BasicImage<T>& img, const BasicField2D<T>& u,
                                        const BasicImage<T>& grad_out) {
    if (img.width != u.width || img.height != u.height || grad_out.width != img.width ||
        grad_out.height != img.height)
        fail(ErrorKind::DimsMismatch, "warp_image2d_backward_u: dims differ");
    BasicField2D<T> g(img.width, img.height);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) {
            const std::size_t i = img.index(c, r);
            int c0, c1, r0, r1;
            T fc, fr;
            bool ic, ir;
            axis_cell(static_cast<T>(c) + u.at(0, i), img.width, c0, c1, fc, ic);
            axis_cell(static_cast<T>(r) + u.at(1, i), img.height, r0, r1, fr, ir);
            const T v00 = img.at(c0, r0), v10 = img.at(c1, r0), v01 = img.at(c0, r1), v11 = img.at(c1, r1);
            const T dc = (v10 - v00) * (T(1) - fr) + (v11 - v01) * fr;
            const T dr = (v01 - v00) * (T(1) - fc) + (v11 - v10) * fc;
            g.at(0, i) = ic ? grad_out.values[i] * dc : T(0);
            g.at(1, i) = ir ? grad_out.values[i] * dr : T(0);
        }
    return g;
}

template BasicImage<float> warp_image2d(const BasicImage<float>&, const BasicField2D<float>&);
template BasicImage<double> warp_image2d(const BasicImage<double>&, const BasicField2D<double>&);
template BasicField2D<float> warp_image2d_backward_u(const BasicImage<float>&, const BasicField2D<float>&,
                                                     const BasicImage<float>&);
template BasicField2D<double> warp_image2d_backward_u(const BasicImage<double>&, const BasicField2D<double>&,
                                                      const BasicImage<double>&);

} // namespace deformreg
