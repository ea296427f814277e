#include "deformreg/projector.hpp"

#include <algorithm>

#include "deformreg/parallel.hpp"

namespace deformreg {

template <class T>
BasicImage<T> project_mean(const BasicVolume<T>& x) {
    const Dims3 d = x.dims;
    BasicImage<T> out(d.nx, d.nz);
    const T inv = T(1) / static_cast<T>(d.ny);
    parallel_for(0, d.nz, [&](std::ptrdiff_t zi) {
        const int z = static_cast<int>(zi);
        for (int c = 0; c < d.nx; ++c) {
            T acc = T(0);
            for (int y = 0; y < d.ny; ++y) acc += x.at(c, y, z);
            out.at(c, z) = acc * inv;
        }
    });
    return out;
}

template <class T>
BasicVolume<T> project_mean_adjoint(const BasicImage<T>& y, const Dims3& dims) {
    if (y.width != dims.nx || y.height != dims.nz)
        fail(ErrorKind::DimsMismatch, "project_mean_adjoint: image is not nx x nz of " + to_string(dims));
    BasicVolume<T> out(dims);
    const T inv = T(1) / static_cast<T>(dims.ny);
    for (int z = 0; z < dims.nz; ++z)
        for (int yy = 0; yy < dims.ny; ++yy)
            for (int c = 0; c < dims.nx; ++c) out.at(c, yy, z) = y.at(c, z) * inv;
    return out;
}

template BasicImage<float> project_mean(const BasicVolume<float>&);
template BasicImage<double> project_mean(const BasicVolume<double>&);
template BasicVolume<float> project_mean_adjoint(const BasicImage<float>&, const Dims3&);
template BasicVolume<double> project_mean_adjoint(const BasicImage<double>&, const Dims3&);

Drr render_drr(const VolumeGrid& v) {
    v.validate();
    VolumeGridD mu(v.dims, v.spacing);
    for (std::size_t i = 0; i < v.values.size(); ++i) mu.values[i] = attenuation(static_cast<double>(v.values[i]));
    const Image2DD raw = project_mean(mu);

    Drr out;
    out.geometry.volume_dims = v.dims;
    const auto [lo, hi] = std::minmax_element(raw.values.begin(), raw.values.end());
    out.geometry.raw_min = *lo;
    out.geometry.raw_max = *hi;
    out.image = render_drr_fixed(v, out.geometry);
    for (auto& val : out.image.values) val = std::clamp(val, 0.0f, 1.0f);
    return out;
}

template <class T>
BasicImage<T> render_drr_fixed(const BasicVolume<T>& v, const ProjectionGeometry& g) {
    require_same_dims(v.dims, g.volume_dims, "render_drr_fixed");
    BasicVolume<T> mu(v.dims, v.spacing);
    for (std::size_t i = 0; i < v.values.size(); ++i) mu.values[i] = attenuation(v.values[i]);
    BasicImage<T> img = project_mean(mu);
    if (g.constant()) {
        std::fill(img.values.begin(), img.values.end(), T(0));
        return img;
    }
    const T lo = static_cast<T>(g.raw_min);
    const T scale = static_cast<T>(1.0 / (g.raw_max - g.raw_min));
    for (auto& val : img.values) val = (val - lo) * scale;
    return img;
}

template <class T>
BasicVolume<T> render_drr_adjoint(const BasicImage<T>& grad_image, const ProjectionGeometry& g,
                                  const BasicVolume<T>& v) {
    require_same_dims(v.dims, g.volume_dims, "render_drr_adjoint");
    if (grad_image.width != g.width() || grad_image.height != g.height())
        fail(ErrorKind::DimsMismatch, "render_drr_adjoint: gradient image dims do not match geometry");
    BasicVolume<T> out(v.dims, v.spacing);
    if (g.constant()) return out;
    const T scale = static_cast<T>(1.0 / (g.raw_max - g.raw_min));
    BasicImage<T> scaled = grad_image;
    for (auto& val : scaled.values) val *= scale;
    out = project_mean_adjoint(scaled, v.dims);
    out.spacing = v.spacing;
    const T dmu = T(1) / T(1000);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = (T(1) + v.values[i] / T(1000) > T(0)) ? out.values[i] * dmu : T(0);
    return out;
}

template BasicImage<float> render_drr_fixed(const BasicVolume<float>&, const ProjectionGeometry&);
template BasicImage<double> render_drr_fixed(const BasicVolume<double>&, const ProjectionGeometry&);
template BasicVolume<float> render_drr_adjoint(const BasicImage<float>&, const ProjectionGeometry&,
                                               const BasicVolume<float>&);
template BasicVolume<double> render_drr_adjoint(const BasicImage<double>&, const ProjectionGeometry&,
                                                const BasicVolume<double>&);

} // namespace deformreg
