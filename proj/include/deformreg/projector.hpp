#pragma once

#include <utility>

#include "deformreg/volgrid.hpp"

namespace deformreg {

// Parallel-beam front view: rays run along y (anteroposterior), the image
// spans (x, z) with width nx and height nz.
struct ProjectionGeometry {
    Dims3 volume_dims;
    double raw_min = 0.0;  // normalisation recorded at render time
    double raw_max = 0.0;

    int width() const { return volume_dims.nx; }
    int height() const { return volume_dims.nz; }
    bool constant() const { return !(raw_max > raw_min); }
};

// Water-normalised attenuation, air clamped to zero.
template <class T>
inline T attenuation(T hu) {
    const T mu = T(1) + hu / T(1000);
    return mu > T(0) ? mu : T(0);
}

// Linear ray operator: raw(x, z) = (1/ny) * sum_y x(x, y, z), summed in
// ascending y.
template <class T>
BasicImage<T> project_mean(const BasicVolume<T>& x);

// Exact transpose of project_mean.
template <class T>
BasicVolume<T> project_mean_adjoint(const BasicImage<T>& y, const Dims3& dims);

struct Drr {
    Image2D image;
    ProjectionGeometry geometry;
};

// raw = project_mean(attenuation(v)), then min-max normalised to [0,1]
// (all zeros when raw is constant).
Drr render_drr(const VolumeGrid& v);

// Renders with a previously recorded normalisation. Values may leave [0,1]
// when v differs from the volume the geometry was recorded on.
template <class T>
BasicImage<T> render_drr_fixed(const BasicVolume<T>& v, const ProjectionGeometry& g);

// Gradient of render_drr_fixed(v, g) contracted with grad_image. The
// attenuation clamp contributes zero where v <= -1000 HU.
template <class T>
BasicVolume<T> render_drr_adjoint(const BasicImage<T>& grad_image, const ProjectionGeometry& g,
                                  const BasicVolume<T>& v);

} // namespace deformreg
