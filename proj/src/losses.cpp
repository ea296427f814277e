#include "deformreg/losses.hpp"

#include <cmath>

namespace deformreg {

void LossWeights::validate() const {
    if (!(lambda_smooth >= 0.0) || !(gamma_dvf >= 0.0))
        fail(ErrorKind::Validation, "loss weights must be non-negative");
}

template <class T>
VolumeLoss<T> mse_loss(const BasicVolume<T>& v_gt, const BasicVolume<T>& v_def) {
    require_same_dims(v_gt.dims, v_def.dims, "mse_loss");
    VolumeLoss<T> out;
    out.grad = BasicVolume<T>(v_def.dims, v_def.spacing);
    const std::size_t n = v_gt.values.size();
    const double inv = 1.0 / static_cast<double>(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = static_cast<double>(v_def.values[i]) - static_cast<double>(v_gt.values[i]);
        sum += diff * diff;
        out.grad.values[i] = static_cast<T>(2.0 * inv * diff);
    }
    out.value = sum * inv;
    return out;
}

template <class T>
FieldLoss<T> smooth_loss(const BasicField<T>& u) {
    const Dims3 d = u.dims;
    FieldLoss<T> out;
    out.grad = BasicField<T>(d);

    const std::size_t per_component = static_cast<std::size_t>(d.nx - 1) * d.ny * d.nz +
                                      static_cast<std::size_t>(d.nx) * (d.ny - 1) * d.nz +
                                      static_cast<std::size_t>(d.nx) * d.ny * (d.nz - 1);
    const std::size_t count = 3 * per_component;
    if (count == 0) return out;
    const double inv = 1.0 / static_cast<double>(count);
    const std::size_t step[3] = {1, static_cast<std::size_t>(d.nx),
                                 static_cast<std::size_t>(d.nx) * static_cast<std::size_t>(d.ny)};

    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        const T* uc = u.component(c);
        T* gc = out.grad.component(c);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const std::size_t i = d.index(x, y, z);
                    const bool has[3] = {x + 1 < d.nx, y + 1 < d.ny, z + 1 < d.nz};
                    for (int a = 0; a < 3; ++a) {
                        if (!has[a]) continue;
                        const double diff = static_cast<double>(uc[i + step[a]]) - static_cast<double>(uc[i]);
                        sum += diff * diff;
                        const T g = static_cast<T>(2.0 * inv * diff);
                        gc[i + step[a]] += g;
                        gc[i] -= g;
                    }
                }
    }
    out.value = sum * inv;
    return out;
}

template <class T>
FieldLoss<T> dvf_loss(const BasicField<T>& u_gt, const BasicField<T>& u_pre) {
    require_same_dims(u_gt.dims, u_pre.dims, "dvf_loss");
    FieldLoss<T> out;
    out.grad = BasicField<T>(u_pre.dims);
    const double inv = 1.0 / static_cast<double>(u_pre.voxels());
    double sum = 0.0;
    for (std::size_t k = 0; k < u_pre.comps.size(); ++k) {
        const double diff = static_cast<double>(u_pre.comps[k]) - static_cast<double>(u_gt.comps[k]);
        sum += diff * diff;
        out.grad.comps[k] = static_cast<T>(2.0 * inv * diff);
    }
    out.value = sum * inv;
    return out;
}

template <class T>
TotalLoss<T> total_loss(const BasicVolume<T>& v_gt, const BasicVolume<T>& v_def, const BasicField<T>* u_gt,
                        const BasicField<T>& u_pre, const LossWeights& w) {
    w.validate();
    if (w.gamma_dvf > 0.0 && u_gt == nullptr)
        fail(ErrorKind::Usage, "total_loss: gamma_dvf > 0 requires a ground-truth field");
    if (w.gamma_dvf == 0.0 && u_gt != nullptr)
        fail(ErrorKind::Usage, "total_loss: a ground-truth field was given but gamma_dvf is 0");
    require_same_dims(v_def.dims, u_pre.dims, "total_loss");

    TotalLoss<T> out;
    auto mse = mse_loss(v_gt, v_def);
    auto smooth = smooth_loss(u_pre);
    out.terms.mse = mse.value;
    out.terms.smooth = smooth.value;
    out.grad_v_def = std::move(mse.grad);
    out.grad_u = BasicField<T>(u_pre.dims);

    const T lam = static_cast<T>(w.lambda_smooth);
    for (std::size_t k = 0; k < out.grad_u.comps.size(); ++k) out.grad_u.comps[k] = lam * smooth.grad.comps[k];
    if (u_gt != nullptr) {
        auto dvf = dvf_loss(*u_gt, u_pre);
        out.terms.dvf = dvf.value;
        const T gam = static_cast<T>(w.gamma_dvf);
        for (std::size_t k = 0; k < out.grad_u.comps.size(); ++k) out.grad_u.comps[k] += gam * dvf.grad.comps[k];
    }
    out.terms.total = out.terms.mse + w.lambda_smooth * out.terms.smooth + w.gamma_dvf * out.terms.dvf;
    return out;
}

template <class T>
ImageLoss<T> image_mse_loss(const BasicImage<T>& target, const BasicImage<T>& pred) {
    if (target.width != pred.width || target.height != pred.height)
        fail(ErrorKind::DimsMismatch, "image_mse_loss: image dims differ");
    ImageLoss<T> out;
    out.grad = BasicImage<T>(pred.width, pred.height);
    const double inv = 1.0 / static_cast<double>(pred.values.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        const double diff = static_cast<double>(pred.values[i]) - static_cast<double>(target.values[i]);
        sum += diff * diff;
        out.grad.values[i] = static_cast<T>(2.0 * inv * diff);
    }
    out.value = sum * inv;
    return out;
}

template <class T>
Field2DLoss<T> smooth2d_loss(const BasicField2D<T>& u) {
    Field2DLoss<T> out;
    out.grad = BasicField2D<T>(u.width, u.height);
    const std::size_t per_component = static_cast<std::size_t>(u.width - 1) * u.height +
                                      static_cast<std::size_t>(u.width) * (u.height - 1);
    const std::size_t count = 2 * per_component;
    if (count == 0) return out;
    const double inv = 1.0 / static_cast<double>(count);
    double sum = 0.0;
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < u.height; ++r)
            for (int col = 0; col < u.width; ++col) {
                const std::size_t i = static_cast<std::size_t>(col) + static_cast<std::size_t>(u.width) * r;
                const bool has[2] = {col + 1 < u.width, r + 1 < u.height};
                const std::size_t step[2] = {1, static_cast<std::size_t>(u.width)};
                for (int a = 0; a < 2; ++a) {
                    if (!has[a]) continue;
                    const double diff = static_cast<double>(u.at(c, i + step[a])) - static_cast<double>(u.at(c, i));
                    sum += diff * diff;
                    const T g = static_cast<T>(2.0 * inv * diff);
                    out.grad.at(c, i + step[a]) += g;
                    out.grad.at(c, i) -= g;
                }
            }
    out.value = sum * inv;
    return out;
}

#define DEFORMREG_INSTANTIATE_LOSSES(T)                                                                     \
    template VolumeLoss<T> mse_loss(const BasicVolume<T>&, const BasicVolume<T>&);                          \
    template FieldLoss<T> smooth_loss(const BasicField<T>&);                                                \
    template FieldLoss<T> dvf_loss(const BasicField<T>&, const BasicField<T>&);                             \
    template TotalLoss<T> total_loss(const BasicVolume<T>&, const BasicVolume<T>&, const BasicField<T>*,    \
                                     const BasicField<T>&, const LossWeights&);                             \
    template ImageLoss<T> image_mse_loss(const BasicImage<T>&, const BasicImage<T>&);                       \
    template Field2DLoss<T> smooth2d_loss(const BasicField2D<T>&);

DEFORMREG_INSTANTIATE_LOSSES(float)
DEFORMREG_INSTANTIATE_LOSSES(double)

#undef DEFORMREG_INSTANTIATE_LOSSES

} // namespace deformreg
