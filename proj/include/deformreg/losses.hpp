#pragma once

#include "deformreg/volgrid.hpp"
#include "deformreg/warpfield.hpp"

namespace deformreg {

struct LossWeights {
    double lambda_smooth = 0.05;
    double gamma_dvf = 0.0;

    void validate() const;
};

// gamma used when supervision is switched on without an explicit value.
inline constexpr double kDefaultSupervisedGamma = 1.0;

template <class T>
struct VolumeLoss {
    double value = 0.0;
    BasicVolume<T> grad;
};

template <class T>
struct FieldLoss {
    double value = 0.0;
    BasicField<T> grad;
};

// (1/|Omega|) sum_p (v_gt(p) - v_def(p))^2, gradient w.r.t. v_def.
template <class T>
VolumeLoss<T> mse_loss(const BasicVolume<T>& v_gt, const BasicVolume<T>& v_def);

// Mean over components and forward-difference directions of the squared
// differences u_c(p + e_d) - u_c(p). Pairs whose neighbour falls off the
// grid are left out of both the sum and the count.
template <class T>
FieldLoss<T> smooth_loss(const BasicField<T>& u);

// (1/|Omega|) sum_p |u_gt(p) - u_pre(p)|^2, gradient w.r.t. u_pre.
template <class T>
FieldLoss<T> dvf_loss(const BasicField<T>& u_gt, const BasicField<T>& u_pre);

struct LossTerms {
    double total = 0.0;
    double mse = 0.0;
    double smooth = 0.0;
    double dvf = 0.0;
};

template <class T>
struct TotalLoss {
    LossTerms terms;
    BasicVolume<T> grad_v_def;
    BasicField<T> grad_u;
};

// L_MSE + lambda * L_smooth + gamma * L_DVF. u_gt must be non-null exactly
// when gamma > 0.
template <class T>
TotalLoss<T> total_loss(const BasicVolume<T>& v_gt, const BasicVolume<T>& v_def, const BasicField<T>* u_gt,
                        const BasicField<T>& u_pre, const LossWeights& w);

template <class T>
struct ImageLoss {
    double value = 0.0;
    BasicImage<T> grad;
};

template <class T>
ImageLoss<T> image_mse_loss(const BasicImage<T>& target, const BasicImage<T>& pred);

template <class T>
struct Field2DLoss {
    double value = 0.0;
    BasicField2D<T> grad;
};

// 2D analogue of smooth_loss over the two in-plane components.
template <class T>
Field2DLoss<T> smooth2d_loss(const BasicField2D<T>& u);

} // namespace deformreg
