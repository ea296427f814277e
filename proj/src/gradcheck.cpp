#include "deformreg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "deformreg/diffnet.hpp"
#include "deformreg/losses.hpp"
#include "deformreg/projector.hpp"
#include "deformreg/rng.hpp"
#include "deformreg/warpfield.hpp"

namespace deformreg {

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

namespace {

using Scalar = std::function<double()>;

std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
    return h;
}

// Central differences of f with respect to every entry of x, in place.
std::vector<double> numeric_grad(std::vector<double>& x, const Scalar& f, double eps) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double fp = f();
        x[i] = keep - eps;
        const double fm = f();
        x[i] = keep;
        g[i] = (fp - fm) / (2 * eps);
    }
    return g;
}

template <class C>
double dot(const C& a, const C& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

void fill(std::vector<double>& v, Rng& rng, double lo, double hi) {
    for (auto& x : v) x = rng.uniform(lo, hi);
}

Dims3 small_dims(Rng& rng) {
    return {3 + static_cast<int>(rng.below(3)), 3 + static_cast<int>(rng.below(3)), 3 + static_cast<int>(rng.below(3))};
}

VolumeGridD random_volume(const Dims3& d, Rng& rng, double lo, double hi) {
    VolumeGridD v(d);
    fill(v.values, rng, lo, hi);
    return v;
}

DisplacementFieldD random_field(const Dims3& d, Rng& rng, double amp) {
    DisplacementFieldD u(d);
    fill(u.comps, rng, -amp, amp);
    return u;
}

Tensor4<double> random_tensor(int c, const Dims3& d, Rng& rng) {
    Tensor4<double> t(c, d);
    fill(t.values, rng, -1, 1);
    return t;
}

struct Runner {
    const GradcheckOptions& opts;
    std::vector<GradcheckCase> cases;

    // body(rng) returns {analytic, numeric}; possibly several pairs.
    void run(const std::string& name, double tol,
             const std::function<std::vector<std::pair<std::vector<double>, std::vector<double>>>(Rng&)>& body) {
        GradcheckCase c;
        c.name = name;
        c.tolerance = tol;
        for (int k = 0; k < opts.instances; ++k) {
            Rng rng(derive_seed(opts.seed, name_hash(name) ^ static_cast<std::uint64_t>(k)));
            double worst = 0;
            for (const auto& [a, n] : body(rng)) worst = std::max(worst, relative_error(a, n));
            c.max_rel_error = std::max(c.max_rel_error, worst);
            if (!(worst <= tol)) ++c.failures;
            ++c.instances;
        }
        cases.push_back(c);
    }
};

using Pairs = std::vector<std::pair<std::vector<double>, std::vector<double>>>;

} // namespace

std::vector<GradcheckCase> run_gradchecks(const GradcheckOptions& opts) {
    Runner r{opts, {}};
    const double eps = opts.epsilon;
    const double tol = opts.tolerance;

    r.run("warp_volume/u", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        const auto v = random_volume(d, rng, -1, 1);
        auto u = random_field(d, rng, 1.2);
        const auto w = random_volume(d, rng, -1, 1);
        const auto analytic = warp_volume_backward(v, u, w, false).grad_u.comps;
        const auto numeric = numeric_grad(u.comps, [&] { return dot(warp_volume(v, u).values, w.values); }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("warp_volume/v", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        auto v = random_volume(d, rng, -1, 1);
        const auto u = random_field(d, rng, 1.2);
        const auto w = random_volume(d, rng, -1, 1);
        const auto analytic = warp_volume_backward(v, u, w, true).grad_v.values;
        const auto numeric = numeric_grad(v.values, [&] { return dot(warp_volume(v, u).values, w.values); }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("drr_projection", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        auto v = random_volume(d, rng, -950, 900);
        ProjectionGeometry g;
        g.volume_dims = d;
        g.raw_min = 0.05 + rng.uniform(0, 0.1);
        g.raw_max = g.raw_min + 0.5 + rng.uniform(0, 1);
        Image2DD w(d.nx, d.nz);
        fill(w.values, rng, -1, 1);
        const auto analytic = render_drr_adjoint(w, g, v).values;
        // HU values are large, so the step is scaled to keep the same relative size.
        const auto numeric =
            numeric_grad(v.values, [&] { return dot(render_drr_fixed(v, g).values, w.values); }, eps * 1000);
        return Pairs{{analytic, numeric}};
    });

    r.run("project_mean_adjoint", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        const auto x = random_volume(d, rng, -1, 1);
        Image2DD y(d.nx, d.nz);
        fill(y.values, rng, -1, 1);
        const double lhs = dot(project_mean(x).values, y.values);
        const double rhs = dot(x.values, project_mean_adjoint(y, d).values);
        return Pairs{{{lhs}, {rhs}}};
    });

    r.run("mse_loss", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        const auto gt = random_volume(d, rng, 0, 1);
        auto x = random_volume(d, rng, 0, 1);
        const auto analytic = mse_loss(gt, x).grad.values;
        const auto numeric = numeric_grad(x.values, [&] { return mse_loss(gt, x).value; }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("smooth_loss", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        auto u = random_field(d, rng, 2);
        const auto analytic = smooth_loss(u).grad.comps;
        const auto numeric = numeric_grad(u.comps, [&] { return smooth_loss(u).value; }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("dvf_loss", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        const auto gt = random_field(d, rng, 2);
        auto u = random_field(d, rng, 2);
        const auto analytic = dvf_loss(gt, u).grad.comps;
        const auto numeric = numeric_grad(u.comps, [&] { return dvf_loss(gt, u).value; }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("total_loss", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        const auto gt = random_volume(d, rng, 0, 1);
        auto x = random_volume(d, rng, 0, 1);
        const auto ugt = random_field(d, rng, 2);
        auto u = random_field(d, rng, 2);
        LossWeights w{rng.uniform(0.01, 1), rng.uniform(0.01, 1)};
        const auto tl = total_loss(gt, x, &ugt, u, w);
        const auto nx = numeric_grad(x.values, [&] { return total_loss(gt, x, &ugt, u, w).terms.total; }, eps);
        const auto nu = numeric_grad(u.comps, [&] { return total_loss(gt, x, &ugt, u, w).terms.total; }, eps);
        return Pairs{{tl.grad_v_def.values, nx}, {tl.grad_u.comps, nu}};
    });

    r.run("image_mse_loss", tol, [&](Rng& rng) {
        Image2DD t(4 + static_cast<int>(rng.below(3)), 3 + static_cast<int>(rng.below(3)));
        fill(t.values, rng, 0, 1);
        Image2DD p(t.width, t.height);
        fill(p.values, rng, 0, 1);
        const auto analytic = image_mse_loss(t, p).grad.values;
        const auto numeric = numeric_grad(p.values, [&] { return image_mse_loss(t, p).value; }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("smooth2d_loss", tol, [&](Rng& rng) {
        Dvf2DD u(4 + static_cast<int>(rng.below(3)), 3 + static_cast<int>(rng.below(3)));
        fill(u.comps, rng, -2, 2);
        const auto analytic = smooth2d_loss(u).grad.comps;
        const auto numeric = numeric_grad(u.comps, [&] { return smooth2d_loss(u).value; }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("warp_image2d/u", tol, [&](Rng& rng) {
        Image2DD img(4 + static_cast<int>(rng.below(3)), 4 + static_cast<int>(rng.below(3)));
        fill(img.values, rng, 0, 1);
        Dvf2DD u(img.width, img.height);
        fill(u.comps, rng, -1.2, 1.2);
        Image2DD w(img.width, img.height);
        fill(w.values, rng, -1, 1);
        const auto analytic = warp_image2d_backward_u(img, u, w).comps;
        const auto numeric = numeric_grad(u.comps, [&] { return dot(warp_image2d(img, u).values, w.values); }, eps);
        return Pairs{{analytic, numeric}};
    });

    for (int stride : {1, 2}) {
        r.run("conv3d/stride" + std::to_string(stride), tol, [&, stride](Rng& rng) {
            Dims3 d = small_dims(rng);
            if (stride == 2) d = {2 * (d.nx / 2), 2 * (d.ny / 2), 2 * (d.nz / 2)};
            const int ci = 1 + static_cast<int>(rng.below(3)), co = 1 + static_cast<int>(rng.below(3));
            auto x = random_tensor(ci, d, rng);
            std::vector<double> k(static_cast<std::size_t>(co * ci * kKernelVolume)), b(static_cast<std::size_t>(co));
            fill(k, rng, -1, 1);
            fill(b, rng, -1, 1);
            const auto y0 = conv3d<double>(x, k, b, co, stride);
            auto w = random_tensor(co, y0.dims, rng);
            auto f = [&] { return dot(conv3d<double>(x, k, b, co, stride).values, w.values); };
            const auto g = conv3d_backward<double>(x, k, co, stride, w, true);
            return Pairs{{g.grad_x.values, numeric_grad(x.values, f, eps)},
                         {g.grad_kernel, numeric_grad(k, f, eps)},
                         {g.grad_bias, numeric_grad(b, f, eps)}};
        });
    }

    r.run("conv3d/binary32", opts.tolerance_f32, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        const int ci = 2, co = 2;
        auto x = random_tensor(ci, d, rng);
        std::vector<double> k(static_cast<std::size_t>(co * ci * kKernelVolume)), b(static_cast<std::size_t>(co));
        fill(k, rng, -1, 1);
        fill(b, rng, -1, 1);
        const auto y0 = conv3d<double>(x, k, b, co, 1);
        const auto w = random_tensor(co, y0.dims, rng);
        auto f = [&] { return dot(conv3d<double>(x, k, b, co, 1).values, w.values); };

        Tensor4<float> xf(ci, d), wf(co, y0.dims);
        std::copy(x.values.begin(), x.values.end(), xf.values.begin());
        std::copy(w.values.begin(), w.values.end(), wf.values.begin());
        const std::vector<float> kf(k.begin(), k.end());
        const auto g = conv3d_backward<float>(xf, kf, co, 1, wf, true);
        return Pairs{{std::vector<double>(g.grad_x.values.begin(), g.grad_x.values.end()), numeric_grad(x.values, f, eps)},
                     {std::vector<double>(g.grad_kernel.begin(), g.grad_kernel.end()), numeric_grad(k, f, eps)}};
    });

    r.run("leaky_relu", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        auto x = random_tensor(2, d, rng);
        const auto w = random_tensor(2, d, rng);
        const auto analytic = leaky_relu_backward<double>(x, w).values;
        const auto numeric = numeric_grad(x.values, [&] { return dot(leaky_relu<double>(x).values, w.values); }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("upsample3d", tol, [&](Rng& rng) {
        const Dims3 d = small_dims(rng);
        auto x = random_tensor(2, d, rng);
        const auto w = random_tensor(2, upsample3d<double>(x).dims, rng);
        const auto analytic = upsample3d_backward<double>(w).values;
        const auto numeric = numeric_grad(x.values, [&] { return dot(upsample3d<double>(x).values, w.values); }, eps);
        return Pairs{{analytic, numeric}};
    });

    r.run("unet_end_to_end", tol, [&](Rng& rng) {
        UNetConfig cfg;
        cfg.levels = 2;
        cfg.widths = {2, 3};
        const Dims3 d{4, 4, 4};
        auto params = init_unet_params<double>(cfg, rng.next_u64(), false);
        for (auto& t : params.tensors)
            for (auto& v : t.values) v += rng.uniform(-0.1, 0.1);
        auto input = random_tensor(2, d, rng);
        for (auto& v : input.values) v = 0.5 + 0.5 * v;
        const auto src = random_volume(d, rng, 0, 1);
        const auto tgt = random_volume(d, rng, 0, 1);
        const LossWeights w{0.05, 0.0};

        auto objective = [&] {
            const auto u = unet_forward(params, input);
            return total_loss(tgt, warp_volume(src, u), static_cast<const DisplacementFieldD*>(nullptr), u, w).terms.total;
        };
        UNetCache<double> cache;
        const auto u = unet_forward(params, input, &cache);
        const auto tl = total_loss(tgt, warp_volume(src, u), static_cast<const DisplacementFieldD*>(nullptr), u, w);
        auto gu = warp_volume_backward(src, u, tl.grad_v_def, false).grad_u;
        for (std::size_t i = 0; i < gu.comps.size(); ++i) gu.comps[i] += tl.grad_u.comps[i];
        const auto grads = unet_backward(params, cache, gu);

        std::vector<double> analytic, numeric;
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            const auto n = numeric_grad(params.tensors[t].values, objective, eps);
            analytic.insert(analytic.end(), grads[t].begin(), grads[t].end());
            numeric.insert(numeric.end(), n.begin(), n.end());
        }
        return Pairs{{analytic, numeric}};
    });

    return r.cases;
}

} // namespace deformreg
