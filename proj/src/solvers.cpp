#include "deformreg/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "deformreg/error.hpp"
#include "deformreg/parallel.hpp"
#include "deformreg/rng.hpp"

namespace deformreg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

void require_finite(const LossTerms& l, const char* who) {
    if (!std::isfinite(l.total)) fail(ErrorKind::Numerical, std::string(who) + ": loss became non-finite");
}

void add_into(std::vector<float>& dst, const std::vector<float>& src, double scale = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] = static_cast<float>(static_cast<double>(dst[i]) + scale * static_cast<double>(src[i]));
}

// Corner-aligned bilinear resize.
Image2D resample_image(const Image2D& img, int w, int h) {
    if (img.width == w && img.height == h) return img;
    Image2D out(w, h);
    const double sx = w > 1 ? static_cast<double>(img.width - 1) / (w - 1) : 0.0;
    const double sz = h > 1 ? static_cast<double>(img.height - 1) / (h - 1) : 0.0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double px = c * sx, pz = r * sz;
            const int x0 = std::min(static_cast<int>(px), std::max(img.width - 2, 0));
            const int z0 = std::min(static_cast<int>(pz), std::max(img.height - 2, 0));
            const int x1 = std::min(x0 + 1, img.width - 1), z1 = std::min(z0 + 1, img.height - 1);
            const double fx = px - x0, fz = pz - z0;
            const double v = (1 - fz) * ((1 - fx) * img.at(x0, z0) + fx * img.at(x1, z0)) +
                             fz * ((1 - fx) * img.at(x0, z1) + fx * img.at(x1, z1));
            out.at(c, r) = static_cast<float>(v);
        }
    return out;
}

// Resizes a displacement field and rescales its voxel-unit components.
DisplacementField resample_field(const DisplacementField& u, const Dims3& to) {
    if (u.dims == to) return u;
    DisplacementField out(to);
    for (int c = 0; c < 3; ++c) {
        VolumeGrid comp(u.dims);
        std::copy(u.component(c), u.component(c) + u.voxels(), comp.values.begin());
        const VolumeGrid r = resample_trilinear(comp, to);
        const int nf = u.dims.extent(c), nt = to.extent(c);
        const double scale = nf > 1 ? static_cast<double>(nt - 1) / (nf - 1) : 1.0;
        for (std::size_t i = 0; i < out.voxels(); ++i)
            out.at(c, i) = static_cast<float>(scale * static_cast<double>(r.values[i]));
    }
    return out;
}

Dims3 halve(const Dims3& d) {
    return {std::max(2, (d.nx + 1) / 2), std::max(2, (d.ny + 1) / 2), std::max(2, (d.nz + 1) / 2)};
}

struct DirectProblem {
    DirectMode mode;
    VolumeGrid v_s_hu;
    VolumeGrid v_s_norm;
    VolumeGrid v_gt_norm;
    Image2D i_t;
    ProjectionGeometry geometry;
    const DisplacementField* u_gt = nullptr;
    LossWeights weights;

    struct Eval {
        LossTerms terms;
        DisplacementField grad;
    };

    Eval evaluate(const DisplacementField& u, bool want_grad) const {
        Eval e;
        if (mode == DirectMode::VolumeSupervised) {
            const VolumeGrid v_def = warp_volume(v_s_norm, u);
            auto tl = total_loss(v_gt_norm, v_def, weights.gamma_dvf > 0 ? u_gt : nullptr, u, weights);
            e.terms = tl.terms;
            if (want_grad) {
                e.grad = warp_volume_backward(v_s_norm, u, tl.grad_v_def, false).grad_u;
                add_into(e.grad.comps, tl.grad_u.comps);
            }
            return e;
        }
        const VolumeGrid v_def = warp_volume(v_s_hu, u);
        const Image2D pred = render_drr_fixed(v_def, geometry);
        const auto mse = image_mse_loss(i_t, pred);
        const auto sm = smooth_loss(u);
        e.terms.mse = mse.value;
        e.terms.smooth = sm.value;
        e.terms.total = mse.value + weights.lambda_smooth * sm.value;
        if (want_grad) {
            const VolumeGrid gv = render_drr_adjoint(mse.grad, geometry, v_def);
            e.grad = warp_volume_backward(v_s_hu, u, gv, false).grad_u;
            add_into(e.grad.comps, sm.grad.comps, weights.lambda_smooth);
        }
        return e;
    }
};

DirectProblem make_problem(const VolumeGrid& v_s, const Image2D& i_t, const VolumeGrid* v_gt,
                           const DisplacementField* u_gt, const LossWeights& w, const DirectOptions& opts,
                           const ProjectionGeometry& geometry) {
    DirectProblem p;
    p.mode = opts.mode;
    p.weights = w;
    p.u_gt = u_gt;
    if (opts.mode == DirectMode::VolumeSupervised) {
        p.v_s_norm = normalize_intensity<float>(v_s);
        p.v_gt_norm = normalize_intensity<float>(*v_gt);
    } else {
        p.v_s_hu = v_s;
        p.i_t = i_t;
        p.geometry = geometry;
    }
    return p;
}

void adam_on_field(DisplacementField& u, const DisplacementField& grad, AdamState<float>& state) {
    adam_step<float>({std::span<float>(u.comps)}, {std::span<const float>(grad.comps)}, state);
}

} // namespace

// ---------------------------------------------------------------------------

void SolveReport::record(std::size_t step, const LossTerms& loss) { history.push_back({step, loss}); }

void SolveReport::set_metric(const std::string& key, double value) {
    for (auto& [k, v] : metrics)
        if (k == key) {
            v = value;
            return;
        }
    metrics.emplace_back(key, value);
}

std::string SolveReport::history_csv() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "step,L_total,L_MSE,L_smooth,L_DVF\n";
    for (const auto& e : history)
        os << e.step << ',' << e.loss.total << ',' << e.loss.mse << ',' << e.loss.smooth << ',' << e.loss.dvf << '\n';
    return os.str();
}

std::string SolveReport::summary(bool include_timing) const {
    std::ostringstream os;
    os << "seed = " << seed << '\n';
    os << "steps_recorded = " << history.size() << '\n';
    os << "best_step = " << best_step << '\n';
    os << "initial_loss = " << fmt(initial_loss) << '\n';
    os << "final_loss = " << fmt(final_loss) << '\n';
    for (const auto& [k, v] : metrics) os << k << " = " << fmt(v) << '\n';
    for (const auto& [k, v] : config) os << "config." << k << " = " << v << '\n';
    if (include_timing) os << "wall_seconds = " << fmt(wall_seconds) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------

DirectResult register_direct(const VolumeGrid& v_s, const Image2D& i_s, const Image2D& i_t, const VolumeGrid* v_gt,
                             const DisplacementField* u_gt, const LossWeights& weights, const DirectOptions& opts) {
    const auto t0 = Clock::now();
    weights.validate();
    v_s.validate();
    if (opts.steps < 0) fail(ErrorKind::Validation, "register_direct: steps must be non-negative");
    if (opts.pyramid_levels < 1) fail(ErrorKind::Validation, "register_direct: pyramid_levels must be >= 1");
    if (!(opts.lr > 0)) fail(ErrorKind::Validation, "register_direct: lr must be positive");
    if (opts.mode == DirectMode::VolumeSupervised) {
        if (!v_gt) fail(ErrorKind::Usage, "register_direct: volume-supervised mode needs the target volume");
        require_same_dims(v_s.dims, v_gt->dims, "register_direct target");
    } else {
        if (i_t.width != v_s.dims.nx || i_t.height != v_s.dims.nz)
            fail(ErrorKind::DimsMismatch, "register_direct: target DRR does not match the volume");
        if (weights.gamma_dvf > 0)
            fail(ErrorKind::Usage, "register_direct: projection-only mode does not use displacement supervision");
        (void)i_s;
    }
    if (weights.gamma_dvf > 0 && !u_gt) fail(ErrorKind::Usage, "register_direct: gamma > 0 needs u_gt");
    if (u_gt) require_same_dims(v_s.dims, u_gt->dims, "register_direct u_gt");

    const ProjectionGeometry geometry = opts.geometry ? *opts.geometry : render_drr(v_s).geometry;

    // Resolution pyramid, finest first.
    std::vector<Dims3> levels{v_s.dims};
    for (int l = 1; l < opts.pyramid_levels; ++l) levels.push_back(halve(levels.back()));

    DirectResult result;
    SolveReport& rep = result.report;
    rep.seed = opts.seed;
    rep.config = {{"solver", "direct"},
                  {"mode", opts.mode == DirectMode::VolumeSupervised ? "volume" : "projection"},
                  {"steps", std::to_string(opts.steps)},
                  {"lr", fmt(opts.lr)},
                  {"pyramid_levels", std::to_string(opts.pyramid_levels)},
                  {"lambda_smooth", fmt(weights.lambda_smooth)},
                  {"gamma_dvf", fmt(weights.gamma_dvf)}};

    AdamOptions adam_opts;
    adam_opts.lr = opts.lr;

    DisplacementField u;
    for (std::size_t li = levels.size(); li-- > 1;) {
        const Dims3 d = levels[li];
        const VolumeGrid vs_c = resample_trilinear(v_s, d);
        const VolumeGrid vgt_c = v_gt ? resample_trilinear(*v_gt, d) : VolumeGrid{};
        DisplacementField ugt_c;
        if (u_gt) ugt_c = resample_field(*u_gt, d);
        const Image2D it_c = resample_image(i_t, d.nx, d.nz);
        ProjectionGeometry g_c = render_drr(vs_c).geometry;
        const DirectProblem prob = make_problem(vs_c, it_c, v_gt ? &vgt_c : nullptr, u_gt ? &ugt_c : nullptr,
                                                weights, opts, g_c);
        u = u.comps.empty() ? DisplacementField(d) : resample_field(u, d);
        auto state = make_adam_state<float>({u.comps.size()}, adam_opts);
        for (int s = 0; s < opts.steps; ++s) {
            auto e = prob.evaluate(u, true);
            require_finite(e.terms, "register_direct");
            adam_on_field(u, e.grad, state);
        }
    }

    const DirectProblem prob = make_problem(v_s, i_t, v_gt, u_gt, weights, opts, geometry);
    const DisplacementField zero(v_s.dims);
    const auto e0 = prob.evaluate(zero, false);
    require_finite(e0.terms, "register_direct");
    rep.initial_loss = e0.terms.total;

    DisplacementField best = zero;
    double best_loss = e0.terms.total;
    rep.best_step = 0;
    u = u.comps.empty() ? zero : resample_field(u, v_s.dims);

    auto state = make_adam_state<float>({u.comps.size()}, adam_opts);
    for (int s = 0; s <= opts.steps; ++s) {
        const bool last = s == opts.steps;
        auto e = prob.evaluate(u, !last);
        require_finite(e.terms, "register_direct");
        const auto step = static_cast<std::size_t>(s);
        rep.record(step, e.terms);
        if (e.terms.total < best_loss) {
            best_loss = e.terms.total;
            best = u;
            rep.best_step = step;
        }
        if (opts.on_step) opts.on_step(step, u);
        if (!last) adam_on_field(u, e.grad, state);
    }

    rep.final_loss = best_loss;
    result.u = std::move(best);
    result.v_def = warp_volume(v_s, result.u);
    if (u_gt) rep.set_metric("mean_endpoint_error", mean_endpoint_error(result.u, *u_gt));
    rep.set_metric("mean_displacement", mean_endpoint_error(result.u, zero));
    rep.wall_seconds = seconds_since(t0);
    return result;
}

// ---------------------------------------------------------------------------

namespace {

struct PreparedSample {
    Tensor4<float> input;
    VolumeGrid source_norm;
    VolumeGrid target_norm;
    const DisplacementField* u_gt = nullptr;
};

PreparedSample prepare(const TrainingSample& s, const UNetConfig& cfg, const LossWeights& w) {
    require_same_dims(s.source.dims, s.target.dims, "training sample");
    cfg.validate_input(s.source.dims);
    PreparedSample p;
    p.input = pack_input<float>(s.source, s.source_drr, s.target_drr, cfg.packing);
    p.source_norm = normalize_intensity<float>(s.source);
    p.target_norm = normalize_intensity<float>(s.target);
    if (w.gamma_dvf > 0) {
        if (!s.u_gt) fail(ErrorKind::Usage, "gamma > 0 requires ground-truth displacements for every sample");
        require_same_dims(s.source.dims, s.u_gt->dims, "training sample u_gt");
        p.u_gt = &*s.u_gt;
    }
    return p;
}

LossTerms sample_loss(const UNetParams<float>& params, const PreparedSample& s, const LossWeights& w,
                      std::vector<std::vector<float>>* grads) {
    UNetCache<float> cache;
    const DisplacementField u = unet_forward(params, s.input, grads ? &cache : nullptr);
    const VolumeGrid v_def = warp_volume(s.source_norm, u);
    auto tl = total_loss(s.target_norm, v_def, s.u_gt, u, w);
    require_finite(tl.terms, "train_unet");
    if (grads) {
        DisplacementField gu = warp_volume_backward(s.source_norm, u, tl.grad_v_def, false).grad_u;
        add_into(gu.comps, tl.grad_u.comps);
        *grads = unet_backward(params, cache, gu);
    }
    return tl.terms;
}

LossTerms mean_terms(const std::vector<LossTerms>& all) {
    LossTerms m;
    for (const auto& t : all) {
        m.total += t.total;
        m.mse += t.mse;
        m.smooth += t.smooth;
        m.dvf += t.dvf;
    }
    const double inv = all.empty() ? 0.0 : 1.0 / static_cast<double>(all.size());
    m.total *= inv;
    m.mse *= inv;
    m.smooth *= inv;
    m.dvf *= inv;
    return m;
}

LossTerms dataset_loss(const UNetParams<float>& params, const std::vector<PreparedSample>& data,
                       const LossWeights& w) {
    std::vector<LossTerms> all;
    all.reserve(data.size());
    for (const auto& s : data) all.push_back(sample_loss(params, s, w, nullptr));
    return mean_terms(all);
}

bool same_config(const UNetConfig& a, const UNetConfig& b) {
    return a.levels == b.levels && a.widths == b.widths && a.in_channels == b.in_channels &&
           a.packing == b.packing && a.leaky_slope == b.leaky_slope;
}

} // namespace

TrainResult train_unet(const std::vector<TrainingSample>& dataset, const UNetConfig& config,
                       const LossWeights& weights, const TrainOptions& opts) {
    const auto t0 = Clock::now();
    config.validate();
    weights.validate();
    if (dataset.empty()) fail(ErrorKind::Validation, "train_unet: empty dataset");
    if (opts.epochs < 0 || opts.batch < 1) fail(ErrorKind::Validation, "train_unet: bad epochs or batch size");
    if (weights.gamma_dvf == 0)
        for (const auto& s : dataset)
            if (s.u_gt) fail(ErrorKind::Usage, "train_unet: u_gt supplied but gamma is zero");

    std::vector<PreparedSample> data;
    data.reserve(dataset.size());
    for (const auto& s : dataset) data.push_back(prepare(s, config, weights));

    UNetParams<float> params;
    AdamState<float> adam;
    std::uint64_t seed = opts.seed;
    std::uint64_t start_epoch = 0;
    if (opts.resume) {
        if (!same_config(opts.resume->params.config, config))
            fail(ErrorKind::Validation, "train_unet: checkpoint was written for a different network layout");
        params = opts.resume->params;
        adam = opts.resume->adam;
        seed = opts.resume->seed;
        start_epoch = opts.resume->epoch;
        if (adam.m.empty()) {
            std::vector<std::size_t> sizes;
            for (const auto& t : params.tensors) sizes.push_back(t.values.size());
            const auto step = adam.step;
            adam = make_adam_state<float>(sizes, adam.options);
            adam.step = step;
        }
    } else {
        params = init_unet_params<float>(config, seed);
        std::vector<std::size_t> sizes;
        for (const auto& t : params.tensors) sizes.push_back(t.values.size());
        adam = make_adam_state<float>(sizes, opts.adam);
    }

    TrainResult result;
    SolveReport& rep = result.report;
    rep.seed = seed;
    rep.config = {{"solver", "unet"},
                  {"epochs", std::to_string(opts.epochs)},
                  {"batch", std::to_string(opts.batch)},
                  {"lr", fmt(adam.options.lr)},
                  {"levels", std::to_string(config.levels)},
                  {"samples", std::to_string(dataset.size())},
                  {"lambda_smooth", fmt(weights.lambda_smooth)},
                  {"gamma_dvf", fmt(weights.gamma_dvf)},
                  {"start_epoch", std::to_string(start_epoch)}};

    const LossTerms initial = dataset_loss(params, data, weights);
    rep.initial_loss = initial.total;
    rep.record(adam.step, initial);
    double best_loss = initial.total;
    UNetParams<float> best = params;
    rep.best_step = adam.step;

    std::vector<std::size_t> order(data.size());
    for (std::uint64_t epoch = start_epoch; epoch < static_cast<std::uint64_t>(opts.epochs); ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(seed, 0x10000 + epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_sum = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(opts.batch)) {
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(opts.batch));
            const double inv = 1.0 / static_cast<double>(b1 - b0);
            std::vector<std::vector<float>> acc;
            for (std::size_t k = b0; k < b1; ++k) {
                std::vector<std::vector<float>> g;
                epoch_sum += sample_loss(params, data[order[k]], weights, &g).total;
                if (acc.empty()) {
                    acc.resize(g.size());
                    for (std::size_t t = 0; t < g.size(); ++t) acc[t].assign(g[t].size(), 0.0f);
                }
                for (std::size_t t = 0; t < g.size(); ++t) add_into(acc[t], g[t], inv);
            }
            std::vector<std::span<const float>> gs;
            for (const auto& a : acc) gs.emplace_back(a);
            adam_step<float>(params.spans(), gs, adam);
        }
        result.epoch_mean_loss.push_back(epoch_sum / static_cast<double>(order.size()));

        if (opts.track_best) {
            const LossTerms now = dataset_loss(params, data, weights);
            rep.record(adam.step, now);
            if (now.total < best_loss) {
                best_loss = now.total;
                best = params;
                rep.best_step = adam.step;
            }
        }
        if (opts.checkpoint_every > 0 && (epoch + 1) % static_cast<std::uint64_t>(opts.checkpoint_every) == 0 &&
            opts.on_checkpoint)
            opts.on_checkpoint(Checkpoint{params, adam, seed, epoch + 1});
    }

    if (!opts.track_best) {
        best = params;
        const LossTerms now = dataset_loss(params, data, weights);
        rep.record(adam.step, now);
        best_loss = now.total;
        rep.best_step = adam.step;
    }
    rep.final_loss = best_loss;
    rep.set_metric("optimizer_steps", static_cast<double>(adam.step));
    result.last = Checkpoint{params, adam, seed, std::max<std::uint64_t>(start_epoch, static_cast<std::uint64_t>(opts.epochs))};
    result.params = std::move(best);
    rep.wall_seconds = seconds_since(t0);
    return result;
}

LossTerms evaluate_unet_loss(const UNetParams<float>& params, const TrainingSample& sample,
                             const LossWeights& weights) {
    const PreparedSample p = prepare(sample, params.config, weights);
    return sample_loss(params, p, weights, nullptr);
}

Inference infer_unet(const UNetParams<float>& params, const VolumeGrid& v_s, const Image2D& i_s,
                     const Image2D& i_t) {
    params.config.validate_input(v_s.dims);
    Inference out;
    out.u = unet_forward(params, pack_input<float>(v_s, i_s, i_t, params.config.packing));
    out.v_def = warp_volume(v_s, out.u);
    return out;
}

// ---------------------------------------------------------------------------

RigidParams RigidParams::wrapped() const {
    auto wrap = [](double a) {
        double r = std::fmod(a, 360.0);
        if (r <= -180.0) r += 360.0;
        if (r > 180.0) r -= 360.0;
        return r;
    };
    return {tx, ty, tz, wrap(rx), wrap(ry), wrap(rz)};
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Mat3 rotation(const RigidParams& p) {
    const double d2r = std::numbers::pi / 180.0;
    const double cx = std::cos(p.rx * d2r), sx = std::sin(p.rx * d2r);
    const double cy = std::cos(p.ry * d2r), sy = std::sin(p.ry * d2r);
    const double cz = std::cos(p.rz * d2r), sz = std::sin(p.rz * d2r);
    const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
    const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
    const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
    return matmul(rz, matmul(ry, rx));
}

} // namespace

VolumeGrid apply_rigid(const VolumeGrid& v, const RigidParams& theta) {
    const Mat3 r = rotation(theta);
    const Dims3 d = v.dims;
    const double c[3] = {(d.nx - 1) / 2.0, (d.ny - 1) / 2.0, (d.nz - 1) / 2.0};
    const double t[3] = {theta.tx, theta.ty, theta.tz};
    VolumeGrid out(d, v.spacing);
    parallel_for(0, d.nz, [&](int z) {
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const double rel[3] = {x - c[0] - t[0], y - c[1] - t[1], z - c[2] - t[2]};
                double q[3];
                for (int i = 0; i < 3; ++i)
                    q[i] = r[0][i] * rel[0] + r[1][i] * rel[1] + r[2][i] * rel[2] + c[i];
                const auto st = make_stencil<double>(d, q[0], q[1], q[2]);
                double acc = 0.0;
                for (int k = 0; k < 8; ++k) acc += st.weight[k] * static_cast<double>(v.values[st.index[k]]);
                out.at(x, y, z) = static_cast<float>(acc);
            }
    });
    return out;
}

DisplacementField rigid_field(const Dims3& d, const RigidParams& theta) {
    const Mat3 r = rotation(theta);
    const double c[3] = {(d.nx - 1) / 2.0, (d.ny - 1) / 2.0, (d.nz - 1) / 2.0};
    const double t[3] = {theta.tx, theta.ty, theta.tz};
    DisplacementField u(d);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const double p[3] = {double(x), double(y), double(z)};
                const double rel[3] = {x - c[0] - t[0], y - c[1] - t[1], z - c[2] - t[2]};
                const std::size_t i = d.index(x, y, z);
                for (int k = 0; k < 3; ++k)
                    u.at(k, i) = static_cast<float>(r[0][k] * rel[0] + r[1][k] * rel[1] + r[2][k] * rel[2] + c[k] - p[k]);
            }
    return u;
}

double normalized_cross_correlation(const Image2D& a, const Image2D& b) {
    if (a.width != b.width || a.height != b.height)
        fail(ErrorKind::DimsMismatch, "normalized_cross_correlation: image dims differ");
    const double n = static_cast<double>(a.values.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        ma += a.values[i];
        mb += b.values[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double da = a.values[i] - ma, db = b.values[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0 || sbb <= 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x0,
                             const std::vector<double>& steps, int max_evaluations, double tolerance,
                             const std::function<void(int, double)>& on_iteration) {
    const std::size_t n = x0.size();
    if (steps.size() != n) fail(ErrorKind::Validation, "nelder_mead: steps and x0 differ in length");
    NelderMeadResult res;
    auto eval = [&](const std::vector<double>& x) {
        ++res.evaluations;
        return f(x);
    };

    std::vector<std::vector<double>> pts{x0};
    for (std::size_t i = 0; i < n; ++i) {
        auto p = x0;
        p[i] += steps[i];
        pts.push_back(std::move(p));
    }
    std::vector<double> fv;
    for (const auto& p : pts) fv.push_back(eval(p));

    std::vector<std::size_t> idx(n + 1);
    while (true) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = idx.front(), worst = idx.back(), second = idx[n - 1];
        if (on_iteration) on_iteration(res.iterations, fv[best]);

        double diameter = 0.0;
        for (std::size_t k = 1; k <= n; ++k)
            for (std::size_t i = 0; i < n; ++i) diameter = std::max(diameter, std::abs(pts[idx[k]][i] - pts[best][i]));
        if ((fv[worst] - fv[best] <= tolerance && diameter <= 1e-4) || res.evaluations >= max_evaluations) break;
        ++res.iterations;

        std::vector<double> centroid(n, 0.0);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < n; ++i) centroid[i] += pts[idx[k]][i] / static_cast<double>(n);
        auto along = [&](double coef) {
            std::vector<double> p(n);
            for (std::size_t i = 0; i < n; ++i) p[i] = centroid[i] + coef * (pts[worst][i] - centroid[i]);
            return p;
        };

        auto xr = along(-1.0);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            auto xe = along(-2.0);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = std::move(xe);
                fv[worst] = fe;
            } else {
                pts[worst] = std::move(xr);
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            pts[worst] = std::move(xr);
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        auto xc = along(outside ? -0.5 : 0.5);
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[worst])) {
            pts[worst] = std::move(xc);
            fv[worst] = fc;
            continue;
        }
        for (std::size_t k = 1; k <= n; ++k) {
            auto& p = pts[idx[k]];
            for (std::size_t i = 0; i < n; ++i) p[i] = pts[best][i] + 0.5 * (p[i] - pts[best][i]);
            fv[idx[k]] = eval(p);
        }
    }
    const std::size_t b = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    res.x = pts[b];
    res.value = fv[b];
    return res;
}

RigidResult register_rigid(const VolumeGrid& v_s, const Image2D& i_t, const RigidOptions& opts) {
    const auto t0 = Clock::now();
    v_s.validate();
    if (i_t.width != v_s.dims.nx || i_t.height != v_s.dims.nz)
        fail(ErrorKind::DimsMismatch, "register_rigid: target DRR does not match the volume");
    if (opts.restarts < 1 || opts.max_evaluations < 1)
        fail(ErrorKind::Validation, "register_rigid: restarts and max_evaluations must be positive");

    // ty moves the volume along the rays and leaves the DRR unchanged, so it
    // is held at its start value; the search runs over the other five.
    static constexpr std::array<std::size_t, 5> kFree{0, 2, 3, 4, 5};
    auto expand = [](const std::vector<double>& x) {
        std::array<double, 6> a{};
        for (std::size_t i = 0; i < kFree.size(); ++i) a[kFree[i]] = x[i];
        return a;
    };
    auto cost = [&](const std::vector<double>& x) {
        const std::array<double, 6> a = expand(x);
        const double ncc = normalized_cross_correlation(render_drr(apply_rigid(v_s, RigidParams::from_array(a))).image, i_t);
        return 1.0 - ncc;
    };

    RigidResult result;
    SolveReport& rep = result.report;
    rep.seed = opts.seed;
    rep.config = {{"solver", "rigid"},
                  {"restarts", std::to_string(opts.restarts)},
                  {"max_evaluations", std::to_string(opts.max_evaluations)},
                  {"translation_step", fmt(opts.translation_step)},
                  {"rotation_step", fmt(opts.rotation_step)}};

    const std::vector<double> origin(kFree.size(), 0.0);
    const double f0 = cost(origin);
    rep.initial_loss = f0;
    LossTerms lt;
    lt.total = lt.mse = f0;
    rep.record(0, lt);

    std::vector<double> best_x = origin;
    double best_f = f0;
    const std::vector<double> steps{opts.translation_step, opts.translation_step, opts.rotation_step,
                                    opts.rotation_step, opts.rotation_step};
    Rng rng(derive_seed(opts.seed, 0x52494744));
    std::size_t counter = 0;
    for (int r = 0; r < opts.restarts; ++r) {
        std::vector<double> x0 = best_x;
        if (r > 0)
            for (std::size_t i = 0; i < x0.size(); ++i) x0[i] += rng.uniform(-steps[i], steps[i]);
        const auto nm = nelder_mead(cost, x0, steps, opts.max_evaluations, opts.tolerance, [&](int, double f) {
            LossTerms e;
            e.total = e.mse = std::min(f, best_f);
            rep.record(++counter, e);
        });
        if (nm.value < best_f) {
            best_f = nm.value;
            best_x = nm.x;
            rep.best_step = counter;
        }
    }

    result.params = RigidParams::from_array(expand(best_x)).wrapped();
    result.v_def = apply_rigid(v_s, result.params);
    result.ncc = 1.0 - best_f;
    rep.final_loss = best_f;
    rep.set_metric("ncc", result.ncc);
    rep.wall_seconds = seconds_since(t0);
    return result;
}

// ---------------------------------------------------------------------------

Register2dResult register_2d(const Image2D& i_s, const Image2D& i_t, const LossWeights& weights,
                             const Register2dOptions& opts) {
    const auto t0 = Clock::now();
    weights.validate();
    if (i_s.width != i_t.width || i_s.height != i_t.height)
        fail(ErrorKind::DimsMismatch, "register_2d: image dims differ");
    if (opts.steps < 0 || !(opts.lr > 0)) fail(ErrorKind::Validation, "register_2d: bad steps or lr");

    auto evaluate = [&](const Dvf2D& u, Dvf2D* grad) {
        const Image2D warped = warp_image2d(i_s, u);
        const auto mse = image_mse_loss(i_t, warped);
        const auto sm = smooth2d_loss(u);
        LossTerms t;
        t.mse = mse.value;
        t.smooth = sm.value;
        t.total = mse.value + weights.lambda_smooth * sm.value;
        require_finite(t, "register_2d");
        if (grad) {
            *grad = warp_image2d_backward_u(i_s, u, mse.grad);
            add_into(grad->comps, sm.grad.comps, weights.lambda_smooth);
        }
        return t;
    };

    Register2dResult result;
    SolveReport& rep = result.report;
    rep.seed = opts.seed;
    rep.config = {{"solver", "2ddf"},
                  {"steps", std::to_string(opts.steps)},
                  {"lr", fmt(opts.lr)},
                  {"lambda_smooth", fmt(weights.lambda_smooth)}};

    Dvf2D u(i_s.width, i_s.height);
    Dvf2D best = u;
    AdamOptions ao;
    ao.lr = opts.lr;
    auto state = make_adam_state<float>({u.comps.size()}, ao);
    double best_loss = std::numeric_limits<double>::infinity();
    for (int s = 0; s <= opts.steps; ++s) {
        const bool last = s == opts.steps;
        Dvf2D grad;
        const LossTerms t = evaluate(u, last ? nullptr : &grad);
        const auto step = static_cast<std::size_t>(s);
        rep.record(step, t);
        if (s == 0) rep.initial_loss = t.total;
        if (t.total < best_loss) {
            best_loss = t.total;
            best = u;
            rep.best_step = step;
        }
        if (!last)
            adam_step<float>({std::span<float>(u.comps)}, {std::span<const float>(grad.comps)}, state);
    }
    rep.final_loss = best_loss;
    result.u = std::move(best);
    result.warped = warp_image2d(i_s, result.u);
    rep.wall_seconds = seconds_since(t0);
    return result;
}

DisplacementField field_from_2ddf(const Dvf2D& u2d, const Dims3& dims) {
    if (u2d.width != dims.nx || u2d.height != dims.nz)
        fail(ErrorKind::DimsMismatch, "2D field does not match the volume's coronal plane");
    DisplacementField u(dims);
    for (int z = 0; z < dims.nz; ++z)
        for (int y = 0; y < dims.ny; ++y)
            for (int x = 0; x < dims.nx; ++x) {
                const std::size_t p = static_cast<std::size_t>(x) + static_cast<std::size_t>(dims.nx) * z;
                const std::size_t i = dims.index(x, y, z);
                u.at(0, i) = u2d.at(0, p);
                u.at(2, i) = u2d.at(1, p);
            }
    return u;
}

VolumeGrid apply_2ddf_to_volume(const VolumeGrid& v_s, const Dvf2D& u2d) {
    return warp_volume(v_s, field_from_2ddf(u2d, v_s.dims));
}

// ---------------------------------------------------------------------------

PhantomCase make_phantom_case(const PhantomReference& ref, const RespiratoryModel& model, int phase,
                              const std::string& id) {
    PhantomCase c;
    c.id = id;
    c.phase = phase;
    PhantomFrame src = generate_frame(ref, model, 0);
    PhantomFrame tgt = generate_frame(ref, model, phase);
    c.source = std::move(src.volume);
    c.source_labels = std::move(src.labels);
    c.target = std::move(tgt.volume);
    c.target_labels = std::move(tgt.labels);
    c.u_gt = std::move(tgt.u_gt);
    c.source_drr = render_drr(c.source).image;
    c.target_drr = render_drr(c.target).image;
    return c;
}

std::vector<PhantomCase> make_phantom_cases(const PhantomSpec& spec, const RespiratoryModel& base, int count,
                                            std::uint64_t seed, double scale_lo, double scale_hi, int phase) {
    if (count < 0 || !(scale_lo > 0) || scale_hi < scale_lo)
        fail(ErrorKind::Validation, "make_phantom_cases: bad count or amplitude range");
    spec.validate();
    const PhantomReference ref = build_reference(spec);
    std::vector<PhantomCase> cases;
    for (int k = 0; k < count; ++k) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
        const double scale = rng.uniform(scale_lo, scale_hi);
        RespiratoryModel m = base;
        m.amplitude_si *= scale;
        m.amplitude_ap *= scale;
        const double jac = max_jacobian_perturbation(m, spec.n);
        if (!(jac < 1.0)) fail(ErrorKind::Validation, "make_phantom_cases: sampled motion is not injective");
        std::ostringstream id;
        id << "case" << std::setw(3) << std::setfill('0') << k;
        cases.push_back(make_phantom_case(ref, m, phase, id.str()));
        cases.back().amplitude_scale = scale;
    }
    return cases;
}

TrainingSample to_training_sample(const PhantomCase& c, bool with_u_gt) {
    TrainingSample s;
    s.source = c.source;
    s.source_drr = c.source_drr;
    s.target_drr = c.target_drr;
    s.target = c.target;
    if (with_u_gt) s.u_gt = c.u_gt;
    return s;
}

} // namespace deformreg
