#include "deformreg/phantom.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "deformreg/parallel.hpp"

namespace deformreg {

namespace {

using Vec3 = std::array<double, 3>;

double sq(double v) { return v * v; }

Vec3 normalized(const Dims3& d, double x, double y, double z) {
    return {(x + 0.5) / d.nx, (y + 0.5) / d.ny, (z + 0.5) / d.nz};
}

// Surface samples of e checked against `outer`.
bool ellipsoid_inside(const Ellipsoid& e, const Ellipsoid& outer) {
    if (!outer.contains(e.center)) return false;
    constexpr int kTheta = 24;
    constexpr int kPhi = 48;
    for (int i = 0; i <= kTheta; ++i) {
        const double th = std::numbers::pi * i / kTheta;
        for (int j = 0; j < kPhi; ++j) {
            const double ph = 2.0 * std::numbers::pi * j / kPhi;
            const Vec3 p{e.center[0] + e.semi_axes[0] * std::sin(th) * std::cos(ph),
                         e.center[1] + e.semi_axes[1] * std::sin(th) * std::sin(ph),
                         e.center[2] + e.semi_axes[2] * std::cos(th)};
            if (!outer.contains(p)) return false;
        }
    }
    return true;
}

void check_hu(double hu, const char* what) {
    if (!(hu >= -1000.0 && hu <= 2000.0))
        fail(ErrorKind::Validation, std::string("phantom ") + what + " HU outside [-1000, 2000]");
}

void check_axes(const Ellipsoid& e, const char* what) {
    for (double a : e.semi_axes)
        if (!(a > 0.0)) fail(ErrorKind::Validation, std::string("phantom ") + what + " needs positive semi-axes");
}

} // namespace

bool Ellipsoid::contains(const std::array<double, 3>& f) const {
    double r = 0.0;
    for (int a = 0; a < 3; ++a) r += sq((f[a] - center[a]) / semi_axes[a]);
    return r <= 1.0;
}

double Ellipsoid::volume() const {
    return 4.0 / 3.0 * std::numbers::pi * semi_axes[0] * semi_axes[1] * semi_axes[2];
}

double PhantomSpec::dome_height(double fx, double fy) const {
    return dome_apex_z - dome_curvature * (sq(fx - dome_apex_x) + sq(fy - dome_apex_y));
}

void PhantomSpec::validate() const {
    if (n < 2) fail(ErrorKind::Validation, "phantom grid size must be at least 2");
    if (!(fov_mm > 0.0)) fail(ErrorKind::Validation, "phantom field of view must be positive");
    check_axes(body, "body");
    check_axes(liver, "liver");
    check_axes(stomach, "stomach");
    check_axes(stomach_gas, "stomach gas");
    for (int a = 0; a < 3; ++a)
        if (body.center[a] - body.semi_axes[a] < 0.0 || body.center[a] + body.semi_axes[a] > 1.0)
            fail(ErrorKind::Validation, "phantom body must lie inside the grid");
    if (!ellipsoid_inside(liver, body)) fail(ErrorKind::Validation, "phantom liver must lie inside the body");
    if (!ellipsoid_inside(stomach, body)) fail(ErrorKind::Validation, "phantom stomach must lie inside the body");
    if (!ellipsoid_inside(stomach_gas, stomach))
        fail(ErrorKind::Validation, "phantom stomach gas must lie inside the stomach");
    if (!(spine_radius > 0.0)) fail(ErrorKind::Validation, "phantom spine radius must be positive");
    if (!Ellipsoid{{body.center[0], body.center[1], body.center[2]}, body.semi_axes, 0.0}.contains(
            {spine_x, spine_y, body.center[2]}))
        fail(ErrorKind::Validation, "phantom spine axis must pass through the body");
    check_hu(air_hu, "air");
    check_hu(body.hu, "body");
    check_hu(liver.hu, "liver");
    check_hu(stomach.hu, "stomach");
    check_hu(stomach_gas.hu, "stomach gas");
    check_hu(spine_hu, "spine");
    check_hu(lung_hu, "lung");
}

PhantomReference build_reference(const PhantomSpec& spec) {
    spec.validate();
    const Dims3 d = spec.dims();
    PhantomReference ref{VolumeGrid(d, spec.spacing(), static_cast<float>(spec.air_hu)), LabelVolume(d)};

    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const Vec3 f = normalized(d, x, y, z);
                if (!spec.body.contains(f)) continue;
                double hu = spec.body.hu;
                std::uint8_t label = static_cast<std::uint8_t>(Label::Background);
                if (f[2] > spec.dome_height(f[0], f[1])) hu = spec.lung_hu;
                if (sq(f[0] - spec.spine_x) + sq(f[1] - spec.spine_y) <= sq(spec.spine_radius)) hu = spec.spine_hu;
                if (spec.liver.contains(f)) {
                    hu = spec.liver.hu;
                    label = static_cast<std::uint8_t>(Label::Liver);
                }
                if (spec.stomach.contains(f)) {
                    hu = spec.stomach.hu;
                    label = static_cast<std::uint8_t>(Label::Stomach);
                }
                if (spec.stomach_gas.contains(f)) {
                    hu = spec.stomach_gas.hu;
                    label = static_cast<std::uint8_t>(Label::Stomach);
                }
                ref.volume.at(x, y, z) = static_cast<float>(hu);
                ref.labels.at(x, y, z) = label;
            }
    return ref;
}

double breathing_phase(int t) {
    if (t < 0 || t > 100) fail(ErrorKind::Validation, "breathing phase must lie in [0, 100], got " + std::to_string(t));
    const int folded = t <= 50 ? t : 100 - t;
    if (folded == 0) return 0.0;
    return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * folded / 100.0));
}

RespiratoryModel RespiratoryModel::for_grid(int n) {
    RespiratoryModel m;
    m.amplitude_si = 6.0 * n / 64.0;
    m.amplitude_ap = 2.0 * n / 64.0;
    return m;
}

double RespiratoryModel::weight_si(const std::array<double, 3>& f) const {
    const double taper = sq(std::sin(std::numbers::pi * f[2] / (2.0 * apex_z)));
    const double lateral = std::exp(-(sq(f[0] - center_x) + sq(f[1] - center_y)) / (2.0 * sq(lateral_sigma)));
    return taper * lateral;
}

double RespiratoryModel::weight_ap(const std::array<double, 3>& f) const {
    const double taper = sq(std::sin(std::numbers::pi * f[2] / (2.0 * apex_z)));
    const double lateral = std::exp(-(sq(f[0] - center_x) + sq(f[1] - center_y)) / (2.0 * sq(lateral_sigma_ap)));
    return taper * lateral;
}

std::array<double, 3> respiratory_displacement(const RespiratoryModel& model, int n, int t,
                                               const std::array<double, 3>& p) {
    const double s = breathing_phase(t);
    if (s == 0.0) return {0.0, 0.0, 0.0};
    const Vec3 f{(p[0] + 0.5) / n, (p[1] + 0.5) / n, (p[2] + 0.5) / n};
    return {0.0, s * model.amplitude_ap * model.weight_ap(f), -s * model.amplitude_si * model.weight_si(f)};
}

DisplacementField respiratory_field(const RespiratoryModel& model, const Dims3& dims, int t) {
    if (!(dims.nx == dims.ny && dims.ny == dims.nz))
        fail(ErrorKind::InvalidDims, "respiratory_field expects a cubic grid");
    DisplacementField u(dims);
    if (breathing_phase(t) == 0.0) return u;
    parallel_for(0, dims.nz, [&](std::ptrdiff_t zi) {
        const int z = static_cast<int>(zi);
        for (int y = 0; y < dims.ny; ++y)
            for (int x = 0; x < dims.nx; ++x) {
                const auto disp = respiratory_displacement(model, dims.nx, t, {double(x), double(y), double(z)});
                const std::size_t i = dims.index(x, y, z);
                for (int c = 0; c < 3; ++c) u.at(c, i) = static_cast<float>(disp[c]);
            }
    });
    return u;
}

double max_jacobian_perturbation(const RespiratoryModel& model, int n) {
    constexpr double h = 1e-4;
    double worst = 0.0;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double frob = 0.0;
                for (int a = 0; a < 3; ++a) {
                    Vec3 lo{double(x), double(y), double(z)}, hi = lo;
                    lo[a] -= h;
                    hi[a] += h;
                    const auto ul = respiratory_displacement(model, n, 50, lo);
                    const auto uh = respiratory_displacement(model, n, 50, hi);
                    for (int c = 0; c < 3; ++c) frob += sq((uh[c] - ul[c]) / (2 * h));
                }
                worst = std::max(worst, std::sqrt(frob));
            }
    return worst;
}

PhantomFrame generate_frame(const PhantomReference& ref, const RespiratoryModel& model, int t) {
    PhantomFrame frame;
    frame.phase = t;
    frame.u_gt = respiratory_field(model, ref.volume.dims, t);
    frame.volume = warp_volume(ref.volume, frame.u_gt);
    frame.labels = warp_labels(ref.labels, frame.u_gt);
    return frame;
}

std::vector<PhantomFrame> generate_4dct(const PhantomSpec& spec, const RespiratoryModel& model) {
    const double jac = max_jacobian_perturbation(model, spec.n);
    if (!(jac < 1.0))
        fail(ErrorKind::Validation, "respiratory model is not injective on the grid (max Jacobian perturbation " +
                                        std::to_string(jac) + ")");
    const PhantomReference ref = build_reference(spec);
    std::vector<PhantomFrame> frames;
    frames.reserve(kPhaseCount);
    for (int k = 0; k < kPhaseCount; ++k) frames.push_back(generate_frame(ref, model, 10 * k));
    return frames;
}

} // namespace deformreg
