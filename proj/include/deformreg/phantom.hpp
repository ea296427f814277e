#pragma once

#include <array>
#include <vector>

#include "deformreg/volgrid.hpp"
#include "deformreg/warpfield.hpp"

namespace deformreg {

// Shapes are given in normalised grid coordinates: voxel i of an n-wide axis
// sits at (i + 0.5) / n, so the same PhantomSpec renders at any grid size.
struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> semi_axes{};
    double hu = 0.0;

    bool contains(const std::array<double, 3>& f) const;
    double volume() const;  // normalised units
};

// Anatomy of the abdominal phantom. x runs left-right, y anteroposterior
// (the projection axis), z inferior-to-superior.
struct PhantomSpec {
    int n = 64;
    double fov_mm = 320.0;
    double air_hu = -1000.0;

    Ellipsoid body{{0.5, 0.5, 0.5}, {0.42, 0.30, 0.46}, 40.0};
    Ellipsoid liver{{0.36, 0.48, 0.45}, {0.15, 0.15, 0.12}, 60.0};
    Ellipsoid stomach{{0.645, 0.42, 0.47}, {0.09, 0.09, 0.10}, 30.0};
    Ellipsoid stomach_gas{{0.645, 0.42, 0.52}, {0.055, 0.05, 0.035}, -800.0};

    // Spine: infinite cylinder along z, clipped to the body.
    double spine_x = 0.5;
    double spine_y = 0.72;
    double spine_radius = 0.06;
    double spine_hu = 400.0;

    // Lung fills the body above the dome
    // z = apex_z - curvature * ((x - apex_x)^2 + (y - apex_y)^2).
    double dome_apex_x = 0.5;
    double dome_apex_y = 0.5;
    double dome_apex_z = 0.62;
    double dome_curvature = 1.2;
    double lung_hu = -800.0;

    Dims3 dims() const { return {n, n, n}; }
    Spacing spacing() const { return {fov_mm / n, fov_mm / n, fov_mm / n}; }
    double dome_height(double fx, double fy) const;

    // Throws Error{Validation} when containment or HU bounds fail.
    void validate() const;
};

struct PhantomReference {
    VolumeGrid volume;
    LabelVolume labels;
};

PhantomReference build_reference(const PhantomSpec& spec);

// Breathing phase weight s(t) = (1 - cos(2 pi t / 100)) / 2, evaluated on
// min(t, 100 - t) so that s(t) and s(100 - t) agree bitwise.
double breathing_phase(int t);

// u(p, t) = s(t) * (0, A_ap * w_ap(p), -A_si * w(p)) in voxels. w peaks at
// the dome apex and tapers as sin^2 towards the inferior boundary, with a
// Gaussian lateral falloff. The negative z sign samples from below, which
// lifts the organs towards end-exhalation under pull-back warping.
struct RespiratoryModel {
    double amplitude_si = 6.0;
    double amplitude_ap = 2.0;
    double apex_z = 0.62;
    double center_x = 0.5;
    double center_y = 0.5;
    double lateral_sigma = 0.35;
    double lateral_sigma_ap = 0.30;

    // Defaults scaled so the physical motion matches the 64^3 defaults.
    static RespiratoryModel for_grid(int n);

    double weight_si(const std::array<double, 3>& f) const;
    double weight_ap(const std::array<double, 3>& f) const;
};

std::array<double, 3> respiratory_displacement(const RespiratoryModel& model, int n, int t,
                                               const std::array<double, 3>& p);

DisplacementField respiratory_field(const RespiratoryModel& model, const Dims3& dims, int t);

// Largest Frobenius norm of the displacement Jacobian at full exhalation
// (s = 1) over all voxel centres. Below 1 the map p -> p + u(p) is injective.
double max_jacobian_perturbation(const RespiratoryModel& model, int n);

struct PhantomFrame {
    int phase = 0;
    VolumeGrid volume;
    LabelVolume labels;
    DisplacementField u_gt;
};

inline constexpr int kPhaseCount = 10;

PhantomFrame generate_frame(const PhantomReference& ref, const RespiratoryModel& model, int t);

// Phases 0, 10, ..., 90. Frame t is warp_volume(reference, u_gt(t)).
std::vector<PhantomFrame> generate_4dct(const PhantomSpec& spec, const RespiratoryModel& model);

} // namespace deformreg
