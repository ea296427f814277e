#include <doctest.h>

#include <cmath>
#include <numbers>

#include "deformreg/metrics.hpp"
#include "deformreg/phantom.hpp"

using namespace deformreg;

namespace {

std::array<int, 3> voxel_of(const std::array<double, 3>& f, int n) {
    return {int(std::floor(f[0] * n)), int(std::floor(f[1] * n)), int(std::floor(f[2] * n))};
}

} // namespace

TEST_CASE("reference anatomy") {
    PhantomSpec spec;
    const auto ref = build_reference(spec);
    CHECK(ref.volume.dims == Dims3{64, 64, 64});
    CHECK(ref.volume.spacing.sx == doctest::Approx(5.0));

    SUBCASE("corner voxel is air background") {
        CHECK(ref.volume.at(0, 0, 0) == -1000.0f);
        CHECK(ref.labels.at(0, 0, 0) == 0);
    }
    SUBCASE("liver centre") {
        const auto v = voxel_of(spec.liver.center, spec.n);
        CHECK(ref.volume.at(v[0], v[1], v[2]) == 60.0f);
        CHECK(ref.labels.at(v[0], v[1], v[2]) == 1);
    }
    SUBCASE("liver voxel count matches the ellipsoid volume within 5%") {
        long count = 0;
        for (auto l : ref.labels.labels) count += l == 1;
        const auto& a = spec.liver.semi_axes;
        const double analytic = 4.0 / 3.0 * std::numbers::pi * a[0] * a[1] * a[2] * std::pow(spec.n, 3);
        CHECK(std::abs(count - analytic) / analytic < 0.05);
    }
    SUBCASE("stomach is labelled and only labels 0..2 occur") {
        long stomach = 0;
        for (auto l : ref.labels.labels) {
            CHECK(l <= kMaxLabel);
            stomach += l == 2;
        }
        CHECK(stomach > 0);
    }
}

TEST_CASE("PhantomSpec::validate rejects organs outside the body") {
    PhantomSpec spec;
    CHECK_NOTHROW(spec.validate());
    spec.liver.center = {0.05, 0.5, 0.5};
    CHECK_THROWS_AS(spec.validate(), Error);
}

TEST_CASE("breathing phase") {
    CHECK(breathing_phase(0) == 0.0);
    CHECK(breathing_phase(50) == 1.0);
    for (int t = 0; t <= 100; t += 10) CHECK(breathing_phase(t) == breathing_phase(100 - t));
    for (int t = 0; t < 50; t += 10) CHECK(breathing_phase(t) < breathing_phase(t + 10));
}

TEST_CASE("respiratory displacement") {
    const RespiratoryModel model;
    const int n = 64;
    SUBCASE("zero at t = 0") {
        for (auto p : {std::array<double, 3>{0, 0, 0}, {31, 20, 40}, {63, 63, 63}})
            CHECK(respiratory_displacement(model, n, 0, p) == std::array<double, 3>{0, 0, 0});
        const auto u = respiratory_field(model, {n, n, n}, 0);
        for (float c : u.comps) CHECK(c == 0.0f);
    }
    SUBCASE("peak at the dome apex for t = 50") {
        const std::array<double, 3> p{0.5 * n - 0.5, 0.5 * n - 0.5, model.apex_z * n - 0.5};
        const auto d = respiratory_displacement(model, n, 50, p);
        CHECK(d[0] == 0.0);
        CHECK(d[1] == doctest::Approx(model.amplitude_ap));
        CHECK(d[2] == doctest::Approx(-model.amplitude_si));
    }
    SUBCASE("t = 30 and t = 70 agree everywhere") {
        CHECK(respiratory_field(model, {16, 16, 16}, 30) == respiratory_field(model, {16, 16, 16}, 70));
    }
    SUBCASE("amplitudes scale with the grid") {
        const auto m = RespiratoryModel::for_grid(32);
        CHECK(m.amplitude_si == doctest::Approx(3.0));
        CHECK(m.amplitude_ap == doctest::Approx(1.0));
    }
    SUBCASE("default motion is injective") {
        CHECK(max_jacobian_perturbation(model, 32) < 1.0);
    }
}

TEST_CASE("4D-CT frames") {
    PhantomSpec spec;
    spec.n = 32;
    const auto model = RespiratoryModel::for_grid(spec.n);
    const auto ref = build_reference(spec);
    const auto frames = generate_4dct(spec, model);
    REQUIRE(frames.size() == 10);

    CHECK(frames[0].volume == ref.volume);
    CHECK(frames[0].labels == ref.labels);
    for (float c : frames[0].u_gt.comps) CHECK(c == 0.0f);

    for (const auto& f : frames) {
        CHECK(warp_volume(ref.volume, f.u_gt) == f.volume);
        const auto warped = warp_labels(ref.labels, f.u_gt);
        CHECK(dsc(warped, f.labels, Label::Liver) == 1.0);
        CHECK(dsc(warped, f.labels, Label::Stomach) == 1.0);
    }
    CHECK(frames[3].volume == generate_frame(ref, model, 70).volume);
    CHECK(frames[5].volume != frames[0].volume);
    CHECK(dsc(frames[5].labels, frames[0].labels, Label::Liver) < 1.0);
}

TEST_CASE("too-strong motion is rejected") {
    PhantomSpec spec;
    spec.n = 16;
    RespiratoryModel model;
    model.amplitude_si = 40.0;
    CHECK_THROWS_AS(generate_4dct(spec, model), Error);
}
