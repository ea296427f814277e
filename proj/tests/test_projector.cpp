#include <doctest.h>

#include "deformreg/phantom.hpp"
#include "deformreg/projector.hpp"
#include "oracles.hpp"

using namespace deformreg;

TEST_CASE("render_drr closed forms") {
    SUBCASE("all air gives a zero raw image") {
        const VolumeGrid v(Dims3{4, 5, 3}, {}, -1000.0f);
        const auto d = render_drr(v);
        CHECK(d.image.width == 4);
        CHECK(d.image.height == 3);
        CHECK(d.geometry.raw_min == 0.0);
        CHECK(d.geometry.raw_max == 0.0);
        for (float x : d.image.values) CHECK(x == 0.0f);
    }
    SUBCASE("uniform water is constant 1 raw and normalises to zeros") {
        const VolumeGrid v(Dims3{3, 4, 3}, {}, 0.0f);
        const auto d = render_drr(v);
        CHECK(d.geometry.raw_min == doctest::Approx(1.0));
        CHECK(d.geometry.raw_max == doctest::Approx(1.0));
        CHECK(d.geometry.constant());
        for (float x : d.image.values) CHECK(x == 0.0f);
    }
    SUBCASE("single water voxel in an air column") {
        VolumeGrid v(Dims3{2, 4, 2}, {}, -1000.0f);
        v.at(1, 2, 0) = 0.0f;
        const auto d = render_drr(v);
        CHECK(d.geometry.raw_min == 0.0);
        CHECK(d.geometry.raw_max == doctest::Approx(0.25));
        CHECK(d.image.at(1, 0) == 1.0f);
        CHECK(d.image.at(0, 0) == 0.0f);
    }
}

TEST_CASE("render_drr matches the summation oracle") {
    Rng rng(5);
    for (int k = 0; k < 10; ++k) {
        const Dims3 d{2 + int(rng.below(5)), 2 + int(rng.below(5)), 2 + int(rng.below(5))};
        const auto v = oracle::random_volume<float>(d, rng, -1200, 800);
        const auto raw = oracle::drr_raw(v);
        const double lo = *std::min_element(raw.begin(), raw.end()), hi = *std::max_element(raw.begin(), raw.end());
        const auto drr = render_drr(v);
        CHECK(drr.geometry.raw_min == doctest::Approx(lo));
        CHECK(drr.geometry.raw_max == doctest::Approx(hi));
        for (std::size_t i = 0; i < raw.size(); ++i) {
            CHECK(drr.image.values[i] == doctest::Approx((raw[i] - lo) / (hi - lo)).epsilon(1e-5));
            CHECK(drr.image.values[i] >= 0.0f);
            CHECK(drr.image.values[i] <= 1.0f);
        }
        CHECK(render_drr_fixed(v, drr.geometry).values.size() == raw.size());
    }
}

TEST_CASE("project_mean adjoint identity") {
    Rng rng(17);
    int trials = 0;
    for (int n : {4, 8, 16})
        for (int k = 0; k < 50; ++k) {
            const Dims3 d{n, n, n};
            const auto x = oracle::random_volume<double>(d, rng, -1, 1);
            Image2DD y(n, n);
            for (auto& e : y.values) e = rng.uniform(-1, 1);
            const auto px = project_mean(x);
            const auto pty = project_mean_adjoint(y, d);
            double lhs = 0, rhs = 0;
            for (std::size_t i = 0; i < y.values.size(); ++i) lhs += px.values[i] * y.values[i];
            for (std::size_t i = 0; i < x.values.size(); ++i) rhs += x.values[i] * pty.values[i];
            CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1e-12, std::abs(lhs) + std::abs(rhs)));
            ++trials;
        }
    CHECK(trials == 150);
}

TEST_CASE("render_drr_adjoint") {
    Rng rng(23);
    const Dims3 d{4, 4, 4};
    auto v = oracle::random_volume<double>(d, rng, -900, 900);
    v.values[0] = -1200;  // clamped voxel
    const auto g = render_drr(volume_cast<float>(v)).geometry;

    SUBCASE("zero image gradient gives zero volume gradient") {
        const auto grad = render_drr_adjoint(Image2DD(4, 4), g, v);
        for (double x : grad.values) CHECK(x == 0.0);
    }
    SUBCASE("central differences per pixel and voxel") {
        const double h = 1e-3;
        for (int px = 0; px < 16; px += 5) {
            Image2DD sel(4, 4);
            sel.values[static_cast<std::size_t>(px)] = 1.0;
            const auto grad = render_drr_adjoint(sel, g, v);
            std::vector<double> fd(v.values.size()), an(grad.values.begin(), grad.values.end());
            for (std::size_t i = 0; i < v.values.size(); ++i) {
                auto a = v, b = v;
                a.values[i] += h;
                b.values[i] -= h;
                fd[i] = (render_drr_fixed(a, g).values[px] - render_drr_fixed(b, g).values[px]) / (2 * h);
            }
            double num = 0, den = 0;
            for (std::size_t i = 0; i < fd.size(); ++i) {
                num += (fd[i] - an[i]) * (fd[i] - an[i]);
                den = std::max(den, std::max(fd[i] * fd[i], an[i] * an[i]));
            }
            CHECK(std::sqrt(num) / std::max(1e-12, std::sqrt(den)) < 1e-4);
            CHECK(grad.values[0] == 0.0);
        }
    }
}

TEST_CASE("phantom DRRs of different phases differ") {
    PhantomSpec spec;
    spec.n = 32;
    const auto ref = build_reference(spec);
    const auto model = RespiratoryModel::for_grid(spec.n);
    const auto a = render_drr(generate_frame(ref, model, 0).volume);
    const auto b = render_drr(generate_frame(ref, model, 50).volume);
    CHECK(a.image != b.image);
    CHECK(!a.geometry.constant());
}
