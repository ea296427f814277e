#include <doctest.h>

#include "deformreg/warpfield.hpp"
#include "oracles.hpp"

using namespace deformreg;

namespace {

template <class T>
BasicField<T> constant_field(Dims3 d, T ux, T uy, T uz) {
    BasicField<T> u(d);
    for (std::size_t i = 0; i < d.count(); ++i) {
        u.at(0, i) = ux;
        u.at(1, i) = uy;
        u.at(2, i) = uz;
    }
    return u;
}

} // namespace

TEST_CASE("zero field is a bitwise identity") {
    Rng rng(1);
    for (int k = 0; k < 10; ++k) {
        const Dims3 d{1 + int(rng.below(7)), 1 + int(rng.below(7)), 1 + int(rng.below(7))};
        const auto v = oracle::random_volume<float>(d, rng, -1000, 1000);
        CHECK(warp_volume(v, DisplacementField(d)) == v);
        const auto vd = oracle::random_volume<double>(d, rng, -1, 1);
        CHECK(warp_volume(vd, DisplacementFieldD(d)) == vd);
    }
}

TEST_CASE("integer shifts match the index-shift oracle") {
    Rng rng(2);
    const Dims3 d{5, 6, 4};
    const auto v = oracle::random_volume<float>(d, rng, -1000, 1000);
    for (int sx = -2; sx <= 2; ++sx)
        for (int sy = -1; sy <= 1; ++sy)
            for (int sz = -1; sz <= 2; ++sz) {
                const auto out = warp_volume(v, constant_field<float>(d, float(sx), float(sy), float(sz)));
                bool same = true;
                for (int z = 0; z < d.nz; ++z)
                    for (int y = 0; y < d.ny; ++y)
                        for (int x = 0; x < d.nx; ++x)
                            same &= out.at(x, y, z) == v.at(std::clamp(x + sx, 0, d.nx - 1),
                                                            std::clamp(y + sy, 0, d.ny - 1),
                                                            std::clamp(z + sz, 0, d.nz - 1));
                CHECK(same);
            }
}

TEST_CASE("half-voxel shift of a ramp") {
    VolumeGrid v(Dims3{6, 2, 2});
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 6; ++x) v.at(x, y, z) = float(x);
    const auto out = warp_volume(v, constant_field<float>(v.dims, 0.5f, 0, 0));
    for (int x = 0; x < 6; ++x) CHECK(out.at(x, 1, 1) == doctest::Approx(std::min(x + 0.5, 5.0)));
}

TEST_CASE("affine volumes are reproduced inside the grid") {
    Rng rng(3);
    const Dims3 d{6, 5, 7};
    VolumeGridD v(d);
    auto f = [](double x, double y, double z) { return 1.5 - 0.75 * x + 2.0 * y + 0.3 * z; };
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) v.at(x, y, z) = f(x, y, z);
    DisplacementFieldD u(d);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const auto i = d.index(x, y, z);
                u.at(0, i) = rng.uniform(-x, d.nx - 1 - x);
                u.at(1, i) = rng.uniform(-y, d.ny - 1 - y);
                u.at(2, i) = rng.uniform(-z, d.nz - 1 - z);
            }
    const auto out = warp_volume(v, u);
    double worst = 0;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const auto i = d.index(x, y, z);
                worst = std::max(worst, std::abs(out.at(x, y, z) - f(x + u.at(0, i), y + u.at(1, i), z + u.at(2, i))));
            }
    CHECK(worst < 1e-5);
}

TEST_CASE("warp matches the brute-force trilinear oracle") {
    Rng rng(4);
    for (int k = 0; k < 20; ++k) {
        const Dims3 d{1 + int(rng.below(5)), 1 + int(rng.below(5)), 1 + int(rng.below(5))};
        const auto v = oracle::random_volume<double>(d, rng, -1, 1);
        const auto u = oracle::random_field<double>(d, rng, 3.0);
        const auto a = warp_volume(v, u), b = oracle::warp(v, u);
        for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-12));
    }
}

TEST_CASE("trilinear stencil weights") {
    Rng rng(5);
    const Dims3 d{4, 3, 5};
    for (int k = 0; k < 1000; ++k) {
        const auto s = make_stencil<double>(d, rng.uniform(-2, 6), rng.uniform(-2, 5), rng.uniform(-2, 7));
        double sum = 0;
        for (double w : s.weight) {
            CHECK(w >= 0.0);
            CHECK(w <= 1.0);
            sum += w;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    SUBCASE("integer coordinates use the lower cell") {
        const auto s = make_stencil<double>(d, 2.0, 0.0, 4.0);
        CHECK(s.lo[0] == 1);
        CHECK(s.frac[0] == 1.0);
        CHECK(s.lo[1] == 0);
        CHECK(s.frac[1] == 0.0);
        CHECK(s.lo[2] == 3);
        CHECK(s.inside[0]);
    }
    SUBCASE("clamped coordinates are flagged") {
        const auto s = make_stencil<double>(d, -0.5, 2.5, 1.0);
        CHECK(!s.inside[0]);
        CHECK(!s.inside[1]);
        CHECK(s.inside[2]);
    }
}

TEST_CASE("warp outputs stay within the source range") {
    Rng rng(6);
    const Dims3 d{6, 6, 6};
    const auto v = oracle::random_volume<float>(d, rng, -500, 300);
    const auto u = oracle::random_field<float>(d, rng, 4.0);
    const auto [lo, hi] = std::minmax_element(v.values.begin(), v.values.end());
    for (float x : warp_volume(v, u).values) {
        CHECK(x >= *lo - 1e-3f);
        CHECK(x <= *hi + 1e-3f);
    }
}

TEST_CASE("warp backward") {
    Rng rng(7);
    const Dims3 d{5, 5, 5};
    const auto v = oracle::random_volume<double>(d, rng, -1, 1);
    SUBCASE("zero upstream gradient") {
        const auto u = oracle::random_field<double>(d, rng, 2.0);
        const auto g = warp_volume_backward(v, u, VolumeGridD(d));
        for (double x : g.grad_v.values) CHECK(x == 0.0);
        for (double x : g.grad_u.comps) CHECK(x == 0.0);
    }
    SUBCASE("grad_v sums to grad_out when nothing is clamped") {
        auto u = oracle::random_field<double>(d, rng, 0.4);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const auto i = d.index(x, y, z);
                    const int p[3] = {x, y, z};
                    for (int c = 0; c < 3; ++c) {
                        if (p[c] == 0) u.at(c, i) = std::abs(u.at(c, i));
                        if (p[c] == 4) u.at(c, i) = -std::abs(u.at(c, i));
                    }
                }
        const auto go = oracle::random_volume<double>(d, rng, -1, 1);
        const auto g = warp_volume_backward(v, u, go);
        double a = 0, b = 0;
        for (double x : g.grad_v.values) a += x;
        for (double x : go.values) b += x;
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
    SUBCASE("central differences in u") {
        for (int k = 0; k < 20; ++k) {
            const Dims3 dd{4, 4, 4};
            const auto vv = oracle::random_volume<double>(dd, rng, -1, 1);
            const auto u = oracle::random_field<double>(dd, rng, 1.3);
            const auto go = oracle::random_volume<double>(dd, rng, -1, 1);
            const auto g = warp_volume_backward(vv, u, go, false);
            auto loss = [&](const DisplacementFieldD& uu) {
                const auto w = warp_volume(vv, uu);
                double s = 0;
                for (std::size_t i = 0; i < w.values.size(); ++i) s += w.values[i] * go.values[i];
                return s;
            };
            double num = 0, den = 0;
            for (std::size_t j = 0; j < u.comps.size(); ++j) {
                auto a = u, b = u;
                a.comps[j] += 1e-6;
                b.comps[j] -= 1e-6;
                const double fd = (loss(a) - loss(b)) / 2e-6;
                num += (fd - g.grad_u.comps[j]) * (fd - g.grad_u.comps[j]);
                den = std::max({den, fd * fd, g.grad_u.comps[j] * g.grad_u.comps[j]});
            }
            CHECK(std::sqrt(num) / std::max(1e-12, std::sqrt(den)) < 1e-4);
        }
    }
}

TEST_CASE("label warping") {
    Rng rng(8);
    LabelVolume l(Dims3{5, 4, 3});
    for (auto& x : l.labels) x = std::uint8_t(rng.below(3));
    CHECK(warp_labels(l, DisplacementField(l.dims)) == l);

    const auto shifted = warp_labels(l, constant_field<float>(l.dims, 1, 0, -1));
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) CHECK(shifted.at(x, y, z) == l.at(std::min(x + 1, 4), y, std::max(z - 1, 0)));

    const auto half = warp_labels(l, constant_field<float>(l.dims, 0.5f, 0, 0));
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) CHECK(half.at(x, y, z) == l.at(std::min(x + 1, 4), y, z));
}

TEST_CASE("field file round trip") {
    const auto dir = oracle::temp_dir("wf");
    Rng rng(9);
    const auto u = oracle::random_field<float>({3, 4, 5}, rng, 2.0);
    save_field(u, dir / "u.mhd");
    CHECK(load_field(dir / "u.mhd") == u);
    CHECK(std::filesystem::exists(dir / "ux.raw"));
    CHECK(std::filesystem::exists(dir / "uz.raw"));
}

TEST_CASE("2D warp") {
    Rng rng(10);
    Image2D img(6, 5);
    for (auto& x : img.values) x = float(rng.uniform());
    CHECK(warp_image2d(img, Dvf2D(6, 5)) == img);
    Dvf2D u(6, 5);
    for (std::size_t i = 0; i < u.pixels(); ++i) u.at(0, i) = 2.0f;
    const auto out = warp_image2d(img, u);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; ++c) CHECK(out.at(c, r) == img.at(std::min(c + 2, 5), r));
}

TEST_CASE("mean endpoint error") {
    const Dims3 d{2, 2, 2};
    CHECK(mean_endpoint_error(constant_field<float>(d, 3, 0, 4), DisplacementField(d)) == doctest::Approx(5.0));
}
