#include <doctest.h>

#include "deformreg/losses.hpp"
#include "oracles.hpp"

using namespace deformreg;

namespace {

double smooth_oracle(const DisplacementFieldD& u) {
    const Dims3 d = u.dims;
    double sum = 0;
    long count = 0;
    for (int c = 0; c < 3; ++c)
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const double here = u.at(c, d.index(x, y, z));
                    if (x + 1 < d.nx) sum += std::pow(u.at(c, d.index(x + 1, y, z)) - here, 2), ++count;
                    if (y + 1 < d.ny) sum += std::pow(u.at(c, d.index(x, y + 1, z)) - here, 2), ++count;
                    if (z + 1 < d.nz) sum += std::pow(u.at(c, d.index(x, y, z + 1)) - here, 2), ++count;
                }
    return count ? sum / count : 0.0;
}

template <class F>
double fd_rel_error(std::vector<double>& x, const std::vector<double>& analytic, F&& f) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + 1e-6;
        const double a = f();
        x[i] = keep - 1e-6;
        const double b = f();
        x[i] = keep;
        const double fd = (a - b) / 2e-6;
        num += (fd - analytic[i]) * (fd - analytic[i]);
        den = std::max({den, fd * fd, analytic[i] * analytic[i]});
    }
    return std::sqrt(num) / std::max(1e-12, std::sqrt(den));
}

} // namespace

TEST_CASE("mse loss") {
    const Dims3 d{3, 3, 3};
    Rng rng(1);
    const auto a = oracle::random_volume<double>(d, rng, -1, 1);
    const auto same = mse_loss(a, a);
    CHECK(same.value == 0.0);
    for (double g : same.grad.values) CHECK(g == 0.0);
    CHECK(mse_loss(VolumeGridD(d, {}, 0.0), VolumeGridD(d, {}, 1.0)).value == 1.0);

    const auto b = oracle::random_volume<double>(d, rng, -1, 1);
    double s = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::pow(a.values[i] - b.values[i], 2);
    const auto l = mse_loss(a, b);
    CHECK(std::abs(l.value - s / 27) < 1e-6);
    for (std::size_t i = 0; i < a.values.size(); ++i)
        CHECK(l.grad.values[i] == doctest::Approx(2 * (b.values[i] - a.values[i]) / 27));
}

TEST_CASE("smooth loss") {
    const Dims3 d{4, 3, 5};
    CHECK(smooth_loss(BasicField<double>(d, 2.5)).value == 0.0);

    DisplacementFieldD ramp(d);
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) ramp.at(0, d.index(x, y, z)) = x;
    const double x_pairs = 3.0 * 5 * 3, all = 3.0 * (3 * 3 * 5 + 4 * 2 * 5 + 4 * 3 * 4);
    CHECK(smooth_loss(ramp).value == doctest::Approx(x_pairs / all));

    Rng rng(2);
    for (int k = 0; k < 20; ++k) {
        auto u = oracle::random_field<double>({4, 4, 4}, rng, 1.0);
        const auto l = smooth_loss(u);
        CHECK(std::abs(l.value - smooth_oracle(u)) < 1e-12);
        CHECK(fd_rel_error(u.comps, l.grad.comps, [&] { return smooth_oracle(u); }) < 1e-4);
    }
}

TEST_CASE("dvf loss") {
    const Dims3 d{3, 3, 3};
    Rng rng(3);
    const auto a = oracle::random_field<double>(d, rng, 2.0);
    CHECK(dvf_loss(a, a).value == 0.0);
    DisplacementFieldD one(d);
    for (std::size_t i = 0; i < d.count(); ++i) one.at(0, i) = 1.0;
    CHECK(dvf_loss(DisplacementFieldD(d), one).value == 1.0);

    const auto b = oracle::random_field<double>(d, rng, 2.0);
    double s = 0;
    for (std::size_t i = 0; i < a.comps.size(); ++i) s += std::pow(a.comps[i] - b.comps[i], 2);
    CHECK(std::abs(dvf_loss(a, b).value - s / 27) < 1e-6);
}

TEST_CASE("total loss") {
    const Dims3 d{4, 4, 4};
    Rng rng(4);
    const auto vgt = oracle::random_volume<double>(d, rng, 0, 1);
    const auto vdef = oracle::random_volume<double>(d, rng, 0, 1);
    const auto ugt = oracle::random_field<double>(d, rng, 1.0);
    const auto upre = oracle::random_field<double>(d, rng, 1.0);
    const DisplacementFieldD* none = nullptr;

    SUBCASE("gamma zero drops the field term") {
        const auto t = total_loss(vgt, vdef, none, upre, LossWeights{0.05, 0.0});
        CHECK(t.terms.dvf == 0.0);
        CHECK(t.terms.total == doctest::Approx(mse_loss(vgt, vdef).value + 0.05 * smooth_loss(upre).value));
    }
    SUBCASE("perfect registration with a constant field is zero") {
        const DisplacementFieldD c(d, 0.7);
        CHECK(total_loss(vgt, vgt, &c, c, LossWeights{0.05, 1.0}).terms.total == 0.0);
    }
    SUBCASE("doubling lambda doubles the smooth contribution") {
        const auto a = total_loss(vgt, vdef, &ugt, upre, LossWeights{0.1, 1.0});
        const auto b = total_loss(vgt, vdef, &ugt, upre, LossWeights{0.2, 1.0});
        CHECK(b.terms.total - a.terms.total == doctest::Approx(0.1 * a.terms.smooth));
        CHECK(a.terms.total == doctest::Approx(a.terms.mse + 0.1 * a.terms.smooth + a.terms.dvf));
    }
    SUBCASE("u_gt presence must agree with gamma") {
        CHECK_THROWS_AS(total_loss(vgt, vdef, &ugt, upre, LossWeights{0.05, 0.0}), Error);
        CHECK_THROWS_AS(total_loss(vgt, vdef, none, upre, LossWeights{0.05, 1.0}), Error);
    }
    SUBCASE("negative weights are rejected") {
        CHECK_THROWS_AS(LossWeights({-1.0, 0.0}).validate(), Error);
    }
}

TEST_CASE("2D losses") {
    Rng rng(5);
    Image2DD a(4, 3), b(4, 3);
    for (auto& x : a.values) x = rng.uniform();
    for (auto& x : b.values) x = rng.uniform();
    double s = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += std::pow(a.values[i] - b.values[i], 2);
    CHECK(image_mse_loss(a, b).value == doctest::Approx(s / 12));
    CHECK(image_mse_loss(a, a).value == 0.0);

    Dvf2DD u(4, 3);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) u.at(1, std::size_t(c + 4 * r)) = r;
    // uz = row: 4*2 vertical pairs of 1 out of 2 * (3*3 + 4*2) pairs
    CHECK(smooth2d_loss(u).value == doctest::Approx(8.0 / 34.0));
}
