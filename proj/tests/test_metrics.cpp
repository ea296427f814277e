#include <doctest.h>

#include "deformreg/metrics.hpp"
#include "deformreg/phantom.hpp"
#include "oracles.hpp"

using namespace deformreg;

TEST_CASE("mae") {
    Rng rng(1);
    const auto a = oracle::random_volume<float>({4, 4, 4}, rng, -1000, 1000);
    CHECK(mae(a, a) == 0.0);
    auto b = a;
    for (auto& x : b.values) x += 10.0f;
    CHECK(mae(a, b) == doctest::Approx(10.0).epsilon(1e-6));
    for (int k = 0; k < 20; ++k) {
        const auto x = oracle::random_volume<float>({4, 4, 4}, rng, -1000, 1000);
        const auto y = oracle::random_volume<float>({4, 4, 4}, rng, -1000, 1000);
        CHECK(std::abs(mae(x, y) - oracle::mae(x, y)) < 1e-6);
        CHECK(mae(x, y) == mae(y, x));
    }
    CHECK_THROWS_AS(mae(a, VolumeGrid(Dims3{4, 4, 3})), Error);
}

TEST_CASE("masked mae") {
    VolumeGrid a(Dims3{2, 1, 1}), b(Dims3{2, 1, 1});
    a.values = {-1000.0f, 100.0f};
    b.values = {-900.0f, 110.0f};
    const auto mask = body_mask(a);
    CHECK(mask == std::vector<std::uint8_t>{0, 1});
    CHECK(mae_masked(a, b, mask) == doctest::Approx(10.0));
}

TEST_CASE("dsc") {
    const Dims3 d{4, 4, 4};
    LabelVolume a(d), b(d);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                a.at(x, y, z) = z < 2 ? 1 : 0;
                b.at(x, y, z) = z >= 2 ? 1 : 0;
            }
    CHECK(dsc(a, a, Label::Liver) == 1.0);
    CHECK(dsc(a, b, Label::Liver) == 0.0);
    CHECK(dsc(a, b, Label::Stomach) == 1.0);

    SUBCASE("two 4^3 cubes overlapping in a 4x4x2 slab") {
        const Dims3 big{4, 4, 6};
        LabelVolume p(big), q(big);
        for (int z = 0; z < 6; ++z)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) {
                    p.at(x, y, z) = z < 4 ? 1 : 0;
                    q.at(x, y, z) = z >= 2 ? 1 : 0;
                }
        CHECK(dsc(p, q, Label::Liver) == 0.5);
    }
    SUBCASE("brute force, symmetry and bounds on random instances") {
        Rng rng(2);
        for (int k = 0; k < 50; ++k) {
            LabelVolume x(d), y(d);
            for (auto& v : x.labels) v = std::uint8_t(rng.below(3));
            for (auto& v : y.labels) v = std::uint8_t(rng.below(3));
            for (auto organ : {Label::Liver, Label::Stomach}) {
                const double s = dsc(x, y, organ);
                CHECK(std::abs(s - oracle::dsc(x, y, std::uint8_t(organ))) < 1e-6);
                CHECK(s == dsc(y, x, organ));
                CHECK(s >= 0.0);
                CHECK(s <= 1.0);
            }
        }
    }
}

TEST_CASE("evaluate_case") {
    PhantomSpec spec;
    spec.n = 16;
    const auto model = RespiratoryModel::for_grid(16);
    const auto ref = build_reference(spec);
    const auto f = generate_frame(ref, model, 50);
    const auto same = evaluate_case(f.volume, f.labels, f.volume, f.labels);
    CHECK(same.mae_hu == 0.0);
    CHECK(same.dsc_liver == 1.0);
    CHECK(same.dsc_stomach == 1.0);
    const auto init = evaluate_case(f.volume, f.labels, ref.volume, ref.labels);
    CHECK(init.mae_hu > 0.0);
    CHECK(init.dsc_liver < 1.0);
    CHECK(init.dsc_stomach < 1.0);
}

TEST_CASE("summary table") {
    CHECK(mean_sd({1.0, 3.0}).mean == 2.0);
    CHECK(mean_sd({1.0, 3.0}).sd == 1.0);
    const auto s1 = summarize("Initial", {EvalReport{"a", 50, 90.0, 0.8, 0.7}, EvalReport{"b", 50, 88.0, 0.82, 0.72}});
    const auto s2 = summarize("Proposed", {EvalReport{"a", 50, 70.0, 0.9, 0.85}, EvalReport{"b", 50, 68.0, 0.92, 0.87}});
    CHECK(s1.mae_hu.mean == 89.0);
    const auto table = format_table({s1, s2});
    CHECK(table.find("Initial") != std::string::npos);
    CHECK(table.find("Proposed") != std::string::npos);
    CHECK(table.find("MAE") != std::string::npos);
    CHECK(table.find("liver DSC") != std::string::npos);
    CHECK(table.find("stomach DSC") != std::string::npos);
    CHECK(table.find("89.0±1.0") != std::string::npos);
    const auto csv = format_csv({s1, s2});
    CHECK(csv.rfind("method,case,phase,mae_hu,dsc_liver,dsc_stomach", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
