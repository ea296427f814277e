#include <doctest.h>

#include <fstream>
#include <sstream>

#include "deformreg/cli.hpp"
#include "deformreg/projector.hpp"
#include "oracles.hpp"

using namespace deformreg;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "deformreg");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("exit code mapping") {
    CHECK(exit_code_for(ErrorKind::Usage) == 1);
    CHECK(exit_code_for(ErrorKind::Validation) == 2);
    CHECK(exit_code_for(ErrorKind::InvalidDims) == 2);
    CHECK(exit_code_for(ErrorKind::Numerical) == 3);
    CHECK(exit_code_for(ErrorKind::Io) == 4);
    CHECK(exit_code_for(ErrorKind::SizeMismatch) == 4);
}

TEST_CASE("usage errors") {
    CHECK(run({}).code == 1);
    CHECK(run({"nonsense"}).code == 1);
    CHECK(run({"--help"}).code == 0);
    const auto dir = oracle::temp_dir("cli");
    const auto r = run({"register", "--mode", "bogus", "--source", "x.mhd", "--out", (dir / "o").string()});
    CHECK(r.code == 1);
    CHECK(!r.err.empty());
}

TEST_CASE("validation and io errors") {
    const auto dir = oracle::temp_dir("cli");
    const auto bad = run({"phantom", "--size", "20", "--for-training", "--out", (dir / "p").string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("20") != std::string::npos);
    CHECK(run({"drr", (dir / "missing.mhd").string(), "--out", (dir / "d").string()}).code == 4);
}

TEST_CASE("phantom, drr, register and evaluate") {
    const auto dir = oracle::temp_dir("cli");
    const auto ph = dir / "ph";
    REQUIRE(run({"phantom", "--size", "16", "--out", ph.string()}).code == 0);
    for (const char* f : {"frame_t0.mhd", "frame_t50.mhd", "frame_t90_labels.mhd", "frame_t50_u.mhd", "manifest.txt",
                          "resolved_config.ini"})
        CHECK_MESSAGE(fs::exists(ph / f), f);

    SUBCASE("drr output matches the renderer") {
        REQUIRE(run({"drr", (ph / "frame_t50.mhd").string(), "--out", (dir / "d").string()}).code == 0);
        const auto img = load_image(dir / "d" / "frame_t50_drr.mhd");
        CHECK(img == render_drr(load_volume(ph / "frame_t50.mhd")).image);
        CHECK(fs::exists(dir / "d" / "frame_t50_drr.pgm"));
    }
    SUBCASE("direct register writes the result set") {
        const auto o = dir / "reg";
        const auto r = run({"register", "--mode", "direct", "--source", (ph / "frame_t0.mhd").string(), "--target",
                            (ph / "frame_t50.mhd").string(), "--source-labels", (ph / "frame_t0_labels.mhd").string(),
                            "--target-labels", (ph / "frame_t50_labels.mhd").string(), "--steps", "30", "--out",
                            o.string()});
        REQUIRE(r.code == 0);
        for (const char* f : {"v_def.mhd", "u.mhd", "labels_def.mhd", "report_history.csv", "report_summary.txt"})
            CHECK_MESSAGE(fs::exists(o / f), f);
        CHECK(slurp(o / "report_summary.txt").find("mae_final") != std::string::npos);
    }
    SUBCASE("evaluating a volume against itself") {
        const auto o = dir / "ev";
        REQUIRE(run({"evaluate", "--target", (ph / "frame_t50.mhd").string(), "--target-labels",
                     (ph / "frame_t50_labels.mhd").string(), "--moved", (ph / "frame_t50.mhd").string(),
                     "--moved-labels", (ph / "frame_t50_labels.mhd").string(), "--out", o.string()})
                    .code == 0);
        const auto csv = slurp(o / "results.csv");
        CHECK(csv.find(",0,1,1") != std::string::npos);
    }
    SUBCASE("gamma without a ground-truth field is a usage error") {
        CHECK(run({"register", "--mode", "direct", "--source", (ph / "frame_t0.mhd").string(), "--target",
                   (ph / "frame_t50.mhd").string(), "--gamma", "1", "--out", (dir / "g").string()})
                  .code == 1);
    }
}

TEST_CASE("config file values") {
    const auto dir = oracle::temp_dir("cli");
    {
        std::ofstream cfg(dir / "run.ini");
        cfg << "seed = 5\nsize = 8\n";
    }
    REQUIRE(run({"phantom", "--config", (dir / "run.ini").string(), "--out", (dir / "p").string()}).code == 0);
    const auto echo = slurp(dir / "p" / "resolved_config.ini");
    CHECK(echo.find("seed = 5") != std::string::npos);
    CHECK(load_volume(dir / "p" / "frame_t0.mhd").dims == Dims3{8, 8, 8});
}

TEST_CASE("same seed gives identical manifests for any thread count") {
    const auto dir = oracle::temp_dir("cli");
    auto manifest = [&](const std::string& threads) {
        const auto o = dir / ("p" + threads);
        REQUIRE(run({"phantom", "--size", "16", "--seed", "3", "--threads", threads, "--out", o.string()}).code == 0);
        return slurp(o / "manifest.txt");
    };
    const auto a = manifest("1");
    CHECK(!a.empty());
    CHECK(a == manifest("2"));
    CHECK(a == manifest("4"));
}

TEST_CASE("resumed training matches an uninterrupted run") {
    const auto dir = oracle::temp_dir("cli");
    const std::vector<std::string> common{"train", "--size", "8", "--pairs", "3", "--levels", "2", "--widths", "4,4",
                                          "--batch", "2", "--seed", "7", "--lr", "1e-3"};
    auto with = [&](std::vector<std::string> extra) {
        auto args = common;
        args.insert(args.end(), extra.begin(), extra.end());
        return run(args).code;
    };
    REQUIRE(with({"--epochs", "4", "--checkpoint-every", "2", "--out", (dir / "full").string()}) == 0);
    REQUIRE(fs::exists(dir / "full" / "ckpt_e0002.ckpt"));
    REQUIRE(with({"--epochs", "4", "--resume", (dir / "full" / "ckpt_e0002.ckpt").string(), "--out",
                  (dir / "resumed").string()}) == 0);
    CHECK(sha256_file(dir / "full" / "last.ckpt") == sha256_file(dir / "resumed" / "last.ckpt"));
    CHECK(fs::exists(dir / "full" / "model.ckpt"));
    CHECK(fs::exists(dir / "full" / "epoch_loss.csv"));
}

TEST_CASE("sha256 and manifest") {
    const auto dir = oracle::temp_dir("cli");
    {
        std::ofstream f(dir / "abc.txt", std::ios::binary);
        f << "abc";
    }
    CHECK(sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    {
        std::ofstream f(dir / "timing.txt");
        f << "1.0";
    }
    const auto m = build_manifest(dir);
    CHECK(m.find("abc.txt") != std::string::npos);
    CHECK(m.find("timing.txt") == std::string::npos);
}
