#include <doctest.h>

#include <cstring>
#include <fstream>

#include "deformreg/error.hpp"
#include "deformreg/volgrid.hpp"
#include "oracles.hpp"

using namespace deformreg;
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class F>
ErrorKind kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::Validation;
}

} // namespace

TEST_CASE("zero volume writes a zero payload of the right length") {
    const auto dir = oracle::temp_dir("vg");
    VolumeGrid v(Dims3{2, 2, 2});
    save_volume(v, dir / "z.mhd");
    const auto bytes = read_bytes(dir / "z.raw");
    REQUIRE(bytes.size() == 32);
    for (auto b : bytes) CHECK(b == 0);
}

TEST_CASE("payload is little-endian binary32") {
    const auto dir = oracle::temp_dir("vg");
    VolumeGrid v(Dims3{2, 1, 1});
    v.values = {1.0f, -2.5f};
    save_volume(v, dir / "e.mhd");
    const auto bytes = read_bytes(dir / "e.raw");
    REQUIRE(bytes.size() == 8);
    const std::vector<unsigned char> expect{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x20, 0xC0};
    CHECK(bytes == expect);
}

TEST_CASE("save/load round trip is bitwise") {
    const auto dir = oracle::temp_dir("vg");
    Rng rng(7);
    for (int k = 0; k < 5; ++k) {
        const Dims3 d{1 + int(rng.below(6)), 1 + int(rng.below(6)), 1 + int(rng.below(6))};
        auto v = oracle::random_volume<float>(d, rng, -1000, 2000);
        v.spacing = {rng.uniform(0.1, 3), rng.uniform(0.1, 3), 2.5};
        v.values[0] = -0.0f;
        save_volume(v, dir / "rt.mhd");
        const VolumeGrid back = load_volume(dir / "rt.mhd");
        CHECK(back.dims == v.dims);
        CHECK(back.spacing == v.spacing);
        REQUIRE(back.values.size() == v.values.size());
        CHECK(std::memcmp(back.values.data(), v.values.data(), v.values.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("header carries the declared keys") {
    const auto dir = oracle::temp_dir("vg");
    save_volume(VolumeGrid(Dims3{3, 4, 5}), dir / "h.mhd");
    std::ifstream in(dir / "h.mhd");
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    for (const char* key : {"NDims", "DimSize = 3 4 5", "ElementSpacing", "ElementType = MET_FLOAT", "ByteOrder = LSB",
                            "DataFile = h.raw"})
        CHECK_MESSAGE(text.find(key) != std::string::npos, key);
}

TEST_CASE("load errors are distinguished") {
    const auto dir = oracle::temp_dir("vg");
    CHECK(kind_of([&] { load_volume(dir / "missing.mhd"); }) == ErrorKind::Io);

    VolumeGrid v(Dims3{4, 4, 4}, {}, 1.0f);
    save_volume(v, dir / "t.mhd");
    fs::resize_file(dir / "t.raw", 4 * 64 - 4);
    CHECK(kind_of([&] { load_volume(dir / "t.mhd"); }) == ErrorKind::SizeMismatch);

    {
        std::ofstream h(dir / "zero.mhd");
        h << "NDims = 3\nDimSize = 0 4 4\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nByteOrder = LSB\n"
             "DataFile = t.raw\n";
    }
    CHECK(kind_of([&] { load_volume(dir / "zero.mhd"); }) == ErrorKind::InvalidDims);

    v.values[3] = std::numeric_limits<float>::quiet_NaN();
    write_f32_payload(v.values, dir / "nan.raw");
    {
        std::ofstream h(dir / "nan.mhd");
        h << "NDims = 3\nDimSize = 4 4 4\nElementSpacing = 1 1 1\nElementType = MET_FLOAT\nByteOrder = LSB\n"
             "DataFile = nan.raw\n";
    }
    CHECK(kind_of([&] { load_volume(dir / "nan.mhd"); }) == ErrorKind::NonFinite);
}

TEST_CASE("validate enforces the grid invariants") {
    VolumeGrid v(Dims3{2, 2, 2});
    CHECK_NOTHROW(v.validate());
    v.values.pop_back();
    CHECK(kind_of([&] { v.validate(); }) == ErrorKind::SizeMismatch);
    VolumeGrid s(Dims3{2, 2, 2}, Spacing{1, 0, 1});
    CHECK(kind_of([&] { s.validate(); }) == ErrorKind::Validation);

    LabelVolume l(Dims3{2, 2, 2});
    l.labels[0] = 3;
    CHECK(kind_of([&] { l.validate(); }) == ErrorKind::Validation);

    Image2D img(2, 2);
    img.values[1] = 1.5f;
    CHECK(kind_of([&] { validate_unit_image(img); }) == ErrorKind::Validation);
}

TEST_CASE("labels and images round trip") {
    const auto dir = oracle::temp_dir("vg");
    Rng rng(3);
    LabelVolume l(Dims3{3, 4, 5});
    for (auto& x : l.labels) x = static_cast<std::uint8_t>(rng.below(3));
    save_labels(l, dir / "l.mhd");
    CHECK(load_labels(dir / "l.mhd") == l);

    Image2D img(5, 3);
    for (auto& x : img.values) x = static_cast<float>(rng.uniform());
    save_image(img, dir / "i.mhd");
    CHECK(load_image(dir / "i.mhd") == img);
}

TEST_CASE("resample_trilinear") {
    Rng rng(11);
    SUBCASE("same dims is the identity") {
        const auto v = oracle::random_volume<float>({4, 5, 6}, rng, -1, 1);
        CHECK(resample_trilinear(v, v.dims).values == v.values);
    }
    SUBCASE("constant stays constant") {
        const VolumeGrid v(Dims3{4, 4, 4}, {}, 42.0f);
        for (float x : resample_trilinear(v, {7, 3, 9}).values) CHECK(x == doctest::Approx(42.0f));
    }
    SUBCASE("affine functions are reproduced") {
        const Dims3 d{5, 4, 6}, nd{9, 7, 11};
        VolumeGrid v(d);
        auto f = [](double x, double y, double z) { return 3.0 + 2.0 * x - 1.5 * y + 0.25 * z; };
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) v.at(x, y, z) = static_cast<float>(f(x, y, z));
        const auto r = resample_trilinear(v, nd);
        for (int z = 0; z < nd.nz; ++z)
            for (int y = 0; y < nd.ny; ++y)
                for (int x = 0; x < nd.nx; ++x) {
                    const double ox = x * double(d.nx - 1) / (nd.nx - 1), oy = y * double(d.ny - 1) / (nd.ny - 1),
                                 oz = z * double(d.nz - 1) / (nd.nz - 1);
                    CHECK(r.at(x, y, z) == doctest::Approx(f(ox, oy, oz)).epsilon(1e-5).scale(1.0));
                }
    }
    SUBCASE("ramp doubled has half the step") {
        VolumeGrid v(Dims3{5, 1, 1});
        for (int x = 0; x < 5; ++x) v.at(x, 0, 0) = float(x);
        const auto r = resample_trilinear(v, {9, 1, 1});
        for (int x = 0; x < 9; ++x) CHECK(r.at(x, 0, 0) == doctest::Approx(0.5 * x));
    }
}

TEST_CASE("extract_slice") {
    SUBCASE("constant plane maps to zeros") {
        const VolumeGrid v(Dims3{3, 3, 3}, {}, 5.0f);
        for (auto axis : {SliceAxis::Axial, SliceAxis::Coronal, SliceAxis::Sagittal})
            for (float x : extract_slice(v, axis, 1).values) CHECK(x == 0.0f);
    }
    SUBCASE("axial index selects the z plane") {
        VolumeGrid v(Dims3{2, 2, 2});
        for (std::size_t i = 0; i < 8; ++i) v.values[i] = float(i);
        const auto s = extract_slice(v, SliceAxis::Axial, 1);
        REQUIRE(s.width == 2);
        REQUIRE(s.height == 2);
        // voxels 4..7 normalised by their own min/max
        CHECK(s.at(0, 0) == 0.0f);
        CHECK(s.at(1, 0) == doctest::Approx(1.0 / 3));
        CHECK(s.at(0, 1) == doctest::Approx(2.0 / 3));
        CHECK(s.at(1, 1) == 1.0f);
    }
    SUBCASE("ramp slices are normalised ramps in [0,1]") {
        VolumeGrid v(Dims3{5, 4, 3});
        for (int z = 0; z < 3; ++z)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 5; ++x) v.at(x, y, z) = float(10 * x + 100 * z + y);
        const auto c = extract_slice(v, SliceAxis::Coronal, 2);
        CHECK(c.width == 5);
        CHECK(c.height == 3);
        const double lo = 2, hi = 40 + 200 + 2;
        for (int z = 0; z < 3; ++z)
            for (int x = 0; x < 5; ++x) CHECK(c.at(x, z) == doctest::Approx((10 * x + 100 * z + 2 - lo) / (hi - lo)));
        const auto sg = extract_slice(v, SliceAxis::Sagittal, 0);
        CHECK(sg.width == 4);
        CHECK(sg.height == 3);
        for (float x : sg.values) {
            CHECK(x >= 0.0f);
            CHECK(x <= 1.0f);
        }
    }
    SUBCASE("out-of-range index is rejected") {
        const VolumeGrid v(Dims3{2, 2, 2});
        CHECK(kind_of([&] { extract_slice(v, SliceAxis::Axial, 2); }) == ErrorKind::Validation);
        CHECK(kind_of([&] { extract_slice(v, SliceAxis::Sagittal, -1); }) == ErrorKind::Validation);
    }
}

TEST_CASE("PGM export is P5 with one byte per pixel") {
    const auto dir = oracle::temp_dir("vg");
    Image2D img(3, 2);
    img.values = {0, 0.5f, 1, 1, 0.5f, 0};
    write_pgm(img, dir / "a.pgm", false);
    const auto bytes = read_bytes(dir / "a.pgm");
    const std::string head = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == head.size() + 6);
    CHECK(std::string(bytes.begin(), bytes.begin() + long(head.size())) == head);
    CHECK(bytes[head.size()] == 0);
    CHECK(bytes[head.size() + 2] == 255);
}
