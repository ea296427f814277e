#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deformreg/error.hpp"

namespace deformreg {

// Voxel counts along x, y, z. Storage is x-fastest everywhere in the
// project; index() is the single linearisation helper all modules use.
struct Dims3 {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
    }
    bool positive() const { return nx > 0 && ny > 0 && nz > 0; }
    int extent(int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }

    friend bool operator==(const Dims3&, const Dims3&) = default;
};

std::string to_string(const Dims3& d);

// Millimetres per voxel.
struct Spacing {
    double sx = 1.0;
    double sy = 1.0;
    double sz = 1.0;

    friend bool operator==(const Spacing&, const Spacing&) = default;
};

// Regular 3D scalar grid. VolumeGrid (binary32) is the production type;
// the binary64 instantiation exists for gradient checks.
template <class T>
struct BasicVolume {
    Dims3 dims;
    Spacing spacing;
    std::vector<T> values;

    BasicVolume() = default;
    explicit BasicVolume(Dims3 d, Spacing s = {}, T fill = T(0))
        : dims(d), spacing(s), values(d.count(), fill) {}

    T& at(int x, int y, int z) { return values[dims.index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return values[dims.index(x, y, z)]; }

    // Throws Error{InvalidDims|SizeMismatch|Validation|NonFinite}.
    void validate() const;

    friend bool operator==(const BasicVolume&, const BasicVolume&) = default;
};

using VolumeGrid = BasicVolume<float>;
using VolumeGridD = BasicVolume<double>;

template <class To, class From>
BasicVolume<To> volume_cast(const BasicVolume<From>& v) {
    BasicVolume<To> out;
    out.dims = v.dims;
    out.spacing = v.spacing;
    out.values.assign(v.values.begin(), v.values.end());
    return out;
}

enum class Label : std::uint8_t { Background = 0, Liver = 1, Stomach = 2 };
inline constexpr std::uint8_t kMaxLabel = 2;

struct LabelVolume {
    Dims3 dims;
    std::vector<std::uint8_t> labels;

    LabelVolume() = default;
    explicit LabelVolume(Dims3 d) : dims(d), labels(d.count(), 0) {}

    std::uint8_t& at(int x, int y, int z) { return labels[dims.index(x, y, z)]; }
    std::uint8_t at(int x, int y, int z) const { return labels[dims.index(x, y, z)]; }

    void validate() const;

    friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

// 2D image, column index fastest. A DRR has width nx and height nz.
template <class T>
struct BasicImage {
    int width = 0;
    int height = 0;
    std::vector<T> values;

    BasicImage() = default;
    BasicImage(int w, int h, T fill = T(0))
        : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::size_t index(int col, int row) const {
        return static_cast<std::size_t>(col) + static_cast<std::size_t>(width) * static_cast<std::size_t>(row);
    }
    T& at(int col, int row) { return values[index(col, row)]; }
    const T& at(int col, int row) const { return values[index(col, row)]; }

    friend bool operator==(const BasicImage&, const BasicImage&) = default;
};

using Image2D = BasicImage<float>;
using Image2DD = BasicImage<double>;

// Checks the Image2D contract: size w*h and every value in [0,1].
void validate_unit_image(const Image2D& img);

// ---------------------------------------------------------------------------
// File format: MetaImage-style text header plus raw little-endian payloads.

struct RawHeader {
    Dims3 dims;
    Spacing spacing;
    std::string element_type;             // MET_FLOAT or MET_UCHAR
    std::vector<std::string> data_files;  // relative to the header directory
};

void write_header(const RawHeader& h, const std::filesystem::path& header_path);
RawHeader read_header(const std::filesystem::path& header_path);

// Payload path that save_volume pairs with a header path ("a/b.mhd" -> "a/b.raw").
std::filesystem::path payload_path_for(const std::filesystem::path& header_path);

void write_f32_payload(const std::vector<float>& values, const std::filesystem::path& path);
std::vector<float> read_f32_payload(const std::filesystem::path& path, std::size_t expected_count);

void save_volume(const VolumeGrid& v, const std::filesystem::path& header_path);
VolumeGrid load_volume(const std::filesystem::path& header_path);

void save_labels(const LabelVolume& l, const std::filesystem::path& header_path);
LabelVolume load_labels(const std::filesystem::path& header_path);

// Lossless image export: stored as a width x height x 1 volume.
void save_image(const Image2D& img, const std::filesystem::path& header_path);
Image2D load_image(const std::filesystem::path& header_path);

// Binary 8-bit PGM (P5). Row 0 is written first; pass flip_rows to put the
// highest row (superior, for coronal images) at the top of the picture.
void write_pgm(const Image2D& img, const std::filesystem::path& path, bool flip_rows = true);

// ---------------------------------------------------------------------------

VolumeGrid resample_trilinear(const VolumeGrid& v, Dims3 new_dims);

enum class SliceAxis { Axial, Coronal, Sagittal };

// Axial: fixed z, image (x, y). Coronal: fixed y, image (x, z).
// Sagittal: fixed x, image (y, z). Output is min-max normalised; a constant
// plane maps to all zeros.
Image2D extract_slice(const VolumeGrid& v, SliceAxis axis, int index);

// CT window used for optimisation: [-1000, 1000] HU mapped affinely onto [0, 1].
inline constexpr double kHuWindowLow = -1000.0;
inline constexpr double kHuWindowHigh = 1000.0;

template <class T>
BasicVolume<T> normalize_intensity(const VolumeGrid& hu) {
    BasicVolume<T> out(hu.dims, hu.spacing);
    const double scale = 1.0 / (kHuWindowHigh - kHuWindowLow);
    for (std::size_t i = 0; i < hu.values.size(); ++i)
        out.values[i] = static_cast<T>((static_cast<double>(hu.values[i]) - kHuWindowLow) * scale);
    return out;
}

void require_same_dims(const Dims3& a, const Dims3& b, const char* what);

} // namespace deformreg
