#include "deformreg/volgrid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace deformreg {

namespace fs = std::filesystem;

std::string to_string(const Dims3& d) {
    std::ostringstream os;
    os << d.nx << "x" << d.ny << "x" << d.nz;
    return os.str();
}

void require_same_dims(const Dims3& a, const Dims3& b, const char* what) {
    if (!(a == b))
        fail(ErrorKind::DimsMismatch,
             std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
}

template <class T>
void BasicVolume<T>::validate() const {
    if (!dims.positive()) fail(ErrorKind::InvalidDims, "volume dims must be positive, got " + to_string(dims));
    if (values.size() != dims.count())
        fail(ErrorKind::SizeMismatch, "volume holds " + std::to_string(values.size()) +
                                          " values, dims " + to_string(dims) + " need " +
                                          std::to_string(dims.count()));
    if (!(spacing.sx > 0.0 && spacing.sy > 0.0 && spacing.sz > 0.0))
        fail(ErrorKind::Validation, "volume spacing must be strictly positive");
    for (const T v : values)
        if (!std::isfinite(v)) fail(ErrorKind::NonFinite, "volume contains a non-finite value");
}

template struct BasicVolume<float>;
template struct BasicVolume<double>;

void LabelVolume::validate() const {
    if (!dims.positive()) fail(ErrorKind::InvalidDims, "label dims must be positive, got " + to_string(dims));
    if (labels.size() != dims.count()) fail(ErrorKind::SizeMismatch, "label count does not match dims");
    for (const auto l : labels)
        if (l > kMaxLabel) fail(ErrorKind::Validation, "label value " + std::to_string(l) + " outside label set");
}

void validate_unit_image(const Image2D& img) {
    if (img.width <= 0 || img.height <= 0) fail(ErrorKind::InvalidDims, "image dims must be positive");
    if (img.values.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height))
        fail(ErrorKind::SizeMismatch, "image value count does not match dims");
    for (const float v : img.values) {
        if (!std::isfinite(v)) fail(ErrorKind::NonFinite, "image contains a non-finite value");
        if (v < 0.0f || v > 1.0f) fail(ErrorKind::Validation, "image value outside [0,1]");
    }
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    return out;
}

void finish(std::ofstream& out, const fs::path& path) {
    out.flush();
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

std::vector<unsigned char> read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

void write_header(const RawHeader& h, const fs::path& header_path) {
    auto out = open_out(header_path);
    out << std::setprecision(17);
    out << "NDims = 3\n";
    out << "DimSize = " << h.dims.nx << " " << h.dims.ny << " " << h.dims.nz << "\n";
    out << "ElementSpacing = " << h.spacing.sx << " " << h.spacing.sy << " " << h.spacing.sz << "\n";
    out << "ElementType = " << h.element_type << "\n";
    out << "ByteOrder = LSB\n";
    out << "DataFile =";
    for (const auto& f : h.data_files) out << " " << f;
    out << "\n";
    finish(out, header_path);
}

RawHeader read_header(const fs::path& header_path) {
    std::ifstream in(header_path);
    if (!in) fail(ErrorKind::Io, "cannot open header '" + header_path.string() + "'");

    RawHeader h;
    bool have_dims = false;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        std::istringstream val(trim(line.substr(eq + 1)));
        if (key == "NDims") {
            int nd = 0;
            val >> nd;
            if (nd != 3) fail(ErrorKind::InvalidDims, header_path.string() + ": NDims must be 3");
        } else if (key == "DimSize") {
            if (!(val >> h.dims.nx >> h.dims.ny >> h.dims.nz))
                fail(ErrorKind::InvalidDims, header_path.string() + ": malformed DimSize");
            have_dims = true;
        } else if (key == "ElementSpacing") {
            if (!(val >> h.spacing.sx >> h.spacing.sy >> h.spacing.sz))
                fail(ErrorKind::Validation, header_path.string() + ": malformed ElementSpacing");
        } else if (key == "ElementType") {
            val >> h.element_type;
        } else if (key == "ByteOrder") {
            std::string order;
            val >> order;
            if (order != "LSB") fail(ErrorKind::Validation, header_path.string() + ": only LSB byte order is supported");
        } else if (key == "DataFile") {
            std::string f;
            while (val >> f) h.data_files.push_back(f);
        }
    }
    if (!have_dims) fail(ErrorKind::InvalidDims, header_path.string() + ": missing DimSize");
    if (!h.dims.positive())
        fail(ErrorKind::InvalidDims, header_path.string() + ": dims must be positive, got " + to_string(h.dims));
    if (!(h.spacing.sx > 0.0 && h.spacing.sy > 0.0 && h.spacing.sz > 0.0))
        fail(ErrorKind::Validation, header_path.string() + ": spacing must be strictly positive");
    if (h.data_files.empty()) fail(ErrorKind::Validation, header_path.string() + ": missing DataFile");
    return h;
}

fs::path payload_path_for(const fs::path& header_path) {
    auto p = header_path;
    p.replace_extension(".raw");
    return p;
}

void write_f32_payload(const std::vector<float>& values, const fs::path& path) {
    std::vector<unsigned char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        bytes[4 * i + 0] = static_cast<unsigned char>(bits & 0xFFu);
        bytes[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xFFu);
        bytes[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xFFu);
        bytes[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xFFu);
    }
    auto out = open_out(path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    finish(out, path);
}

std::vector<float> read_f32_payload(const fs::path& path, std::size_t expected_count) {
    const auto bytes = read_all(path);
    if (bytes.size() != expected_count * 4)
        fail(ErrorKind::SizeMismatch, "'" + path.string() + "' holds " + std::to_string(bytes.size()) +
                                          " bytes, expected " + std::to_string(expected_count * 4));
    std::vector<float> values(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                                   (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
        values[i] = std::bit_cast<float>(bits);
        if (!std::isfinite(values[i]))
            fail(ErrorKind::NonFinite, "'" + path.string() + "' contains a non-finite value at index " +
                                           std::to_string(i));
    }
    return values;
}

void save_volume(const VolumeGrid& v, const fs::path& header_path) {
    v.validate();
    const auto payload = payload_path_for(header_path);
    write_header({v.dims, v.spacing, "MET_FLOAT", {payload.filename().string()}}, header_path);
    write_f32_payload(v.values, payload);
}

VolumeGrid load_volume(const fs::path& header_path) {
    const RawHeader h = read_header(header_path);
    if (h.element_type != "MET_FLOAT")
        fail(ErrorKind::Validation, header_path.string() + ": expected MET_FLOAT, got " + h.element_type);
    if (h.data_files.size() != 1)
        fail(ErrorKind::Validation, header_path.string() + ": expected exactly one DataFile");
    VolumeGrid v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    v.values = read_f32_payload(header_path.parent_path() / h.data_files.front(), h.dims.count());
    return v;
}

void save_labels(const LabelVolume& l, const fs::path& header_path) {
    l.validate();
    const auto payload = payload_path_for(header_path);
    write_header({l.dims, {}, "MET_UCHAR", {payload.filename().string()}}, header_path);
    auto out = open_out(payload);
    out.write(reinterpret_cast<const char*>(l.labels.data()), static_cast<std::streamsize>(l.labels.size()));
    finish(out, payload);
}

LabelVolume load_labels(const fs::path& header_path) {
    const RawHeader h = read_header(header_path);
    if (h.element_type != "MET_UCHAR")
        fail(ErrorKind::Validation, header_path.string() + ": expected MET_UCHAR, got " + h.element_type);
    const auto bytes = read_all(header_path.parent_path() / h.data_files.front());
    if (bytes.size() != h.dims.count()) fail(ErrorKind::SizeMismatch, header_path.string() + ": label payload size mismatch");
    LabelVolume l(h.dims);
    l.labels.assign(bytes.begin(), bytes.end());
    l.validate();
    return l;
}

void save_image(const Image2D& img, const fs::path& header_path) {
    validate_unit_image(img);
    VolumeGrid v(Dims3{img.width, img.height, 1});
    v.values = img.values;
    save_volume(v, header_path);
}

Image2D load_image(const fs::path& header_path) {
    const VolumeGrid v = load_volume(header_path);
    if (v.dims.nz != 1) fail(ErrorKind::InvalidDims, header_path.string() + ": image must have DimSize z = 1");
    Image2D img(v.dims.nx, v.dims.ny);
    img.values = v.values;
    validate_unit_image(img);
    return img;
}

void write_pgm(const Image2D& img, const fs::path& path, bool flip_rows) {
    auto out = open_out(path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width));
    for (int r = 0; r < img.height; ++r) {
        const int src = flip_rows ? img.height - 1 - r : r;
        for (int c = 0; c < img.width; ++c) {
            const double v = std::clamp(static_cast<double>(img.at(c, src)), 0.0, 1.0);
            row[static_cast<std::size_t>(c)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    finish(out, path);
}

// ---------------------------------------------------------------------------

namespace {

struct AxisMap {
    std::vector<int> lo;
    std::vector<double> frac;
};

// Corner-aligned mapping of new indices onto old ones.
AxisMap make_axis_map(int n_old, int n_new) {
    AxisMap m;
    m.lo.resize(static_cast<std::size_t>(n_new));
    m.frac.resize(static_cast<std::size_t>(n_new));
    const double scale = (n_new > 1) ? static_cast<double>(n_old - 1) / static_cast<double>(n_new - 1) : 0.0;
    for (int i = 0; i < n_new; ++i) {
        const double pos = static_cast<double>(i) * scale;
        int lo = static_cast<int>(std::floor(pos));
        lo = std::clamp(lo, 0, std::max(0, n_old - 2));
        m.lo[static_cast<std::size_t>(i)] = lo;
        m.frac[static_cast<std::size_t>(i)] = (n_old > 1) ? pos - lo : 0.0;
    }
    return m;
}

double rescale_spacing(double s, int n_old, int n_new) {
    if (n_old > 1 && n_new > 1) return s * static_cast<double>(n_old - 1) / static_cast<double>(n_new - 1);
    return s * static_cast<double>(n_old) / static_cast<double>(n_new);
}

} // namespace

VolumeGrid resample_trilinear(const VolumeGrid& v, Dims3 new_dims) {
    if (!new_dims.positive()) fail(ErrorKind::InvalidDims, "resample target dims must be positive");
    v.validate();
    if (new_dims == v.dims) return v;

    const Dims3 d = v.dims;
    const AxisMap mx = make_axis_map(d.nx, new_dims.nx);
    const AxisMap my = make_axis_map(d.ny, new_dims.ny);
    const AxisMap mz = make_axis_map(d.nz, new_dims.nz);
    const Spacing s{rescale_spacing(v.spacing.sx, d.nx, new_dims.nx),
                    rescale_spacing(v.spacing.sy, d.ny, new_dims.ny),
                    rescale_spacing(v.spacing.sz, d.nz, new_dims.nz)};
    VolumeGrid out(new_dims, s);

    auto sample = [&](int x, int y, int z) { return static_cast<double>(v.at(x, y, z)); };
    for (int z = 0; z < new_dims.nz; ++z) {
        const int z0 = mz.lo[z], z1 = std::min(z0 + 1, d.nz - 1);
        const double fz = mz.frac[z];
        for (int y = 0; y < new_dims.ny; ++y) {
            const int y0 = my.lo[y], y1 = std::min(y0 + 1, d.ny - 1);
            const double fy = my.frac[y];
            for (int x = 0; x < new_dims.nx; ++x) {
                const int x0 = mx.lo[x], x1 = std::min(x0 + 1, d.nx - 1);
                const double fx = mx.frac[x];
                const double c00 = sample(x0, y0, z0) * (1 - fx) + sample(x1, y0, z0) * fx;
                const double c10 = sample(x0, y1, z0) * (1 - fx) + sample(x1, y1, z0) * fx;
                const double c01 = sample(x0, y0, z1) * (1 - fx) + sample(x1, y0, z1) * fx;
                const double c11 = sample(x0, y1, z1) * (1 - fx) + sample(x1, y1, z1) * fx;
                const double c0 = c00 * (1 - fy) + c10 * fy;
                const double c1 = c01 * (1 - fy) + c11 * fy;
                out.at(x, y, z) = static_cast<float>(c0 * (1 - fz) + c1 * fz);
            }
        }
    }
    return out;
}

Image2D extract_slice(const VolumeGrid& v, SliceAxis axis, int index) {
    const Dims3 d = v.dims;
    const int extent = axis == SliceAxis::Axial ? d.nz : (axis == SliceAxis::Coronal ? d.ny : d.nx);
    if (index < 0 || index >= extent)
        fail(ErrorKind::Validation, "slice index " + std::to_string(index) + " outside [0," +
                                        std::to_string(extent) + ")");

    Image2D img;
    switch (axis) {
    case SliceAxis::Axial:
        img = Image2D(d.nx, d.ny);
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) img.at(x, y) = v.at(x, y, index);
        break;
    case SliceAxis::Coronal:
        img = Image2D(d.nx, d.nz);
        for (int z = 0; z < d.nz; ++z)
            for (int x = 0; x < d.nx; ++x) img.at(x, z) = v.at(x, index, z);
        break;
    case SliceAxis::Sagittal:
        img = Image2D(d.ny, d.nz);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y) img.at(y, z) = v.at(index, y, z);
        break;
    }

    const auto [lo_it, hi_it] = std::minmax_element(img.values.begin(), img.values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {
        std::fill(img.values.begin(), img.values.end(), 0.0f);
        return img;
    }
    for (auto& val : img.values)
        val = std::clamp(static_cast<float>((static_cast<double>(val) - lo) / (hi - lo)), 0.0f, 1.0f);
    return img;
}

} // namespace deformreg
