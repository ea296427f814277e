#include <bit>
#include <cstring>
#include <fstream>

#include "deformreg/diffnet.hpp"

namespace deformreg {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'R', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    const std::vector<char>& data() const { return buf_; }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(std::vector<char> data, std::string origin) : buf_(std::move(data)), origin_(std::move(origin)) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) fail(ErrorKind::SizeMismatch, origin_ + ": checkpoint is truncated");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::vector<char> buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    const auto& cfg = ck.params.config;
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(cfg.levels));
    for (int width : cfg.widths) w.u32(static_cast<std::uint32_t>(width));
    w.u32(static_cast<std::uint32_t>(cfg.in_channels));
    w.u32(static_cast<std::uint32_t>(cfg.packing));
    w.f64(cfg.leaky_slope);
    w.u64(ck.seed);
    w.u64(ck.epoch);
    w.u64(ck.adam.step);
    w.f64(ck.adam.options.lr);
    w.f64(ck.adam.options.beta1);
    w.f64(ck.adam.options.beta2);
    w.f64(ck.adam.options.epsilon);
    w.u32(static_cast<std::uint32_t>(ck.params.tensors.size()));
    for (const auto& t : ck.params.tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.u32(static_cast<std::uint32_t>(t.in_channels));
        w.u32(static_cast<std::uint32_t>(t.out_channels));
        w.u64(t.values.size());
    }
    const bool has_moments = ck.adam.m.size() == ck.params.tensors.size();
    w.u32(has_moments ? 1u : 0u);
    for (const auto& t : ck.params.tensors)
        for (float v : t.values) w.f32(v);
    if (has_moments) {
        for (const auto& m : ck.adam.m)
            for (float v : m) w.f32(v);
        for (const auto& v2 : ck.adam.v)
            for (float v : v2) w.f32(v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open checkpoint '" + path.string() + "'");
    Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());

    if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
        fail(ErrorKind::Validation, path.string() + ": not a checkpoint file");
    if (r.u32() != kVersion) fail(ErrorKind::Validation, path.string() + ": unsupported checkpoint version");

    Checkpoint ck;
    auto& cfg = ck.params.config;
    cfg.levels = static_cast<int>(r.u32());
    if (cfg.levels < 1 || cfg.levels > 16) fail(ErrorKind::Validation, path.string() + ": implausible level count");
    cfg.widths.clear();
    for (int i = 0; i < cfg.levels; ++i) cfg.widths.push_back(static_cast<int>(r.u32()));
    cfg.in_channels = static_cast<int>(r.u32());
    cfg.packing = static_cast<PackingMode>(r.u32());
    cfg.leaky_slope = r.f64();
    cfg.validate();
    ck.seed = r.u64();
    ck.epoch = r.u64();
    ck.adam.step = r.u64();
    ck.adam.options.lr = r.f64();
    ck.adam.options.beta1 = r.f64();
    ck.adam.options.beta2 = r.f64();
    ck.adam.options.epsilon = r.f64();

    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        ParamTensor<float> t;
        t.name = r.str(r.u32());
        t.in_channels = static_cast<int>(r.u32());
        t.out_channels = static_cast<int>(r.u32());
        t.values.resize(r.u64());
        ck.params.tensors.push_back(std::move(t));
    }
    const bool has_moments = r.u32() != 0;
    for (auto& t : ck.params.tensors)
        for (auto& v : t.values) v = r.f32();
    if (has_moments) {
        for (auto* moments : {&ck.adam.m, &ck.adam.v})
            for (const auto& t : ck.params.tensors) {
                std::vector<float> buf(t.values.size());
                for (auto& v : buf) v = r.f32();
                moments->push_back(std::move(buf));
            }
    }
    if (!r.at_end()) fail(ErrorKind::SizeMismatch, path.string() + ": trailing bytes after checkpoint payload");
    return ck;
}

} // namespace deformreg
