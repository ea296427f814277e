#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deformreg/volgrid.hpp"
#include "deformreg/warpfield.hpp"

namespace deformreg {

// Channel-major activations: each channel is an x-fastest block over dims.
template <class T>
struct Tensor4 {
    int channels = 0;
    Dims3 dims;
    std::vector<T> values;

    Tensor4() = default;
    Tensor4(int c, Dims3 d, T fill = T(0)) : channels(c), dims(d), values(static_cast<std::size_t>(c) * d.count(), fill) {}

    std::size_t plane() const { return dims.count(); }
    T* channel(int c) { return values.data() + static_cast<std::size_t>(c) * plane(); }
    const T* channel(int c) const { return values.data() + static_cast<std::size_t>(c) * plane(); }
    T& at(int c, int x, int y, int z) { return channel(c)[dims.index(x, y, z)]; }
    const T& at(int c, int x, int y, int z) const { return channel(c)[dims.index(x, y, z)]; }

    friend bool operator==(const Tensor4&, const Tensor4&) = default;
};

// Throws Error{Numerical} if any value is NaN/Inf. Called after every op in
// debug builds.
template <class T>
void check_finite(const Tensor4<T>& t, const char* where);

// ---------------------------------------------------------------------------
// Operators. Kernels are 3x3x3 with zero padding 1, laid out
// [out][in][kz][ky][kx].

inline constexpr int kKernelVolume = 27;

template <class T>
Tensor4<T> conv3d(const Tensor4<T>& x, std::span<const T> kernel, std::span<const T> bias, int out_channels,
                  int stride);

template <class T>
struct ConvGrads {
    Tensor4<T> grad_x;  // empty when not requested
    std::vector<T> grad_kernel;
    std::vector<T> grad_bias;
};

template <class T>
ConvGrads<T> conv3d_backward(const Tensor4<T>& x, std::span<const T> kernel, int out_channels, int stride,
                             const Tensor4<T>& grad_out, bool want_grad_x = true);

inline constexpr double kLeakySlope = 0.2;

template <class T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T alpha = T(kLeakySlope));

// `ref` is either the op's input or its output: both have the same sign
// pattern for alpha > 0. At zero the slope alpha is used.
template <class T>
Tensor4<T> leaky_relu_backward(const Tensor4<T>& ref, const Tensor4<T>& grad_out, T alpha = T(kLeakySlope));

// Nearest neighbour x2 along each spatial axis.
template <class T>
Tensor4<T> upsample3d(const Tensor4<T>& x);

template <class T>
Tensor4<T> upsample3d_backward(const Tensor4<T>& grad_out);

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b);

// Splits a gradient of concat(a, b) back into (grad_a, grad_b).
template <class T>
std::pair<Tensor4<T>, Tensor4<T>> concat_backward(const Tensor4<T>& grad_out, int channels_a);

// How the two DRRs populate the second input channel.
enum class PackingMode {
    ExtremePlanes,  // I_s into plane y = 0, I_t into plane y = ny - 1
    SplitHalves,    // I_s replicated over y < ny/2, I_t over the rest
};

// Channel 0: the source volume mapped through the CT window onto [0,1].
// Channel 1: zeros except the DRR planes chosen by `mode`.
template <class T>
Tensor4<T> pack_input(const VolumeGrid& v_s, const Image2D& i_s, const Image2D& i_t,
                      PackingMode mode = PackingMode::ExtremePlanes);

template <class T>
BasicField<T> field_from_tensor(const Tensor4<T>& t);

template <class T>
Tensor4<T> tensor_from_field(const BasicField<T>& u);

// ---------------------------------------------------------------------------
// 3D U-Net displacement generator.
//
// Encoder level k (1..L): stride-2 conv + LeakyReLU, widths[k-1] channels.
// Decoder level k (L..1): stride-1 conv + LeakyReLU + x2 upsample, then
// concatenation with the encoder features of the same resolution (the raw
// input at k = 1). A final linear conv produces the 3-channel field.

struct UNetConfig {
    int levels = 3;
    std::vector<int> widths{16, 32, 32};
    double leaky_slope = kLeakySlope;
    int in_channels = 2;
    PackingMode packing = PackingMode::ExtremePlanes;

    void validate() const;
    void validate_input(const Dims3& d) const;
    int decoder_width(int level) const { return widths[static_cast<std::size_t>(level - 1)]; }
};

template <class T>
struct ParamTensor {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<T> values;
};

// Conv layers in declaration order: enc1..encL, decL..dec1, flow; each
// contributes a kernel tensor followed by a bias tensor.
template <class T>
struct UNetParams {
    UNetConfig config;
    std::vector<ParamTensor<T>> tensors;

    std::size_t count() const;
    std::vector<std::span<T>> spans();
    std::vector<std::span<const T>> spans() const;

    friend bool operator==(const UNetParams& a, const UNetParams& b) {
        if (a.tensors.size() != b.tensors.size()) return false;
        for (std::size_t i = 0; i < a.tensors.size(); ++i)
            if (a.tensors[i].values != b.tensors[i].values) return false;
        return true;
    }
};

// Seeded uniform He init (bound sqrt(6 / fan_in)), zero biases. The flow
// layer is zeroed when zero_flow is set so training starts at identity.
template <class T>
UNetParams<T> init_unet_params(const UNetConfig& config, std::uint64_t seed, bool zero_flow = true);

template <class To, class From>
UNetParams<To> params_cast(const UNetParams<From>& p) {
    UNetParams<To> out;
    out.config = p.config;
    for (const auto& t : p.tensors)
        out.tensors.push_back({t.name, t.in_channels, t.out_channels, std::vector<To>(t.values.begin(), t.values.end())});
    return out;
}

template <class T>
struct UNetCache {
    std::vector<Tensor4<T>> enc;     // E_0 (input) .. E_L, post-activation
    std::vector<Tensor4<T>> dec_in;  // decoder conv inputs, index k = 1..L (slot 0 unused)
    std::vector<Tensor4<T>> dec_act; // decoder conv outputs after LeakyReLU
    Tensor4<T> flow_in;
    Tensor4<T> output;
};

template <class T>
BasicField<T> unet_forward(const UNetParams<T>& params, const Tensor4<T>& input, UNetCache<T>* cache = nullptr);

// Gradients for every tensor of params, same order and shapes.
template <class T>
std::vector<std::vector<T>> unet_backward(const UNetParams<T>& params, const UNetCache<T>& cache,
                                          const BasicField<T>& grad_u);

// ---------------------------------------------------------------------------

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

template <class T>
struct AdamState {
    AdamOptions options;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <class T>
AdamState<T> make_adam_state(const std::vector<std::size_t>& sizes, const AdamOptions& options);

// One bias-corrected Adam update of every parameter tensor.
template <class T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state);

// ---------------------------------------------------------------------------
// Binary checkpoint: fixed little-endian header (config, seed, epoch, Adam
// step and hyper-parameters, tensor table) followed by binary32 payloads of
// the parameters, then the Adam first and second moments, each in
// declaration order.

struct Checkpoint {
    UNetParams<float> params;
    AdamState<float> adam;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace deformreg
