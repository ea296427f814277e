#include <cmath>
#include <numeric>

#include "deformreg/diffnet.hpp"
#include "deformreg/rng.hpp"

namespace deformreg {

void UNetConfig::validate() const {
    if (levels < 1) fail(ErrorKind::Validation, "U-Net needs at least one level");
    if (widths.size() != static_cast<std::size_t>(levels))
        fail(ErrorKind::Validation, "U-Net needs one encoder width per level (" + std::to_string(levels) + ")");
    for (int w : widths)
        if (w <= 0) fail(ErrorKind::Validation, "U-Net channel widths must be positive");
    if (in_channels <= 0) fail(ErrorKind::Validation, "U-Net input channel count must be positive");
    if (!(leaky_slope > 0.0)) fail(ErrorKind::Validation, "LeakyReLU slope must be positive");
}

void UNetConfig::validate_input(const Dims3& d) const {
    const int div = 1 << levels;
    if (!d.positive() || d.nx % div || d.ny % div || d.nz % div)
        fail(ErrorKind::InvalidDims, "input dims " + to_string(d) + " must be divisible by 2^" +
                                         std::to_string(levels) + " = " + std::to_string(div));
}

template <class T>
std::size_t UNetParams<T>::count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.values.size();
    return n;
}

template <class T>
std::vector<std::span<T>> UNetParams<T>::spans() {
    std::vector<std::span<T>> out;
    for (auto& t : tensors) out.emplace_back(t.values);
    return out;
}

template <class T>
std::vector<std::span<const T>> UNetParams<T>::spans() const {
    std::vector<std::span<const T>> out;
    for (const auto& t : tensors) out.emplace_back(t.values);
    return out;
}

namespace {

struct LayerShape {
    std::string name;
    int in = 0;
    int out = 0;
};

// Conv layer shapes in declaration order.
std::vector<LayerShape> layer_shapes(const UNetConfig& c) {
    std::vector<LayerShape> shapes;
    const int L = c.levels;
    auto enc_channels = [&](int k) { return k == 0 ? c.in_channels : c.widths[static_cast<std::size_t>(k - 1)]; };
    for (int k = 1; k <= L; ++k) shapes.push_back({"enc" + std::to_string(k), enc_channels(k - 1), enc_channels(k)});
    int d_channels = enc_channels(L);
    for (int k = L; k >= 1; --k) {
        shapes.push_back({"dec" + std::to_string(k), d_channels, c.decoder_width(k)});
        d_channels = c.decoder_width(k) + enc_channels(k - 1);
    }
    shapes.push_back({"flow", d_channels, 3});
    return shapes;
}

template <class T>
struct LayerView {
    std::span<const T> kernel;
    std::span<const T> bias;
    int in;
    int out;
};

template <class T>
LayerView<T> layer(const UNetParams<T>& p, int index) {
    const auto& k = p.tensors[static_cast<std::size_t>(2 * index)];
    const auto& b = p.tensors[static_cast<std::size_t>(2 * index + 1)];
    return {k.values, b.values, k.in_channels, k.out_channels};
}

template <class T>
void check_layout(const UNetParams<T>& p) {
    p.config.validate();
    const auto shapes = layer_shapes(p.config);
    if (p.tensors.size() != 2 * shapes.size())
        fail(ErrorKind::DimsMismatch, "U-Net parameters do not match the configured layer count");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& k = p.tensors[2 * i];
        const auto& b = p.tensors[2 * i + 1];
        if (k.values.size() != static_cast<std::size_t>(shapes[i].in) * shapes[i].out * kKernelVolume ||
            b.values.size() != static_cast<std::size_t>(shapes[i].out))
            fail(ErrorKind::DimsMismatch, "U-Net parameter '" + shapes[i].name + "' has the wrong shape");
    }
}

} // namespace

template <class T>
UNetParams<T> init_unet_params(const UNetConfig& config, std::uint64_t seed, bool zero_flow) {
    config.validate();
    UNetParams<T> p;
    p.config = config;
    Rng rng(derive_seed(seed, 0x11E7));
    const auto shapes = layer_shapes(config);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        const bool is_flow = (i + 1 == shapes.size());
        ParamTensor<T> k{s.name + ".kernel", s.in, s.out,
                         std::vector<T>(static_cast<std::size_t>(s.in) * s.out * kKernelVolume, T(0))};
        if (!(is_flow && zero_flow)) {
            const double bound = std::sqrt(6.0 / (static_cast<double>(s.in) * kKernelVolume));
            for (auto& w : k.values) w = static_cast<T>(rng.uniform(-bound, bound));
        }
        p.tensors.push_back(std::move(k));
        p.tensors.push_back({s.name + ".bias", s.in, s.out, std::vector<T>(static_cast<std::size_t>(s.out), T(0))});
    }
    return p;
}

template <class T>
BasicField<T> unet_forward(const UNetParams<T>& params, const Tensor4<T>& input, UNetCache<T>* cache) {
    check_layout(params);
    const UNetConfig& c = params.config;
    c.validate_input(input.dims);
    if (input.channels != c.in_channels)
        fail(ErrorKind::DimsMismatch, "U-Net input has " + std::to_string(input.channels) + " channels, expected " +
                                          std::to_string(c.in_channels));
    const int L = c.levels;
    const T alpha = static_cast<T>(c.leaky_slope);

    UNetCache<T> local;
    UNetCache<T>& k = cache ? *cache : local;
    k.enc.assign(static_cast<std::size_t>(L + 1), {});
    k.dec_in.assign(static_cast<std::size_t>(L + 1), {});
    k.dec_act.assign(static_cast<std::size_t>(L + 1), {});

    k.enc[0] = input;
    for (int lvl = 1; lvl <= L; ++lvl) {
        const auto lay = layer(params, lvl - 1);
        k.enc[lvl] = leaky_relu(conv3d(k.enc[lvl - 1], lay.kernel, lay.bias, lay.out, 2), alpha);
    }

    Tensor4<T> d = k.enc[L];
    for (int lvl = L; lvl >= 1; --lvl) {
        const auto lay = layer(params, L + (L - lvl));
        k.dec_in[lvl] = std::move(d);
        k.dec_act[lvl] = leaky_relu(conv3d(k.dec_in[lvl], lay.kernel, lay.bias, lay.out, 1), alpha);
        d = concat_channels(upsample3d(k.dec_act[lvl]), k.enc[lvl - 1]);
    }
    k.flow_in = std::move(d);
    const auto flow = layer(params, 2 * L);
    k.output = conv3d(k.flow_in, flow.kernel, flow.bias, 3, 1);
    return field_from_tensor(k.output);
}

template <class T>
std::vector<std::vector<T>> unet_backward(const UNetParams<T>& params, const UNetCache<T>& cache,
                                          const BasicField<T>& grad_u) {
    check_layout(params);
    const UNetConfig& c = params.config;
    const int L = c.levels;
    const T alpha = static_cast<T>(c.leaky_slope);
    std::vector<std::vector<T>> grads(params.tensors.size());

    auto store = [&](int layer_index, ConvGrads<T>& g) {
        grads[static_cast<std::size_t>(2 * layer_index)] = std::move(g.grad_kernel);
        grads[static_cast<std::size_t>(2 * layer_index + 1)] = std::move(g.grad_bias);
    };

    // Gradients w.r.t. encoder outputs E_1..E_L (E_0 is the input and not needed).
    std::vector<Tensor4<T>> g_enc(static_cast<std::size_t>(L + 1));
    auto accumulate = [](Tensor4<T>& into, const Tensor4<T>& g) {
        if (into.values.empty()) {
            into = g;
            return;
        }
        for (std::size_t i = 0; i < g.values.size(); ++i) into.values[i] += g.values[i];
    };

    const auto flow = layer(params, 2 * L);
    auto gflow = conv3d_backward(cache.flow_in, flow.kernel, 3, 1, tensor_from_field(grad_u));
    Tensor4<T> g_d = std::move(gflow.grad_x);
    store(2 * L, gflow);

    for (int lvl = 1; lvl <= L; ++lvl) {
        const int li = L + (L - lvl);
        const auto lay = layer(params, li);
        auto [g_up, g_skip] = concat_backward(g_d, lay.out);
        if (lvl - 1 >= 1) accumulate(g_enc[static_cast<std::size_t>(lvl - 1)], g_skip);
        const Tensor4<T> g_act = upsample3d_backward(g_up);
        const Tensor4<T> g_pre = leaky_relu_backward(cache.dec_act[lvl], g_act, alpha);
        auto gc = conv3d_backward(cache.dec_in[lvl], lay.kernel, lay.out, 1, g_pre);
        store(li, gc);
        if (lvl == L)
            accumulate(g_enc[static_cast<std::size_t>(L)], gc.grad_x);
        else
            g_d = std::move(gc.grad_x);
    }

    for (int lvl = L; lvl >= 1; --lvl) {
        const auto lay = layer(params, lvl - 1);
        const Tensor4<T> g_pre = leaky_relu_backward(cache.enc[lvl], g_enc[static_cast<std::size_t>(lvl)], alpha);
        auto gc = conv3d_backward(cache.enc[lvl - 1], lay.kernel, lay.out, 2, g_pre, lvl > 1);
        store(lvl - 1, gc);
        if (lvl > 1) accumulate(g_enc[static_cast<std::size_t>(lvl - 1)], gc.grad_x);
    }
    return grads;
}

template struct UNetParams<float>;
template struct UNetParams<double>;
template UNetParams<float> init_unet_params(const UNetConfig&, std::uint64_t, bool);
template UNetParams<double> init_unet_params(const UNetConfig&, std::uint64_t, bool);
template BasicField<float> unet_forward(const UNetParams<float>&, const Tensor4<float>&, UNetCache<float>*);
template BasicField<double> unet_forward(const UNetParams<double>&, const Tensor4<double>&, UNetCache<double>*);
template std::vector<std::vector<float>> unet_backward(const UNetParams<float>&, const UNetCache<float>&,
                                                       const BasicField<float>&);
template std::vector<std::vector<double>> unet_backward(const UNetParams<double>&, const UNetCache<double>&,
                                                        const BasicField<double>&);

// ---------------------------------------------------------------------------

template <class T>
AdamState<T> make_adam_state(const std::vector<std::size_t>& sizes, const AdamOptions& options) {
    AdamState<T> s;
    s.options = options;
    for (const auto n : sizes) {
        s.m.emplace_back(n, T(0));
        s.v.emplace_back(n, T(0));
    }
    return s;
}

template <class T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        fail(ErrorKind::DimsMismatch, "adam_step: parameter, gradient and state tensor counts differ");
    for (std::size_t t = 0; t < params.size(); ++t)
        if (params[t].size() != grads[t].size() || params[t].size() != state.m[t].size())
            fail(ErrorKind::DimsMismatch, "adam_step: tensor " + std::to_string(t) + " shape mismatch");

    const AdamOptions& o = state.options;
    ++state.step;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& m = state.m[t];
        auto& v = state.v[t];
        for (std::size_t i = 0; i < params[t].size(); ++i) {
            const double g = static_cast<double>(grads[t][i]);
            const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * g;
            const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = o.lr * (mi / c1) / (std::sqrt(vi / c2) + o.epsilon);
            params[t][i] = static_cast<T>(static_cast<double>(params[t][i]) - update);
        }
    }
}

template AdamState<float> make_adam_state(const std::vector<std::size_t>&, const AdamOptions&);
template AdamState<double> make_adam_state(const std::vector<std::size_t>&, const AdamOptions&);
template void adam_step(const std::vector<std::span<float>>&, const std::vector<std::span<const float>>&,
                        AdamState<float>&);
template void adam_step(const std::vector<std::span<double>>&, const std::vector<std::span<const double>>&,
                        AdamState<double>&);

} // namespace deformreg
