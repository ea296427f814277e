#include <algorithm>
#include <cmath>

#include "deformreg/diffnet.hpp"
#include "deformreg/parallel.hpp"

namespace deformreg {

template <class T>
void check_finite(const Tensor4<T>& t, const char* where) {
    for (const T v : t.values)
        if (!std::isfinite(v)) fail(ErrorKind::Numerical, std::string("non-finite activation after ") + where);
}

#ifndef NDEBUG
#define DEFORMREG_NAN_GUARD(t, where) check_finite(t, where)
#else
#define DEFORMREG_NAN_GUARD(t, where) ((void)0)
#endif

namespace {

Dims3 conv_output_dims(const Dims3& in, int stride) {
    if (stride == 1) return in;
    if (stride != 2) fail(ErrorKind::Usage, "conv3d stride must be 1 or 2");
    if (in.nx % 2 || in.ny % 2 || in.nz % 2)
        fail(ErrorKind::InvalidDims, "conv3d stride 2 needs even dims, got " + to_string(in));
    return {in.nx / 2, in.ny / 2, in.nz / 2};
}

// Output index range [lo, hi) along one axis for kernel tap k.
inline void tap_range(int k, int stride, int in_n, int out_n, int& lo, int& hi) {
    lo = (k == 0) ? 1 : 0;
    hi = std::min(out_n, (in_n - k) / stride + 1);
}

} // namespace

template <class T>
Tensor4<T> conv3d(const Tensor4<T>& x, std::span<const T> kernel, std::span<const T> bias, int out_channels,
                  int stride) {
    const int in_ch = x.channels;
    if (kernel.size() != static_cast<std::size_t>(out_channels) * in_ch * kKernelVolume)
        fail(ErrorKind::DimsMismatch, "conv3d: kernel size does not match channel counts");
    if (bias.size() != static_cast<std::size_t>(out_channels))
        fail(ErrorKind::DimsMismatch, "conv3d: bias size does not match output channels");
    const Dims3 in = x.dims;
    const Dims3 od = conv_output_dims(in, stride);
    Tensor4<T> out(out_channels, od);

    parallel_for(0, out_channels, [&](std::ptrdiff_t co) {
        T* o = out.channel(static_cast<int>(co));
        std::fill(o, o + out.plane(), bias[static_cast<std::size_t>(co)]);
        for (int ci = 0; ci < in_ch; ++ci) {
            const T* xi = x.channel(ci);
            const T* w = kernel.data() + (static_cast<std::size_t>(co) * in_ch + ci) * kKernelVolume;
            for (int kz = 0; kz < 3; ++kz) {
                int z_lo, z_hi;
                tap_range(kz, stride, in.nz, od.nz, z_lo, z_hi);
                for (int ky = 0; ky < 3; ++ky) {
                    int y_lo, y_hi;
                    tap_range(ky, stride, in.ny, od.ny, y_lo, y_hi);
                    for (int kx = 0; kx < 3; ++kx) {
                        const T wv = w[(kz * 3 + ky) * 3 + kx];
                        if (wv == T(0)) continue;
                        int x_lo, x_hi;
                        tap_range(kx, stride, in.nx, od.nx, x_lo, x_hi);
                        for (int oz = z_lo; oz < z_hi; ++oz) {
                            const int iz = stride * oz + kz - 1;
                            for (int oy = y_lo; oy < y_hi; ++oy) {
                                const int iy = stride * oy + ky - 1;
                                T* orow = o + od.index(0, oy, oz);
                                const T* irow = xi + in.index(0, iy, iz);
                                if (stride == 1) {
                                    const T* src = irow + (kx - 1);
                                    for (int ox = x_lo; ox < x_hi; ++ox) orow[ox] += wv * src[ox];
                                } else {
                                    for (int ox = x_lo; ox < x_hi; ++ox) orow[ox] += wv * irow[2 * ox + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    DEFORMREG_NAN_GUARD(out, "conv3d");
    return out;
}

template <class T>
ConvGrads<T> conv3d_backward(const Tensor4<T>& x, std::span<const T> kernel, int out_channels, int stride,
                             const Tensor4<T>& grad_out, bool want_grad_x) {
    const int in_ch = x.channels;
    const Dims3 in = x.dims;
    const Dims3 od = conv_output_dims(in, stride);
    if (grad_out.channels != out_channels || !(grad_out.dims == od))
        fail(ErrorKind::DimsMismatch, "conv3d_backward: grad_out shape does not match the forward output");
    if (kernel.size() != static_cast<std::size_t>(out_channels) * in_ch * kKernelVolume)
        fail(ErrorKind::DimsMismatch, "conv3d_backward: kernel size does not match channel counts");

    ConvGrads<T> g;
    g.grad_kernel.assign(kernel.size(), T(0));
    g.grad_bias.assign(static_cast<std::size_t>(out_channels), T(0));

    parallel_for(0, out_channels, [&](std::ptrdiff_t co) {
        const T* go = grad_out.channel(static_cast<int>(co));
        T bsum = T(0);
        for (std::size_t i = 0; i < grad_out.plane(); ++i) bsum += go[i];
        g.grad_bias[static_cast<std::size_t>(co)] = bsum;
        for (int ci = 0; ci < in_ch; ++ci) {
            const T* xi = x.channel(ci);
            T* gw = g.grad_kernel.data() + (static_cast<std::size_t>(co) * in_ch + ci) * kKernelVolume;
            for (int kz = 0; kz < 3; ++kz) {
                int z_lo, z_hi;
                tap_range(kz, stride, in.nz, od.nz, z_lo, z_hi);
                for (int ky = 0; ky < 3; ++ky) {
                    int y_lo, y_hi;
                    tap_range(ky, stride, in.ny, od.ny, y_lo, y_hi);
                    for (int kx = 0; kx < 3; ++kx) {
                        int x_lo, x_hi;
                        tap_range(kx, stride, in.nx, od.nx, x_lo, x_hi);
                        T acc = T(0);
                        for (int oz = z_lo; oz < z_hi; ++oz) {
                            const int iz = stride * oz + kz - 1;
                            for (int oy = y_lo; oy < y_hi; ++oy) {
                                const int iy = stride * oy + ky - 1;
                                const T* grow = go + od.index(0, oy, oz);
                                const T* irow = xi + in.index(0, iy, iz);
                                T row = T(0);
                                if (stride == 1) {
                                    const T* src = irow + (kx - 1);
                                    for (int ox = x_lo; ox < x_hi; ++ox) row += grow[ox] * src[ox];
                                } else {
                                    for (int ox = x_lo; ox < x_hi; ++ox) row += grow[ox] * irow[2 * ox + kx - 1];
                                }
                                acc += row;
                            }
                        }
                        gw[(kz * 3 + ky) * 3 + kx] = acc;
                    }
                }
            }
        }
    });

    if (!want_grad_x) return g;

    g.grad_x = Tensor4<T>(in_ch, in);
    parallel_for(0, in_ch, [&](std::ptrdiff_t ci) {
        T* gx = g.grad_x.channel(static_cast<int>(ci));
        for (int co = 0; co < out_channels; ++co) {
            const T* go = grad_out.channel(co);
            const T* w = kernel.data() + (static_cast<std::size_t>(co) * in_ch + ci) * kKernelVolume;
            for (int kz = 0; kz < 3; ++kz) {
                int z_lo, z_hi;
                tap_range(kz, stride, in.nz, od.nz, z_lo, z_hi);
                for (int ky = 0; ky < 3; ++ky) {
                    int y_lo, y_hi;
                    tap_range(ky, stride, in.ny, od.ny, y_lo, y_hi);
                    for (int kx = 0; kx < 3; ++kx) {
                        const T wv = w[(kz * 3 + ky) * 3 + kx];
                        if (wv == T(0)) continue;
                        int x_lo, x_hi;
                        tap_range(kx, stride, in.nx, od.nx, x_lo, x_hi);
                        for (int oz = z_lo; oz < z_hi; ++oz) {
                            const int iz = stride * oz + kz - 1;
                            for (int oy = y_lo; oy < y_hi; ++oy) {
                                const int iy = stride * oy + ky - 1;
                                const T* grow = go + od.index(0, oy, oz);
                                T* xrow = gx + in.index(0, iy, iz);
                                if (stride == 1) {
                                    T* dst = xrow + (kx - 1);
                                    for (int ox = x_lo; ox < x_hi; ++ox) dst[ox] += wv * grow[ox];
                                } else {
                                    for (int ox = x_lo; ox < x_hi; ++ox) xrow[2 * ox + kx - 1] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    return g;
}

template <class T>
Tensor4<T> leaky_relu(const Tensor4<T>& x, T alpha) {
    Tensor4<T> out(x.channels, x.dims);
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const T v = x.values[i];
        out.values[i] = v > T(0) ? v : alpha * v;
    }
    return out;
}

template <class T>
Tensor4<T> leaky_relu_backward(const Tensor4<T>& ref, const Tensor4<T>& grad_out, T alpha) {
    if (ref.values.size() != grad_out.values.size())
        fail(ErrorKind::DimsMismatch, "leaky_relu_backward: shape mismatch");
    Tensor4<T> g(grad_out.channels, grad_out.dims);
    for (std::size_t i = 0; i < ref.values.size(); ++i)
        g.values[i] = ref.values[i] > T(0) ? grad_out.values[i] : alpha * grad_out.values[i];
    return g;
}

template <class T>
Tensor4<T> upsample3d(const Tensor4<T>& x) {
    const Dims3 in = x.dims;
    const Dims3 od{2 * in.nx, 2 * in.ny, 2 * in.nz};
    Tensor4<T> out(x.channels, od);
    for (int c = 0; c < x.channels; ++c) {
        const T* src = x.channel(c);
        T* dst = out.channel(c);
        for (int z = 0; z < od.nz; ++z)
            for (int y = 0; y < od.ny; ++y) {
                const T* srow = src + in.index(0, y / 2, z / 2);
                T* drow = dst + od.index(0, y, z);
                for (int xx = 0; xx < od.nx; ++xx) drow[xx] = srow[xx / 2];
            }
    }
    return out;
}

template <class T>
Tensor4<T> upsample3d_backward(const Tensor4<T>& grad_out) {
    const Dims3 od = grad_out.dims;
    if (od.nx % 2 || od.ny % 2 || od.nz % 2)
        fail(ErrorKind::InvalidDims, "upsample3d_backward: gradient dims must be even");
    const Dims3 in{od.nx / 2, od.ny / 2, od.nz / 2};
    Tensor4<T> g(grad_out.channels, in);
    for (int c = 0; c < grad_out.channels; ++c) {
        const T* src = grad_out.channel(c);
        T* dst = g.channel(c);
        for (int z = 0; z < od.nz; ++z)
            for (int y = 0; y < od.ny; ++y) {
                const T* srow = src + od.index(0, y, z);
                T* drow = dst + in.index(0, y / 2, z / 2);
                for (int xx = 0; xx < od.nx; ++xx) drow[xx / 2] += srow[xx];
            }
    }
    return g;
}

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (!(a.dims == b.dims))
        fail(ErrorKind::DimsMismatch, "concat_channels: " + to_string(a.dims) + " vs " + to_string(b.dims));
    Tensor4<T> out(a.channels + b.channels, a.dims);
    std::copy(a.values.begin(), a.values.end(), out.values.begin());
    std::copy(b.values.begin(), b.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(a.values.size()));
    return out;
}

template <class T>
std::pair<Tensor4<T>, Tensor4<T>> concat_backward(const Tensor4<T>& grad_out, int channels_a) {
    if (channels_a < 0 || channels_a > grad_out.channels)
        fail(ErrorKind::DimsMismatch, "concat_backward: channel split outside tensor");
    Tensor4<T> ga(channels_a, grad_out.dims);
    Tensor4<T> gb(grad_out.channels - channels_a, grad_out.dims);
    const auto split = grad_out.values.begin() + static_cast<std::ptrdiff_t>(ga.values.size());
    std::copy(grad_out.values.begin(), split, ga.values.begin());
    std::copy(split, grad_out.values.end(), gb.values.begin());
    return {std::move(ga), std::move(gb)};
}

template <class T>
Tensor4<T> pack_input(const VolumeGrid& v_s, const Image2D& i_s, const Image2D& i_t, PackingMode mode) {
    const Dims3 d = v_s.dims;
    for (const Image2D* img : {&i_s, &i_t})
        if (img->width != d.nx || img->height != d.nz)
            fail(ErrorKind::DimsMismatch, "pack_input: DRR must be nx x nz of the source volume " + to_string(d));
    Tensor4<T> out(2, d);
    const auto norm = normalize_intensity<T>(v_s);
    std::copy(norm.values.begin(), norm.values.end(), out.values.begin());
    T* ch = out.channel(1);
    auto write_plane = [&](const Image2D& img, int y) {
        for (int z = 0; z < d.nz; ++z)
            for (int x = 0; x < d.nx; ++x) ch[d.index(x, y, z)] = static_cast<T>(img.at(x, z));
    };
    switch (mode) {
    case PackingMode::ExtremePlanes:
        write_plane(i_s, 0);
        write_plane(i_t, d.ny - 1);
        break;
    case PackingMode::SplitHalves:
        for (int y = 0; y < d.ny; ++y) write_plane(y < d.ny / 2 ? i_s : i_t, y);
        break;
    }
    return out;
}

template <class T>
BasicField<T> field_from_tensor(const Tensor4<T>& t) {
    if (t.channels != 3) fail(ErrorKind::DimsMismatch, "field_from_tensor: need exactly 3 channels");
    BasicField<T> u(t.dims);
    u.comps = t.values;
    return u;
}

template <class T>
Tensor4<T> tensor_from_field(const BasicField<T>& u) {
    Tensor4<T> t(3, u.dims);
    t.values = u.comps;
    return t;
}

#define DEFORMREG_INSTANTIATE_OPS(T)                                                                             \
    template void check_finite(const Tensor4<T>&, const char*);                                                  \
    template Tensor4<T> conv3d(const Tensor4<T>&, std::span<const T>, std::span<const T>, int, int);             \
    template ConvGrads<T> conv3d_backward(const Tensor4<T>&, std::span<const T>, int, int, const Tensor4<T>&,     \
                                          bool);                                                                 \
    template Tensor4<T> leaky_relu(const Tensor4<T>&, T);                                                        \
    template Tensor4<T> leaky_relu_backward(const Tensor4<T>&, const Tensor4<T>&, T);                            \
    template Tensor4<T> upsample3d(const Tensor4<T>&);                                                           \
    template Tensor4<T> upsample3d_backward(const Tensor4<T>&);                                                  \
    template Tensor4<T> concat_channels(const Tensor4<T>&, const Tensor4<T>&);                                   \
    template std::pair<Tensor4<T>, Tensor4<T>> concat_backward(const Tensor4<T>&, int);                          \
    template Tensor4<T> pack_input(const VolumeGrid&, const Image2D&, const Image2D&, PackingMode);               \
    template BasicField<T> field_from_tensor(const Tensor4<T>&);                                                 \
    template Tensor4<T> tensor_from_field(const BasicField<T>&);

DEFORMREG_INSTANTIATE_OPS(float)
DEFORMREG_INSTANTIATE_OPS(double)

#undef DEFORMREG_INSTANTIATE_OPS

} // namespace deformreg
