#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "vseg/tensor.hpp"

namespace vseg {

// ---------------------------------------------------------------------------
// 3D convolution (cross-correlation) with cubic kernels.
//
// x: (N, Cin, D, H, W)   w: (Cout, Cin, k, k, k)   b: (1, Cout, 1, 1, 1)
//
// The same three kernels (forward, grad-input, grad-weight) also implement
// transposed convolution: deconv forward == grad-input of a strided conv.
// Loops keep W innermost and contiguous; summation order is fixed, so
// results are bit-stable run to run.
// ---------------------------------------------------------------------------

inline int conv_out_dim(int in, int k, int stride, int pad) {
    int num = in + 2 * pad - k;
    if (num < 0 || num % stride != 0)
        throw std::invalid_argument("conv3d: output dim not integral");
    return num / stride + 1;
}

// Output-index range [lo, hi) such that 0 <= o*stride - pad + koff < in_dim.
inline void conv_out_range(int in_dim, int out_dim, int stride, int pad, int koff, int& lo,
                           int& hi) {
    int a = pad - koff;  // need o*stride >= a
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    int b = in_dim - 1 + pad - koff;  // need o*stride <= b
    hi = b < 0 ? 0 : std::min(out_dim, b / stride + 1);
    if (hi < lo) hi = lo;
}

namespace detail {

// k=3, stride 1, pad 1, row-fused taps; good for few output channels.
template <typename T>
Tensor<T> conv3x3_rowfused(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const int N = x.n(), Cin = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int Cout = w.n();
    Tensor<T> y(N, Cout, D, H, W);
    std::vector<T> buf(static_cast<std::size_t>(Cout) * W);
    for (int n = 0; n < N; ++n)
        for (int od = 0; od < D; ++od)
            for (int oh = 0; oh < H; ++oh) {
                for (int co = 0; co < Cout; ++co)
                    for (int i = 0; i < W; ++i) buf[static_cast<std::size_t>(co) * W + i] = b.data[co];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int kd = 0; kd < 3; ++kd) {
                        const int id = od - 1 + kd;
                        if (id < 0 || id >= D) continue;
                        for (int kh = 0; kh < 3; ++kh) {
                            const int ih = oh - 1 + kh;
                            if (ih < 0 || ih >= H) continue;
                            const T* xr = &x.at(n, ci, id, ih, 0);
                            for (int co = 0; co < Cout; ++co) {
                                T* bf = &buf[static_cast<std::size_t>(co) * W];
                                const T w0 = w.at(co, ci, kd, kh, 0);
                                const T w1 = w.at(co, ci, kd, kh, 1);
                                const T w2 = w.at(co, ci, kd, kh, 2);
                                bf[0] += w1 * xr[0] + w2 * xr[1];
                                for (int ow = 1; ow < W - 1; ++ow)
                                    bf[ow] += w0 * xr[ow - 1] + w1 * xr[ow] + w2 * xr[ow + 1];
                                bf[W - 1] += w0 * xr[W - 2] + w1 * xr[W - 1];
                            }
                        }
                    }
                for (int co = 0; co < Cout; ++co) {
                    T* yr = &y.at(n, co, od, oh, 0);
                    const T* bf = &buf[static_cast<std::size_t>(co) * W];
                    for (int i = 0; i < W; ++i) yr[i] = bf[i];
                }
            }
    return y;
}

// k=3, stride 1, pad 1, vectorizing over output channels; good for Cout >= 16.
template <typename T>
Tensor<T> conv3x3_chaninner(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const int N = x.n(), Cin = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int Cout = w.n();
    Tensor<T> y(N, Cout, D, H, W);
    // reorder weights to [ci][kd][kh][kw][co]
    std::vector<T> wr(static_cast<std::size_t>(Cin) * 27 * Cout);
    for (int ci = 0; ci < Cin; ++ci)
        for (int kd = 0; kd < 3; ++kd)
            for (int kh = 0; kh < 3; ++kh)
                for (int kw = 0; kw < 3; ++kw)
                    for (int co = 0; co < Cout; ++co)
                        wr[((((static_cast<std::size_t>(ci) * 3 + kd) * 3 + kh) * 3 + kw)) * Cout +
                           co] = w.at(co, ci, kd, kh, kw);
    std::vector<T> buf(static_cast<std::size_t>(W) * Cout);
    for (int n = 0; n < N; ++n)
        for (int od = 0; od < D; ++od)
            for (int oh = 0; oh < H; ++oh) {
                for (int ow = 0; ow < W; ++ow)
                    for (int co = 0; co < Cout; ++co)
                        buf[static_cast<std::size_t>(ow) * Cout + co] = b.data[co];
                for (int ci = 0; ci < Cin; ++ci)
                    for (int kd = 0; kd < 3; ++kd) {
                        const int id = od - 1 + kd;
                        if (id < 0 || id >= D) continue;
                        for (int kh = 0; kh < 3; ++kh) {
                            const int ih = oh - 1 + kh;
                            if (ih < 0 || ih >= H) continue;
                            const T* xr = &x.at(n, ci, id, ih, 0);
                            const T* wk =
                                &wr[(((static_cast<std::size_t>(ci) * 3 + kd) * 3 + kh) * 3) * Cout];
                            for (int ow = 0; ow < W; ++ow) {
                                T* bf = &buf[static_cast<std::size_t>(ow) * Cout];
                                const int kwlo = ow == 0 ? 1 : 0;
                                const int kwhi = ow == W - 1 ? 2 : 3;
                                for (int kw = kwlo; kw < kwhi; ++kw) {
                                    const T xv = xr[ow - 1 + kw];
                                    const T* wv = &wk[kw * Cout];
                                    for (int co = 0; co < Cout; ++co) bf[co] += xv * wv[co];
                                }
                            }
                        }
                    }
                for (int co = 0; co < Cout; ++co) {
                    T* yr = &y.at(n, co, od, oh, 0);
                    for (int ow = 0; ow < W; ++ow)
                        yr[ow] = buf[static_cast<std::size_t>(ow) * Cout + co];
                }
            }
    return y;
}

}  // namespace detail

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                         int pad) {
    const int N = x.n(), Cin = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int Cout = w.n(), k = w.d();
    if (w.c() != Cin) throw std::invalid_argument("conv3d: channel mismatch");
    const int OD = conv_out_dim(D, k, stride, pad);
    const int OH = conv_out_dim(H, k, stride, pad);
    const int OW = conv_out_dim(W, k, stride, pad);

    if (k == 3 && stride == 1 && pad == 1) {
        return Cout >= 16 ? detail::conv3x3_chaninner(x, w, b)
                          : detail::conv3x3_rowfused(x, w, b);
    }

    Tensor<T> y(N, Cout, OD, OH, OW);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            T* yc = &y.at(n, co, 0, 0, 0);
            const T bias = b.data[co];
            std::fill(yc, yc + static_cast<std::size_t>(OD) * OH * OW, bias);
        }

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int ci = 0; ci < Cin; ++ci)
                for (int kd = 0; kd < k; ++kd) {
                    int odlo, odhi;
                    conv_out_range(D, OD, stride, pad, kd, odlo, odhi);
                    for (int kh = 0; kh < k; ++kh) {
                        int ohlo, ohhi;
                        conv_out_range(H, OH, stride, pad, kh, ohlo, ohhi);
                        for (int kw = 0; kw < k; ++kw) {
                            int owlo, owhi;
                            conv_out_range(W, OW, stride, pad, kw, owlo, owhi);
                            const T wv = w.at(co, ci, kd, kh, kw);
                            if (wv == T(0)) continue;
                            for (int od = odlo; od < odhi; ++od) {
                                const int id = od * stride - pad + kd;
                                for (int oh = ohlo; oh < ohhi; ++oh) {
                                    const int ih = oh * stride - pad + kh;
                                    const T* xrow = &x.at(n, ci, id, ih, 0);
                                    T* yrow = &y.at(n, co, od, oh, 0);
                                    if (stride == 1) {
                                        const T* xs = xrow - pad + kw;
                                        for (int ow = owlo; ow < owhi; ++ow)
                                            yrow[ow] += wv * xs[ow];
                                    } else {
                                        for (int ow = owlo; ow < owhi; ++ow)
                                            yrow[ow] += wv * xrow[ow * stride - pad + kw];
                                    }
                                }
                            }
                        }
                    }
                }
    return y;
}

template <typename T>
Tensor<T> conv3d_grad_input(const Tensor<T>& dy, const Tensor<T>& w,
                            const std::array<int, 5>& x_shape, int stride, int pad) {
    const int N = x_shape[0], Cin = x_shape[1], D = x_shape[2], H = x_shape[3], W = x_shape[4];
    const int Cout = w.n(), k = w.d();
    const int OD = dy.d(), OH = dy.h(), OW = dy.w();

    if (k == 3 && stride == 1 && pad == 1) {
        // grad-input of same-pad 3x3x3 conv is a conv with the kernel
        // flipped and channel roles swapped
        Tensor<T> wf(Cin, Cout, 3, 3, 3);
        for (int co = 0; co < Cout; ++co)
            for (int ci = 0; ci < Cin; ++ci)
                for (int kd = 0; kd < 3; ++kd)
                    for (int kh = 0; kh < 3; ++kh)
                        for (int kw = 0; kw < 3; ++kw)
                            wf.at(ci, co, 2 - kd, 2 - kh, 2 - kw) = w.at(co, ci, kd, kh, kw);
        Tensor<T> zb(1, Cin, 1, 1, 1);
        return conv3d_forward(dy, wf, zb, 1, 1);
    }

    Tensor<T> dx(N, Cin, D, H, W);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int ci = 0; ci < Cin; ++ci)
                for (int kd = 0; kd < k; ++kd) {
                    int odlo, odhi;
                    conv_out_range(D, OD, stride, pad, kd, odlo, odhi);
                    for (int kh = 0; kh < k; ++kh) {
                        int ohlo, ohhi;
                        conv_out_range(H, OH, stride, pad, kh, ohlo, ohhi);
                        for (int kw = 0; kw < k; ++kw) {
                            int owlo, owhi;
                            conv_out_range(W, OW, stride, pad, kw, owlo, owhi);
                            const T wv = w.at(co, ci, kd, kh, kw);
                            if (wv == T(0)) continue;
                            for (int od = odlo; od < odhi; ++od) {
                                const int id = od * stride - pad + kd;
                                for (int oh = ohlo; oh < ohhi; ++oh) {
                                    const int ih = oh * stride - pad + kh;
                                    const T* dyrow = &dy.at(n, co, od, oh, 0);
                                    T* dxrow = &dx.at(n, ci, id, ih, 0);
                                    if (stride == 1) {
                                        T* dxs = dxrow - pad + kw;
                                        for (int ow = owlo; ow < owhi; ++ow)
                                            dxs[ow] += wv * dyrow[ow];
                                    } else {
                                        for (int ow = owlo; ow < owhi; ++ow)
                                            dxrow[ow * stride - pad + kw] += wv * dyrow[ow];
                                    }
                                }
                            }
                        }
                    }
                }
    return dx;
}

template <typename T>
void conv3d_grad_weight(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db,
                        int stride, int pad) {
    const int N = x.n(), Cin = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int Cout = dy.c(), k = dw.d();
    const int OD = dy.d(), OH = dy.h(), OW = dy.w();

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            const T* dyc = &dy.at(n, co, 0, 0, 0);
            T s = T(0);
            const std::size_t m = static_cast<std::size_t>(OD) * OH * OW;
            for (std::size_t i = 0; i < m; ++i) s += dyc[i];
            db.data[co] += s;
        }

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co)
            for (int ci = 0; ci < Cin; ++ci)
                for (int kd = 0; kd < k; ++kd) {
                    int odlo, odhi;
                    conv_out_range(D, OD, stride, pad, kd, odlo, odhi);
                    for (int kh = 0; kh < k; ++kh) {
                        int ohlo, ohhi;
                        conv_out_range(H, OH, stride, pad, kh, ohlo, ohhi);
                        for (int kw = 0; kw < k; ++kw) {
                            int owlo, owhi;
                            conv_out_range(W, OW, stride, pad, kw, owlo, owhi);
                            T acc = T(0);
                            for (int od = odlo; od < odhi; ++od) {
                                const int id = od * stride - pad + kd;
                                for (int oh = ohlo; oh < ohhi; ++oh) {
                                    const int ih = oh * stride - pad + kh;
                                    const T* xrow = &x.at(n, ci, id, ih, 0);
                                    const T* dyrow = &dy.at(n, co, od, oh, 0);
                                    if (stride == 1) {
                                        const T* xs = xrow - pad + kw;
                                        for (int ow = owlo; ow < owhi; ++ow)
                                            acc += xs[ow] * dyrow[ow];
                                    } else {
                                        for (int ow = owlo; ow < owhi; ++ow)
                                            acc += xrow[ow * stride - pad + kw] * dyrow[ow];
                                    }
                                }
                            }
                            dw.at(co, ci, kd, kh, kw) += acc;
                        }
                    }
                }
}

// ---------------------------------------------------------------------------
// Transposed convolution, kernel 4, stride 2, padding 1: exact 2x upsampling.
// w: (Cin, Cout, 4, 4, 4), matching the grad-input kernel's layout.
// ---------------------------------------------------------------------------

constexpr int kDeconvK = 4;
constexpr int kDeconvStride = 2;
constexpr int kDeconvPad = 1;

template <typename T>
Tensor<T> deconv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const int N = x.n(), Cout = w.c();
    const std::array<int, 5> out_shape{N, Cout, 2 * x.d(), 2 * x.h(), 2 * x.w()};
    // forward of a transposed conv == grad-input of the matching strided conv
    Tensor<T> y = conv3d_grad_input(x, w, out_shape, kDeconvStride, kDeconvPad);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            T* yc = &y.at(n, co, 0, 0, 0);
            const std::size_t m = static_cast<std::size_t>(y.d()) * y.h() * y.w();
            const T bias = b.data[co];
            for (std::size_t i = 0; i < m; ++i) yc[i] += bias;
        }
    return y;
}

template <typename T>
Tensor<T> deconv3d_grad_input(const Tensor<T>& dy, const Tensor<T>& w) {
    Tensor<T> zero_bias(1, w.n(), 1, 1, 1);
    Tensor<T> dx = conv3d_forward(dy, w, zero_bias, kDeconvStride, kDeconvPad);
    return dx;
}

template <typename T>
void deconv3d_grad_weight(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db) {
    // roles swap: dy is the "input" of the matching strided conv, x its output
    Tensor<T> db_unused(1, x.c(), 1, 1, 1);
    conv3d_grad_weight(dy, x, dw, db_unused, kDeconvStride, kDeconvPad);
    const int N = dy.n(), Cout = dy.c();
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
            const T* dyc = &dy.at(n, co, 0, 0, 0);
            T s = T(0);
            const std::size_t m = static_cast<std::size_t>(dy.d()) * dy.h() * dy.w();
            for (std::size_t i = 0; i < m; ++i) s += dyc[i];
            db.data[co] += s;
        }
}

// ---------------------------------------------------------------------------
// Max pooling 2x2x2, stride 2. Ties break to the lowest linear index so the
// backward scatter is deterministic.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool3d_forward(const Tensor<T>& x, std::vector<std::int64_t>& argmax) {
    const int N = x.n(), C = x.c(), D = x.d(), H = x.h(), W = x.w();
    if (D % 2 || H % 2 || W % 2)
        throw std::invalid_argument("maxpool3d: spatial dims must be even");
    const int OD = D / 2, OH = H / 2, OW = W / 2;
    Tensor<T> y(N, C, OD, OH, OW);
    argmax.assign(y.size(), 0);
    std::size_t oi = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int od = 0; od < OD; ++od)
                for (int oh = 0; oh < OH; ++oh)
                    for (int ow = 0; ow < OW; ++ow, ++oi) {
                        T best = x.at(n, c, 2 * od, 2 * oh, 2 * ow);
                        std::int64_t besti =
                            static_cast<std::int64_t>(x.index(n, c, 2 * od, 2 * oh, 2 * ow));
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dyy = 0; dyy < 2; ++dyy)
                                for (int dxx = 0; dxx < 2; ++dxx) {
                                    const std::size_t xi =
                                        x.index(n, c, 2 * od + dz, 2 * oh + dyy, 2 * ow + dxx);
                                    if (x.data[xi] > best) {
                                        best = x.data[xi];
                                        besti = static_cast<std::int64_t>(xi);
                                    }
                                }
                        y.data[oi] = best;
                        argmax[oi] = besti;
                    }
    return y;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T>& dy, const std::vector<std::int64_t>& argmax,
                             const std::array<int, 5>& x_shape) {
    Tensor<T> dx(x_shape[0], x_shape[1], x_shape[2], x_shape[3], x_shape[4]);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[argmax[i]] += dy.data[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, D, H, W) per channel.
// ---------------------------------------------------------------------------

template <typename T>
struct BNState {
    Tensor<T> running_mean;  // (1, C, 1, 1, 1)
    Tensor<T> running_var;
    T momentum = T(0.9);
    T eps = T(1e-5);

    explicit BNState(int channels = 0)
        : running_mean(1, channels, 1, 1, 1), running_var(1, channels, 1, 1, 1) {
        running_var.fill(T(1));
    }
};

// Per-call cache needed by the train-mode backward.
template <typename T>
struct BNCache {
    std::vector<T> mean;     // batch mean per channel
    std::vector<T> inv_std;  // 1/sqrt(var + eps)
    bool train = true;
};

template <typename T>
Tensor<T> batchnorm3d_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              BNState<T>& state, bool train, BNCache<T>& cache) {
    const int N = x.n(), C = x.c();
    const std::size_t plane = static_cast<std::size_t>(x.d()) * x.h() * x.w();
    const std::size_t m = static_cast<std::size_t>(N) * plane;
    Tensor<T> y;
    y.shape = x.shape;
    y.data.resize(x.size());
    cache.mean.assign(C, T(0));
    cache.inv_std.assign(C, T(0));
    cache.train = train;

    for (int c = 0; c < C; ++c) {
        T mean, var;
        if (train) {
            T s = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xc = &x.at(n, c, 0, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) s += xc[i];
            }
            mean = s / static_cast<T>(m);
            T sq = T(0);
            for (int n = 0; n < N; ++n) {
                const T* xc = &x.at(n, c, 0, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = xc[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / static_cast<T>(m);
            state.running_mean.data[c] =
                state.momentum * state.running_mean.data[c] + (T(1) - state.momentum) * mean;
            state.running_var.data[c] =
                state.momentum * state.running_var.data[c] + (T(1) - state.momentum) * var;
        } else {
            mean = state.running_mean.data[c];
            var = state.running_var.data[c];
        }
        const T inv_std = T(1) / std::sqrt(var + state.eps);
        cache.mean[c] = mean;
        cache.inv_std[c] = inv_std;
        const T g = gamma.data[c], bt = beta.data[c];
        for (int n = 0; n < N; ++n) {
            const T* xc = &x.at(n, c, 0, 0, 0);
            T* yc = &y.at(n, c, 0, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) yc[i] = g * (xc[i] - mean) * inv_std + bt;
        }
    }
    return y;
}

template <typename T>
Tensor<T> batchnorm3d_backward(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& gamma,
                               const BNCache<T>& cache, Tensor<T>& dgamma, Tensor<T>& dbeta) {
    const int N = x.n(), C = x.c();
    const std::size_t plane = static_cast<std::size_t>(x.d()) * x.h() * x.w();
    const T m = static_cast<T>(static_cast<std::size_t>(N) * plane);
    Tensor<T> dx;
    dx.shape = x.shape;
    dx.data.assign(x.size(), T(0));

    for (int c = 0; c < C; ++c) {
        const T mean = cache.mean[c], inv_std = cache.inv_std[c], g = gamma.data[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int n = 0; n < N; ++n) {
            const T* xc = &x.at(n, c, 0, 0, 0);
            const T* dyc = &dy.at(n, c, 0, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dyc[i];
                sum_dy_xhat += dyc[i] * (xc[i] - mean) * inv_std;
            }
        }
        dbeta.data[c] += sum_dy;
        dgamma.data[c] += sum_dy_xhat;
        for (int n = 0; n < N; ++n) {
            const T* xc = &x.at(n, c, 0, 0, 0);
            const T* dyc = &dy.at(n, c, 0, 0, 0);
            T* dxc = &dx.at(n, c, 0, 0, 0);
            if (cache.train) {
                // gradient through the batch statistics
                for (std::size_t i = 0; i < plane; ++i) {
                    const T xhat = (xc[i] - mean) * inv_std;
                    dxc[i] = g * inv_std * (dyc[i] - sum_dy / m - xhat * sum_dy_xhat / m);
                }
            } else {
                for (std::size_t i = 0; i < plane; ++i) dxc[i] = g * inv_std * dyc[i];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ReLU, element-wise add.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    Tensor<T> y;
    y.shape = x.shape;
    y.data.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

// gradient is 0 at exactly x == 0
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    Tensor<T> dx;
    dx.shape = x.shape;
    dx.data.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > T(0) ? dy.data[i] : T(0);
    return dx;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor<T> c;
    c.shape = a.shape;
    c.data.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c.data[i] = a.data[i] + b.data[i];
    return c;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over channel axis, mean-reduced over voxels.
// labels: (N, 1, D, H, W) of class ids.
// ---------------------------------------------------------------------------

template <typename T>
struct XentResult {
    double loss = 0.0;
    Tensor<T> grad_logits;
};

template <typename T>
XentResult<T> softmax_xent(const Tensor<T>& logits, const Tensor<std::uint8_t>& labels,
                           const std::vector<T>& class_weights = {}) {
    const int N = logits.n(), C = logits.c();
    const std::size_t plane = static_cast<std::size_t>(logits.d()) * logits.h() * logits.w();
    if (labels.n() != N || labels.d() != logits.d() || labels.h() != logits.h() ||
        labels.w() != logits.w())
        throw std::invalid_argument("softmax_xent: label dims mismatch");
    const T m = static_cast<T>(static_cast<std::size_t>(N) * plane);

    XentResult<T> r;
    r.grad_logits.shape = logits.shape;
    r.grad_logits.data.assign(logits.size(), T(0));
    double loss = 0.0;
    std::vector<T> p(C);
    for (int n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < plane; ++i) {
            T mx = logits.data[logits.index(n, 0, 0, 0, 0) + i];
            for (int c = 1; c < C; ++c)
                mx = std::max(mx, logits.data[logits.index(n, c, 0, 0, 0) + i]);
            T z = T(0);
            for (int c = 0; c < C; ++c) {
                p[c] = std::exp(logits.data[logits.index(n, c, 0, 0, 0) + i] - mx);
                z += p[c];
            }
            for (int c = 0; c < C; ++c) p[c] /= z;
            const int y = labels.data[labels.index(n, 0, 0, 0, 0) + i];
            if (y < 0 || y >= C) throw std::invalid_argument("softmax_xent: label out of range");
            const T wgt = class_weights.empty() ? T(1) : class_weights[y];
            loss -= static_cast<double>(wgt) * std::log(std::max(p[y], T(1e-30)));
            for (int c = 0; c < C; ++c) {
                T g = p[c];
                if (c == y) g -= T(1);
                r.grad_logits.data[r.grad_logits.index(n, c, 0, 0, 0) + i] = wgt * g / m;
            }
        }
    }
    r.loss = loss / static_cast<double>(m);
    return r;
}

// Foreground (channel 1) softmax probability per voxel.
template <typename T>
Tensor<T> softmax_prob_fg(const Tensor<T>& logits) {
    const int N = logits.n();
    const std::size_t plane = static_cast<std::size_t>(logits.d()) * logits.h() * logits.w();
    Tensor<T> p(N, 1, logits.d(), logits.h(), logits.w());
    for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < plane; ++i) {
            const T a = logits.data[logits.index(n, 0, 0, 0, 0) + i];
            const T b = logits.data[logits.index(n, 1, 0, 0, 0) + i];
            const T mx = std::max(a, b);
            const T ea = std::exp(a - mx), eb = std::exp(b - mx);
            p.data[p.index(n, 0, 0, 0, 0) + i] = eb / (ea + eb);
        }
    return p;
}

}  // namespace vseg
