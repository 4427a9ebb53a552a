// 2D convolution (as cross-correlation, the usual deep-learning convention)
// and bilinear point sampling with zero padding outside the image.
#pragma once

#include "wmamba/tensor.hpp"

namespace wmamba {

// input [N,Cin,H,W], weight [Cout,Cin/groups,kh,kw], bias [Cout] (optional).
// Output spatial size: floor((H + 2*pad - kh)/stride) + 1.
template <class T>
tensor<T> conv2d(const tensor<T>& input, const tensor<T>& weight, const tensor<T>& bias,
                 size_t stride = 1, size_t pad = 0, size_t groups = 1) {
    check(input.ndim() == 4, "conv2d: input must be [N,Cin,H,W], got ",
          shape_str(input.shape()));
    check(weight.ndim() == 4, "conv2d: weight must be [Cout,Cin/g,kh,kw], got ",
          shape_str(weight.shape()));
    check(stride >= 1, "conv2d: stride must be >= 1");
    const size_t N = input.size(0), Cin = input.size(1), H = input.size(2),
                 W = input.size(3);
    const size_t Cout = weight.size(0), Cg = weight.size(1), kh = weight.size(2),
                 kw = weight.size(3);
    check(groups >= 1 && Cin % groups == 0 && Cout % groups == 0,
          "conv2d: groups ", groups, " must divide Cin ", Cin, " and Cout ", Cout);
    check(Cg == Cin / groups, "conv2d: weight expects ", Cg * groups,
          " input channels, input has ", Cin);
    check(H + 2 * pad >= kh && W + 2 * pad >= kw, "conv2d: kernel ", kh, "x", kw,
          " exceeds padded input ", H + 2 * pad, "x", W + 2 * pad);
    const bool has_bias = bias.defined();
    if (has_bias)
        check(bias.numel() == Cout, "conv2d: bias length ", bias.numel(), " != Cout ",
              Cout);

    const size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const size_t Wo = (W + 2 * pad - kw) / stride + 1;
    const size_t og = Cout / groups;

    std::vector<T> out(N * Cout * Ho * Wo);
    const T* in = input.data().data();
    const T* w = weight.data().data();
    const long p = long(pad);
    for (size_t n = 0; n < N; ++n)
        for (size_t o = 0; o < Cout; ++o) {
            const size_t ci0 = (o / og) * Cg;
            const T b = has_bias ? bias.data()[o] : T(0);
            for (size_t oy = 0; oy < Ho; ++oy)
                for (size_t ox = 0; ox < Wo; ++ox) {
                    T acc = b;
                    for (size_t cl = 0; cl < Cg; ++cl) {
                        const T* ic = in + ((n * Cin + ci0 + cl) * H) * W;
                        const T* wc = w + ((o * Cg + cl) * kh) * kw;
                        for (size_t u = 0; u < kh; ++u) {
                            const long iy = long(oy * stride) - p + long(u);
                            if (iy < 0 || iy >= long(H)) continue;
                            for (size_t v = 0; v < kw; ++v) {
                                const long ix = long(ox * stride) - p + long(v);
                                if (ix < 0 || ix >= long(W)) continue;
                                acc += ic[size_t(iy) * W + size_t(ix)] * wc[u * kw + v];
                            }
                        }
                    }
                    out[((n * Cout + o) * Ho + oy) * Wo + ox] = acc;
                }
        }

    std::vector<tensor<T>> parents = {input, weight};
    if (has_bias) parents.push_back(bias);
    return make_op<T>(
        {N, Cout, Ho, Wo}, std::move(out), std::move(parents),
        [N, Cin, H, W, Cout, Cg, kh, kw, Ho, Wo, og, stride, p, has_bias](node<T>& self) {
            auto& pi = self.parents[0].node_ref();
            auto& pw = self.parents[1].node_ref();
            pi.ensure_grad();
            pw.ensure_grad();
            T* db = nullptr;
            if (has_bias) {
                auto& pb = self.parents[2].node_ref();
                pb.ensure_grad();
                db = pb.grad.data();
            }
            const T* g = self.grad.data();
            const T* in = pi.value.data();
            const T* w = pw.value.data();
            for (size_t n = 0; n < N; ++n)
                for (size_t o = 0; o < Cout; ++o) {
                    const size_t ci0 = (o / og) * Cg;
                    for (size_t oy = 0; oy < Ho; ++oy)
                        for (size_t ox = 0; ox < Wo; ++ox) {
                            const T go = g[((n * Cout + o) * Ho + oy) * Wo + ox];
                            if (db) db[o] += go;
                            if (go == T(0)) continue;
                            for (size_t cl = 0; cl < Cg; ++cl) {
                                const size_t ic = (n * Cin + ci0 + cl) * H * W;
                                const size_t wc = (o * Cg + cl) * kh * kw;
                                for (size_t u = 0; u < kh; ++u) {
                                    const long iy = long(oy * stride) - p + long(u);
                                    if (iy < 0 || iy >= long(H)) continue;
                                    for (size_t v = 0; v < kw; ++v) {
                                        const long ix = long(ox * stride) - p + long(v);
                                        if (ix < 0 || ix >= long(W)) continue;
                                        const size_t ii =
                                            ic + size_t(iy) * W + size_t(ix);
                                        pi.grad[ii] += go * w[wc + u * kw + v];
                                        pw.grad[wc + u * kw + v] += go * in[ii];
                                    }
                                }
                            }
                        }
                }
        });
}

template <class T>
tensor<T> conv2d(const tensor<T>& input, const tensor<T>& weight, size_t stride = 1,
                 size_t pad = 0, size_t groups = 1) {
    return conv2d(input, weight, tensor<T>(), stride, pad, groups);
}

// Samples input [N,C,H,W] at continuous (x, y) pixel coordinates [N,P,2].
// Positions outside [0,W-1]x[0,H-1] read zero. Differentiable in both
// the image and the coordinates.
template <class T>
tensor<T> bilinear_sample(const tensor<T>& input, const tensor<T>& coords) {
    check(input.ndim() == 4, "bilinear_sample: input must be [N,C,H,W], got ",
          shape_str(input.shape()));
    check(coords.ndim() == 3 && coords.size(2) == 2,
          "bilinear_sample: coords must be [N,P,2], got ", shape_str(coords.shape()));
    check(coords.size(0) == input.size(0), "bilinear_sample: batch mismatch");
    const size_t N = input.size(0), C = input.size(1), H = input.size(2),
                 W = input.size(3);
    const size_t P = coords.size(1);

    std::vector<T> out(N * C * P);
    const T* in = input.data().data();
    const T* cr = coords.data().data();
    auto pick = [&](size_t n, size_t c, long y, long x) -> T {
        if (y < 0 || y >= long(H) || x < 0 || x >= long(W)) return T(0);
        return in[((n * C + c) * H + size_t(y)) * W + size_t(x)];
    };
    for (size_t n = 0; n < N; ++n)
        for (size_t p = 0; p < P; ++p) {
            const T x = cr[(n * P + p) * 2 + 0];
            const T y = cr[(n * P + p) * 2 + 1];
            const long x0 = long(std::floor(double(x))), y0 = long(std::floor(double(y)));
            const T wx = x - T(x0), wy = y - T(y0);
            for (size_t c = 0; c < C; ++c) {
                const T v00 = pick(n, c, y0, x0), v01 = pick(n, c, y0, x0 + 1);
                const T v10 = pick(n, c, y0 + 1, x0), v11 = pick(n, c, y0 + 1, x0 + 1);
                out[(n * C + c) * P + p] = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                                           wy * ((T(1) - wx) * v10 + wx * v11);
            }
        }

    return make_op<T>(
        {N, C, P}, std::move(out), {input, coords}, [N, C, H, W, P](node<T>& self) {
            auto& pi = self.parents[0].node_ref();
            auto& pc = self.parents[1].node_ref();
            pi.ensure_grad();
            pc.ensure_grad();
            const T* in = pi.value.data();
            const T* cr = pc.value.data();
            const T* g = self.grad.data();
            auto inside = [&](long y, long x) {
                return y >= 0 && y < long(H) && x >= 0 && x < long(W);
            };
            for (size_t n = 0; n < N; ++n)
                for (size_t p = 0; p < P; ++p) {
                    const T x = cr[(n * P + p) * 2 + 0];
                    const T y = cr[(n * P + p) * 2 + 1];
                    const long x0 = long(std::floor(double(x)));
                    const long y0 = long(std::floor(double(y)));
                    const T wx = x - T(x0), wy = y - T(y0);
                    T dx_acc = 0, dy_acc = 0;
                    for (size_t c = 0; c < C; ++c) {
                        const T go = g[(n * C + c) * P + p];
                        const size_t base = (n * C + c) * H * W;
                        T v[2][2] = {{T(0), T(0)}, {T(0), T(0)}};
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const long yy = y0 + dy, xx = x0 + dx;
                                if (!inside(yy, xx)) continue;
                                const size_t ii = base + size_t(yy) * W + size_t(xx);
                                v[dy][dx] = in[ii];
                                const T wgt = (dy ? wy : T(1) - wy) * (dx ? wx : T(1) - wx);
                                pi.grad[ii] += go * wgt;
                            }
                        dx_acc += go * ((T(1) - wy) * (v[0][1] - v[0][0]) +
                                        wy * (v[1][1] - v[1][0]));
                        dy_acc += go * ((T(1) - wx) * (v[1][0] - v[0][0]) +
                                        wx * (v[1][1] - v[0][1]));
                    }
                    pc.grad[(n * P + p) * 2 + 0] += dx_acc;
                    pc.grad[(n * P + p) * 2 + 1] += dy_acc;
                }
        });
}

}  // namespace wmamba
