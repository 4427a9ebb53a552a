// Haar discrete wavelet transform: forward, exact inverse, and multi-level
// pyramid. Filters are applied as stride-2 cross-correlation, no padding:
//
//   f_LL = 1/2 [ 1  1 ; 1  1 ]    f_LH = 1/2 [ 1  1 ; -1 -1 ]
//   f_HL = 1/2 [ 1 -1 ; 1 -1 ]    f_HH = 1/2 [ 1 -1 ; -1  1 ]
//
// The filter set is orthonormal, so the adjoint inverts the transform and
// sub-band energies sum to the input energy.
#pragma once

#include "wmamba/tensor.hpp"

namespace wmamba {

template <class T>
struct sub_bands {
    tensor<T> ll, lh, hl, hh;
};

template <class T>
struct wavelet_pyramid {
    // levels[l] has resolution H / 2^(l+1).
    std::vector<sub_bands<T>> levels;
};

namespace detail {

// All four bands in one pass: [N,C,H,W] -> [N,4,C,H/2,W/2], band order
// LL, LH, HL, HH along axis 1.
template <class T>
tensor<T> haar_dwt_stack(const tensor<T>& image) {
    check(image.ndim() == 4, "haar_dwt: input must be [N,C,H,W], got ",
          shape_str(image.shape()));
    const size_t N = image.size(0), C = image.size(1), H = image.size(2),
                 W = image.size(3);
    check(H % 2 == 0 && W % 2 == 0, "haar_dwt: H and W must be even, got ", H, "x", W);
    const size_t h = H / 2, w = W / 2, plane = h * w;
    std::vector<T> out(N * 4 * C * plane);
    const T* in = image.data().data();
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c) {
            const T* src = in + (n * C + c) * H * W;
            T* ll = out.data() + ((n * 4 + 0) * C + c) * plane;
            T* lh = out.data() + ((n * 4 + 1) * C + c) * plane;
            T* hl = out.data() + ((n * 4 + 2) * C + c) * plane;
            T* hh = out.data() + ((n * 4 + 3) * C + c) * plane;
            for (size_t i = 0; i < h; ++i)
                for (size_t j = 0; j < w; ++j) {
                    const T a = src[(2 * i) * W + 2 * j];
                    const T b = src[(2 * i) * W + 2 * j + 1];
                    const T cc = src[(2 * i + 1) * W + 2 * j];
                    const T d = src[(2 * i + 1) * W + 2 * j + 1];
                    ll[i * w + j] = (a + b + cc + d) / 2;
                    lh[i * w + j] = (a + b - cc - d) / 2;
                    hl[i * w + j] = (a - b + cc - d) / 2;
                    hh[i * w + j] = (a - b - cc + d) / 2;
                }
        }
    return make_op<T>({N, 4, C, h, w}, std::move(out), {image},
                      [N, C, H, W, h, w, plane](node<T>& self) {
                          auto& p = self.parents[0].node_ref();
                          p.ensure_grad();
                          for (size_t n = 0; n < N; ++n)
                              for (size_t c = 0; c < C; ++c) {
                                  T* dst = p.grad.data() + (n * C + c) * H * W;
                                  const T* gll =
                                      self.grad.data() + ((n * 4 + 0) * C + c) * plane;
                                  const T* glh =
                                      self.grad.data() + ((n * 4 + 1) * C + c) * plane;
                                  const T* ghl =
                                      self.grad.data() + ((n * 4 + 2) * C + c) * plane;
                                  const T* ghh =
                                      self.grad.data() + ((n * 4 + 3) * C + c) * plane;
                                  for (size_t i = 0; i < h; ++i)
                                      for (size_t j = 0; j < w; ++j) {
                                          const T g0 = gll[i * w + j], g1 = glh[i * w + j];
                                          const T g2 = ghl[i * w + j], g3 = ghh[i * w + j];
                                          dst[(2 * i) * W + 2 * j] +=
                                              (g0 + g1 + g2 + g3) / 2;
                                          dst[(2 * i) * W + 2 * j + 1] +=
                                              (g0 + g1 - g2 - g3) / 2;
                                          dst[(2 * i + 1) * W + 2 * j] +=
                                              (g0 - g1 + g2 - g3) / 2;
                                          dst[(2 * i + 1) * W + 2 * j + 1] +=
                                              (g0 - g1 - g2 + g3) / 2;
                                      }
                              }
                      });
}

}  // namespace detail

template <class T>
sub_bands<T> haar_dwt(const tensor<T>& image) {
    tensor<T> stack = detail::haar_dwt_stack(image);
    const size_t N = stack.size(0), C = stack.size(2), h = stack.size(3),
                 w = stack.size(4);
    auto band = [&](size_t b) {
        return reshape(slice(stack, 1, b, 1), {N, C, h, w});
    };
    return {band(0), band(1), band(2), band(3)};
}

template <class T>
tensor<T> haar_idwt(const sub_bands<T>& bands) {
    const tensor<T>&ll = bands.ll, &lh = bands.lh, &hl = bands.hl, &hh = bands.hh;
    check(ll.ndim() == 4, "haar_idwt: bands must be [N,C,h,w]");
    for (const tensor<T>* b : {&lh, &hl, &hh})
        check(b->shape() == ll.shape(), "haar_idwt: band shapes differ: ",
              shape_str(ll.shape()), " vs ", shape_str(b->shape()));
    const size_t N = ll.size(0), C = ll.size(1), h = ll.size(2), w = ll.size(3);
    const size_t H = 2 * h, W = 2 * w, plane = h * w;
    std::vector<T> out(N * C * H * W);
    const T* pll = ll.data().data();
    const T* plh = lh.data().data();
    const T* phl = hl.data().data();
    const T* phh = hh.data().data();
    for (size_t n = 0; n < N; ++n)
        for (size_t c = 0; c < C; ++c) {
            const size_t off = (n * C + c) * plane;
            T* dst = out.data() + (n * C + c) * H * W;
            for (size_t i = 0; i < h; ++i)
                for (size_t j = 0; j < w; ++j) {
                    const T g0 = pll[off + i * w + j], g1 = plh[off + i * w + j];
                    const T g2 = phl[off + i * w + j], g3 = phh[off + i * w + j];
                    dst[(2 * i) * W + 2 * j] = (g0 + g1 + g2 + g3) / 2;
                    dst[(2 * i) * W + 2 * j + 1] = (g0 + g1 - g2 - g3) / 2;
                    dst[(2 * i + 1) * W + 2 * j] = (g0 - g1 + g2 - g3) / 2;
                    dst[(2 * i + 1) * W + 2 * j + 1] = (g0 - g1 - g2 + g3) / 2;
                }
        }
    return make_op<T>(
        {N, C, H, W}, std::move(out), {ll, lh, hl, hh},
        [N, C, H, W, h, w, plane](node<T>& self) {
            for (auto& parent : self.parents) parent.node_ref().ensure_grad();
            T* gll = self.parents[0].node_ref().grad.data();
            T* glh = self.parents[1].node_ref().grad.data();
            T* ghl = self.parents[2].node_ref().grad.data();
            T* ghh = self.parents[3].node_ref().grad.data();
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c) {
                    const size_t off = (n * C + c) * plane;
                    const T* g = self.grad.data() + (n * C + c) * H * W;
                    for (size_t i = 0; i < h; ++i)
                        for (size_t j = 0; j < w; ++j) {
                            const T a = g[(2 * i) * W + 2 * j];
                            const T b = g[(2 * i) * W + 2 * j + 1];
                            const T cc = g[(2 * i + 1) * W + 2 * j];
                            const T d = g[(2 * i + 1) * W + 2 * j + 1];
                            gll[off + i * w + j] += (a + b + cc + d) / 2;
                            glh[off + i * w + j] += (a + b - cc - d) / 2;
                            ghl[off + i * w + j] += (a - b + cc - d) / 2;
                            ghh[off + i * w + j] += (a - b - cc + d) / 2;
                        }
                }
        });
}

// Level l+1 is the decomposition of level l's LL band.
template <class T>
wavelet_pyramid<T> dwt_pyramid(const tensor<T>& image, size_t num_levels) {
    check(num_levels >= 1, "dwt_pyramid: need at least one level");
    check(image.ndim() == 4, "dwt_pyramid: input must be [N,C,H,W]");
    const size_t H = image.size(2), W = image.size(3);
    const size_t div = size_t(1) << num_levels;
    check(H % div == 0 && W % div == 0, "dwt_pyramid: ", H, "x", W,
          " not divisible by 2^", num_levels);
    wavelet_pyramid<T> pyr;
    tensor<T> cur = image;
    for (size_t l = 0; l < num_levels; ++l) {
        pyr.levels.push_back(haar_dwt(cur));
        cur = pyr.levels.back().ll;
    }
    return pyr;
}

}  // namespace wmamba
