// Dynamic Contour Convolution: a 1D deformable kernel whose per-pixel
// perpendicular offsets (chained, |delta| <= 1) and rotation angle are
// predicted from the input feature map. Kernel point c of a kernel centered
// at pixel (x, y) sits at
//
//   K_{+-c} = (x, y) + v . R(theta),   R = [ cos -sin ; sin cos ]
//
// with v = (+-c, sum_{j<=c} delta_j) for an x-initialized kernel and the
// coordinates swapped for a y-initialized one (row vector times R). Sampling
// uses bilinear interpolation with zero padding.
//
// Modes: dcconv (offsets + angle), dsconv (angle frozen at 0), dcn (free 2D
// offsets per tap, no chain constraint), rigid (no deformation).
#pragma once

#include <array>

#include "wmamba/conv.hpp"

namespace wmamba {

enum class deform_mode { dcconv, dsconv, dcn, rigid };
enum class deform_axis { x, y };

inline const char* to_string(deform_mode m) {
    switch (m) {
        case deform_mode::dcconv: return "dcconv";
        case deform_mode::dsconv: return "dsconv";
        case deform_mode::dcn: return "dcn";
        case deform_mode::rigid: return "rigid";
    }
    return "?";
}

inline size_t deform_head_channels(deform_mode mode, size_t k) {
    switch (mode) {
        case deform_mode::dcconv: return k;      // k-1 offsets + 1 angle
        case deform_mode::dsconv: return k - 1;  // offsets only
        case deform_mode::dcn: return 2 * k;     // (dx, dy) per tap
        case deform_mode::rigid: return 0;
    }
    return 0;
}

template <class T>
struct dcconv_layer {
    size_t k = 5;
    deform_axis axis = deform_axis::x;
    deform_mode mode = deform_mode::dcconv;
    tensor<T> weight;  // [Cout, Cin, k], one scalar per tap
    tensor<T> bias;    // [Cout]
    tensor<T> head_w;  // [head_ch, Cin, 3, 3]; undefined for rigid
    tensor<T> head_b;  // [head_ch]
};

// Heads are zero-initialized so training starts from the rigid kernel.
template <class T>
dcconv_layer<T> make_dcconv_layer(size_t cin, size_t cout, size_t k, deform_axis axis,
                                  deform_mode mode, rng& r) {
    check(k % 2 == 1, "dcconv: kernel length must be odd, got ", k);
    if (mode != deform_mode::rigid)
        check(k >= 3, "dcconv: deformable modes need k >= 3, got ", k);
    dcconv_layer<T> layer;
    layer.k = k;
    layer.axis = axis;
    layer.mode = mode;
    const T bound = T(1) / std::sqrt(T(cin * k));
    std::vector<T> w(cout * cin * k);
    for (auto& v : w) v = T(r.uniform(-double(bound), double(bound)));
    layer.weight = tensor<T>::param({cout, cin, k}, std::move(w));
    layer.bias = tensor<T>::param({cout}, std::vector<T>(cout, T(0)));
    const size_t hc = deform_head_channels(mode, k);
    if (hc > 0) {
        layer.head_w =
            tensor<T>::param({hc, cin, 3, 3}, std::vector<T>(hc * cin * 9, T(0)));
        layer.head_b = tensor<T>::param({hc}, std::vector<T>(hc, T(0)));
    }
    return layer;
}

// delta = tanh(raw), theta = (pi/2) * sigmoid(raw); the head is one 3x3
// convolution emitting k-1 offset channels followed by the angle channel.
template <class T>
std::pair<tensor<T>, tensor<T>> predict_offsets_angles(const tensor<T>& feature,
                                                       const tensor<T>& head_w,
                                                       const tensor<T>& head_b,
                                                       size_t k) {
    check(head_w.size(0) == k, "predict_offsets_angles: head must emit k channels");
    tensor<T> raw = conv2d(feature, head_w, head_b, 1, 1);
    tensor<T> delta = tanh(slice(raw, 1, 0, k - 1));
    tensor<T> theta = scale(sigmoid(slice(raw, 1, k - 1, 1)), T(1.5707963267948966));
    return {delta, theta};
}

// Scalar reference for the kernel geometry. deltas holds the k-1 offsets in
// channel order [+1..+hc, -1..-hc]; delta_0 = 0. Returned positions are
// ordered along the contour, tap j = 0..k-1 meaning c = j - (k-1)/2.
inline std::vector<std::array<double, 2>> contour_positions(
    std::array<double, 2> center, const std::vector<double>& deltas, double theta,
    deform_axis axis, size_t k) {
    check(k % 2 == 1, "contour_positions: kernel length must be odd, got ", k);
    const size_t hc = (k - 1) / 2;
    check(deltas.size() == k - 1, "contour_positions: expected ", k - 1, " offsets");
    const double ct = std::cos(theta), st = std::sin(theta);
    std::vector<std::array<double, 2>> out(k);
    auto place = [&](size_t tap, double along, double perp) {
        const double vx = axis == deform_axis::x ? along : perp;
        const double vy = axis == deform_axis::x ? perp : along;
        out[tap] = {center[0] + vx * ct + vy * st, center[1] - vx * st + vy * ct};
    };
    place(hc, 0.0, 0.0);
    double acc = 0.0;
    for (size_t c = 1; c <= hc; ++c) {
        acc += deltas[c - 1];
        place(hc + c, double(c), acc);
    }
    acc = 0.0;
    for (size_t c = 1; c <= hc; ++c) {
        acc += deltas[hc + c - 1];
        place(hc - c, -double(c), acc);
    }
    return out;
}

namespace detail {

template <class T>
tensor<T> center_grid_x(size_t H, size_t W) {
    std::vector<T> v(H * W);
    for (size_t y = 0; y < H; ++y)
        for (size_t x = 0; x < W; ++x) v[y * W + x] = T(x);
    return tensor<T>::constant({H, W}, std::move(v));
}
template <class T>
tensor<T> center_grid_y(size_t H, size_t W) {
    std::vector<T> v(H * W);
    for (size_t y = 0; y < H; ++y)
        for (size_t x = 0; x < W; ++x) v[y * W + x] = T(y);
    return tensor<T>::constant({H, W}, std::move(v));
}

// [H,W] constant -> [N,1,H,W]
template <class T>
tensor<T> expand_plane(const tensor<T>& plane, size_t N) {
    const size_t H = plane.size(0), W = plane.size(1);
    tensor<T> r = reshape(plane, {1, 1, H, W});
    return N == 1 ? r : expand(r, 0, N);
}

// Sampling positions [N,k,H,W,2], (x, y) last. delta: [N,k-1,H,W] or
// undefined for zero offsets; theta: [N,1,H,W] or undefined for an exact
// zero rotation (no trig in that path, keeping rigid positions integral).
template <class T>
tensor<T> contour_position_grid(const tensor<T>& delta, const tensor<T>& theta,
                                deform_axis axis, size_t k, size_t N, size_t H,
                                size_t W) {
    check(k % 2 == 1, "contour positions: kernel length must be odd");
    const size_t hc = (k - 1) / 2;
    const bool x_axis = axis == deform_axis::x;
    const tensor<T> cx = center_grid_x<T>(H, W);
    const tensor<T> cy = center_grid_y<T>(H, W);
    tensor<T> ct, st;
    if (theta.defined()) {
        ct = cos(theta);
        st = sin(theta);
    }

    // cumulative perpendicular drift per tap (delta_0 = 0 by construction)
    std::vector<tensor<T>> drift_plus(hc), drift_minus(hc);
    if (delta.defined()) {
        check(delta.size(1) == k - 1, "contour positions: delta must have k-1 channels");
        tensor<T> acc;
        for (size_t c = 1; c <= hc; ++c) {
            tensor<T> d = slice(delta, 1, c - 1, 1);
            acc = c == 1 ? d : add(acc, d);
            drift_plus[c - 1] = acc;
        }
        for (size_t c = 1; c <= hc; ++c) {
            tensor<T> d = slice(delta, 1, hc + c - 1, 1);
            acc = c == 1 ? d : add(acc, d);
            drift_minus[c - 1] = acc;
        }
    }

    auto tap_coords = [&](double along_v, const tensor<T>& perp) -> tensor<T> {
        const T along = T(along_v);
        tensor<T> kx, ky;  // [N,1,H,W]
        if (theta.defined()) {
            // v rotated: (vx ct + vy st, -vx st + vy ct)
            tensor<T> dx, dy;
            if (x_axis) {  // v = (along, perp)
                dx = scale(ct, along);
                dy = scale(st, -along);
                if (perp.defined()) {
                    dx = add(dx, mul(perp, st));
                    dy = add(dy, mul(perp, ct));
                }
            } else {  // v = (perp, along)
                dx = scale(st, along);
                dy = scale(ct, along);
                if (perp.defined()) {
                    dx = add(dx, mul(perp, ct));
                    dy = sub(dy, mul(perp, st));
                }
            }
            kx = add(dx, cx);
            ky = add(dy, cy);
        } else {
            // zero rotation: K = center + v, exactly
            tensor<T> base_x = expand_plane(cx, N);
            tensor<T> base_y = expand_plane(cy, N);
            if (x_axis) {
                kx = along_v != 0.0 ? add_scalar(base_x, along) : base_x;
                ky = perp.defined() ? add(perp, cy) : base_y;
            } else {
                kx = perp.defined() ? add(perp, cx) : base_x;
                ky = along_v != 0.0 ? add_scalar(base_y, along) : base_y;
            }
        }
        kx = reshape(kx, {N, 1, H, W, 1});
        ky = reshape(ky, {N, 1, H, W, 1});
        return concat<T>({kx, ky}, 4);
    };

    std::vector<tensor<T>> taps(k);
    for (size_t j = 0; j < k; ++j) {
        const long c = long(j) - long(hc);
        tensor<T> perp;
        if (c > 0 && delta.defined()) perp = drift_plus[size_t(c) - 1];
        if (c < 0 && delta.defined()) perp = drift_minus[size_t(-c) - 1];
        taps[j] = tap_coords(double(c), perp);
    }
    return concat(taps, 1);  // [N,k,H,W,2]
}

}  // namespace detail

// Contract k bilinear samples per pixel with a [Cout, Cin, k] tap weight.
template <class T>
tensor<T> dcconv_apply(const tensor<T>& feature, const tensor<T>& weight,
                       const tensor<T>& bias, const tensor<T>& positions) {
    const size_t N = feature.size(0), Cin = feature.size(1), H = feature.size(2),
                 W = feature.size(3);
    const size_t Cout = weight.size(0), k = weight.size(2);
    check(weight.size(1) == Cin, "dcconv: weight expects ", weight.size(1),
          " input channels, feature has ", Cin);
    check(positions.ndim() == 5 && positions.size(1) == k,
          "dcconv: positions must be [N,k,H,W,2]");
    const size_t P = k * H * W;
    tensor<T> samples = bilinear_sample(feature, reshape(positions, {N, P, 2}));
    tensor<T> s4 = reshape(samples, {N, Cin, k, H * W});
    tensor<T> sp = reshape(permute(s4, {0, 3, 1, 2}), {N, H * W, Cin * k});
    tensor<T> wmat = permute(reshape(weight, {Cout, Cin * k}), {1, 0});
    tensor<T> out = matmul(sp, wmat);
    if (bias.defined()) out = add(out, bias);
    return reshape(permute(out, {0, 2, 1}), {N, Cout, H, W});
}

// Full forward for any mode. Output keeps the spatial size of the input.
template <class T>
tensor<T> dcconv_forward(const tensor<T>& feature, const dcconv_layer<T>& layer) {
    check(feature.ndim() == 4, "dcconv_forward: feature must be [N,Cin,H,W]");
    const size_t N = feature.size(0), H = feature.size(2), W = feature.size(3);
    const size_t k = layer.k;
    tensor<T> positions;
    switch (layer.mode) {
        case deform_mode::rigid:
            positions = detail::contour_position_grid(tensor<T>(), tensor<T>(),
                                                      layer.axis, k, N, H, W);
            break;
        case deform_mode::dsconv: {
            check(layer.head_w.defined(), "dcconv_forward: dsconv layer lacks a head");
            tensor<T> delta = tanh(conv2d(feature, layer.head_w, layer.head_b, 1, 1));
            tensor<T> zero_theta =
                tensor<T>::constant({N, 1, H, W}, std::vector<T>(N * H * W, T(0)));
            positions = detail::contour_position_grid(delta, zero_theta, layer.axis, k,
                                                      N, H, W);
            break;
        }
        case deform_mode::dcconv: {
            check(layer.head_w.defined(), "dcconv_forward: dcconv layer lacks a head");
            auto [delta, theta] =
                predict_offsets_angles(feature, layer.head_w, layer.head_b, k);
            positions =
                detail::contour_position_grid(delta, theta, layer.axis, k, N, H, W);
            break;
        }
        case deform_mode::dcn: {
            check(layer.head_w.defined(), "dcconv_forward: dcn layer lacks a head");
            tensor<T> raw = conv2d(feature, layer.head_w, layer.head_b, 1, 1);
            // [N,2k,H,W]: channel 2j is dx of tap j, 2j+1 its dy
            tensor<T> base = detail::contour_position_grid(tensor<T>(), tensor<T>(),
                                                           layer.axis, k, N, H, W);
            std::vector<tensor<T>> taps(k);
            for (size_t j = 0; j < k; ++j) {
                tensor<T> dx = reshape(slice(raw, 1, 2 * j, 1), {N, 1, H, W, 1});
                tensor<T> dy = reshape(slice(raw, 1, 2 * j + 1, 1), {N, 1, H, W, 1});
                taps[j] = concat<T>({dx, dy}, 4);
            }
            positions = add(base, concat(taps, 1));
            break;
        }
    }
    return dcconv_apply(feature, layer.weight, layer.bias, positions);
}

// Runs a dcconv layer's offsets through the dsconv position path (theta
// pinned to zero). Used to verify that dsconv is a restriction of dcconv.
template <class T>
tensor<T> dcconv_forward_frozen_theta(const tensor<T>& feature,
                                      const dcconv_layer<T>& layer) {
    check(layer.mode == deform_mode::dcconv, "frozen-theta run needs a dcconv layer");
    const size_t N = feature.size(0), H = feature.size(2), W = feature.size(3);
    auto [delta, theta] =
        predict_offsets_angles(feature, layer.head_w, layer.head_b, layer.k);
    (void)theta;
    tensor<T> zero_theta =
        tensor<T>::constant({N, 1, H, W}, std::vector<T>(N * H * W, T(0)));
    tensor<T> positions = detail::contour_position_grid(delta, zero_theta, layer.axis,
                                                        layer.k, N, H, W);
    return dcconv_apply(feature, layer.weight, layer.bias, positions);
}

}  // namespace wmamba
