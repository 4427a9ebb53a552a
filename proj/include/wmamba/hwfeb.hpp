// Hierarchical wavelet feature extraction: WFEMs turn wavelet sub-bands into
// spatial attention maps (two DCConv branches, x- and y-initialized, plus a
// standard 3x3 convolution, concatenated and projected to one channel), and
// spatial gating injects the maps into backbone stages.
#pragma once

#include "wmamba/dcconv.hpp"
#include "wmamba/wavelet.hpp"

namespace wmamba {

enum class gate_mode { gate_skip, add, concat_proj, gate_no_skip };
enum class band_mode { high_only, with_ll };

inline const char* to_string(gate_mode m) {
    switch (m) {
        case gate_mode::gate_skip: return "gate_skip";
        case gate_mode::add: return "add";
        case gate_mode::concat_proj: return "concat_proj";
        case gate_mode::gate_no_skip: return "gate_no_skip";
    }
    return "?";
}
inline const char* to_string(band_mode m) {
    return m == band_mode::high_only ? "high_only" : "with_ll";
}

template <class T>
struct wfem_params {
    band_mode bands = band_mode::high_only;
    dcconv_layer<T> dcconv_x;  // x-initialized, independent weights
    dcconv_layer<T> dcconv_y;  // y-initialized
    tensor<T> std_w, std_b;    // 3x3 conv, same output channels
    tensor<T> proj_w, proj_b;  // 1x1 projection to a single channel
};

template <class T>
wfem_params<T> make_wfem(size_t image_channels, size_t branch_channels, size_t k,
                         deform_mode mode, band_mode bands, rng& r) {
    const size_t cin = image_channels * (bands == band_mode::with_ll ? 4 : 3);
    wfem_params<T> p;
    p.bands = bands;
    p.dcconv_x = make_dcconv_layer<T>(cin, branch_channels, k, deform_axis::x, mode, r);
    p.dcconv_y = make_dcconv_layer<T>(cin, branch_channels, k, deform_axis::y, mode, r);
    p.std_w = detail::uniform_param<T>({branch_channels, cin, 3, 3}, cin * 9, r);
    p.std_b = detail::zeros_param<T>({branch_channels});
    p.proj_w = detail::uniform_param<T>({1, 3 * branch_channels, 1, 1},
                                        3 * branch_channels, r);
    p.proj_b = detail::zeros_param<T>({1});
    return p;
}

// Sub-bands -> attention map in (0,1), same spatial size as the bands.
template <class T>
tensor<T> wfem(const sub_bands<T>& bands, const wfem_params<T>& p) {
    std::vector<tensor<T>> selected;
    if (p.bands == band_mode::with_ll) selected.push_back(bands.ll);
    selected.push_back(bands.lh);
    selected.push_back(bands.hl);
    selected.push_back(bands.hh);
    tensor<T> input = concat(selected, 1);
    tensor<T> bx = dcconv_forward(input, p.dcconv_x);
    tensor<T> by = dcconv_forward(input, p.dcconv_y);
    tensor<T> bs = conv2d(input, p.std_w, p.std_b, 1, 1);
    tensor<T> cat = concat<T>({bx, by, bs}, 1);
    return sigmoid(conv2d(cat, p.proj_w, p.proj_b));
}

template <class T>
struct gate_params {
    gate_mode mode = gate_mode::gate_skip;
    tensor<T> proj_w, proj_b;  // 1x1 [C, C+1] -> C, concat_proj only
};

template <class T>
gate_params<T> make_gate(gate_mode mode, size_t channels, rng& r) {
    gate_params<T> g;
    g.mode = mode;
    if (mode == gate_mode::concat_proj) {
        g.proj_w = detail::uniform_param<T>({channels, channels + 1, 1, 1},
                                            channels + 1, r);
        g.proj_b = detail::zeros_param<T>({channels});
    }
    return g;
}

// gate_skip: F.A + F   gate_no_skip: F.A   add: F + A
// concat_proj: 1x1 projection of [F ; A] back to C channels.
template <class T>
tensor<T> spatial_gate(const tensor<T>& feature, const tensor<T>& attention,
                       const gate_params<T>& g) {
    check(feature.ndim() == 4 && attention.ndim() == 4, "spatial_gate: rank mismatch");
    check(attention.size(1) == 1, "spatial_gate: attention must have one channel");
    check(feature.size(0) == attention.size(0) && feature.size(2) == attention.size(2) &&
              feature.size(3) == attention.size(3),
          "spatial_gate: spatial size mismatch, feature ", shape_str(feature.shape()),
          " vs attention ", shape_str(attention.shape()));
    const size_t C = feature.size(1);
    switch (g.mode) {
        case gate_mode::gate_skip:
            return add(mul(feature, expand(attention, 1, C)), feature);
        case gate_mode::gate_no_skip:
            return mul(feature, expand(attention, 1, C));
        case gate_mode::add:
            return add(feature, expand(attention, 1, C));
        case gate_mode::concat_proj: {
            check(g.proj_w.defined(), "spatial_gate: concat_proj needs projection params");
            tensor<T> cat = concat<T>({feature, attention}, 1);
            return conv2d(cat, g.proj_w, g.proj_b);
        }
    }
    fail("spatial_gate: bad mode");
}

template <class T>
tensor<T> spatial_gate(const tensor<T>& feature, const tensor<T>& attention,
                       gate_mode mode) {
    check(mode != gate_mode::concat_proj,
          "spatial_gate: concat_proj requires gate_params");
    gate_params<T> g;
    g.mode = mode;
    return spatial_gate(feature, attention, g);
}

}  // namespace wmamba
