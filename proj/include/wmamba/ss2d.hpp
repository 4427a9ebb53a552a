// 2D selective scan: flatten a patch grid along four directions, run an
// independent S6 over each sequence, unflatten and fuse by averaging.
// Includes the VSS block (SS2D branch + FFN, both residual).
#pragma once

#include <array>

#include "wmamba/conv.hpp"
#include "wmamba/ssm.hpp"

namespace wmamba {

// cross: row-major, column-major, and their reversals (the cross-scan
// lineage). diag: row-major, column-major, plus the two true diagonal
// orderings (stripes of r+c and of r-c).
enum class scan_order { cross, diag };

inline const char* to_string(scan_order o) {
    return o == scan_order::cross ? "cross" : "diag";
}

// perm[j] = flat row-major token index read at sequence position j.
inline std::array<std::vector<size_t>, 4> scan_permutations(size_t hp, size_t wp,
                                                            scan_order order) {
    const size_t L = hp * wp;
    std::array<std::vector<size_t>, 4> perms;
    for (auto& p : perms) p.resize(L);
    for (size_t j = 0; j < L; ++j) perms[0][j] = j;  // row-major
    for (size_t j = 0; j < L; ++j) {                 // column-major
        const size_t col = j / hp, row = j % hp;
        perms[1][j] = row * wp + col;
    }
    if (order == scan_order::cross) {
        for (size_t j = 0; j < L; ++j) perms[2][j] = perms[0][L - 1 - j];
        for (size_t j = 0; j < L; ++j) perms[3][j] = perms[1][L - 1 - j];
    } else {
        // diagonal stripes r+c = 0..hp+wp-2, r ascending within a stripe
        size_t pos = 0;
        for (size_t s = 0; s < hp + wp - 1; ++s) {
            for (size_t r = 0; r < hp; ++r) {
                if (s < r || s - r >= wp) continue;
                perms[2][pos++] = r * wp + (s - r);
            }
        }
        // anti-diagonal stripes r - c = hp-1 .. -(wp-1), r ascending
        pos = 0;
        for (long s = long(hp) - 1; s > -long(wp); --s) {
            for (size_t r = 0; r < hp; ++r) {
                const long c = long(r) - s;
                if (c < 0 || c >= long(wp)) continue;
                perms[3][pos++] = r * wp + size_t(c);
            }
        }
    }
    return perms;
}

inline std::vector<size_t> invert_permutation(const std::vector<size_t>& p) {
    std::vector<size_t> inv(p.size());
    for (size_t j = 0; j < p.size(); ++j) inv[p[j]] = j;
    return inv;
}

// grid [N,Hp,Wp,C] -> four sequences [N,L,C].
template <class T>
std::array<tensor<T>, 4> cross_scan(const tensor<T>& grid,
                                    scan_order order = scan_order::cross) {
    check(grid.ndim() == 4, "cross_scan: grid must be [N,Hp,Wp,C], got ",
          shape_str(grid.shape()));
    const size_t N = grid.size(0), hp = grid.size(1), wp = grid.size(2),
                 C = grid.size(3);
    tensor<T> tokens = reshape(grid, {N, hp * wp, C});
    auto perms = scan_permutations(hp, wp, order);
    std::array<tensor<T>, 4> seqs;
    for (size_t d = 0; d < 4; ++d) seqs[d] = index_select(tokens, 1, perms[d]);
    return seqs;
}

// Inverse of cross_scan followed by an arithmetic mean over directions.
template <class T>
tensor<T> cross_merge(const std::array<tensor<T>, 4>& seqs, size_t hp, size_t wp,
                      scan_order order = scan_order::cross) {
    const size_t L = hp * wp;
    for (const auto& s : seqs)
        check(s.ndim() == 3 && s.size(1) == L, "cross_merge: sequence length ",
              s.defined() ? s.size(1) : 0, " != ", L);
    const size_t N = seqs[0].size(0), C = seqs[0].size(2);
    auto perms = scan_permutations(hp, wp, order);
    tensor<T> acc;
    for (size_t d = 0; d < 4; ++d) {
        tensor<T> un = index_select(seqs[d], 1, invert_permutation(perms[d]));
        acc = d == 0 ? un : add(acc, un);
    }
    return reshape(scale(acc, T(0.25)), {N, hp, wp, C});
}

// ---------------------------------------------------------------------------
// VSS block.
// ---------------------------------------------------------------------------

template <class T>
struct vss_block_params {
    size_t dim = 0;        // C
    size_t inner = 0;      // expanded channel count (2C)
    size_t state_dim = 0;  // N per channel
    scan_order order = scan_order::cross;

    tensor<T> norm1_g, norm1_b;
    tensor<T> in_proj_w, in_proj_b;  // [C, 2*inner]: x branch + gate
    tensor<T> dw_w, dw_b;            // depthwise 3x3 [inner,1,3,3]
    std::array<tensor<T>, 4> a;      // [inner, N] per direction
    std::array<tensor<T>, 4> dskip;  // [inner] per direction
    std::array<selective_heads<T>, 4> heads;
    tensor<T> out_norm_g, out_norm_b;
    tensor<T> out_proj_w, out_proj_b;  // [inner, C]
    tensor<T> norm2_g, norm2_b;
    tensor<T> ffn_w1, ffn_b1;  // [C, 4C]
    tensor<T> ffn_w2, ffn_b2;  // [4C, C]
};

// Expansion factor 2 on the SS2D branch, 4 with GELU on the FFN. Delta bias
// is set so softplus lands log-uniformly in [0.01, 0.1].
template <class T>
vss_block_params<T> make_vss_block(size_t dim, size_t state_dim, rng& r,
                                   scan_order order = scan_order::cross) {
    vss_block_params<T> p;
    p.dim = dim;
    p.inner = 2 * dim;
    p.state_dim = state_dim;
    p.order = order;
    const size_t ci = p.inner;
    p.norm1_g = detail::ones_param<T>({dim});
    p.norm1_b = detail::zeros_param<T>({dim});
    p.in_proj_w = detail::uniform_param<T>({dim, 2 * ci}, dim, r);
    p.in_proj_b = detail::zeros_param<T>({2 * ci});
    p.dw_w = detail::uniform_param<T>({ci, 1, 3, 3}, 9, r);
    p.dw_b = detail::zeros_param<T>({ci});
    for (size_t d = 0; d < 4; ++d) {
        p.a[d] = s4d_real_init<T>(ci, state_dim);
        p.dskip[d] = detail::ones_param<T>({ci});
        p.heads[d].w_delta = detail::uniform_param<T>({ci, ci}, ci, r);
        std::vector<T> bd(ci);
        for (auto& v : bd) {
            const double dt = std::exp(r.uniform(std::log(0.01), std::log(0.1)));
            v = T(std::log(std::expm1(dt)));  // softplus inverse
        }
        p.heads[d].b_delta = tensor<T>::param({ci}, std::move(bd));
        p.heads[d].w_b = detail::uniform_param<T>({ci, state_dim}, ci, r);
        p.heads[d].w_c = detail::uniform_param<T>({ci, state_dim}, ci, r);
    }
    p.out_norm_g = detail::ones_param<T>({ci});
    p.out_norm_b = detail::zeros_param<T>({ci});
    p.out_proj_w = detail::uniform_param<T>({ci, dim}, ci, r);
    p.out_proj_b = detail::zeros_param<T>({dim});
    p.norm2_g = detail::ones_param<T>({dim});
    p.norm2_b = detail::zeros_param<T>({dim});
    p.ffn_w1 = detail::uniform_param<T>({dim, 4 * dim}, dim, r);
    p.ffn_b1 = detail::zeros_param<T>({4 * dim});
    p.ffn_w2 = detail::uniform_param<T>({4 * dim, dim}, 4 * dim, r);
    p.ffn_b2 = detail::zeros_param<T>({dim});
    return p;
}

// y = x + SS2D(norm(x)); out = y + FFN(norm(y)).
// SS2D: in-proj -> depthwise 3x3 -> SiLU -> 4-direction S6 -> merge ->
// norm -> * SiLU(gate) -> out-proj.
template <class T>
tensor<T> vss_block(const tensor<T>& grid, const vss_block_params<T>& p) {
    check(grid.ndim() == 4 && grid.size(3) == p.dim, "vss_block: grid must be [N,Hp,Wp,",
          p.dim, "], got ", shape_str(grid.shape()));
    const size_t N = grid.size(0), hp = grid.size(1), wp = grid.size(2);
    const size_t L = hp * wp, ci = p.inner;

    tensor<T> x_tokens = reshape(grid, {N, L, p.dim});
    tensor<T> h = layer_norm(x_tokens, p.norm1_g, p.norm1_b);
    tensor<T> xz = add(matmul(h, p.in_proj_w), p.in_proj_b);  // [N,L,2ci]
    tensor<T> xb = slice(xz, 2, 0, ci);
    tensor<T> z = slice(xz, 2, ci, ci);

    // depthwise mixing convolution runs in NCHW
    tensor<T> xg = permute(reshape(xb, {N, hp, wp, ci}), {0, 3, 1, 2});
    xg = conv2d(xg, p.dw_w, p.dw_b, 1, 1, ci);
    xb = reshape(permute(xg, {0, 2, 3, 1}), {N, L, ci});
    xb = silu(xb);

    auto seqs = cross_scan(reshape(xb, {N, hp, wp, ci}), p.order);
    std::array<tensor<T>, 4> ys;
    for (size_t d = 0; d < 4; ++d)
        ys[d] = selective_scan(seqs[d], p.a[d], p.dskip[d], p.heads[d]);
    tensor<T> merged = cross_merge(ys, hp, wp, p.order);  // [N,hp,wp,ci]

    tensor<T> m = layer_norm(reshape(merged, {N, L, ci}), p.out_norm_g, p.out_norm_b);
    tensor<T> gated = mul(m, silu(z));
    tensor<T> out = add(matmul(gated, p.out_proj_w), p.out_proj_b);  // [N,L,dim]
    tensor<T> y = add(x_tokens, out);

    tensor<T> f = layer_norm(y, p.norm2_g, p.norm2_b);
    f = gelu(add(matmul(f, p.ffn_w1), p.ffn_b1));
    f = add(matmul(f, p.ffn_w2), p.ffn_b2);
    return reshape(add(y, f), {N, hp, wp, p.dim});
}

}  // namespace wmamba
