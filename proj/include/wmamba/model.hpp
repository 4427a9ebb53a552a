// Full classifier: patchify stem, VSS stages gated by wavelet attention,
// global pooling and a two-way head. Also the AdamW optimizer, the training
// step, AUC evaluation, and the checkpoint container.
#pragma once

#include <map>

#include "wmamba/hwfeb.hpp"
#include "wmamba/serialize.hpp"
#include "wmamba/ss2d.hpp"

namespace wmamba {

struct model_config {
    size_t input_size = 64;
    size_t stem_patch = 4;
    std::vector<size_t> stage_depths = {2, 2};
    std::vector<size_t> stage_dims = {32, 64};
    size_t ssm_state_dim = 16;
    size_t dcconv_k = 5;
    size_t wfem_channels = 8;
    gate_mode gate = gate_mode::gate_skip;
    band_mode bands = band_mode::high_only;
    bool multi_hierarchy = true;  // false: gate only the first stage
    deform_mode deform = deform_mode::dcconv;
    scan_order order = scan_order::cross;
    uint64_t seed = 0;

    size_t num_stages() const { return stage_dims.size(); }
    size_t stem_level() const {
        size_t p = stem_patch, l = 0;
        while (p > 1) {
            check(p % 2 == 0, "model_config: stem_patch must be a power of two");
            p /= 2;
            ++l;
        }
        return l;
    }
    void validate() const {
        check(!stage_dims.empty() && stage_dims.size() == stage_depths.size(),
              "model_config: stage_dims/stage_depths must be non-empty and equal length");
        check(stem_patch >= 2, "model_config: stem_patch must be >= 2");
        const size_t l = stem_level();
        const size_t div = size_t(1) << (l + num_stages() - 1);
        check(input_size % div == 0, "model_config: input_size ", input_size,
              " must be divisible by ", div, " (stem and stage alignment)");
        check(input_size / div >= 2, "model_config: final stage resolution below 2");
        check(dcconv_k % 2 == 1, "model_config: dcconv_k must be odd");
    }

    // The configuration reported at full paper scale; not used by tests.
    static model_config paper_preset() {
        model_config c;
        c.input_size = 224;
        c.stem_patch = 4;
        c.stage_depths = {2, 2, 15, 2};
        c.stage_dims = {96, 192, 384, 768};
        c.dcconv_k = 9;
        return c;
    }
};

inline gate_mode parse_gate_mode(const std::string& s) {
    if (s == "gate_skip") return gate_mode::gate_skip;
    if (s == "add") return gate_mode::add;
    if (s == "concat_proj") return gate_mode::concat_proj;
    if (s == "gate_no_skip") return gate_mode::gate_no_skip;
    fail("unknown gate mode '", s, "'");
}
inline band_mode parse_band_mode(const std::string& s) {
    if (s == "high_only") return band_mode::high_only;
    if (s == "with_ll") return band_mode::with_ll;
    fail("unknown band mode '", s, "'");
}
inline deform_mode parse_deform_mode(const std::string& s) {
    if (s == "dcconv") return deform_mode::dcconv;
    if (s == "dsconv") return deform_mode::dsconv;
    if (s == "dcn") return deform_mode::dcn;
    if (s == "rigid") return deform_mode::rigid;
    fail("unknown deform mode '", s, "'");
}
inline scan_order parse_scan_order(const std::string& s) {
    if (s == "cross") return scan_order::cross;
    if (s == "diag") return scan_order::diag;
    fail("unknown scan order '", s, "'");
}

namespace detail {
inline std::string join_sizes(const std::vector<size_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}
inline std::vector<size_t> split_sizes(const std::string& s) {
    std::vector<size_t> out;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        out.push_back(size_t(std::stoull(s.substr(pos, next - pos))));
        pos = next + 1;
    }
    return out;
}
}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> config_to_kv(
    const model_config& c) {
    return {
        {"input_size", std::to_string(c.input_size)},
        {"stem_patch", std::to_string(c.stem_patch)},
        {"stage_depths", detail::join_sizes(c.stage_depths)},
        {"stage_dims", detail::join_sizes(c.stage_dims)},
        {"ssm_state_dim", std::to_string(c.ssm_state_dim)},
        {"dcconv_k", std::to_string(c.dcconv_k)},
        {"wfem_channels", std::to_string(c.wfem_channels)},
        {"gate_mode", to_string(c.gate)},
        {"band_mode", to_string(c.bands)},
        {"hierarchy", c.multi_hierarchy ? "multi" : "single"},
        {"deform_mode", to_string(c.deform)},
        {"scan_order", to_string(c.order)},
        {"seed", std::to_string(c.seed)},
    };
}

inline void config_set_kv(model_config& c, const std::string& key,
                          const std::string& value) {
    if (key == "input_size")
        c.input_size = std::stoull(value);
    else if (key == "stem_patch")
        c.stem_patch = std::stoull(value);
    else if (key == "stage_depths")
        c.stage_depths = detail::split_sizes(value);
    else if (key == "stage_dims")
        c.stage_dims = detail::split_sizes(value);
    else if (key == "ssm_state_dim")
        c.ssm_state_dim = std::stoull(value);
    else if (key == "dcconv_k")
        c.dcconv_k = std::stoull(value);
    else if (key == "wfem_channels")
        c.wfem_channels = std::stoull(value);
    else if (key == "gate_mode")
        c.gate = parse_gate_mode(value);
    else if (key == "band_mode")
        c.bands = parse_band_mode(value);
    else if (key == "hierarchy") {
        check(value == "multi" || value == "single", "hierarchy must be multi|single");
        c.multi_hierarchy = value == "multi";
    } else if (key == "deform_mode")
        c.deform = parse_deform_mode(value);
    else if (key == "scan_order")
        c.order = parse_scan_order(value);
    else if (key == "seed")
        c.seed = std::stoull(value);
    else
        fail("unknown model config key '", key, "'");
}

// ---------------------------------------------------------------------------
// Model.
// ---------------------------------------------------------------------------

template <class T>
class wmamba_model {
  public:
    explicit wmamba_model(const model_config& cfg) : cfg_(cfg) {
        cfg_.validate();
        rng r(cfg_.seed, /*stream=*/1);
        const size_t S = cfg_.num_stages();
        stem_w_ = detail::uniform_param<T>(
            {cfg_.stage_dims[0], 3, cfg_.stem_patch, cfg_.stem_patch},
            3 * cfg_.stem_patch * cfg_.stem_patch, r);
        stem_b_ = detail::zeros_param<T>({cfg_.stage_dims[0]});
        stem_ln_g_ = detail::ones_param<T>({cfg_.stage_dims[0]});
        stem_ln_b_ = detail::zeros_param<T>({cfg_.stage_dims[0]});
        const size_t gated = cfg_.multi_hierarchy ? S : 1;
        for (size_t s = 0; s < gated; ++s) {
            gate_stage g;
            g.wfem = make_wfem<T>(3, cfg_.wfem_channels, cfg_.dcconv_k, cfg_.deform,
                                  cfg_.bands, r);
            g.gate = make_gate<T>(cfg_.gate, cfg_.stage_dims[s], r);
            gates_.push_back(std::move(g));
        }
        blocks_.resize(S);
        for (size_t s = 0; s < S; ++s)
            for (size_t b = 0; b < cfg_.stage_depths[s]; ++b)
                blocks_[s].push_back(make_vss_block<T>(cfg_.stage_dims[s],
                                                       cfg_.ssm_state_dim, r,
                                                       cfg_.order));
        for (size_t s = 0; s + 1 < S; ++s) {
            down_w_.push_back(detail::uniform_param<T>(
                {cfg_.stage_dims[s + 1], cfg_.stage_dims[s], 2, 2},
                cfg_.stage_dims[s] * 4, r));
            down_b_.push_back(detail::zeros_param<T>({cfg_.stage_dims[s + 1]}));
        }
        final_ln_g_ = detail::ones_param<T>({cfg_.stage_dims.back()});
        final_ln_b_ = detail::zeros_param<T>({cfg_.stage_dims.back()});
        head_w_ = detail::uniform_param<T>({cfg_.stage_dims.back(), 2},
                                           cfg_.stage_dims.back(), r);
        head_b_ = detail::zeros_param<T>({2});
    }

    const model_config& config() const { return cfg_; }

    // logits [N,2]; gating uses attention maps from the input's DWT pyramid
    tensor<T> forward(const tensor<T>& images, bool force_zero_attention = false) const {
        return forward_impl(images, /*gated=*/true, force_zero_attention);
    }
    // the plain backbone, no wavelet branch
    tensor<T> backbone_forward(const tensor<T>& images) const {
        return forward_impl(images, /*gated=*/false, false);
    }

    template <class F>
    void visit_params(F&& f) {
        f("stem.w", stem_w_);
        f("stem.b", stem_b_);
        f("stem.ln.g", stem_ln_g_);
        f("stem.ln.b", stem_ln_b_);
        for (size_t i = 0; i < gates_.size(); ++i) {
            const std::string p = "gate" + std::to_string(i) + ".";
            visit_dcconv(f, p + "dcx.", gates_[i].wfem.dcconv_x);
            visit_dcconv(f, p + "dcy.", gates_[i].wfem.dcconv_y);
            f(p + "std.w", gates_[i].wfem.std_w);
            f(p + "std.b", gates_[i].wfem.std_b);
            f(p + "proj.w", gates_[i].wfem.proj_w);
            f(p + "proj.b", gates_[i].wfem.proj_b);
            if (gates_[i].gate.proj_w.defined()) {
                f(p + "fuse.w", gates_[i].gate.proj_w);
                f(p + "fuse.b", gates_[i].gate.proj_b);
            }
        }
        for (size_t s = 0; s < blocks_.size(); ++s)
            for (size_t b = 0; b < blocks_[s].size(); ++b) {
                const std::string p =
                    "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
                auto& q = blocks_[s][b];
                f(p + "norm1.g", q.norm1_g);
                f(p + "norm1.b", q.norm1_b);
                f(p + "in_proj.w", q.in_proj_w);
                f(p + "in_proj.b", q.in_proj_b);
                f(p + "dw.w", q.dw_w);
                f(p + "dw.b", q.dw_b);
                for (size_t d = 0; d < 4; ++d) {
                    const std::string dp = p + "dir" + std::to_string(d) + ".";
                    f(dp + "a", q.a[d]);
                    f(dp + "d", q.dskip[d]);
                    f(dp + "w_delta", q.heads[d].w_delta);
                    f(dp + "b_delta", q.heads[d].b_delta);
                    f(dp + "w_b", q.heads[d].w_b);
                    f(dp + "w_c", q.heads[d].w_c);
                }
                f(p + "out_norm.g", q.out_norm_g);
                f(p + "out_norm.b", q.out_norm_b);
                f(p + "out_proj.w", q.out_proj_w);
                f(p + "out_proj.b", q.out_proj_b);
                f(p + "norm2.g", q.norm2_g);
                f(p + "norm2.b", q.norm2_b);
                f(p + "ffn.w1", q.ffn_w1);
                f(p + "ffn.b1", q.ffn_b1);
                f(p + "ffn.w2", q.ffn_w2);
                f(p + "ffn.b2", q.ffn_b2);
            }
        for (size_t s = 0; s < down_w_.size(); ++s) {
            f("down" + std::to_string(s) + ".w", down_w_[s]);
            f("down" + std::to_string(s) + ".b", down_b_[s]);
        }
        f("final_ln.g", final_ln_g_);
        f("final_ln.b", final_ln_b_);
        f("head.w", head_w_);
        f("head.b", head_b_);
    }

    std::vector<std::pair<std::string, tensor<T>>> named_params() const {
        std::vector<std::pair<std::string, tensor<T>>> out;
        const_cast<wmamba_model*>(this)->visit_params(
            [&](const std::string& name, tensor<T>& t) { out.emplace_back(name, t); });
        return out;
    }

    size_t param_count() const {
        size_t n = 0;
        for (auto& [name, t] : named_params()) n += t.numel();
        return n;
    }

    // Independent parameter copies sharing nothing with this model; used to
    // record per-sample gradients on worker threads.
    wmamba_model clone() const {
        wmamba_model c = *this;
        c.visit_params([](const std::string&, tensor<T>& t) {
            t = tensor<T>::param(t.shape(), t.data());
        });
        return c;
    }

  private:
    template <class F>
    static void visit_dcconv(F&& f, const std::string& p, dcconv_layer<T>& l) {
        f(p + "w", l.weight);
        f(p + "b", l.bias);
        if (l.head_w.defined()) {
            f(p + "head.w", l.head_w);
            f(p + "head.b", l.head_b);
        }
    }

    tensor<T> forward_impl(const tensor<T>& images, bool gated,
                           bool force_zero_attention) const {
        check(images.ndim() == 4 && images.size(1) == 3, "forward: images must be ",
              "[N,3,S,S], got ", shape_str(images.shape()));
        check(images.size(2) == cfg_.input_size && images.size(3) == cfg_.input_size,
              "forward: expected input size ", cfg_.input_size, ", got ",
              shape_str(images.shape()));
        if (debug_checks())
            for (T v : images.data())
                check(v >= T(0) && v <= T(1), "forward: image values must lie in [0,1]");

        const size_t N = images.size(0), S = cfg_.num_stages();
        const size_t base = cfg_.stem_level();

        wavelet_pyramid<T> pyr;
        if (gated)
            pyr = dwt_pyramid(images, base + (cfg_.multi_hierarchy ? S : 1) - 1);

        // stem: patchify + layer norm (channels-last from here on)
        tensor<T> x = conv2d(images, stem_w_, stem_b_, cfg_.stem_patch, 0);
        size_t hp = x.size(2), wp = x.size(3);
        tensor<T> grid = permute(x, {0, 2, 3, 1});
        grid = layer_norm(grid, stem_ln_g_, stem_ln_b_);

        for (size_t s = 0; s < S; ++s) {
            const bool gate_here = gated && (cfg_.multi_hierarchy ? true : s == 0) &&
                                   s < gates_.size();
            if (gate_here) {
                tensor<T> f_nchw = permute(grid, {0, 3, 1, 2});
                tensor<T> att;
                if (force_zero_attention)
                    att = tensor<T>::constant({N, 1, hp, wp},
                                              std::vector<T>(N * hp * wp, T(0)));
                else
                    att = wfem(pyr.levels[base + s - 1], gates_[s].wfem);
                f_nchw = spatial_gate(f_nchw, att, gates_[s].gate);
                grid = permute(f_nchw, {0, 2, 3, 1});
            }
            for (const auto& blk : blocks_[s]) grid = vss_block(grid, blk);
            if (s + 1 < S) {
                tensor<T> nchw = permute(grid, {0, 3, 1, 2});
                nchw = conv2d(nchw, down_w_[s], down_b_[s], 2, 0);
                hp = nchw.size(2);
                wp = nchw.size(3);
                grid = permute(nchw, {0, 2, 3, 1});
            }
        }

        tensor<T> tokens = reshape(grid, {N, hp * wp, cfg_.stage_dims.back()});
        tokens = layer_norm(tokens, final_ln_g_, final_ln_b_);
        tensor<T> pooled = mean_axis(tokens, 1);  // [N,C]
        return add(matmul(pooled, head_w_), head_b_);
    }

    struct gate_stage {
        wfem_params<T> wfem;
        gate_params<T> gate;
    };

    model_config cfg_;
    tensor<T> stem_w_, stem_b_, stem_ln_g_, stem_ln_b_;
    std::vector<gate_stage> gates_;
    std::vector<std::vector<vss_block_params<T>>> blocks_;
    std::vector<tensor<T>> down_w_, down_b_;
    tensor<T> final_ln_g_, final_ln_b_, head_w_, head_b_;
};

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay (both scaled by the step's
// learning rate, so lr = 0 leaves parameters bit-identical).
// ---------------------------------------------------------------------------

template <class T>
struct adamw {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.05;
    size_t t = 0;
    std::vector<std::vector<T>> m, v;

    void init(const std::vector<std::pair<std::string, tensor<T>>>& params) {
        m.clear();
        v.clear();
        for (auto& [name, p] : params) {
            m.emplace_back(p.numel(), T(0));
            v.emplace_back(p.numel(), T(0));
        }
    }

    void step(std::vector<std::pair<std::string, tensor<T>>>& params,
              const std::vector<std::vector<T>>& grads, double lr) {
        check(m.size() == params.size(), "adamw: not initialized for these params");
        check(grads.size() == params.size(), "adamw: gradient count mismatch");
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (size_t k = 0; k < params.size(); ++k) {
            auto& p = params[k].second.data();
            const auto& g = grads[k];
            check(g.size() == p.size(), "adamw: gradient size mismatch at ",
                  params[k].first);
            auto& mk = m[k];
            auto& vk = v[k];
            for (size_t i = 0; i < p.size(); ++i) {
                const double gi = double(g[i]);
                mk[i] = T(beta1 * double(mk[i]) + (1 - beta1) * gi);
                vk[i] = T(beta2 * double(vk[i]) + (1 - beta2) * gi * gi);
                const double mhat = double(mk[i]) / bc1;
                const double vhat = double(vk[i]) / bc2;
                p[i] = T(double(p[i]) -
                         lr * (mhat / (std::sqrt(vhat) + eps) +
                               weight_decay * double(p[i])));
            }
        }
    }
};

// Constant for the first half of the run, then linear decay toward zero.
inline double lr_schedule(double base_lr, size_t step, size_t total_steps) {
    if (total_steps == 0) return base_lr;
    const size_t half = total_steps / 2;
    if (step < half || total_steps == half) return base_lr;
    return base_lr * double(total_steps - step) / double(total_steps - half);
}

// ---------------------------------------------------------------------------
// Training step: the batch is sharded into per-sample graphs (each worker
// trains a parameter clone), and per-sample gradients are reduced in sample
// order so results are identical for every worker count.
// ---------------------------------------------------------------------------

template <class T>
double train_step(wmamba_model<T>& model, adamw<T>& opt,
                  const std::vector<tensor<T>>& images, const std::vector<int>& labels,
                  double lr) {
    const size_t B = images.size();
    check(B > 0 && labels.size() == B, "train_step: batch images/labels mismatch");
    auto params = model.named_params();
    if (opt.m.empty()) opt.init(params);

    std::vector<std::vector<std::vector<T>>> sample_grads(B);
    std::vector<double> sample_loss(B);
    parallel_for(B, [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            wmamba_model<T> local = model.clone();
            const auto& img = images[i];
            tensor<T> input = reshape(img, {1, img.size(0), img.size(1), img.size(2)});
            tensor<T> logits = local.forward(input);
            tensor<T> loss = cross_entropy(logits, {labels[i]});
            const double lv = double(loss.item());
            if (!std::isfinite(lv))
                fail("train_step: non-finite loss ", lv, " at batch sample ", i,
                     " (label ", labels[i], ")");
            backward(loss);
            sample_loss[i] = lv;
            auto& dst = sample_grads[i];
            local.visit_params([&](const std::string&, tensor<T>& t) {
                dst.push_back(t.has_grad() ? t.grad()
                                           : std::vector<T>(t.numel(), T(0)));
            });
        }
    });

    // fixed-order reduction: sample 0, 1, 2, ...
    std::vector<std::vector<T>> grads(params.size());
    for (size_t k = 0; k < params.size(); ++k)
        grads[k].assign(params[k].second.numel(), T(0));
    for (size_t i = 0; i < B; ++i)
        for (size_t k = 0; k < params.size(); ++k) {
            const auto& g = sample_grads[i][k];
            auto& acc = grads[k];
            for (size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
        }
    const T inv_b = T(1) / T(B);
    for (auto& g : grads)
        for (auto& x : g) x *= inv_b;

    opt.step(params, grads, lr);

    double total = 0;
    for (size_t i = 0; i < B; ++i) total += sample_loss[i];
    return total / double(B);
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

// Mann-Whitney AUC with ties credited one half. Requires both classes.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check(scores.size() == labels.size(), "auc: scores/labels length mismatch");
    size_t npos = 0, nneg = 0;
    for (int l : labels) {
        check(l == 0 || l == 1, "auc: labels must be 0 or 1");
        (l == 1 ? npos : nneg)++;
    }
    check(npos > 0 && nneg > 0, "auc: undefined for a single-class dataset (", npos,
          " positive, ", nneg, " negative)");
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a < b;
    });
    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j);  // ranks are 1-based
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - double(npos) * double(npos + 1) / 2.0;
    return u / (double(npos) * double(nneg));
}

// Per-sample forward under no_grad, sharded across workers; the score is
// softmax(logits)[fake].
template <class T>
std::vector<double> score_samples(const wmamba_model<T>& model,
                                  const std::vector<tensor<T>>& images) {
    std::vector<double> scores(images.size());
    parallel_for(images.size(), [&](size_t lo, size_t hi) {
        no_grad_guard ng;
        for (size_t i = lo; i < hi; ++i) {
            const auto& img = images[i];
            tensor<T> input = reshape(img, {1, img.size(0), img.size(1), img.size(2)});
            tensor<T> probs = softmax(model.forward(input));
            scores[i] = double(probs.data()[1]);
        }
    });
    return scores;
}

struct eval_result {
    double auc = 0;
    double accuracy = 0;
    std::vector<double> scores;
};

template <class T>
eval_result evaluate(const wmamba_model<T>& model, const std::vector<tensor<T>>& images,
                     const std::vector<int>& labels) {
    check(images.size() == labels.size(), "evaluate: images/labels mismatch");
    eval_result r;
    r.scores = score_samples(model, images);
    r.auc = auc(r.scores, labels);
    size_t correct = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const int pred = r.scores[i] >= 0.5 ? 1 : 0;
        if (pred == labels[i]) ++correct;
    }
    r.accuracy = double(correct) / double(labels.size());
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoints: "WMBK", u32 version, parameter table, length-prefixed
// key=value config text, optimizer-state table (same tensor encoding).
// ---------------------------------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_tensor_entry(std::ostream& os, const std::string& name, const tensor<T>& t) {
    check(name.size() <= 0xFFFF, "checkpoint: name too long");
    io::put_u16(os, uint16_t(name.size()));
    io::put_bytes(os, name.data(), name.size());
    io::put_u8(os, io::dtype_tag<T>());
    io::put_u8(os, uint8_t(t.ndim()));
    for (size_t d : t.shape()) io::put_u64(os, d);
    io::put_payload(os, t.data());
}

template <class T>
std::pair<std::string, tensor<T>> read_tensor_entry(std::istream& is) {
    const uint16_t len = io::get_u16(is);
    std::string name(len, '\0');
    io::get_bytes(is, name.data(), len);
    const uint8_t tag = io::get_u8(is);
    check(tag == io::dtype_tag<T>(), "checkpoint: dtype mismatch for '", name, "'");
    const uint8_t ndim = io::get_u8(is);
    shape_t shape(ndim);
    for (auto& d : shape) d = io::get_u64(is);
    std::vector<T> data(numel(shape));
    io::get_payload(is, data);
    return {std::move(name), tensor<T>::constant(std::move(shape), std::move(data))};
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const wmamba_model<T>& model,
                     const adamw<T>* opt,
                     const std::vector<std::pair<std::string, std::string>>& extra = {}) {
    std::ofstream os(path, std::ios::binary);
    check(bool(os), "save_checkpoint: cannot open ", path);
    io::put_bytes(os, "WMBK", 4);
    io::put_u32(os, kCheckpointVersion);

    auto params = model.named_params();
    io::put_u32(os, uint32_t(params.size()));
    for (auto& [name, t] : params) detail::write_tensor_entry(os, name, t);

    std::string cfg_text;
    for (auto& [k, v] : config_to_kv(model.config())) cfg_text += k + "=" + v + "\n";
    if (opt) {
        cfg_text += "opt_t=" + std::to_string(opt->t) + "\n";
        cfg_text += "opt_beta1=" + std::to_string(opt->beta1) + "\n";
        cfg_text += "opt_beta2=" + std::to_string(opt->beta2) + "\n";
        cfg_text += "opt_weight_decay=" + std::to_string(opt->weight_decay) + "\n";
    }
    for (auto& [k, v] : extra) cfg_text += k + "=" + v + "\n";
    io::put_u32(os, uint32_t(cfg_text.size()));
    io::put_bytes(os, cfg_text.data(), cfg_text.size());

    if (opt) {
        io::put_u32(os, uint32_t(2 * params.size()));
        for (size_t k = 0; k < params.size(); ++k) {
            const auto& shape = params[k].second.shape();
            detail::write_tensor_entry(os, params[k].first + ".m",
                                       tensor<T>::constant(shape, opt->m[k]));
            detail::write_tensor_entry(os, params[k].first + ".v",
                                       tensor<T>::constant(shape, opt->v[k]));
        }
    } else {
        io::put_u32(os, 0);
    }
    check(bool(os), "save_checkpoint: write failed for ", path);
}

template <class T>
struct loaded_checkpoint {
    wmamba_model<T> model;
    adamw<T> opt;
    bool has_opt = false;
    std::map<std::string, std::string> kv;  // full config text, incl. extras
};

template <class T>
loaded_checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(bool(is), "load_checkpoint: cannot open ", path);
    char magic[4];
    io::get_bytes(is, magic, 4);
    check(std::memcmp(magic, "WMBK", 4) == 0, "load_checkpoint: bad magic in ", path);
    const uint32_t version = io::get_u32(is);
    check(version == kCheckpointVersion, "load_checkpoint: unsupported version ",
          version);

    const uint32_t count = io::get_u32(is);
    std::map<std::string, tensor<T>> table;
    for (uint32_t i = 0; i < count; ++i) {
        auto [name, t] = detail::read_tensor_entry<T>(is);
        table.emplace(std::move(name), std::move(t));
    }

    const uint32_t cfg_len = io::get_u32(is);
    std::string cfg_text(cfg_len, '\0');
    io::get_bytes(is, cfg_text.data(), cfg_len);
    std::map<std::string, std::string> kv;
    size_t pos = 0;
    while (pos < cfg_text.size()) {
        size_t nl = cfg_text.find('\n', pos);
        if (nl == std::string::npos) nl = cfg_text.size();
        const std::string line = cfg_text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        check(eq != std::string::npos, "load_checkpoint: bad config line '", line, "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    model_config cfg;
    for (auto& [k, v] : config_to_kv(cfg)) {
        auto it = kv.find(k);
        check(it != kv.end(), "load_checkpoint: missing config key '", k, "'");
        config_set_kv(cfg, k, it->second);
        (void)v;
    }

    loaded_checkpoint<T> out{wmamba_model<T>(cfg), adamw<T>{}, false, kv};
    out.model.visit_params([&](const std::string& name, tensor<T>& t) {
        auto it = table.find(name);
        check(it != table.end(), "load_checkpoint: parameter '", name, "' missing");
        check(it->second.shape() == t.shape(), "load_checkpoint: shape mismatch for '",
              name, "'");
        t = tensor<T>::param(it->second.shape(), it->second.data());
    });

    const uint32_t opt_count = io::get_u32(is);
    if (opt_count > 0) {
        std::map<std::string, tensor<T>> opt_table;
        for (uint32_t i = 0; i < opt_count; ++i) {
            auto [name, t] = detail::read_tensor_entry<T>(is);
            opt_table.emplace(std::move(name), std::move(t));
        }
        auto params = out.model.named_params();
        out.opt.init(params);
        for (size_t k = 0; k < params.size(); ++k) {
            auto im = opt_table.find(params[k].first + ".m");
            auto iv = opt_table.find(params[k].first + ".v");
            check(im != opt_table.end() && iv != opt_table.end(),
                  "load_checkpoint: optimizer state missing for '", params[k].first, "'");
            out.opt.m[k] = im->second.data();
            out.opt.v[k] = iv->second.data();
        }
        if (auto it = kv.find("opt_t"); it != kv.end())
            out.opt.t = std::stoull(it->second);
        if (auto it = kv.find("opt_beta1"); it != kv.end())
            out.opt.beta1 = std::stod(it->second);
        if (auto it = kv.find("opt_beta2"); it != kv.end())
            out.opt.beta2 = std::stod(it->second);
        if (auto it = kv.find("opt_weight_decay"); it != kv.end())
            out.opt.weight_decay = std::stod(it->second);
        out.has_opt = true;
    }
    return out;
}

}  // namespace wmamba
