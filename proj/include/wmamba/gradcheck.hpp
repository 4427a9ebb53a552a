// Central finite-difference verification of analytic gradients.
// All checks run in f64; training uses f32, oracles use this.
#pragma once

#include "wmamba/tensor.hpp"

namespace wmamba {

struct grad_check_report {
    double max_rel_err = 0;
    size_t checked = 0;
    bool pass = true;
};

// fn maps the given leaf tensors to a scalar. Analytic gradients are compared
// against (f(x+eps) - f(x-eps)) / 2eps per element. Relative error uses a
// denominator floored at 1 so near-zero gradients are judged absolutely.
// max_probes = 0 checks every element; otherwise a deterministic random
// subset of that size per input.
template <class Fn>
grad_check_report grad_check(Fn&& fn, std::vector<tensor<double>> inputs,
                             double eps = 1e-6, double tol = 1e-4,
                             size_t max_probes = 0, uint64_t probe_seed = 0x9c0ffee) {
    for (auto& t : inputs)
        check(t.requires_grad(), "grad_check: all inputs must require grad");

    tensor<double> loss = fn(inputs);
    check(loss.numel() == 1, "grad_check: fn must return a scalar");
    check(std::isfinite(loss.item()), "grad_check: non-finite loss");
    for (auto& t : inputs) t.zero_grad();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs)
        analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));

    grad_check_report rep;
    rng probe(probe_seed, 0);
    no_grad_guard ng;
    for (size_t k = 0; k < inputs.size(); ++k) {
        auto& buf = inputs[k].data();
        std::vector<size_t> picks;
        if (max_probes == 0 || buf.size() <= max_probes) {
            picks.resize(buf.size());
            for (size_t i = 0; i < buf.size(); ++i) picks[i] = i;
        } else {
            for (size_t i = 0; i < max_probes; ++i)
                picks.push_back(size_t(probe.next_below(buf.size())));
        }
        for (size_t i : picks) {
            const double saved = buf[i];
            buf[i] = saved + eps;
            const double fp = fn(inputs).item();
            buf[i] = saved - eps;
            const double fm = fn(inputs).item();
            buf[i] = saved;
            check(std::isfinite(fp) && std::isfinite(fm),
                  "grad_check: non-finite perturbed output");
            const double num = (fp - fm) / (2 * eps);
            const double ana = analytic[k][i];
            const double denom = std::max({1.0, std::abs(num), std::abs(ana)});
            rep.max_rel_err = std::max(rep.max_rel_err, std::abs(num - ana) / denom);
            ++rep.checked;
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace wmamba
