#pragma once

#include <algorithm>
#include <cmath>

#include "skiplab/autograd.hpp"

namespace skiplab {

// Max relative error between reverse-mode and central finite differences,
//   max_i |analytic_i - fd_i| / max(|analytic_i|, |fd_i|, 1e-12).
// `f` builds a scalar loss on the given tape from the bound input and must
// be deterministic across calls (checkpoint any rng it consumes).
template <typename F>
double gradcheck(F&& f, const Tensor& x, double step) {
    if (step <= 0.0) throw config_error("gradcheck: step must be positive");

    Tensor xg = x;
    xg.requires_grad = true;
    Tape tape;
    Var vx = tape.leaf(xg);
    Var loss = f(tape, vx);
    tape.backward(loss);
    Tensor analytic = tape.grad(vx);

    auto eval = [&](const Tensor& point) {
        Tape t;
        Tensor p = point;
        p.requires_grad = false;
        Var v = t.leaf(p);
        Var l = f(t, v);
        double out = t.value(l).item();
        if (!std::isfinite(out)) throw numeric_error("gradcheck: non-finite loss at perturbed point");
        return out;
    };

    double max_err = 0.0;
    Tensor probe = x;
    probe.requires_grad = false;
    for (size_t i = 0; i < probe.numel(); ++i) {
        double orig = probe.data[i];
        probe.data[i] = orig + step;
        double lp = eval(probe);
        probe.data[i] = orig - step;
        double lm = eval(probe);
        probe.data[i] = orig;
        double fd = (lp - lm) / (2.0 * step);
        double denom = std::max({std::abs(analytic.data[i]), std::abs(fd), 1e-12});
        max_err = std::max(max_err, std::abs(analytic.data[i] - fd) / denom);
    }
    return max_err;
}

} // namespace skiplab
