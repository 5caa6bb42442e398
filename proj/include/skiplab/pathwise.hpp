#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "skiplab/autograd.hpp"
#include "skiplab/fusion.hpp"
#include "skiplab/linalg.hpp"

namespace skiplab {

// Per-step pathwise gradient triple over one parameter group, flattened in
// group order. g_skip is defined by subtraction; g_full is re-added from
// (g_main, g_skip) so main + skip == full holds bitwise in the stored triple.
struct GradSnapshot {
    int step = 0;
    std::vector<double> g_main;
    std::vector<double> g_skip;
    std::vector<double> g_full;
};

enum class Branch { Main, Skip, Full };

inline const std::vector<double>& branch_of(const GradSnapshot& s, Branch b) {
    switch (b) {
        case Branch::Main: return s.g_main;
        case Branch::Skip: return s.g_skip;
        default: return s.g_full;
    }
}

// Sums a parameter group's gradients out of a finished tape, flattened in
// group order; params the pass never bound contribute zeros.
inline std::vector<double> flatten_group_grads(const Tape& tape, const ParamBind& bind,
                                               const std::vector<Param*>& group) {
    std::vector<double> out;
    for (Param* p : group) {
        std::vector<double> acc(p->value.numel(), 0.0);
        for (auto& [bp, v] : bind.entries()) {
            if (bp != p) continue;
            Tensor g = tape.grad(v);
            for (size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i];
        }
        out.insert(out.end(), acc.begin(), acc.end());
    }
    return out;
}

// Which pass's gradients to leave in Param::grad for the training update.
enum class UpdateFrom { None, MainPass, FullPass };

// Double-backward decomposition with RNG checkpointing:
//   1. save the rng state,
//   2. forward with every tap detached, backward  -> g_main,
//   3. restore the rng state,
//   4. standard (no-detach) forward/backward      -> g_full,
//   5. g_skip := g_full - g_main.
// Both passes consume identical stochastic draws, so dropout masks match.
// `forward` must build a scalar loss: (Tape&, ParamBind&, DetachMode, Rng&) -> Var.
template <typename Fwd>
GradSnapshot decompose(int step, Fwd&& forward, const std::vector<Param*>& group, Rng& rng,
                       UpdateFrom update = UpdateFrom::None) {
    RngState checkpoint = rng.save();

    Tape t_main;
    ParamBind b_main;
    Var loss_main = forward(t_main, b_main, DetachMode::AllTaps, rng);
    t_main.backward(loss_main);
    std::vector<double> g_main = flatten_group_grads(t_main, b_main, group);

    rng.restore(checkpoint);

    Tape t_full;
    ParamBind b_full;
    Var loss_full = forward(t_full, b_full, DetachMode::NoTaps, rng);
    t_full.backward(loss_full);
    std::vector<double> g_measured = flatten_group_grads(t_full, b_full, group);

    if (update == UpdateFrom::FullPass) b_full.pull_grads(t_full);
    if (update == UpdateFrom::MainPass) b_main.pull_grads(t_main);

    GradSnapshot snap;
    snap.step = step;
    snap.g_main = std::move(g_main);
    snap.g_skip.resize(snap.g_main.size());
    snap.g_full.resize(snap.g_main.size());
    for (size_t i = 0; i < snap.g_main.size(); ++i) {
        snap.g_skip[i] = g_measured[i] - snap.g_main[i];
        snap.g_full[i] = snap.g_main[i] + snap.g_skip[i];
        if (!std::isfinite(snap.g_full[i])) throw numeric_error("decompose: non-finite gradient");
    }
    return snap;
}

// ---- window statistics (trailing windows, {t-K+1, ..., t}) ----

inline std::vector<double> window_mean(std::span<const GradSnapshot> window, Branch b) {
    if (window.empty()) throw config_error("window_mean: empty window");
    std::vector<double> mean(branch_of(window[0], b).size(), 0.0);
    for (const auto& s : window) {
        const auto& g = branch_of(s, b);
        if (g.size() != mean.size()) throw config_error("window_mean: inconsistent lengths");
        for (size_t i = 0; i < g.size(); ++i) mean[i] += g[i];
    }
    for (auto& v : mean) v /= static_cast<double>(window.size());
    return mean;
}

inline double second_moment(std::span<const GradSnapshot> window, Branch b) {
    if (window.empty()) throw config_error("second_moment: empty window");
    double s = 0.0;
    for (const auto& snap : window) s += sq_norm(branch_of(snap, b));
    return s / static_cast<double>(window.size());
}

// tr(Sigma_hat) = (1/K) sum ||g_i||^2 - ||g_hat||^2
inline double variance_trace(std::span<const GradSnapshot> window, Branch b) {
    return second_moment(window, b) - sq_norm(window_mean(window, b));
}

// Zero-vector inputs return 0 by convention.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw config_error("cosine: length mismatch");
    double na = sq_norm(a), nb = sq_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / std::sqrt(na * nb);
}

constexpr double kDeltaEps = 1e-12;

// Windowed cross-covariance magnitude over the skip variance trace:
//   delta = 2 |mean<g_main_i, g_skip_i> - <m_hat, s_hat>| / (tr(Sigma_s) + eps)
inline double delta_ratio(std::span<const GradSnapshot> window) {
    if (window.empty()) throw config_error("delta_ratio: empty window");
    std::vector<double> m = window_mean(window, Branch::Main);
    std::vector<double> s = window_mean(window, Branch::Skip);
    double mean_inner = 0.0;
    for (const auto& snap : window) mean_inner += dot(snap.g_main, snap.g_skip);
    mean_inner /= static_cast<double>(window.size());
    double numer = 2.0 * std::abs(mean_inner - dot(m, s));
    double denom = variance_trace(window, Branch::Skip) + kDeltaEps;
    return numer / denom;
}

// Directional SNR over a window: ||g_hat||^2 / mean ||g||^2, in [0,1].
inline double snr(std::span<const GradSnapshot> window, Branch b) {
    double m2 = second_moment(window, b);
    if (m2 == 0.0) return 0.0;
    return sq_norm(window_mean(window, b)) / m2;
}

// Trailing simple moving average; the first horizon-1 entries average the
// available prefix.
inline std::vector<double> moving_average(const std::vector<double>& series, int horizon) {
    if (horizon < 1) throw config_error("moving_average: horizon must be >= 1");
    std::vector<double> out(series.size());
    double acc = 0.0;
    for (size_t i = 0; i < series.size(); ++i) {
        acc += series[i];
        if (i >= static_cast<size_t>(horizon)) acc -= series[i - horizon];
        size_t n = std::min(i + 1, static_cast<size_t>(horizon));
        out[i] = acc / static_cast<double>(n);
    }
    return out;
}

struct TransitionReport {
    std::optional<int> t_trans;
    std::vector<double> ratio_series;
    int window = 0;
    int consecutive = 0;
};

// First step t whose trailing-window medians M_t, ..., M_{t+C-1} are all
// below 1, where M_t = median(series[t-W+1 .. t]). Steps index the series
// from 0, so the earliest admissible step is W-1.
inline TransitionReport transition_step(const std::vector<double>& ratio_series, int window_len,
                                        int consecutive) {
    if (window_len <= 0 || consecutive <= 0)
        throw config_error("transition_step: window and consecutive must be positive");
    if (static_cast<int>(ratio_series.size()) < window_len)
        throw config_error("transition_step: series shorter than the window");
    TransitionReport rep;
    rep.ratio_series = ratio_series;
    rep.window = window_len;
    rep.consecutive = consecutive;

    int n = static_cast<int>(ratio_series.size());
    std::vector<double> medians(n, 0.0);
    for (int t = window_len - 1; t < n; ++t) {
        std::vector<double> w(ratio_series.begin() + (t - window_len + 1), ratio_series.begin() + t + 1);
        medians[t] = median_of(std::move(w));
    }
    for (int t = window_len - 1; t + consecutive - 1 < n; ++t) {
        bool ok = true;
        for (int c = 0; c < consecutive; ++c)
            if (!(medians[t + c] < 1.0)) {
                ok = false;
                break;
            }
        if (ok) {
            rep.t_trans = t;
            return rep;
        }
    }
    return rep;
}

// Reported estimates for the early-phase assumptions; no thresholds applied.
struct AssumptionReport {
    std::optional<double> c_hat;   // tr(Sigma_s) / tr(Sigma_m); absent when tr_m == 0
    std::optional<double> rho_hat; // ||s_hat|| / ||m_hat||; absent when ||m_hat|| == 0
    double delta_hat = 0.0;
    double mean_inner = 0.0;       // <m_hat, s_hat>
    double cos_means = 0.0;
    double trace_main = 0.0;
    double trace_skip = 0.0;
};

inline AssumptionReport assumption_report(std::span<const GradSnapshot> window) {
    if (window.size() < 2) throw config_error("assumption_report: need a window of at least 2");
    AssumptionReport rep;
    std::vector<double> m = window_mean(window, Branch::Main);
    std::vector<double> s = window_mean(window, Branch::Skip);
    rep.trace_main = variance_trace(window, Branch::Main);
    rep.trace_skip = variance_trace(window, Branch::Skip);
    if (rep.trace_main != 0.0) rep.c_hat = rep.trace_skip / rep.trace_main;
    double nm = std::sqrt(sq_norm(m));
    if (nm != 0.0) rep.rho_hat = std::sqrt(sq_norm(s)) / nm;
    rep.delta_hat = delta_ratio(window);
    rep.mean_inner = dot(m, s);
    rep.cos_means = cosine(m, s);
    return rep;
}

} // namespace skiplab
