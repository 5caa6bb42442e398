#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "skiplab/linalg.hpp"
#include "skiplab/rng.hpp"
#include "skiplab/tensor.hpp"

namespace skiplab {

// ---- verification model classes ----

// Y = alpha*A + beta*B + eps with (A,B) jointly standard Gaussian at
// correlation corr_ab and eps ~ N(0, sigma_noise^2) independent. Both
// conditional expectations are closed-form:
//   E[Y|A,B] = alpha*A + beta*B,   E[Y|A] = (alpha + beta*corr_ab)*A.
struct GaussianTriplet {
    double alpha = 1.0;
    double beta = 1.0;
    double sigma_noise = 1.0;
    double corr_ab = 0.0;

    void validate() const {
        if (!(std::abs(corr_ab) < 1.0)) throw config_error("gaussian triplet: |corr_ab| must be < 1");
        if (sigma_noise < 0.0) throw config_error("gaussian triplet: sigma_noise must be >= 0");
    }
};

// Joint distribution of (g_main, g_skip): means m, s and block covariance
// [[Sigma_m, Sigma_ms], [Sigma_ms^T, Sigma_s]].
struct PathGradModel {
    std::vector<double> m, s;
    SquareMatrix sigma_m, sigma_s, sigma_ms;

    int dim() const { return static_cast<int>(m.size()); }

    SquareMatrix block_covariance() const {
        int d = dim();
        if (static_cast<int>(s.size()) != d || sigma_m.n != d || sigma_s.n != d || sigma_ms.n != d)
            throw config_error("path grad model: dimension mismatch");
        SquareMatrix c(2 * d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                c.at(i, j) = sigma_m.at(i, j);
                c.at(i, d + j) = sigma_ms.at(i, j);
                c.at(d + i, j) = sigma_ms.at(j, i);
                c.at(d + i, d + j) = sigma_s.at(i, j);
            }
        return c;
    }

    std::vector<double> joint_mean() const {
        std::vector<double> mu = m;
        mu.insert(mu.end(), s.begin(), s.end());
        return mu;
    }

    // E||g_full||^2 = ||m+s||^2 + tr(Sigma_m + Sigma_s + Sigma_ms + Sigma_ms^T)
    double full_second_moment() const {
        double v = 0.0;
        for (int i = 0; i < dim(); ++i) v += (m[i] + s[i]) * (m[i] + s[i]);
        return v + sigma_m.trace() + sigma_s.trace() + 2.0 * sigma_ms.trace();
    }

    double detach_second_moment() const {
        double v = 0.0;
        for (double x : m) v += x * x;
        return v + sigma_m.trace();
    }
};

// Isotropic quadratic L(theta) = (smoothness/2) ||theta||^2; the one-step
// smoothness bound is an equality here, which is what makes the detach
// condition an exact decision rule.
struct QuadraticProblem {
    double smoothness = 1.0;
    std::vector<double> theta0;

    void validate() const {
        if (smoothness <= 0.0) throw config_error("quadratic: smoothness must be positive");
        if (theta0.empty()) throw config_error("quadratic: empty theta0");
    }

    double loss(const std::vector<double>& theta) const {
        return 0.5 * smoothness * sq_norm(theta);
    }

    std::vector<double> grad(const std::vector<double>& theta) const {
        std::vector<double> g = theta;
        for (auto& v : g) v *= smoothness;
        return g;
    }
};

// ---- Bayes-risk gap ----

// Closed form for the Gaussian family: beta^2 (1 - corr^2).
inline double bayes_gap_analytic(const GaussianTriplet& model) {
    model.validate();
    return model.beta * model.beta * (1.0 - model.corr_ab * model.corr_ab);
}

struct BayesGapEstimate {
    double risk_diff = 0.0;      // risk(E[Y|A]) - risk(E[Y|A,B])
    double risk_diff_se = 0.0;
    double pred_diff = 0.0;      // E[(E[Y|A,B] - E[Y|A])^2]
    double pred_diff_se = 0.0;
    bool forms_agree = false;    // within 3 combined standard errors
};

// Monte-Carlo estimate of both Bayes-gap forms; their agreement is the
// vanishing-cross-term check.
inline BayesGapEstimate bayes_gap_monte_carlo(const GaussianTriplet& model, long long n, uint64_t seed) {
    model.validate();
    if (n < 10000) throw config_error("bayes_gap_monte_carlo: need N >= 10^4");
    Rng rng(seed);
    double root = std::sqrt(1.0 - model.corr_ab * model.corr_ab);
    double sum1 = 0.0, sumsq1 = 0.0, sum2 = 0.0, sumsq2 = 0.0;
    for (long long i = 0; i < n; ++i) {
        double a = rng.normal();
        double b = model.corr_ab * a + root * rng.normal();
        double y = model.alpha * a + model.beta * b + model.sigma_noise * rng.normal();
        double f_a = (model.alpha + model.beta * model.corr_ab) * a;
        double f_ab = model.alpha * a + model.beta * b;
        double d1 = (y - f_a) * (y - f_a) - (y - f_ab) * (y - f_ab);
        double d2 = (f_ab - f_a) * (f_ab - f_a);
        sum1 += d1;
        sumsq1 += d1 * d1;
        sum2 += d2;
        sumsq2 += d2 * d2;
    }
    auto finish = [n](double sum, double sumsq) {
        double mean = sum / n;
        double var = std::max(sumsq / n - mean * mean, 0.0);
        return std::pair<double, double>{mean, std::sqrt(var / n)};
    };
    BayesGapEstimate est;
    std::tie(est.risk_diff, est.risk_diff_se) = finish(sum1, sumsq1);
    std::tie(est.pred_diff, est.pred_diff_se) = finish(sum2, sumsq2);
    double comb = std::sqrt(est.risk_diff_se * est.risk_diff_se + est.pred_diff_se * est.pred_diff_se);
    est.forms_agree = std::abs(est.risk_diff - est.pred_diff) <= 3.0 * comb || comb == 0.0;
    return est;
}

// ---- second-moment decomposition ----

struct SecondMomentReport {
    double empirical = 0.0;
    double se = 0.0;
    double target = 0.0;
    double z_score = 0.0; // discrepancy in standard errors
    bool pass = false;    // |z| <= 3
};

inline SecondMomentReport second_moment_check(const PathGradModel& model, long long n, uint64_t seed) {
    if (n < 10000) throw config_error("second_moment_check: need N >= 10^4");
    MvnSampler sampler(model.joint_mean(), model.block_covariance());
    Rng rng(seed);
    int d = model.dim();
    double sum = 0.0, sumsq = 0.0;
    for (long long i = 0; i < n; ++i) {
        std::vector<double> g = sampler.draw(rng);
        double nf = 0.0;
        for (int k = 0; k < d; ++k) {
            double f = g[k] + g[d + k];
            nf += f * f;
        }
        sum += nf;
        sumsq += nf * nf;
    }
    SecondMomentReport rep;
    rep.empirical = sum / n;
    double var = std::max(sumsq / n - rep.empirical * rep.empirical, 0.0);
    rep.se = std::sqrt(var / n);
    rep.target = model.full_second_moment();
    rep.z_score = rep.se > 0.0 ? (rep.empirical - rep.target) / rep.se : 0.0;
    rep.pass = std::abs(rep.z_score) <= 3.0;
    return rep;
}

// ---- one-step smoothness bound ----

// Stochastic gradient estimator g ~ N(mean, cov); cov may be all zeros for
// the exact-gradient case.
struct GradEstimator {
    std::vector<double> mean;
    SquareMatrix cov;

    double second_moment() const {
        return sq_norm(mean) + cov.trace();
    }
};

struct OneStepReport {
    double lhs_mean = 0.0; // E[L(theta - gamma g)]
    double lhs_se = 0.0;
    double rhs_bound = 0.0;
    double violation_z = 0.0; // (lhs - rhs)/se, positive means violation
    bool pass = false;        // no violation beyond 3 sigma
    double abs_gap = 0.0;     // |lhs - rhs|, for exact-equality cases
};

inline OneStepReport one_step_check(const QuadraticProblem& problem, const GradEstimator& est,
                                    double gamma, long long n, uint64_t seed) {
    problem.validate();
    if (gamma < 0.0) throw config_error("one_step_check: gamma must be >= 0");
    int d = static_cast<int>(problem.theta0.size());
    if (static_cast<int>(est.mean.size()) != d || est.cov.n != d)
        throw config_error("one_step_check: estimator dim mismatch");

    std::vector<double> grad0 = problem.grad(problem.theta0);
    double rhs = problem.loss(problem.theta0) - gamma * dot(grad0, est.mean) +
                 0.5 * problem.smoothness * gamma * gamma * est.second_moment();

    bool deterministic = true;
    for (double v : est.cov.a)
        if (v != 0.0) deterministic = false;

    OneStepReport rep;
    rep.rhs_bound = rhs;
    if (deterministic || gamma == 0.0) {
        std::vector<double> theta = problem.theta0;
        for (int k = 0; k < d; ++k) theta[k] -= gamma * est.mean[k];
        rep.lhs_mean = problem.loss(theta);
        rep.lhs_se = 0.0;
        rep.abs_gap = std::abs(rep.lhs_mean - rhs);
        rep.violation_z = 0.0;
        rep.pass = rep.lhs_mean <= rhs + 1e-12;
        return rep;
    }

    MvnSampler sampler(est.mean, est.cov);
    Rng rng(seed);
    double sum = 0.0, sumsq = 0.0;
    std::vector<double> theta(d);
    for (long long i = 0; i < n; ++i) {
        std::vector<double> g = sampler.draw(rng);
        for (int k = 0; k < d; ++k) theta[k] = problem.theta0[k] - gamma * g[k];
        double l = problem.loss(theta);
        sum += l;
        sumsq += l * l;
    }
    rep.lhs_mean = sum / n;
    double var = std::max(sumsq / n - rep.lhs_mean * rep.lhs_mean, 0.0);
    rep.lhs_se = std::sqrt(var / n);
    rep.abs_gap = std::abs(rep.lhs_mean - rhs);
    rep.violation_z = rep.lhs_se > 0.0 ? (rep.lhs_mean - rhs) / rep.lhs_se : 0.0;
    rep.pass = rep.violation_z <= 3.0;
    return rep;
}

// ---- detach condition (bias-variance decision rule) ----

enum class EstimatorChoice { Detach, Full };

struct DetachConditionReport {
    double lhs = 0.0; // <grad L(theta0), s>
    double rhs = 0.0; // (L*gamma/2) (E||g_full||^2 - E||g_detach||^2)
    bool condition_holds = false;
    EstimatorChoice predicted = EstimatorChoice::Detach;
    EstimatorChoice empirical = EstimatorChoice::Detach;
    bool agree = false;
    bool decisive = false;       // paired MC separated beyond 3 sigma
    double relative_margin = 0.0; // |lhs-rhs| / |rhs|
    double mean_loss_detach = 0.0;
    double mean_loss_full = 0.0;
    double diff_se = 0.0;
};

// Paired Monte-Carlo comparison of one-step losses against the analytic
// Eq.-8-style decision. Requires an unbiased main path: grad L(theta0) = m.
inline DetachConditionReport detach_condition_check(const QuadraticProblem& problem,
                                                    const PathGradModel& model, double gamma,
                                                    long long n, uint64_t seed) {
    problem.validate();
    int d = model.dim();
    if (static_cast<int>(problem.theta0.size()) != d)
        throw config_error("detach_condition_check: dim mismatch");
    std::vector<double> grad0 = problem.grad(problem.theta0);
    double mism = 0.0;
    for (int k = 0; k < d; ++k) mism += (grad0[k] - model.m[k]) * (grad0[k] - model.m[k]);
    if (std::sqrt(mism) > 1e-9 * (1.0 + std::sqrt(sq_norm(model.m))))
        throw config_error("detach_condition_check: main path is biased (grad L(theta0) != m)");

    DetachConditionReport rep;
    rep.lhs = dot(grad0, model.s);
    rep.rhs = 0.5 * problem.smoothness * gamma *
              (model.full_second_moment() - model.detach_second_moment());
    rep.condition_holds = rep.lhs <= rep.rhs;
    rep.predicted = rep.condition_holds ? EstimatorChoice::Detach : EstimatorChoice::Full;
    rep.relative_margin = std::abs(rep.rhs) > 0.0 ? std::abs(rep.lhs - rep.rhs) / std::abs(rep.rhs) : 0.0;

    MvnSampler sampler(model.joint_mean(), model.block_covariance());
    Rng rng(seed);
    double sum_d = 0.0, sum_f = 0.0, sum_diff = 0.0, sumsq_diff = 0.0;
    std::vector<double> theta(d);
    for (long long i = 0; i < n; ++i) {
        std::vector<double> g = sampler.draw(rng);
        for (int k = 0; k < d; ++k) theta[k] = problem.theta0[k] - gamma * g[k];
        double ld = problem.loss(theta);
        for (int k = 0; k < d; ++k) theta[k] -= gamma * g[d + k];
        double lf = problem.loss(theta);
        sum_d += ld;
        sum_f += lf;
        double diff = lf - ld;
        sum_diff += diff;
        sumsq_diff += diff * diff;
    }
    rep.mean_loss_detach = sum_d / n;
    rep.mean_loss_full = sum_f / n;
    double mean_diff = sum_diff / n;
    double var = std::max(sumsq_diff / n - mean_diff * mean_diff, 0.0);
    rep.diff_se = std::sqrt(var / n);
    rep.empirical = mean_diff >= 0.0 ? EstimatorChoice::Detach : EstimatorChoice::Full;
    rep.decisive = std::abs(mean_diff) > 3.0 * rep.diff_se;
    rep.agree = rep.predicted == rep.empirical;
    return rep;
}

// ---- random model generation for the verification suites ----

inline SquareMatrix random_psd(int d, Rng& rng, double diag_boost = 0.05) {
    SquareMatrix q(d);
    for (auto& v : q.a) v = rng.normal();
    SquareMatrix c(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += q.at(i, k) * q.at(j, k);
            c.at(i, j) = s / d + (i == j ? diag_boost : 0.0);
        }
    return c;
}

// Random jointly-valid (m, s, Sigma) model built from a PSD 2d x 2d block.
inline PathGradModel random_path_model(int d, Rng& rng, double skip_var_scale = 1.0) {
    SquareMatrix block = random_psd(2 * d, rng);
    PathGradModel model;
    model.m.resize(d);
    model.s.resize(d);
    for (auto& v : model.m) v = rng.normal();
    for (auto& v : model.s) v = 0.5 * rng.normal();
    model.sigma_m = SquareMatrix(d);
    model.sigma_s = SquareMatrix(d);
    model.sigma_ms = SquareMatrix(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            model.sigma_m.at(i, j) = block.at(i, j);
            model.sigma_ms.at(i, j) = std::sqrt(skip_var_scale) * block.at(i, d + j);
            model.sigma_s.at(i, j) = skip_var_scale * block.at(d + i, d + j);
        }
    return model;
}

} // namespace skiplab
