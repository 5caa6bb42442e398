#include <catch2/catch_amalgamated.hpp>

#include "skiplab/theory.hpp"

using namespace skiplab;

TEST_CASE("bayes gap closed form") {
    SECTION("beta = 0 means no gap") {
        GaussianTriplet m;
        m.alpha = 2.0;
        m.beta = 0.0;
        REQUIRE(bayes_gap_analytic(m) == 0.0);
    }
    SECTION("alpha=1, beta=2, corr=0 gives 4") {
        GaussianTriplet m;
        m.alpha = 1.0;
        m.beta = 2.0;
        REQUIRE(bayes_gap_analytic(m) == Catch::Approx(4.0));
    }
    SECTION("correlated features shrink the gap") {
        GaussianTriplet m;
        m.beta = 1.0;
        m.corr_ab = 0.5;
        REQUIRE(bayes_gap_analytic(m) == Catch::Approx(0.75));
    }
    SECTION("degenerate correlation rejected") {
        GaussianTriplet m;
        m.corr_ab = 1.0;
        REQUIRE_THROWS_AS(bayes_gap_analytic(m), config_error);
    }
}

TEST_CASE("bayes gap monte carlo") {
    SECTION("beta = 0: both forms within 3 sigma of zero") {
        GaussianTriplet m;
        m.beta = 0.0;
        BayesGapEstimate est = bayes_gap_monte_carlo(m, 100000, 1);
        REQUIRE(std::abs(est.risk_diff) <= 3.0 * est.risk_diff_se + 1e-15);
        REQUIRE(std::abs(est.pred_diff) <= 3.0 * est.pred_diff_se + 1e-15);
    }
    SECTION("alpha=1, beta=2: both forms within 3 sigma of 4") {
        GaussianTriplet m;
        m.alpha = 1.0;
        m.beta = 2.0;
        BayesGapEstimate est = bayes_gap_monte_carlo(m, 200000, 2);
        REQUIRE(std::abs(est.risk_diff - 4.0) <= 3.0 * est.risk_diff_se);
        REQUIRE(std::abs(est.pred_diff - 4.0) <= 3.0 * est.pred_diff_se);
        REQUIRE(est.forms_agree);
    }
    SECTION("correlated case agrees with the closed form") {
        GaussianTriplet m;
        m.alpha = 1.0;
        m.beta = 1.0;
        m.corr_ab = 0.5;
        BayesGapEstimate est = bayes_gap_monte_carlo(m, 200000, 3);
        REQUIRE(std::abs(est.pred_diff - bayes_gap_analytic(m)) <= 3.0 * est.pred_diff_se);
    }
    SECTION("cross-term vanishing across 20 seeded models, estimates never significantly negative") {
        Rng rng(777);
        for (int i = 0; i < 20; ++i) {
            GaussianTriplet m;
            m.alpha = rng.normal();
            m.beta = rng.normal();
            m.corr_ab = 1.8 * rng.uniform() - 0.9;
            m.sigma_noise = rng.uniform() * 2.0;
            BayesGapEstimate est = bayes_gap_monte_carlo(m, 50000, 1000 + i);
            INFO("model " << i);
            REQUIRE(est.forms_agree);
            REQUIRE(est.risk_diff >= -3.0 * est.risk_diff_se);
        }
    }
    SECTION("sample floor enforced") {
        REQUIRE_THROWS_AS(bayes_gap_monte_carlo(GaussianTriplet{}, 100, 1), config_error);
    }
}

namespace {

PathGradModel simple_model(std::vector<double> m, std::vector<double> s, double vm, double vs,
                           double vms = 0.0) {
    PathGradModel model;
    int d = static_cast<int>(m.size());
    model.m = std::move(m);
    model.s = std::move(s);
    model.sigma_m = SquareMatrix(d);
    model.sigma_s = SquareMatrix(d);
    model.sigma_ms = SquareMatrix(d);
    for (int i = 0; i < d; ++i) {
        model.sigma_m.at(i, i) = vm;
        model.sigma_s.at(i, i) = vs;
        model.sigma_ms.at(i, i) = vms;
    }
    return model;
}

} // namespace

TEST_CASE("second moment identity") {
    SECTION("pure-variance case: target 4 in d=2") {
        PathGradModel m = simple_model({0, 0}, {0, 0}, 1.0, 1.0);
        SecondMomentReport rep = second_moment_check(m, 100000, 11);
        REQUIRE(rep.target == Catch::Approx(4.0));
        REQUIRE(rep.pass);
    }
    SECTION("orthogonal unit means: target 6") {
        PathGradModel m = simple_model({1, 0}, {0, 1}, 1.0, 1.0);
        SecondMomentReport rep = second_moment_check(m, 100000, 12);
        REQUIRE(rep.target == Catch::Approx(6.0));
        REQUIRE(rep.pass);
    }
    SECTION("perfect anti-correlation cancels the variance") {
        // g_skip = -g_main + const: Sigma_s = Sigma_m, Sigma_ms = -Sigma_m.
        PathGradModel m = simple_model({1, 2}, {0.5, -1}, 1.5, 1.5, -1.5);
        SecondMomentReport rep = second_moment_check(m, 100000, 13);
        double expect = (1 + 0.5) * (1 + 0.5) + (2 - 1) * (2 - 1);
        REQUIRE(rep.target == Catch::Approx(expect));
        REQUIRE(rep.pass);
        REQUIRE(rep.se < 1e-12); // the sum is deterministic
    }
    SECTION("20 random correlated models stay within 3 sigma") {
        Rng rng(99);
        for (int i = 0; i < 20; ++i) {
            PathGradModel m = random_path_model(3, rng);
            SecondMomentReport rep = second_moment_check(m, 50000, 500 + i);
            INFO("model " << i << " z=" << rep.z_score);
            REQUIRE(rep.pass);
        }
    }
    SECTION("non-PSD block rejected") {
        PathGradModel m = simple_model({0}, {0}, 0.1, 0.1, 5.0);
        REQUIRE_THROWS_AS(second_moment_check(m, 10000, 1), config_error);
    }
}

TEST_CASE("one-step smoothness bound") {
    QuadraticProblem prob;
    prob.smoothness = 1.0;
    prob.theta0 = {1.0, 1.0}; // ||theta0||^2 = 2, L(theta0) = 1
    SECTION("gamma = 0: both sides equal L(theta0)") {
        GradEstimator est;
        est.mean = prob.grad(prob.theta0);
        est.cov = SquareMatrix(2);
        OneStepReport rep = one_step_check(prob, est, 0.0, 1000, 1);
        REQUIRE(rep.lhs_mean == prob.loss(prob.theta0));
        REQUIRE(rep.rhs_bound == prob.loss(prob.theta0));
        REQUIRE(rep.abs_gap == 0.0);
    }
    SECTION("exact gradient: equality at factor (1-gamma)^2 = 0.81") {
        GradEstimator est;
        est.mean = prob.grad(prob.theta0);
        est.cov = SquareMatrix(2);
        OneStepReport rep = one_step_check(prob, est, 0.1, 1000, 1);
        REQUIRE(rep.lhs_mean == Catch::Approx(0.81).margin(1e-12));
        REQUIRE(rep.abs_gap < 1e-12);
        REQUIRE(rep.pass);
    }
    SECTION("noisy gradient never violates the bound") {
        GradEstimator est;
        est.mean = prob.grad(prob.theta0);
        est.cov = SquareMatrix::identity(2);
        OneStepReport rep = one_step_check(prob, est, 0.2, 100000, 21);
        REQUIRE(rep.pass);
        // equality regime on the quadratic: z stays near zero, not just < 3
        REQUIRE(std::abs(rep.violation_z) <= 3.0);
    }
}

TEST_CASE("detach condition decision rule") {
    SECTION("zero skip mean with positive skip variance favors detaching") {
        PathGradModel m = simple_model({1, 1}, {0, 0}, 0.2, 3.0);
        QuadraticProblem prob;
        prob.smoothness = 1.0;
        prob.theta0 = m.m;
        DetachConditionReport rep = detach_condition_check(prob, m, 0.3, 200000, 31);
        REQUIRE(rep.lhs == 0.0);
        REQUIRE(rep.rhs > 0.0);
        REQUIRE(rep.condition_holds);
        REQUIRE(rep.predicted == EstimatorChoice::Detach);
        REQUIRE(rep.empirical == EstimatorChoice::Detach);
        REQUIRE(rep.decisive);
    }
    SECTION("strongly aligned low-variance skip mean favors the full gradient") {
        std::vector<double> mvec = {1.0, 0.5};
        std::vector<double> svec = {5.0, 2.5}; // s = 5m
        PathGradModel m = simple_model(mvec, svec, 0.05, 0.05);
        QuadraticProblem prob;
        prob.smoothness = 1.0;
        prob.theta0 = mvec;
        DetachConditionReport rep = detach_condition_check(prob, m, 0.01, 200000, 32);
        REQUIRE_FALSE(rep.condition_holds);
        REQUIRE(rep.predicted == EstimatorChoice::Full);
        REQUIRE(rep.empirical == EstimatorChoice::Full);
        REQUIRE(rep.decisive);
    }
    SECTION("biased main path rejected") {
        PathGradModel m = simple_model({1, 1}, {0, 0}, 0.1, 0.1);
        QuadraticProblem prob;
        prob.smoothness = 2.0;
        prob.theta0 = {1.0, 1.0}; // grad = 2*theta0 != m
        REQUIRE_THROWS_AS(detach_condition_check(prob, m, 0.1, 10000, 1), config_error);
    }
    SECTION("margin-filtered random models agree with the Monte-Carlo winner") {
        Rng rng(555);
        int checked = 0;
        int attempts = 0;
        while (checked < 15 && attempts < 200) {
            ++attempts;
            PathGradModel m = random_path_model(3, rng);
            QuadraticProblem prob;
            prob.smoothness = 1.0;
            prob.theta0 = m.m;
            DetachConditionReport rep =
                detach_condition_check(prob, m, 0.3, 300000, 9000 + attempts);
            if (rep.relative_margin <= 0.05) continue;
            INFO("attempt " << attempts << " lhs=" << rep.lhs << " rhs=" << rep.rhs);
            REQUIRE(rep.decisive);
            REQUIRE(rep.agree);
            ++checked;
        }
        REQUIRE(checked == 15);
    }
}
