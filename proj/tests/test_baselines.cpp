#include <cmath>

#include "doctest.h"
#include "prodssm/baselines.hpp"
#include "prodssm/harness.hpp"
#include "prodssm/training.hpp"
#include "test_support.hpp"

using namespace prodssm;
using namespace prodssm::testing;

namespace {

ProDssmModel<double> kink_net(WeightScheme scheme, double weight_var, double state_mean,
                              double state_var) {
    KinkSystem sys;
    ProDssmModel<double> m = kink_model(sys, 8, scheme, weight_var);
    m.initial_mean = Vec::Constant(1, state_mean);
    m.initial_chol = Mat::Constant(1, 1, std::sqrt(state_var));
    return m;
}

ProDssmModel<double> zero_noise(ProDssmModel<double> m) {
    m.variance.log_var.setConstant(kDeterministicLogVar);
    m.initial_chol.setZero();
    return m;
}

/// Mean over paths of Σ_t d_t d_{t+1} / Σ_t d_t², d the deviation from the step mean.
double lag1_autocorrelation(const McSamples& s) {
    const std::size_t h = s.states.size();
    const Eigen::Index n = s.states.front().cols();
    Mat dev(h, n);
    for (std::size_t t = 0; t < h; ++t) {
        const Eigen::ArrayXd row = s.states[t].row(0).array();
        dev.row(static_cast<Eigen::Index>(t)) = (row - row.mean()).matrix().transpose();
    }
    double num = 0.0, den = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index t = 0; t + 1 < static_cast<Eigen::Index>(h); ++t) num += dev(t, k) * dev(t + 1, k);
        den += dev.col(k).squaredNorm();
    }
    return num / den;
}

void regression_set(std::size_t count, std::uint64_t seed, std::vector<Vec>& xs, std::vector<Vec>& ys) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const double x = uniform(rng, -1.5, 1.0);
        xs.push_back(Vec::Constant(1, x));
        ys.push_back(Vec::Constant(1, kink_mean(x) + 0.1 * random_vector(1, rng)(0)));
    }
}

}  // namespace

TEST_CASE("sigma points reconstruct the input moments") {
    std::mt19937_64 rng(1);
    for (Eigen::Index n : {1, 2, 5, 20}) {
        const Vec mean = random_vector(n, rng);
        const Mat cov = random_spd(n, rng);
        const SigmaPointSet s = SigmaPointSet::build(mean, cov);
        REQUIRE(s.count() == static_cast<std::size_t>(2 * n + 1));
        CHECK(std::abs(s.mean_weights.sum() - 1.0) <= 1e-14);
        const Vec m = s.points * s.mean_weights;
        CHECK((m - mean).cwiseAbs().maxCoeff() <= 1e-12);
        const Mat c = s.points.colwise() - mean;
        const Mat rebuilt = c * s.cov_weights.asDiagonal() * c.transpose();
        CHECK((rebuilt - cov).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("UKF matches the Kalman filter on linear-Gaussian models") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 6; ++rep) {
        const LinearSsm s = random_linear_ssm(1 + rep % 3, 1 + rep % 2, rng);
        const ProDssmModel<double> m = to_model(s, rep % 2 ? WeightScheme::Global : WeightScheme::Local);
        const Trajectory data = simulate_linear(s, 30, rng);
        const KalmanOutput k = kalman_filter(s, data);
        const FilterResult<double> u = ukf_filter(m, data, m.initial_augmented());
        REQUIRE(u.length() == data.length());
        double err = 0.0;
        for (std::size_t t = 0; t < u.length(); ++t) {
            err = std::max(err, (u.posteriors[t].state_mean - k.means[t]).cwiseAbs().maxCoeff());
            err = std::max(err, (u.posteriors[t].state_cov - k.covs[t]).cwiseAbs().maxCoeff());
        }
        CHECK(err <= 1e-6);
        CHECK(u.log_likelihood == doctest::Approx(k.log_likelihood).epsilon(1e-8));
    }
}

TEST_CASE("zero-noise rollouts are identical") {
    const ProDssmModel<double> m = zero_noise(kink_net(WeightScheme::Local, 0.0, 0.3, 0.1));
    McConfig cfg;
    cfg.samples = 50;
    const McMoments mo = mc_moments(m, m.initial_augmented(), 10, cfg);
    for (std::size_t t = 0; t < 10; ++t) CHECK(mo.cov[t].cwiseAbs().maxCoeff() <= 1e-24);
    const McSamples s = mc_rollouts(m, m.initial_augmented(), 10, cfg);
    for (const Mat& x : s.states) CHECK((x.colwise() - x.col(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rollouts are reproducible from the seed") {
    const ProDssmModel<double> m = kink_net(WeightScheme::Global, 1e-2, 0.3, 0.1);
    McConfig cfg;
    cfg.samples = 64;
    cfg.seed = 5;
    const McSamples a = mc_rollouts(m, m.initial_augmented(), 6, cfg);
    const McSamples b = mc_rollouts(m, m.initial_augmented(), 6, cfg);
    for (std::size_t t = 0; t < 6; ++t) CHECK(a.states[t] == b.states[t]);
    cfg.seed = 6;
    CHECK(mc_rollouts(m, m.initial_augmented(), 6, cfg).states[0] != a.states[0]);
}

TEST_CASE("sampled moments converge to det_predict on a width-8 network") {
    for (WeightScheme scheme : {WeightScheme::Local, WeightScheme::Global}) {
        const ProDssmModel<double> m = kink_net(scheme, 1e-4, 0.5, 1e-3);
        McConfig cfg;
        cfg.samples = 100000;
        cfg.seed = 3;
        const McMoments mo = mc_moments(m, m.initial_augmented(), 3, cfg);
        const PredictiveResult<double> p = det_predict(m, m.initial_augmented(), 3);
        for (std::size_t t = 0; t < 3; ++t) {
            CHECK(std::abs(p.states[t].state_mean(0) - mo.mean[t](0)) < 3.0 * mo.mean_se[t](0));
            CHECK(std::abs(p.states[t].state_cov(0, 0) - mo.cov[t](0, 0)) < 3.0 * mo.cov_se[t](0, 0));
        }
    }
}

TEST_CASE("Global paths are smoother than Local paths") {
    McConfig cfg;
    cfg.samples = 2000;
    double local = 0.0, global = 0.0;
    for (WeightScheme scheme : {WeightScheme::Local, WeightScheme::Global}) {
        const ProDssmModel<double> m = kink_net(scheme, 5e-3, 0.0, 0.05);
        const double rho = lag1_autocorrelation(mc_rollouts(m, m.initial_augmented(), 30, cfg));
        (scheme == WeightScheme::Local ? local : global) = rho;
    }
    CHECK(global > local);
}

TEST_CASE("mc_objective with one particle and no noise equals the deterministic objective") {
    McObjectiveData data;
    regression_set(20, 5, data.inputs, data.targets);
    data.depth = 2;
    McConfig cfg;
    cfg.samples = 1;
    for (WeightScheme scheme : {WeightScheme::Local, WeightScheme::Global}) {
        const ProDssmModel<double> m = zero_noise(kink_net(scheme, 0.0, 0.0, 1.0));
        CHECK(mc_objective(m, data, ObjectiveMode::Regression, cfg) ==
              doctest::Approx(regression_objective(m, data.inputs, data.targets, 2)).epsilon(1e-12));

        // a point-mass filter ignores the data, so on the expansive kink map
        // roundoff grows without bound; the filter check uses a contracting network
        ModelShape shape;
        shape.scheme = scheme;
        ProDssmModel<double> c = make_model(shape, 4);
        c.weights.mean *= 0.5;
        c.weights.log_var.setConstant(kDeterministicLogVar);
        c = zero_noise(c);
        c.initial_mean = Vec::Constant(1, 0.7);
        McObjectiveData ssm;
        ssm.trajectories = {simulate(c, 60, 5)};
        CHECK(mc_objective(c, ssm, ObjectiveMode::Ssm, cfg) ==
              doctest::Approx(ssm_objective(c, ssm.trajectories)).epsilon(1e-12));
    }
}

TEST_CASE("mc_objective agrees with regression_objective at 10^4 samples") {
    ProDssmModel<double> m = kink_net(WeightScheme::Local, 1e-4, 0.0, 1.0);
    m.variance.log_var.setConstant(std::log(1e-3));
    McObjectiveData data;
    regression_set(20, 6, data.inputs, data.targets);
    data.depth = 2;
    McConfig cfg;
    cfg.samples = 10000;
    std::vector<double> values;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        cfg.seed = seed;
        values.push_back(mc_objective(m, data, ObjectiveMode::Regression, cfg));
    }
    const Eigen::Map<const Vec> v(values.data(), static_cast<Eigen::Index>(values.size()));
    const double sd = std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1.0));
    CHECK(std::abs(values.front() - regression_objective(m, data.inputs, data.targets, 2)) < 3.0 * sd);
}

TEST_CASE("mc_objective variance shrinks as 1/S") {
    ProDssmModel<double> m = kink_net(WeightScheme::Local, 1e-2, 0.0, 1.0);
    m.variance.log_var.setConstant(std::log(1e-2));
    McObjectiveData data;
    regression_set(10, 7, data.inputs, data.targets);
    data.depth = 2;
    const auto spread = [&](std::size_t samples) {
        McConfig cfg;
        cfg.samples = samples;
        Vec v(20);
        for (Eigen::Index s = 0; s < v.size(); ++s) {
            cfg.seed = 1000 + static_cast<std::uint64_t>(s);
            v(s) = mc_objective(m, data, ObjectiveMode::Regression, cfg);
        }
        return (v.array() - v.mean()).square().sum() / (v.size() - 1.0);
    };
    const double slope = std::log(spread(10000) / spread(100)) / std::log(100.0);
    CHECK(slope >= -1.2);
    CHECK(slope <= -0.8);
}

TEST_CASE("McConfig validation") {
    McConfig cfg;
    cfg.samples = 0;
    CHECK_THROWS(cfg.validate());
}

TEST_SUITE("invariants") {
    TEST_CASE("unscented transform is exact on affine maps") {
        std::mt19937_64 rng(8);
        for (Eigen::Index n = 1; n <= 20; ++n) {
            const Vec mean = random_vector(n, rng);
            const Mat cov = random_spd(n, rng);
            const Mat a = random_matrix(3, n, rng);
            const Vec b = random_vector(3, rng);
            const SigmaPointSet s = SigmaPointSet::build(mean, cov);
            CHECK(s.mean_weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
            const Mat y = (a * s.points).colwise() + b;
            const Vec ym = y * s.mean_weights;
            const Mat c = y.colwise() - ym;
            const Mat yc = c * s.cov_weights.asDiagonal() * c.transpose();
            CHECK((ym - (a * mean + b)).cwiseAbs().maxCoeff() <= 1e-8);
            CHECK((yc - a * cov * a.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
            const Mat d = s.points.colwise() - mean;
            CHECK((d * s.cov_weights.asDiagonal() * d.transpose() - cov).cwiseAbs().maxCoeff() <= 1e-8);
        }
    }

    TEST_CASE("sampled means are unbiased on affine Local models") {
        std::mt19937_64 rng(9);
        for (int rep = 0; rep < 3; ++rep) {
            const LinearSsm s = random_linear_ssm(2, 1, rng);
            ProDssmModel<double> m = to_model(s);
            m.weights.log_var.setConstant(std::log(0.05));
            const PredictiveResult<double> p = det_predict(m, m.initial_augmented(), 4);
            McConfig cfg;
            cfg.samples = 1000;
            std::vector<Vec> grand(4, Vec::Zero(2)), var(4, Vec::Zero(2));
            for (std::uint64_t seed = 0; seed < 50; ++seed) {
                cfg.seed = 100 * rep + seed;
                const McMoments mo = mc_moments(m, m.initial_augmented(), 4, cfg);
                for (std::size_t t = 0; t < 4; ++t) {
                    grand[t] += mo.mean[t] / 50.0;
                    var[t] += mo.mean_se[t].cwiseAbs2() / 2500.0;
                }
            }
            for (std::size_t t = 0; t < 4; ++t) {
                CHECK(max_z(grand[t], p.states[t].state_mean, var[t].cwiseSqrt()) < 3.0);
            }
        }
    }
}
