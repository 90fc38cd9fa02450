#include <cmath>
#include <random>

#include "doctest.h"
#include "prodssm/model.hpp"
#include "prodssm/serialization.hpp"
#include "test_support.hpp"

using namespace prodssm;
using namespace prodssm::testing;

namespace {

ProDssmModel<double> small_model(Eigen::Index dx, std::vector<Eigen::Index> hidden, WeightScheme scheme,
                                 double weight_var, std::uint64_t seed) {
    ModelShape shape;
    shape.state_dim = dx;
    shape.obs_dim = dx;
    shape.f_hidden = std::move(hidden);
    shape.scheme = scheme;
    shape.initial_log_weight_var = std::log(weight_var);
    return make_model(shape, seed);
}

/// Samples of [x_{t+1}; w] with x_t ~ belief state marginal and w ~ prior.
Mat sample_step(const ProDssmModel<double>& model, const AugmentedBelief<double>& b, int n,
                std::mt19937_64& rng) {
    const Eigen::Index dx = model.state_dim(), dw = model.weight_dim();
    const Mat l = b.state_cov.llt().matrixL();
    Mat out(dx + dw, n);
    for (int i = 0; i < n; ++i) {
        const Vec x = b.state_mean + l * random_vector(dx, rng);
        const Vec w = sample_weights(model, rng);
        out.col(i) << sample_transition(model, x, w, rng), w;
    }
    return out;
}

}  // namespace

TEST_CASE("augmented_step on a degenerate belief is the deterministic pass") {
    ProDssmModel<double> m = small_model(2, {6}, WeightScheme::Local, 1e-2, 1);
    m.weights.log_var.setConstant(kDeterministicLogVar);
    m.variance.log_var << std::log(0.3), std::log(0.02);
    AugmentedBelief<double> b = m.initial_augmented();
    b.state_mean << 0.4, -1.1;
    b.state_cov.setZero();
    const auto next = augmented_step(b, m);
    CHECK((next.state_mean - transition_mean(m, b.state_mean, m.weights.mean)).norm() < 1e-13);
    CHECK(next.state_cov(0, 0) == doctest::Approx(0.3));
    CHECK(next.state_cov(1, 1) == doctest::Approx(0.02));
    CHECK(next.state_cov(0, 1) == 0.0);
}

TEST_CASE("Local one-hidden-layer step matches sampling") {
    // small variances: the Gaussian closure error shrinks quadratically, MC error linearly
    const ProDssmModel<double> m = small_model(1, {8}, WeightScheme::Local, 5e-4, 2);
    AugmentedBelief<double> b = m.initial_augmented();
    b.state_mean(0) = 0.3;
    b.state_cov(0, 0) = 0.005;
    const auto next = augmented_step(b, m);
    std::mt19937_64 rng(3);
    const SampleStats s = sample_stats(sample_step(m, b, 1000000, rng).topRows(1));
    CHECK(std::abs(next.state_mean(0) - s.mean(0)) < 3 * s.mean_se(0));
    CHECK(std::abs(next.state_cov(0, 0) - s.cov(0, 0)) < 3 * s.cov_se(0, 0));
}

TEST_CASE("Global weights spread two-step rollouts more than Local") {
    // positive weights amplify a shared perturbation when it is reused across steps
    ProDssmModel<double> m = small_model(1, {4}, WeightScheme::Local, 0.05, 4);
    m.weights.mean = m.weights.mean.cwiseAbs() * 0.8;
    m.weights.log_var.setConstant(std::log(0.05));
    ProDssmModel<double> g = m;
    g.scheme = WeightScheme::Global;
    auto two_steps = [](const ProDssmModel<double>& model) {
        AugmentedBelief<double> b = model.initial_augmented();
        b.state_mean(0) = 0.5;
        b.state_cov(0, 0) = 0.01;
        return augmented_step(augmented_step(b, model), model).state_cov(0, 0);
    };
    const double det_local = two_steps(m), det_global = two_steps(g);
    CHECK(det_global >= det_local);

    std::mt19937_64 rng(5);
    const int n = 200000;
    Mat local(1, n), global(1, n);
    for (int i = 0; i < n; ++i) {
        const Vec x0 = Vec::Constant(1, 0.5 + 0.1 * random_vector(1, rng)(0));
        const Vec w0 = sample_weights(m, rng);
        local.col(i) = sample_transition(m, sample_transition(m, x0, w0, rng), sample_weights(m, rng), rng);
        global.col(i) = sample_transition(g, sample_transition(g, x0, w0, rng), w0, rng);
    }
    const SampleStats sl = sample_stats(local), sg = sample_stats(global);
    CHECK(sg.cov(0, 0) - sl.cov(0, 0) > 3 * std::hypot(sg.cov_se(0, 0), sl.cov_se(0, 0)));
}

TEST_CASE("linear emission moments are exact") {
    std::mt19937_64 rng(6);
    const LinearSsm s = random_linear_ssm(3, 2, rng);
    const ProDssmModel<double> m = to_model(s);
    AugmentedBelief<double> b = m.initial_augmented();
    b.state_mean = random_vector(3, rng);
    b.state_cov = random_spd(3, rng);
    const auto e = emission_moments(b, m);
    CHECK((e.mean - (s.c * b.state_mean + s.d)).norm() < 1e-12);
    CHECK((e.cov - (s.c * b.state_cov * s.c.transpose() + Mat(s.r.asDiagonal()))).norm() < 1e-12);
    CHECK((e.cross_x - s.c * b.state_cov).norm() < 1e-12);

    ProDssmModel<double> ident = m;
    ident.g_spec = NetworkSpec::mlp(3, {}, 3);
    ident.g_params = Vec::Zero(12);
    for (int i = 0; i < 3; ++i) ident.g_params(ident.g_layout().layers[0].a_index(i, i)) = 1.0;
    ident.log_r = Vec::Constant(3, kDeterministicLogVar);
    const auto ei = emission_moments(b, ident);
    CHECK((ei.cross_x - b.state_cov).norm() < 1e-14);
    CHECK((ei.cov - b.state_cov).norm() < 1e-14);
}

TEST_CASE("ReLU emission moments match sampling") {
    ModelShape shape;
    shape.state_dim = 2;
    shape.obs_dim = 1;
    shape.g_hidden = {6};
    const ProDssmModel<double> m = make_model(shape, 7);
    AugmentedBelief<double> b = m.initial_augmented();
    b.state_mean << 0.2, -0.3;
    b.state_cov << 0.3, 0.1, 0.1, 0.2;
    const auto e = emission_moments(b, m);
    std::mt19937_64 rng(8);
    const Mat l = b.state_cov.llt().matrixL();
    const double r = std::exp(m.log_r(0));
    const int n = 1000000;
    Mat samples(3, n);
    for (int i = 0; i < n; ++i) {
        const Vec x = b.state_mean + l * random_vector(2, rng);
        samples.col(i) << emission_mean(m, x) + std::sqrt(r) * random_vector(1, rng), x;
    }
    const SampleStats s = sample_stats(samples);
    CHECK(std::abs(e.mean(0) - s.mean(0)) < 3 * s.mean_se(0));
    CHECK(std::abs(e.cov(0, 0) - s.cov(0, 0)) < 3 * s.cov_se(0, 0));
    CHECK(max_z(e.cross_x, s.cov.block(0, 1, 1, 2), s.cov_se.block(0, 1, 1, 2)) < 3.0);
}

TEST_CASE("simulate") {
    ProDssmModel<double> m = small_model(2, {5}, WeightScheme::Local, 1e-2, 9);
    SUBCASE("zero noise is the deterministic rollout") {
        m.weights.log_var.setConstant(kDeterministicLogVar);
        m.variance.log_var.setConstant(kDeterministicLogVar);
        m.log_r.setConstant(kDeterministicLogVar);
        m.initial_chol.setZero();
        const Trajectory t = simulate(m, 15, 10);
        Vec x = m.initial_mean;
        CHECK(t.initial_latent == x);
        for (std::size_t k = 0; k < 15; ++k) {
            x = transition_mean(m, x, m.weights.mean);
            CHECK((t.latents[k] - x).norm() < 1e-12);
            CHECK((t.observations[k] - emission_mean(m, x)).norm() < 1e-12);
        }
    }
    SUBCASE("fixed seed reproduces the trajectory") {
        const Trajectory a = simulate(m, 40, 11), b = simulate(m, 40, 11);
        for (std::size_t k = 0; k < 40; ++k) {
            CHECK(a.latents[k] == b.latents[k]);
            CHECK(a.observations[k] == b.observations[k]);
        }
        CHECK(simulate(m, 40, 12).latents[5] != a.latents[5]);
    }
    SUBCASE("one-step transitions match augmented_step") {
        m.initial_chol.setZero();
        const int n = 100000;
        Mat xs(2, n);
        for (int i = 0; i < n; ++i) xs.col(i) = simulate(m, 1, 1000 + i).latents[0];
        const SampleStats s = sample_stats(xs);
        AugmentedBelief<double> b = m.initial_augmented();
        const auto next = augmented_step(b, m);
        CHECK(max_z(next.state_mean, s.mean, s.mean_se) < 3.0);
        CHECK(max_z(next.state_cov, s.cov, s.cov_se) < 3.0);
    }
}

TEST_CASE("model serialization round-trips exactly") {
    ModelShape shape;
    shape.state_dim = 2;
    shape.obs_dim = 3;
    shape.f_hidden = {7, 5};
    shape.residual = true;
    shape.variance_kind = VarianceKind::LogVarNet;
    shape.l_hidden = {4};
    shape.g_hidden = {3};
    shape.scheme = WeightScheme::Global;
    const ProDssmModel<double> m = make_model(shape, 13);
    const ProDssmModel<double> back = model_from_json(model_to_json(m));
    CHECK(models_equal(m, back));
    CHECK(model_to_json(back) == model_to_json(m));
    AugmentedBelief<double> b = m.initial_augmented();
    CHECK(augmented_step(b, m).state_cov == augmented_step(back.initial_augmented(), back).state_cov);
}

TEST_CASE("model validation") {
    ProDssmModel<double> m = small_model(2, {4}, WeightScheme::Local, 1e-2, 14);
    ProDssmModel<double> bad = m;
    bad.log_r = Vec::Zero(3);
    CHECK_THROWS_AS(bad.validate(), DimensionMismatch);
    bad = m;
    bad.weights.log_var(0) = std::nan("");
    CHECK_THROWS(bad.validate());
    AugmentedBelief<double> b = m.initial_augmented();
    b.state_mean = Vec::Zero(3);
    CHECK_THROWS_AS(augmented_step(b, m), DimensionMismatch);
}

TEST_SUITE("invariants") {
    // Gaussian closure error is second order in the variances, so a small-variance regime
    // separates it from MC noise while first-order formula errors still show
    TEST_CASE("one-step moments match sampling on random small models") {
        std::mt19937_64 rng(30);
        for (int rep = 0; rep < 8; ++rep) {
            const Eigen::Index dx = 1 + rep % 3;
            const std::vector<Eigen::Index> hidden =
                rep % 2 ? std::vector<Eigen::Index>{4 + rep} : std::vector<Eigen::Index>{6, 4};
            for (WeightScheme scheme : {WeightScheme::Local, WeightScheme::Global}) {
                const ProDssmModel<double> m = small_model(dx, hidden, scheme, 2e-4, 100 + rep);
                AugmentedBelief<double> b = m.initial_augmented();
                b.state_mean = random_vector(dx, rng, 0.5);
                b.state_cov = random_spd(dx, rng, 0.05) * 1e-3;
                const auto next = augmented_step(b, m);
                const SampleStats s = sample_stats(sample_step(m, b, 100000, rng));
                CHECK(max_z(next.state_mean, s.mean.head(dx), s.mean_se.head(dx)) < 3.0);
                CHECK(max_z(next.state_cov, s.cov.topLeftCorner(dx, dx), s.cov_se.topLeftCorner(dx, dx)) <
                      3.0);
                if (scheme == WeightScheme::Global) {
                    const Eigen::Index dw = m.weight_dim();
                    CHECK(max_z(next.state_weight_cov, s.cov.topRightCorner(dx, dw),
                                s.cov_se.topRightCorner(dx, dw)) < family_z(static_cast<double>(dx * dw)));
                }
            }
        }
    }

    TEST_CASE("Local steps leave the weight block at the prior") {
        std::mt19937_64 rng(31);
        for (int rep = 0; rep < 10; ++rep) {
            const ProDssmModel<double> m = small_model(2, {5}, WeightScheme::Local, 0.02, 200 + rep);
            AugmentedBelief<double> b = m.initial_augmented();
            b.state_mean = random_vector(2, rng);
            for (int k = 0; k < 5; ++k) {
                b = augmented_step(b, m);
                CHECK(b.state_weight_cov.size() == 0);
                CHECK(b.weights->mean == m.weights.mean);
                CHECK(b.weights->var == m.weights.variance());
                CHECK(!b.weights->dense);
            }
        }
    }

    TEST_CASE("linear models follow the Kalman prediction recursion") {
        std::mt19937_64 rng(32);
        for (int rep = 0; rep < 10; ++rep) {
            const LinearSsm s = random_linear_ssm(1 + rep % 3, 1 + (rep + 1) % 3, rng);
            const ProDssmModel<double> m = to_model(s);
            AugmentedBelief<double> b = m.initial_augmented();
            Vec mean = s.m0;
            Mat cov = s.p0;
            for (int k = 0; k < 20; ++k) {
                b = augmented_step(b, m);
                mean = s.a * mean + s.b;
                cov = s.a * cov * s.a.transpose() + Mat(s.q.asDiagonal());
                CHECK((b.state_mean - mean).cwiseAbs().maxCoeff() < 1e-8);
                CHECK((b.state_cov - cov).cwiseAbs().maxCoeff() < 1e-8);
                const auto e = emission_moments(b, m);
                CHECK((e.mean - (s.c * mean + s.d)).cwiseAbs().maxCoeff() < 1e-8);
                CHECK((e.cov - (s.c * cov * s.c.transpose() + Mat(s.r.asDiagonal()))).cwiseAbs().maxCoeff() <
                      1e-8);
            }
        }
    }

    TEST_CASE("Global linear models match sampling over several steps") {
        std::mt19937_64 rng(33);
        const LinearSsm s = random_linear_ssm(2, 1, rng);
        ProDssmModel<double> m = to_model(s, WeightScheme::Global);
        m.weights.log_var.setConstant(std::log(1e-3));
        AugmentedBelief<double> b = m.initial_augmented();
        for (int k = 0; k < 3; ++k) b = augmented_step(b, m);
        const int n = 200000;
        const Mat l0 = m.initial_chol;
        Mat xs(2, n);
        for (int i = 0; i < n; ++i) {
            Vec x = m.initial_mean + l0 * random_vector(2, rng);
            const Vec w = sample_weights(m, rng);
            for (int k = 0; k < 3; ++k) x = sample_transition(m, x, w, rng);
            xs.col(i) = x;
        }
        const SampleStats ss = sample_stats(xs);
        CHECK(max_z(b.state_mean, ss.mean, ss.mean_se) < 3.0);
        CHECK(max_z(b.state_cov, ss.cov, ss.cov_se) < 3.0);
    }

    TEST_CASE("predicted transition variances are positive") {
        std::mt19937_64 rng(34);
        ModelShape shape;
        shape.state_dim = 2;
        shape.obs_dim = 2;
        shape.variance_kind = VarianceKind::LogVarNet;
        shape.l_hidden = {5};
        for (int rep = 0; rep < 20; ++rep) {
            shape.scheme = rep % 2 ? WeightScheme::Global : WeightScheme::Local;
            const ProDssmModel<double> m = make_model(shape, 300 + rep);
            AugmentedBelief<double> b = m.initial_augmented();
            b.state_mean = random_vector(2, rng, 5.0);
            b.state_cov = random_spd(2, rng, 0.0) * std::exp(uniform(rng, -10, 1));
            const Vec x = b.state_mean;
            CHECK(transition_variance(m, x, m.weights.mean).minCoeff() > 0.0);
            const auto next = augmented_step(b, m);
            CHECK(next.state_cov.diagonal().minCoeff() > 0.0);
        }
    }
}
