#include "prodssm/baselines.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

namespace prodssm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// F with F F^T = cov for a symmetric PSD matrix; negative eigenvalues clamp to 0.
Mat psd_factor(const Mat& cov) {
    if (cov.size() == 0) return cov;
    if (cov.isZero(0.0)) return Mat::Zero(cov.rows(), cov.cols());
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (cov + cov.transpose()));
    const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

/// Mean and covariance of the columns of `a` (divisor S) and the cross-covariance with `b`.
struct EmpiricalMoments {
    Vec mean_a, mean_b;
    Mat cov_aa, cov_ab, cov_bb;
};

EmpiricalMoments empirical(const Mat& a, const Mat& b) {
    const double s = static_cast<double>(a.cols());
    EmpiricalMoments m;
    m.mean_a = a.rowwise().mean();
    m.mean_b = b.rowwise().mean();
    const Mat da = a.colwise() - m.mean_a;
    const Mat db = b.colwise() - m.mean_b;
    m.cov_aa = da * da.transpose() / s;
    m.cov_ab = da * db.transpose() / s;
    m.cov_bb = db * db.transpose() / s;
    return m;
}

std::vector<Eigen::Index> active_weights(const Vec& var) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < var.size(); ++i) {
        if (var(i) > 0.0) idx.push_back(i);
    }
    return idx;
}

double prior_terms(const ProDssmModel<double>& model) {
    return log_hyper_prior(model.weights) + point_log_prior(model);
}

}  // namespace

void McConfig::validate() const {
    if (samples < 1) throw ConfigError("MC sample count must be >= 1");
}

std::mt19937_64 particle_rng(std::uint64_t seed, std::uint64_t index) {
    return std::mt19937_64(mix_seed(seed, index));
}

McSamples mc_rollouts(const ProDssmModel<double>& model, const AugmentedBelief<double>& initial,
                      std::size_t horizon, const McConfig& cfg) {
    cfg.validate();
    model.validate();
    const Eigen::Index n = model.state_dim();
    const Eigen::Index d = model.weight_dim();
    const bool global = model.scheme == WeightScheme::Global;
    const Vec z_mean = global ? initial.joint_mean() : initial.state_mean;
    const Mat z_factor = psd_factor(global ? initial.joint_cov() : initial.state_cov);

    McSamples out;
    out.states.assign(horizon, Mat(n, static_cast<Eigen::Index>(cfg.samples)));
    for (std::size_t s = 0; s < cfg.samples; ++s) {
        std::mt19937_64 rng = particle_rng(cfg.seed, s);
        const Vec z = z_mean + z_factor * standard_normal_vector(z_mean.size(), rng);
        Vec x = z.head(n);
        const Vec w_fixed = global ? Vec(z.tail(d)) : Vec();
        for (std::size_t t = 0; t < horizon; ++t) {
            const Vec w = global ? w_fixed : sample_weights(model, rng);
            x = sample_transition(model, x, w, rng);
            out.states[t].col(static_cast<Eigen::Index>(s)) = x;
        }
    }
    return out;
}

void sample_moments(const Mat& samples, Vec& mean, Mat& cov, Vec& mean_se, Mat& cov_se) {
    const Eigen::Index dim = samples.rows();
    const Eigen::Index count = samples.cols();
    const double s = static_cast<double>(count);
    mean = samples.rowwise().mean();
    const Mat centered = samples.colwise() - mean;
    const Mat scatter = centered * centered.transpose();
    cov = count > 1 ? Mat(scatter / (s - 1.0)) : Mat::Zero(dim, dim);

    // Jackknife SE of the mean coincides with sd / sqrt(S).
    mean_se = count > 1 ? Vec((cov.diagonal() / s).cwiseSqrt())
                        : Vec::Constant(dim, std::numeric_limits<double>::infinity());

    // Leave-one-out covariance on centered data: c_(k) = (P - u_k S/(S-1)) / (S-2),
    // u_k = a_k b_k, which gives Var_jack = S / ((S-1)(S-2)^2) Σ_k (u_k - ū)².
    cov_se = Mat::Constant(dim, dim, std::numeric_limits<double>::infinity());
    if (count < 3) return;
    const double factor = s / ((s - 1.0) * (s - 2.0) * (s - 2.0));
    for (Eigen::Index i = 0; i < dim; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const Eigen::ArrayXd u = centered.row(i).array() * centered.row(j).array();
            const double se = std::sqrt(factor * (u - u.mean()).square().sum());
            cov_se(i, j) = se;
            cov_se(j, i) = se;
        }
    }
}

McMoments mc_moments(const ProDssmModel<double>& model, const AugmentedBelief<double>& initial,
                     std::size_t horizon, const McConfig& cfg) {
    const McSamples samples = mc_rollouts(model, initial, horizon, cfg);
    McMoments out;
    for (const Mat& step : samples.states) {
        Vec mean, mean_se;
        Mat cov, cov_se;
        sample_moments(step, mean, cov, mean_se, cov_se);
        out.mean.push_back(std::move(mean));
        out.cov.push_back(std::move(cov));
        out.mean_se.push_back(std::move(mean_se));
        out.cov_se.push_back(std::move(cov_se));
    }
    return out;
}

SigmaPointSet SigmaPointSet::build(const Vec& mean, const Mat& cov, double alpha, double beta,
                                   double kappa) {
    const Eigen::Index n = mean.size();
    detail::require_dims(cov.rows() == n && cov.cols() == n, "sigma points: covariance shape");
    SigmaPointSet set;
    set.points.resize(n, 2 * n + 1);
    set.mean_weights.resize(2 * n + 1);
    set.cov_weights.resize(2 * n + 1);
    set.points.col(0) = mean;
    if (n == 0) {
        set.mean_weights(0) = 1.0;
        set.cov_weights(0) = 1.0;
        return set;
    }
    const double nd = static_cast<double>(n);
    const double lambda = alpha * alpha * (nd + kappa) - nd;
    const double c = nd + lambda;
    if (!(c > 0.0)) throw ConfigError("sigma points: n + lambda must be positive");
    const Mat root = std::sqrt(c) * jittered_cholesky(cov).lower;
    for (Eigen::Index i = 0; i < n; ++i) {
        set.points.col(1 + i) = mean + root.col(i);
        set.points.col(1 + n + i) = mean - root.col(i);
    }
    set.mean_weights.setConstant(0.5 / c);
    set.cov_weights.setConstant(0.5 / c);
    set.mean_weights(0) = lambda / c;
    set.cov_weights(0) = lambda / c + 1.0 - alpha * alpha + beta;
    return set;
}

namespace {

/// Weighted mean and centered deviations of the columns of `values`.
Vec weighted_mean(const Mat& values, const Vec& weights) { return values * weights; }

Mat weighted_cross(const Mat& da, const Mat& db, const Vec& weights) {
    return da * weights.asDiagonal() * db.transpose();
}

}  // namespace

FilterResult<double> ukf_filter(const ProDssmModel<double>& model, const Trajectory& observations,
                                const AugmentedBelief<double>& initial, const UkfParams& params) {
    model.validate();
    const Eigen::Index n = model.state_dim();
    const Eigen::Index d = model.weight_dim();
    const bool global = model.scheme == WeightScheme::Global;
    const Vec r = model.emission_variance();

    // Weight coordinates with zero variance stay at their mean and never gain variance.
    const WeightMomentsPtr<double> prior = model.prior_weight_moments();
    const std::vector<Eigen::Index> active =
        active_weights(global ? initial.weights->full_cov().diagonal() : prior->var);
    const Eigen::Index a = static_cast<Eigen::Index>(active.size());

    FilterResult<double> result;
    AugmentedBelief<double> belief = initial;
    for (std::size_t t = 0; t < observations.length(); ++t) {
        const WeightMoments<double>& wm = global ? *belief.weights : *prior;
        const Mat w_cov = wm.full_cov();
        const Mat xw_cov = global ? belief.cross_cov() : Mat::Zero(n, d);

        Vec z_mean(n + a);
        Mat z_cov = Mat::Zero(n + a, n + a);
        z_mean.head(n) = belief.state_mean;
        z_cov.topLeftCorner(n, n) = belief.state_cov;
        for (Eigen::Index i = 0; i < a; ++i) {
            z_mean(n + i) = wm.mean(active[i]);
            for (Eigen::Index k = 0; k < n; ++k) {
                z_cov(k, n + i) = z_cov(n + i, k) = xw_cov(k, active[i]);
            }
            for (Eigen::Index j = 0; j < a; ++j) z_cov(n + i, n + j) = w_cov(active[i], active[j]);
        }

        // Prediction through f with additive l evaluated at every point.
        const SigmaPointSet sp = SigmaPointSet::build(z_mean, z_cov, params.alpha, params.beta,
                                                      params.kappa);
        const Eigen::Index m = static_cast<Eigen::Index>(sp.count());
        Mat x_next(n, m);
        Vec expected_l = Vec::Zero(n);
        for (Eigen::Index p = 0; p < m; ++p) {
            Vec w = wm.mean;
            for (Eigen::Index i = 0; i < a; ++i) w(active[i]) = sp.points(n + i, p);
            const Vec x = sp.points.col(p).head(n);
            x_next.col(p) = transition_mean(model, x, w);
            expected_l += sp.mean_weights(p) * transition_variance(model, x, w);
        }
        AugmentedBelief<double> predicted;
        predicted.state_mean = weighted_mean(x_next, sp.mean_weights);
        const Mat dx = x_next.colwise() - predicted.state_mean;
        predicted.state_cov = weighted_cross(dx, dx, sp.cov_weights);
        predicted.state_cov.diagonal() += expected_l;
        if (global) {
            const Mat dw = sp.points.bottomRows(a).colwise() - z_mean.tail(a);
            const Mat xw = weighted_cross(dx, dw, sp.cov_weights);
            predicted.state_weight_cov = Mat::Zero(n, d);
            for (Eigen::Index i = 0; i < a; ++i) predicted.state_weight_cov.col(active[i]) = xw.col(i);
            predicted.weights = belief.weights;
        } else {
            predicted.weights = prior;
        }

        // Update: Local correlates y with x only; Global with the active weights too.
        const Eigen::Index nz = global ? n + a : n;
        Vec pz_mean(nz);
        Mat pz_cov(nz, nz);
        pz_mean.head(n) = predicted.state_mean;
        pz_cov.topLeftCorner(n, n) = predicted.state_cov;
        if (global) {
            pz_mean.tail(a) = z_mean.tail(a);
            pz_cov.bottomRightCorner(a, a) = z_cov.bottomRightCorner(a, a);
            for (Eigen::Index i = 0; i < a; ++i) {
                pz_cov.block(0, n + i, n, 1) = predicted.state_weight_cov.col(active[i]);
                pz_cov.block(n + i, 0, 1, n) = predicted.state_weight_cov.col(active[i]).transpose();
            }
        }
        const SigmaPointSet up = SigmaPointSet::build(pz_mean, pz_cov, params.alpha, params.beta,
                                                      params.kappa);
        const Eigen::Index q = static_cast<Eigen::Index>(up.count());
        Mat y_points(model.obs_dim(), q);
        for (Eigen::Index p = 0; p < q; ++p) {
            y_points.col(p) = emission_mean(model, Vec(up.points.col(p).head(n)));
        }
        JointBlocks<double> joint;
        joint.mean_a = pz_mean;
        joint.cov_aa = pz_cov;
        joint.mean_b = weighted_mean(y_points, up.mean_weights);
        const Mat dy = y_points.colwise() - joint.mean_b;
        const Mat dz = up.points.colwise() - pz_mean;
        joint.cov_bb = weighted_cross(dy, dy, up.cov_weights);
        joint.cov_bb.diagonal() += r;
        joint.cov_ab = weighted_cross(dz, dy, up.cov_weights);

        const Vec& y = observations.observations[t];
        const GaussianBelief<double> y_belief(joint.mean_b, joint.cov_bb);
        const double ll = log_density(y_belief, y);
        const GaussianBelief<double> post = condition(joint, y);

        belief = AugmentedBelief<double>();
        belief.state_mean = post.mean.head(n);
        belief.state_cov = post.cov.topLeftCorner(n, n);
        if (global) {
            auto w = std::make_shared<WeightMoments<double>>(*predicted.weights);
            Mat dense = w->full_cov();
            belief.state_weight_cov = Mat::Zero(n, d);
            for (Eigen::Index i = 0; i < a; ++i) {
                w->mean(active[i]) = post.mean(n + i);
                belief.state_weight_cov.col(active[i]) = post.cov.block(0, n + i, n, 1);
                for (Eigen::Index j = 0; j < a; ++j) dense(active[i], active[j]) = post.cov(n + i, n + j);
            }
            w->var = dense.diagonal();
            w->dense = std::move(dense);
            belief.weights = std::move(w);
        } else {
            belief.weights = prior;
        }

        result.log_likelihood += ll;
        result.step_log_likelihood.push_back(ll);
        result.predicted_observations.push_back(y_belief);
        result.predicted.push_back(std::move(predicted));
        result.posteriors.push_back(belief);
    }
    return result;
}

FilterResult<double> mc_filter(const ProDssmModel<double>& model, const Trajectory& observations,
                               const AugmentedBelief<double>& initial, const McConfig& cfg) {
    cfg.validate();
    model.validate();
    const Eigen::Index n = model.state_dim();
    const Eigen::Index d = model.weight_dim();
    const Eigen::Index s_count = static_cast<Eigen::Index>(cfg.samples);
    const bool global = model.scheme == WeightScheme::Global;
    const Vec r = model.emission_variance();
    const WeightMomentsPtr<double> prior = model.prior_weight_moments();

    FilterResult<double> result;
    Vec z_mean = global ? initial.joint_mean() : initial.state_mean;
    Mat z_cov = global ? initial.joint_cov() : initial.state_cov;
    for (std::size_t t = 0; t < observations.length(); ++t) {
        const Mat factor = psd_factor(z_cov);
        const std::uint64_t step_seed = mix_seed(cfg.seed, t);
        Mat z_next(global ? n + d : n, s_count);
        Mat y_points(model.obs_dim(), s_count);
        for (Eigen::Index s = 0; s < s_count; ++s) {
            std::mt19937_64 rng = particle_rng(step_seed, static_cast<std::uint64_t>(s));
            const Vec z = z_mean + factor * standard_normal_vector(z_mean.size(), rng);
            const Vec w = global ? Vec(z.tail(d)) : sample_weights(model, rng);
            const Vec x = sample_transition(model, z.head(n), w, rng);
            z_next.col(s).head(n) = x;
            if (global) z_next.col(s).tail(d) = w;
            y_points.col(s) = emission_mean(model, x);
        }
        EmpiricalMoments em = empirical(z_next, y_points);
        em.cov_bb.diagonal() += r;

        AugmentedBelief<double> predicted;
        predicted.state_mean = em.mean_a.head(n);
        predicted.state_cov = em.cov_aa.topLeftCorner(n, n);
        if (global) {
            predicted.state_weight_cov = em.cov_aa.topRightCorner(n, d);
            auto w = std::make_shared<WeightMoments<double>>();
            w->mean = em.mean_a.tail(d);
            w->dense = em.cov_aa.bottomRightCorner(d, d);
            w->var = w->dense->diagonal();
            predicted.weights = std::move(w);
        } else {
            predicted.weights = prior;
        }

        const Vec& y = observations.observations[t];
        const GaussianBelief<double> y_belief(em.mean_b, em.cov_bb);
        const double ll = log_density(y_belief, y);

        // Gain from sample moments; the posterior is left unrepaired so that a
        // degenerate particle cloud stays exactly degenerate.
        const CholeskyFactor<double> chol = jittered_cholesky(em.cov_bb);
        Mat x_gain = em.cov_ab.transpose();
        solve_lower_in_place(chol.lower, x_gain);
        Mat innovation = Mat(y - em.mean_b);
        solve_lower_in_place(chol.lower, innovation);
        z_mean = em.mean_a + x_gain.transpose() * innovation;
        z_cov = symmetrized(Mat(em.cov_aa - x_gain.transpose() * x_gain));

        AugmentedBelief<double> post;
        post.state_mean = z_mean.head(n);
        post.state_cov = z_cov.topLeftCorner(n, n);
        if (global) {
            post.state_weight_cov = z_cov.topRightCorner(n, d);
            auto w = std::make_shared<WeightMoments<double>>();
            w->mean = z_mean.tail(d);
            w->dense = z_cov.bottomRightCorner(d, d);
            w->var = w->dense->diagonal();
            post.weights = std::move(w);
        } else {
            post.weights = prior;
        }

        result.log_likelihood += ll;
        result.step_log_likelihood.push_back(ll);
        result.predicted_observations.push_back(y_belief);
        result.predicted.push_back(std::move(predicted));
        result.posteriors.push_back(std::move(post));
    }
    return result;
}

double mc_objective(const ProDssmModel<double>& model, const McObjectiveData& data,
                    ObjectiveMode mode, const McConfig& cfg) {
    cfg.validate();
    double likelihood = 0.0;
    if (mode == ObjectiveMode::Ssm) {
        const AugmentedBelief<double> initial = model.initial_augmented();
        for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
            McConfig c = cfg;
            c.seed = mix_seed(cfg.seed, i);
            likelihood += mc_filter(model, data.trajectories[i], initial, c).log_likelihood;
        }
    } else {
        detail::require_dims(data.inputs.size() == data.targets.size(),
                             "regression: inputs vs targets");
        if (data.depth < 1) throw ConfigError("regression depth must be >= 1");
        const Vec r = model.emission_variance();
        const Eigen::Index s_count = static_cast<Eigen::Index>(cfg.samples);
        for (std::size_t i = 0; i < data.inputs.size(); ++i) {
            const std::uint64_t seed = mix_seed(cfg.seed, i);
            Mat y_points(model.obs_dim(), s_count);
            for (Eigen::Index s = 0; s < s_count; ++s) {
                std::mt19937_64 rng = particle_rng(seed, static_cast<std::uint64_t>(s));
                Vec x = data.inputs[i];
                const bool global = model.scheme == WeightScheme::Global;
                const Vec w_fixed = global ? sample_weights(model, rng) : Vec();
                for (std::size_t k = 0; k < data.depth; ++k) {
                    x = sample_transition(model, x, global ? w_fixed : sample_weights(model, rng),
                                          rng);
                }
                y_points.col(s) = emission_mean(model, x);
            }
            EmpiricalMoments em = empirical(y_points, y_points);
            em.cov_aa.diagonal() += r;
            likelihood += log_density(GaussianBelief<double>(em.mean_a, em.cov_aa), data.targets[i]);
        }
    }
    const double total = likelihood + prior_terms(model);
    if (!std::isfinite(total)) throw NonFiniteObjective("MC objective is not finite");
    return total;
}

McObjective::McObjective(ProDssmModel<double> base, McObjectiveData data, ObjectiveMode mode,
                         McConfig cfg)
    : ModelObjective(std::move(base)), data_(std::move(data)), mode_(mode), cfg_(cfg) {
    cfg_.validate();
}

double McObjective::evaluate(const ProDssmModel<double>& model) const {
    return mc_objective(model, data_, mode_, cfg_);
}

}  // namespace prodssm
