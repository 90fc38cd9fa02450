#include "prodssm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace prodssm {

namespace {

bool has_constant_variance(const ProDssmModel<double>& model) {
    return model.variance.kind == VarianceKind::ConstantDiag;
}

Eigen::Index tril_count(Eigen::Index n) { return n * (n + 1) / 2; }

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NonFiniteObjective(std::string(what) + " is not finite");
}

}  // namespace

Eigen::Index TrainableParams::size(const ProDssmModel<double>& model) {
    Eigen::Index n = 2 * model.weight_dim() + model.g_params.size() + model.log_r.size();
    if (has_constant_variance(model)) n += model.variance.log_var.size();
    return n + model.state_dim() + tril_count(model.state_dim());
}

template <class T>
Vector<T> TrainableParams::pack(const ProDssmModel<T>& model) {
    const Eigen::Index n = model.state_dim();
    const bool constant = model.variance.kind == VarianceKind::ConstantDiag;
    const Eigen::Index nv = constant ? model.variance.log_var.size() : 0;
    Vector<T> theta(2 * model.weight_dim() + model.g_params.size() + model.log_r.size() + nv + n +
                    tril_count(n));
    Eigen::Index k = 0;
    auto put = [&](const Vector<T>& v) {
        theta.segment(k, v.size()) = v;
        k += v.size();
    };
    put(model.weights.mean);
    put(model.weights.log_var);
    put(model.g_params);
    put(model.log_r);
    if (constant) put(model.variance.log_var);
    put(model.initial_mean);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) theta(k++) = model.initial_chol(i, j);
    }
    return theta;
}

template <class T>
ProDssmModel<T> TrainableParams::unpack(const ProDssmModel<T>& model, const Vector<T>& theta) {
    const Eigen::Index n = model.state_dim();
    const bool constant = model.variance.kind == VarianceKind::ConstantDiag;
    const Eigen::Index nv = constant ? model.variance.log_var.size() : 0;
    const Eigen::Index expected = 2 * model.weight_dim() + model.g_params.size() +
                                  model.log_r.size() + nv + n + tril_count(n);
    detail::require_dims(theta.size() == expected, "TrainableParams: parameter vector size");

    ProDssmModel<T> out = model;
    Eigen::Index k = 0;
    auto take = [&](Vector<T>& v) {
        v = theta.segment(k, v.size());
        k += v.size();
    };
    take(out.weights.mean);
    take(out.weights.log_var);
    take(out.g_params);
    take(out.log_r);
    if (constant) take(out.variance.log_var);
    take(out.initial_mean);
    out.initial_chol = Matrix<T>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) out.initial_chol(i, j) = theta(k++);
    }
    return out;
}

std::vector<bool> TrainableParams::mask(const ProDssmModel<double>& model,
                                        const ParamGroups& groups) {
    std::vector<bool> m;
    m.reserve(static_cast<std::size_t>(size(model)));
    auto add = [&](Eigen::Index count, bool on) { m.insert(m.end(), count, on); };
    add(model.weight_dim(), groups.weight_mean);
    add(model.weight_dim(), groups.weight_log_var);
    add(model.g_params.size(), groups.emission);
    add(model.log_r.size(), groups.obs_noise);
    if (has_constant_variance(model)) {
        add(model.variance.log_var.size(), groups.transition_variance);
    }
    add(model.state_dim() + tril_count(model.state_dim()), groups.initial_state);
    return m;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be non-negative");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
}

template <class T>
T log_hyper_prior(const WeightDistribution<T>& weights) {
    using std::exp;
    T acc(0.0);
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        const T lv = weights.log_var(i);
        if (!std::isfinite(value_of(lv))) {
            throw NonPositiveVariance("weight log-variance must be finite");
        }
        acc += lv - weights.mean(i) * weights.mean(i) - exp(lv);
    }
    return 0.5 * acc;
}

template <class T>
T point_log_prior(const ProDssmModel<T>& model) {
    return -0.5 * model.g_params.squaredNorm();
}

template <class T>
T ssm_objective(const ProDssmModel<T>& model, const std::vector<Trajectory>& data,
                double likelihood_scale) {
    T likelihood(0.0);
    const AugmentedBelief<T> initial = model.initial_augmented();
    for (const Trajectory& traj : data) {
        likelihood += det_filter(model, traj, initial).log_likelihood;
    }
    const T total =
        likelihood_scale * likelihood + log_hyper_prior(model.weights) + point_log_prior(model);
    check_finite(value_of(total), "ssm objective");
    return total;
}

template <class T>
AugmentedBelief<T> point_belief(const ProDssmModel<T>& model, const Vec& x) {
    detail::require_dims(x.size() == model.state_dim(), "point_belief: input dimension");
    AugmentedBelief<T> b;
    b.state_mean = x.template cast<T>();
    b.state_cov = Matrix<T>::Zero(x.size(), x.size());
    b.weights = model.prior_weight_moments();
    if (model.scheme == WeightScheme::Global) {
        b.state_weight_cov = Matrix<T>::Zero(x.size(), model.weight_dim());
    }
    return b;
}

template <class T>
T regression_objective(const ProDssmModel<T>& model, const std::vector<Vec>& inputs,
                       const std::vector<Vec>& targets, std::size_t depth,
                       double likelihood_scale) {
    detail::require_dims(inputs.size() == targets.size(), "regression: inputs vs targets");
    if (depth < 1) throw ConfigError("regression depth must be >= 1");
    T likelihood(0.0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        detail::require_dims(targets[i].size() == model.obs_dim(), "regression: target dimension");
        const PredictiveResult<T> pred = det_predict(model, point_belief(model, inputs[i]), depth);
        likelihood += log_density(pred.observations.back(), Vector<T>(targets[i].template cast<T>()));
    }
    const T total =
        likelihood_scale * likelihood + log_hyper_prior(model.weights) + point_log_prior(model);
    check_finite(value_of(total), "regression objective");
    return total;
}

ad::Var ParamObjective::value(const Vector<ad::Var>&) const {
    throw ConfigError("objective has no adjoint implementation");
}

ModelObjective::ModelObjective(ProDssmModel<double> base)
    : base_(std::move(base)), base_ad_(base_.cast<ad::Var>()) {
    base_.validate();
}

double ModelObjective::value(const Vec& theta) const {
    return evaluate(TrainableParams::unpack(base_, theta));
}

ad::Var ModelObjective::value(const Vector<ad::Var>& theta) const {
    return evaluate(TrainableParams::unpack(base_ad_, theta));
}

ad::Var ModelObjective::evaluate(const ProDssmModel<ad::Var>&) const {
    throw ConfigError("objective has no adjoint implementation");
}

SsmObjective::SsmObjective(ProDssmModel<double> base, std::vector<Trajectory> data)
    : ModelObjective(std::move(base)), data_(std::move(data)) {
    for (const Trajectory& t : data_) {
        for (const Vec& y : t.observations) {
            detail::require_dims(y.size() == base_.obs_dim(), "ssm objective: observation dimension");
        }
    }
}

void SsmObjective::set_batch(const std::vector<std::size_t>& indices) {
    batch_.clear();
    scale_ = 1.0;
    if (indices.empty()) return;
    for (std::size_t i : indices) batch_.push_back(data_.at(i));
    scale_ = static_cast<double>(data_.size()) / static_cast<double>(indices.size());
}

double SsmObjective::evaluate(const ProDssmModel<double>& model) const {
    return ssm_objective(model, batch_.empty() ? data_ : batch_, scale_);
}

ad::Var SsmObjective::evaluate(const ProDssmModel<ad::Var>& model) const {
    return ssm_objective(model, batch_.empty() ? data_ : batch_, scale_);
}

RegressionObjective::RegressionObjective(ProDssmModel<double> base, std::vector<Vec> inputs,
                                         std::vector<Vec> targets, std::size_t depth)
    : ModelObjective(std::move(base)),
      inputs_(std::move(inputs)),
      targets_(std::move(targets)),
      depth_(depth) {
    detail::require_dims(inputs_.size() == targets_.size(), "regression: inputs vs targets");
}

void RegressionObjective::set_batch(const std::vector<std::size_t>& indices) {
    batch_inputs_.clear();
    batch_targets_.clear();
    scale_ = 1.0;
    if (indices.empty()) return;
    for (std::size_t i : indices) {
        batch_inputs_.push_back(inputs_.at(i));
        batch_targets_.push_back(targets_.at(i));
    }
    scale_ = static_cast<double>(inputs_.size()) / static_cast<double>(indices.size());
}

double RegressionObjective::evaluate(const ProDssmModel<double>& model) const {
    const bool full = batch_inputs_.empty();
    return regression_objective(model, full ? inputs_ : batch_inputs_,
                                full ? targets_ : batch_targets_, depth_, scale_);
}

ad::Var RegressionObjective::evaluate(const ProDssmModel<ad::Var>& model) const {
    const bool full = batch_inputs_.empty();
    return regression_objective(model, full ? inputs_ : batch_inputs_,
                                full ? targets_ : batch_targets_, depth_, scale_);
}

namespace {

ValueAndGradient adjoint_gradient(const ParamObjective& objective, const Vec& theta,
                                  const std::vector<bool>& mask) {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    Vector<ad::Var> x(theta.size());
    std::vector<std::uint32_t> slot(static_cast<std::size_t>(theta.size()), ad::kConstant);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const bool active = mask.empty() || mask[static_cast<std::size_t>(i)];
        x(i) = active ? ad::Var::independent(theta(i)) : ad::Var(theta(i));
        slot[static_cast<std::size_t>(i)] = x(i).index();
    }
    const ad::Var out = objective.value(x);
    ValueAndGradient r;
    r.value = out.value();
    check_finite(r.value, "objective");
    r.gradient = Vec::Zero(theta.size());
    if (out.is_constant()) return r;
    const std::vector<double> adj = tape.adjoints(out);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const std::uint32_t s = slot[static_cast<std::size_t>(i)];
        if (s != ad::kConstant) r.gradient(i) = adj[s];
    }
    return r;
}

ValueAndGradient fd_gradient(const ParamObjective& objective, const Vec& theta,
                             const std::vector<bool>& mask) {
    ValueAndGradient r;
    r.value = objective.value(theta);
    check_finite(r.value, "objective");
    r.gradient = Vec::Zero(theta.size());
    Vec probe = theta;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
        const double h = 1e-4 * (1.0 + std::abs(theta(i)));
        probe(i) = theta(i) + h;
        const double up = objective.value(probe);
        probe(i) = theta(i) - h;
        const double down = objective.value(probe);
        probe(i) = theta(i);
        r.gradient(i) = (up - down) / (2.0 * h);
    }
    return r;
}

ValueAndGradient evaluate_gradient(const ParamObjective& objective, const Vec& theta,
                                   GradientMode mode, const std::vector<bool>& mask) {
    ValueAndGradient r = (mode == GradientMode::Adjoint && objective.has_adjoint())
                             ? adjoint_gradient(objective, theta, mask)
                             : fd_gradient(objective, theta, mask);
    if (!r.gradient.allFinite()) throw NonFiniteObjective("gradient is not finite");
    return r;
}

}  // namespace

ValueAndGradient value_and_gradient(const ParamObjective& objective, const Vec& theta,
                                    GradientMode mode) {
    return evaluate_gradient(objective, theta, mode, {});
}

Vec gradient(const ParamObjective& objective, const Vec& theta, const TrainConfig& config) {
    return evaluate_gradient(objective, theta, config.mode, {}).gradient;
}

ParamFitResult fit_params(ParamObjective& objective, const Vec& theta0, const TrainConfig& config,
                          const std::vector<bool>& mask) {
    config.validate();
    detail::require_dims(mask.empty() || mask.size() == static_cast<std::size_t>(theta0.size()),
                         "fit: mask size");
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    ParamFitResult result;
    result.theta = theta0;
    result.best_objective = -std::numeric_limits<double>::infinity();

    Vec theta = theta0;
    Vec m1 = Vec::Zero(theta.size());
    Vec m2 = Vec::Zero(theta.size());
    std::mt19937_64 rng(config.seed);
    const std::size_t n_data = objective.data_size();
    const bool batched = config.batch_size > 0 && n_data > config.batch_size;
    std::vector<std::size_t> order(n_data);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = n_data;
    std::size_t since_best = 0;
    double plateau_ref = -std::numeric_limits<double>::infinity();
    const auto start = std::chrono::steady_clock::now();

    for (std::size_t it = 0; it < config.iterations; ++it) {
        if (batched) {
            if (cursor + config.batch_size > n_data) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            objective.set_batch({order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 order.begin() + static_cast<std::ptrdiff_t>(cursor + config.batch_size)});
            cursor += config.batch_size;
        }

        ValueAndGradient vg;
        try {
            vg = evaluate_gradient(objective, theta, config.mode, mask);
        } catch (const NonFiniteObjective& e) {
            result.aborted = true;
            result.abort_reason = e.what();
            break;
        } catch (const NonPsdCovariance& e) {
            result.aborted = true;
            result.abort_reason = e.what();
            break;
        }

        IterationRecord rec;
        rec.iteration = it;
        rec.objective = vg.value;
        rec.gradient_norm = vg.gradient.norm();
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                start)
                          .count();
        result.history.push_back(rec);
        if (config.log && it % config.log_every == 0) {
            *config.log << rec.iteration << ' ' << rec.objective << ' ' << rec.gradient_norm << ' '
                        << rec.wall_ms << '\n';
        }
        if (config.on_iteration) config.on_iteration(rec);

        if (vg.value > result.best_objective) {
            result.best_objective = vg.value;
            result.theta = theta;
        }
        if (rec.gradient_norm < config.tolerance) {
            result.converged = true;
            break;
        }
        if (config.plateau_patience > 0) {
            if (vg.value > plateau_ref + config.plateau_min_delta) {
                plateau_ref = vg.value;
                since_best = 0;
            } else if (++since_best >= config.plateau_patience) {
                break;
            }
        }

        const double t = static_cast<double>(it + 1);
        m1 = beta1 * m1 + (1.0 - beta1) * vg.gradient;
        m2 = beta2 * m2 + (1.0 - beta2) * vg.gradient.cwiseProduct(vg.gradient);
        const Vec m1_hat = m1 / (1.0 - std::pow(beta1, t));
        const Vec m2_hat = m2 / (1.0 - std::pow(beta2, t));
        theta += config.learning_rate *
                 m1_hat.cwiseQuotient((m2_hat.cwiseSqrt().array() + eps).matrix());
    }
    if (batched) objective.set_batch({});
    return result;
}

FitResult fit(ModelObjective& objective, const TrainConfig& config) {
    const std::vector<bool> mask = TrainableParams::mask(objective.base(), config.groups);
    ParamFitResult trace =
        fit_params(objective, TrainableParams::pack(objective.base()), config, mask);
    ProDssmModel<double> model = TrainableParams::unpack(objective.base(), trace.theta);
    return {std::move(model), std::move(trace)};
}

#define PRODSSM_INSTANTIATE(T)                                                                   \
    template Vector<T> TrainableParams::pack<T>(const ProDssmModel<T>&);                         \
    template ProDssmModel<T> TrainableParams::unpack<T>(const ProDssmModel<T>&,                  \
                                                        const Vector<T>&);                       \
    template T log_hyper_prior<T>(const WeightDistribution<T>&);                                 \
    template T point_log_prior<T>(const ProDssmModel<T>&);                                       \
    template T ssm_objective<T>(const ProDssmModel<T>&, const std::vector<Trajectory>&, double); \
    template T regression_objective<T>(const ProDssmModel<T>&, const std::vector<Vec>&,          \
                                       const std::vector<Vec>&, std::size_t, double);            \
    template AugmentedBelief<T> point_belief<T>(const ProDssmModel<T>&, const Vec&);

PRODSSM_INSTANTIATE(double)
PRODSSM_INSTANTIATE(ad::Var)

#undef PRODSSM_INSTANTIATE

}  // namespace prodssm
