#include "prodssm/inference.hpp"

#include <cmath>

namespace prodssm {

template <class T>
AugmentedBelief<T> filter_update(const AugmentedBelief<T>& predicted,
                                 const EmissionMoments<T>& emission, const Vector<T>& y,
                                 WeightScheme scheme) {
    detail::require_dims(y.size() == emission.mean.size(), "filter: observation dimension");
    const Eigen::Index n = predicted.state_dim();

    if (scheme == WeightScheme::Local) {
        // Cov[y, w] = E[grad g] Cov[x, w] vanishes because Cov[x, w] does.
        if (predicted.has_weight_correlation() && !predicted.state_weight_cov.isZero(0.0)) {
            throw DimensionMismatch("local scheme belief carries state-weight correlation");
        }
        if (emission.cross_w.size() > 0 && !emission.cross_w.isZero(0.0)) {
            throw DimensionMismatch("local scheme emission carries weight correlation");
        }
        const GaussianBelief<T> post = condition(emission.joint_state(predicted), y);
        AugmentedBelief<T> out;
        out.state_mean = post.mean;
        out.state_cov = post.cov;
        out.weights = predicted.weights;
        return out;
    }

    const GaussianBelief<T> post = condition(emission.joint(predicted), y);
    const Eigen::Index d = predicted.weight_dim();
    AugmentedBelief<T> out;
    out.state_mean = post.mean.head(n);
    out.state_cov = post.cov.topLeftCorner(n, n);
    out.state_weight_cov = post.cov.topRightCorner(n, d);
    auto w = std::make_shared<WeightMoments<T>>();
    w->mean = post.mean.tail(d);
    w->dense = post.cov.bottomRightCorner(d, d);
    w->var = w->dense->diagonal();
    out.weights = std::move(w);
    return out;
}

template <class T>
FilterResult<T> det_filter(const ProDssmModel<T>& model, const Trajectory& observations,
                           const AugmentedBelief<T>& initial) {
    detail::require_dims(initial.state_dim() == model.state_dim(), "det_filter: initial belief");
    FilterResult<T> result;
    const std::size_t steps = observations.length();
    result.predicted.reserve(steps);
    result.posteriors.reserve(steps);
    result.predicted_observations.reserve(steps);
    result.step_log_likelihood.reserve(steps);

    AugmentedBelief<T> belief = initial;
    for (std::size_t t = 0; t < steps; ++t) {
        const Vec& y_obs = observations.observations[t];
        detail::require_dims(y_obs.size() == model.obs_dim(), "det_filter: observation dimension");
        const Vector<T> y = y_obs.template cast<T>();

        // Local weight reset is implicit: augmented_step always uses the prior under Local.
        AugmentedBelief<T> predicted = augmented_step(belief, model);
        const EmissionMoments<T> emission = emission_moments(predicted, model);
        const GaussianBelief<T> y_belief = emission.belief();
        const T ll = log_density(y_belief, y);
        belief = filter_update(predicted, emission, y, model.scheme);

        result.log_likelihood += ll;
        result.step_log_likelihood.push_back(ll);
        result.predicted_observations.push_back(y_belief);
        result.predicted.push_back(std::move(predicted));
        result.posteriors.push_back(belief);
    }
    return result;
}

template <class T>
PredictiveResult<T> det_predict(const ProDssmModel<T>& model, const AugmentedBelief<T>& initial,
                                std::size_t horizon) {
    if (horizon < 1) throw DimensionMismatch("det_predict: horizon must be >= 1");
    PredictiveResult<T> out;
    out.states.reserve(horizon);
    out.observations.reserve(horizon);
    AugmentedBelief<T> belief = initial;
    for (std::size_t t = 0; t < horizon; ++t) {
        belief = augmented_step(belief, model);
        out.observations.push_back(emission_moments(belief, model).belief());
        out.states.push_back(belief);
    }
    return out;
}

template <class T>
PredictiveResult<T> predictive_distribution(const ProDssmModel<T>& model,
                                            const Trajectory& history, std::size_t horizon) {
    if (history.length() == 0) throw DimensionMismatch("predictive_distribution: empty history");
    const FilterResult<T> filtered = det_filter(model, history, model.initial_augmented());
    return det_predict(model, filtered.posteriors.back(), horizon);
}

#define PRODSSM_INSTANTIATE(T)                                                                \
    template struct FilterResult<T>;                                                          \
    template struct PredictiveResult<T>;                                                      \
    template AugmentedBelief<T> filter_update<T>(const AugmentedBelief<T>&,                   \
                                                 const EmissionMoments<T>&, const Vector<T>&, \
                                                 WeightScheme);                               \
    template FilterResult<T> det_filter<T>(const ProDssmModel<T>&, const Trajectory&,         \
                                           const AugmentedBelief<T>&);                        \
    template PredictiveResult<T> det_predict<T>(const ProDssmModel<T>&,                       \
                                                const AugmentedBelief<T>&, std::size_t);      \
    template PredictiveResult<T> predictive_distribution<T>(const ProDssmModel<T>&,           \
                                                            const Trajectory&, std::size_t);

PRODSSM_INSTANTIATE(double)
PRODSSM_INSTANTIATE(ad::Var)

#undef PRODSSM_INSTANTIATE

}  // namespace prodssm
