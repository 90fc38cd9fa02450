#ifndef PRODSSM_INFERENCE_HPP
#define PRODSSM_INFERENCE_HPP

#include <vector>

#include "prodssm/model.hpp"

namespace prodssm {

/// Output of a Gaussian filter pass over y_1..y_T.
template <class T>
struct FilterResult {
    std::vector<AugmentedBelief<T>> predicted;   ///< p(z_t | y_{1:t-1})
    std::vector<AugmentedBelief<T>> posteriors;  ///< p(z_t | y_{1:t})
    std::vector<GaussianBelief<T>> predicted_observations;  ///< p(y_t | y_{1:t-1})
    std::vector<T> step_log_likelihood;
    T log_likelihood = T(0.0);

    std::size_t length() const { return posteriors.size(); }
};

/// Beliefs over z_t and y_t for t = 1..horizon after the conditioning point.
template <class T>
struct PredictiveResult {
    std::vector<AugmentedBelief<T>> states;
    std::vector<GaussianBelief<T>> observations;
};

/// Kalman update of a predicted augmented belief with one observation.
/// Local: only the state block moves; Global: the full z block (dense Σ^w after).
template <class T>
AugmentedBelief<T> filter_update(const AugmentedBelief<T>& predicted,
                                 const EmissionMoments<T>& emission, const Vector<T>& y,
                                 WeightScheme scheme);

template <class T>
FilterResult<T> det_filter(const ProDssmModel<T>& model, const Trajectory& observations,
                           const AugmentedBelief<T>& initial);

template <class T>
PredictiveResult<T> det_predict(const ProDssmModel<T>& model, const AugmentedBelief<T>& initial,
                                std::size_t horizon);

/// Filters `history` from the model's initial belief, then predicts `horizon` steps.
template <class T>
PredictiveResult<T> predictive_distribution(const ProDssmModel<T>& model,
                                            const Trajectory& history, std::size_t horizon);

}  // namespace prodssm

#endif  // PRODSSM_INFERENCE_HPP
