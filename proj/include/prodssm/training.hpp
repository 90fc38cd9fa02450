#ifndef PRODSSM_TRAINING_HPP
#define PRODSSM_TRAINING_HPP

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "prodssm/autodiff.hpp"
#include "prodssm/inference.hpp"

namespace prodssm {

/// Parameter groups that can be frozen during training.
struct ParamGroups {
    bool weight_mean = true;
    bool weight_log_var = true;
    bool emission = true;
    bool obs_noise = true;
    bool transition_variance = true;
    bool initial_state = true;
};

/// Flattened view over the trainable fields of a model, in the order
/// weights.mean, weights.log_var, g_params, log_r, constant log-variance,
/// initial mean, lower triangle of the initial Cholesky factor (row-major).
struct TrainableParams {
    static Eigen::Index size(const ProDssmModel<double>& model);

    template <class T>
    static Vector<T> pack(const ProDssmModel<T>& model);

    /// Copy of `model` with its trainable fields overwritten from `theta`.
    template <class T>
    static ProDssmModel<T> unpack(const ProDssmModel<T>& model, const Vector<T>& theta);

    /// true for coordinates that belong to an enabled group.
    static std::vector<bool> mask(const ProDssmModel<double>& model, const ParamGroups& groups);
};

enum class GradientMode { Adjoint, FiniteDifference };

struct IterationRecord {
    std::size_t iteration = 0;
    double objective = 0.0;
    double gradient_norm = 0.0;
    double wall_ms = 0.0;
};

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t iterations = 1000;
    std::size_t batch_size = 0;  ///< trajectories (or points) per step; 0 uses all
    GradientMode mode = GradientMode::Adjoint;
    std::uint64_t seed = 0;
    double tolerance = 1e-6;  ///< stop once the gradient norm falls below
    std::size_t plateau_patience = 0;  ///< stop after this many steps without improvement; 0 disables
    double plateau_min_delta = 1e-4;
    ParamGroups groups;
    std::ostream* log = nullptr;  ///< one line per `log_every` iterations when set
    std::size_t log_every = 1;
    std::function<void(const IterationRecord&)> on_iteration;

    void validate() const;
};

/// ½ Σ_i (log Σ_ii − m_i² − Σ_ii); constants dropped.
template <class T>
T log_hyper_prior(const WeightDistribution<T>& weights);

/// Standard-normal log-prior on the emission point parameters, constants dropped.
template <class T>
T point_log_prior(const ProDssmModel<T>& model);

/// Σ_n det_filter log-likelihood + hyper-prior + point prior; `likelihood_scale`
/// multiplies the likelihood term (mini-batch rescaling).
template <class T>
T ssm_objective(const ProDssmModel<T>& model, const std::vector<Trajectory>& data,
                double likelihood_scale = 1.0);

/// Deep-stochastic-layer regression: inputs are initial states propagated
/// `depth` steps without filtering; the emission belief scores the target.
template <class T>
T regression_objective(const ProDssmModel<T>& model, const std::vector<Vec>& inputs,
                       const std::vector<Vec>& targets, std::size_t depth,
                       double likelihood_scale = 1.0);

/// Initial augmented belief with a point-mass state at `x`.
template <class T>
AugmentedBelief<T> point_belief(const ProDssmModel<T>& model, const Vec& x);

/// Scalar function of a parameter vector, evaluable on doubles and on tape scalars.
class ParamObjective {
public:
    virtual ~ParamObjective() = default;
    virtual double value(const Vec& theta) const = 0;
    virtual ad::Var value(const Vector<ad::Var>& theta) const;
    virtual bool has_adjoint() const { return true; }

    /// Number of independent data items for mini-batching; 0 means not batchable.
    virtual std::size_t data_size() const { return 0; }
    /// Restrict subsequent evaluations to `indices`; empty restores the full set.
    virtual void set_batch(const std::vector<std::size_t>& indices) { (void)indices; }
};

/// Objective evaluated on a model rebuilt from a parameter vector.
class ModelObjective : public ParamObjective {
public:
    explicit ModelObjective(ProDssmModel<double> base);

    double value(const Vec& theta) const override;
    ad::Var value(const Vector<ad::Var>& theta) const override;

    virtual double evaluate(const ProDssmModel<double>& model) const = 0;
    virtual ad::Var evaluate(const ProDssmModel<ad::Var>& model) const;

    const ProDssmModel<double>& base() const { return base_; }

protected:
    ProDssmModel<double> base_;
    ProDssmModel<ad::Var> base_ad_;
};

class SsmObjective : public ModelObjective {
public:
    SsmObjective(ProDssmModel<double> base, std::vector<Trajectory> data);

    double evaluate(const ProDssmModel<double>& model) const override;
    ad::Var evaluate(const ProDssmModel<ad::Var>& model) const override;
    std::size_t data_size() const override { return data_.size(); }
    void set_batch(const std::vector<std::size_t>& indices) override;

private:
    std::vector<Trajectory> data_;
    std::vector<Trajectory> batch_;
    double scale_ = 1.0;
};

class RegressionObjective : public ModelObjective {
public:
    RegressionObjective(ProDssmModel<double> base, std::vector<Vec> inputs,
                        std::vector<Vec> targets, std::size_t depth);

    double evaluate(const ProDssmModel<double>& model) const override;
    ad::Var evaluate(const ProDssmModel<ad::Var>& model) const override;
    std::size_t data_size() const override { return inputs_.size(); }
    void set_batch(const std::vector<std::size_t>& indices) override;

private:
    std::vector<Vec> inputs_, targets_;
    std::vector<Vec> batch_inputs_, batch_targets_;
    std::size_t depth_;
    double scale_ = 1.0;
};

/// Objective value and gradient. Throws NonFiniteObjective if either is not finite.
struct ValueAndGradient {
    double value = 0.0;
    Vec gradient;
};

ValueAndGradient value_and_gradient(const ParamObjective& objective, const Vec& theta,
                                    GradientMode mode);

Vec gradient(const ParamObjective& objective, const Vec& theta, const TrainConfig& config);

struct ParamFitResult {
    Vec theta;           ///< best parameters seen
    double best_objective = 0.0;
    std::vector<IterationRecord> history;
    bool converged = false;  ///< gradient norm fell below tolerance
    bool aborted = false;    ///< non-finite objective encountered
    std::string abort_reason;
};

/// Adam ascent on `objective`, starting at `theta0`; coordinates with
/// `mask[i] == false` stay fixed.
ParamFitResult fit_params(ParamObjective& objective, const Vec& theta0, const TrainConfig& config,
                          const std::vector<bool>& mask = {});

struct FitResult {
    ProDssmModel<double> model;
    ParamFitResult trace;
};

FitResult fit(ModelObjective& objective, const TrainConfig& config);

}  // namespace prodssm

#endif  // PRODSSM_TRAINING_HPP
