#ifndef PRODSSM_MODEL_HPP
#define PRODSSM_MODEL_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "prodssm/gaussian.hpp"
#include "prodssm/moment_layers.hpp"

namespace prodssm {

enum class LayerKind { Affine, Relu };

struct LayerSpec {
    LayerKind kind = LayerKind::Affine;
    Eigen::Index out = 0;  ///< output width of an affine layer; unused for ReLU
};

/// Feed-forward network of affine and ReLU layers. With `residual` set the
/// network computes x + net(x).
struct NetworkSpec {
    Eigen::Index input_dim = 0;
    std::vector<LayerSpec> layers;
    bool residual = false;

    /// in -> [hidden..., ReLU after each] -> out
    static NetworkSpec mlp(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                           Eigen::Index out, bool residual = false);

    Eigen::Index output_dim() const;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> affine_shapes() const;
    Eigen::Index weight_count() const;
    WeightLayout layout(Eigen::Index begin, Eigen::Index total) const;
    void validate() const;
};

/// Point evaluation of a network with parameters laid out per `layout`.
template <class T>
Vector<T> forward_network(const NetworkSpec& spec, const WeightLayout& layout,
                          const Vector<T>& params, const Vector<T>& x);

/// Moments after a full network pass plus, on request, the product of
/// per-layer expected Jacobians (output x input).
template <class T>
struct NetworkPass {
    LayerBelief<T> output;
    Matrix<T> jacobian;
};

template <class T>
NetworkPass<T> propagate_network(const NetworkSpec& spec, const WeightLayout& layout,
                                 LayerBelief<T> belief, WeightScheme scheme,
                                 bool with_jacobian = false);

/// Time-invariant Gaussian over the flattened weights, diagonal covariance.
template <class T>
struct WeightDistribution {
    Vector<T> mean;
    Vector<T> log_var;

    Vector<T> variance() const;
    Eigen::Index size() const { return mean.size(); }
};

/// Log-variance whose exp underflows to exactly 0 (deterministic weight).
inline constexpr double kDeterministicLogVar = -1000.0;

enum class VarianceKind { ConstantDiag, LogVarNet };

/// Transition variance l: a constant diagonal, or a network producing
/// log-variances whose weights live in the shared weight vector after f's.
template <class T>
struct TransitionVariance {
    VarianceKind kind = VarianceKind::ConstantDiag;
    Vector<T> log_var;  ///< ConstantDiag
    NetworkSpec net;    ///< LogVarNet
};

template <class T>
struct AugmentedBelief;

template <class T>
struct ProDssmModel {
    NetworkSpec f_spec;
    TransitionVariance<T> variance;
    NetworkSpec g_spec;
    Vector<T> g_params;  ///< point parameters of the emission network
    Vector<T> log_r;
    Vector<T> initial_mean;
    Matrix<T> initial_chol;  ///< lower factor of the initial-state covariance
    WeightDistribution<T> weights;
    WeightScheme scheme = WeightScheme::Local;

    Eigen::Index state_dim() const { return f_spec.input_dim; }
    Eigen::Index obs_dim() const { return g_spec.output_dim(); }
    Eigen::Index weight_dim() const { return weights.size(); }

    WeightLayout f_layout() const;
    WeightLayout l_layout() const;
    WeightLayout g_layout() const;

    GaussianBelief<T> initial_belief() const;
    WeightMomentsPtr<T> prior_weight_moments() const;
    AugmentedBelief<T> initial_augmented() const;
    Vector<T> emission_variance() const;

    /// Throws DimensionMismatch / NonPositiveVariance on inconsistent fields.
    void validate() const;

    template <class U>
    ProDssmModel<U> cast() const;
};

/// Joint belief over the augmented state z = [x, w].
template <class T>
struct AugmentedBelief {
    Vector<T> state_mean;
    Matrix<T> state_cov;
    WeightMomentsPtr<T> weights;
    /// Cov[x, w]; empty means structurally zero (Local scheme).
    Matrix<T> state_weight_cov;

    Eigen::Index state_dim() const { return state_mean.size(); }
    Eigen::Index weight_dim() const { return weights ? weights->size() : 0; }
    bool has_weight_correlation() const { return state_weight_cov.size() > 0; }
    Matrix<T> cross_cov() const;
    Vector<T> joint_mean() const;
    Matrix<T> joint_cov() const;
    GaussianBelief<T> state_belief() const { return {state_mean, state_cov}; }
};

/// Moments of y = g(x) + noise together with its cross-covariance to z.
template <class T>
struct EmissionMoments {
    Vector<T> mean;
    Matrix<T> cov;
    Matrix<T> cross_x;  ///< Cov[y, x]
    Matrix<T> cross_w;  ///< Cov[y, w]; empty when structurally zero

    GaussianBelief<T> belief() const { return {mean, cov}; }
    /// Joint blocks over (z, y) for the given belief over z.
    JointBlocks<T> joint(const AugmentedBelief<T>& z) const;
    /// Joint blocks over (x, y) only.
    JointBlocks<T> joint_state(const AugmentedBelief<T>& z) const;
};

template <class T>
AugmentedBelief<T> augmented_step(const AugmentedBelief<T>& belief, const ProDssmModel<T>& model);

template <class T>
EmissionMoments<T> emission_moments(const AugmentedBelief<T>& belief,
                                    const ProDssmModel<T>& model);

/// Time-indexed observations y_1..y_T with optional latents x_1..x_T and x_0.
struct Trajectory {
    std::vector<Vec> observations;
    std::vector<Vec> latents;
    Vec initial_latent;

    std::size_t length() const { return observations.size(); }
    bool has_latents() const { return latents.size() == observations.size() && !latents.empty(); }
};

/// Ancestral sampling; Local redraws weights every step, Global draws once.
Trajectory simulate(const ProDssmModel<double>& model, std::size_t steps, std::uint64_t seed);

/// One transition draw x_{t+1} given x_t and a weight vector.
Vec sample_transition(const ProDssmModel<double>& model, const Vec& x, const Vec& weights,
                      std::mt19937_64& rng);

/// Weight vector drawn from the model's weight distribution.
Vec sample_weights(const ProDssmModel<double>& model, std::mt19937_64& rng);

/// Vector of independent standard normals.
Vec standard_normal_vector(Eigen::Index n, std::mt19937_64& rng);

/// Transition mean f(x, w) (including the residual path) and variance l(x, w).
Vec transition_mean(const ProDssmModel<double>& model, const Vec& x, const Vec& weights);
Vec transition_variance(const ProDssmModel<double>& model, const Vec& x, const Vec& weights);
Vec emission_mean(const ProDssmModel<double>& model, const Vec& x);

/// Architecture and initialization knobs for building a fresh model.
struct ModelShape {
    Eigen::Index state_dim = 1;
    Eigen::Index obs_dim = 1;
    std::vector<Eigen::Index> f_hidden{8};
    bool residual = false;
    VarianceKind variance_kind = VarianceKind::ConstantDiag;
    std::vector<Eigen::Index> l_hidden{};
    std::vector<Eigen::Index> g_hidden{};
    WeightScheme scheme = WeightScheme::Local;
    double initial_log_weight_var = -9.210340371976182;  // log(1e-4)
    double initial_log_process_var = -4.0;
    double initial_log_obs_var = -2.0;
    double initial_state_var = 1.0;
};

/// Fan-in scaled random weight means (variance 2 / fan_in), identity-like emission.
ProDssmModel<double> make_model(const ModelShape& shape, std::uint64_t seed);

}  // namespace prodssm

#endif  // PRODSSM_MODEL_HPP
