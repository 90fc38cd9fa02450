#ifndef PRODSSM_BASELINES_HPP
#define PRODSSM_BASELINES_HPP

#include <cstdint>
#include <random>
#include <vector>

#include "prodssm/training.hpp"

namespace prodssm {

struct McConfig {
    std::size_t samples = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Generator for particle `index` of a run seeded with `seed`; independent of
/// evaluation order.
std::mt19937_64 particle_rng(std::uint64_t seed, std::uint64_t index);

/// Sampled latent states: `states[t]` is D_x x S holding x_{t+1} of every particle.
struct McSamples {
    std::vector<Mat> states;
};

/// Per-step empirical moments with jackknife standard errors.
struct McMoments {
    std::vector<Vec> mean;
    std::vector<Mat> cov;  ///< unbiased (S - 1) normalization; zero when S = 1
    std::vector<Vec> mean_se;
    std::vector<Mat> cov_se;
};

/// Ancestral rollouts from `initial`: x_0 (and w under Global) from the belief,
/// weights per scheme, transition noise from l.
McSamples mc_rollouts(const ProDssmModel<double>& model, const AugmentedBelief<double>& initial,
                      std::size_t horizon, const McConfig& cfg);

/// Empirical mean/covariance of the columns of `samples` with jackknife SEs.
void sample_moments(const Mat& samples, Vec& mean, Mat& cov, Vec& mean_se, Mat& cov_se);

McMoments mc_moments(const ProDssmModel<double>& model, const AugmentedBelief<double>& initial,
                     std::size_t horizon, const McConfig& cfg);

/// Unscented transform points for N(mean, cov).
struct SigmaPointSet {
    Mat points;  ///< n x (2n + 1)
    Vec mean_weights;
    Vec cov_weights;

    static SigmaPointSet build(const Vec& mean, const Mat& cov, double alpha = 1.0,
                               double beta = 2.0, double kappa = 0.0);
    std::size_t count() const { return static_cast<std::size_t>(points.cols()); }
};

struct UkfParams {
    double alpha = 1.0;
    double beta = 2.0;
    double kappa = 0.0;
};

/// Unscented Kalman filter on the augmented state. Weight coordinates with zero
/// prior variance are treated as constants rather than sigma-point dimensions.
FilterResult<double> ukf_filter(const ProDssmModel<double>& model, const Trajectory& observations,
                                const AugmentedBelief<double>& initial, const UkfParams& params = {});

/// Gaussian filter whose prediction moments are estimated from S particles
/// drawn from the current belief (weights per scheme). Emission noise enters
/// analytically.
FilterResult<double> mc_filter(const ProDssmModel<double>& model, const Trajectory& observations,
                               const AugmentedBelief<double>& initial, const McConfig& cfg);

enum class ObjectiveMode { Ssm, Regression };

struct McObjectiveData {
    std::vector<Trajectory> trajectories;  ///< Ssm
    std::vector<Vec> inputs;               ///< Regression
    std::vector<Vec> targets;
    std::size_t depth = 1;
};

/// Deterministic objective with its inner expectations replaced by seeded
/// particle moments: Gaussian fit of S rollouts (Regression) or mc_filter (Ssm).
double mc_objective(const ProDssmModel<double>& model, const McObjectiveData& data,
                    ObjectiveMode mode, const McConfig& cfg);

/// MC objective as a trainable objective (finite-difference gradients only).
class McObjective : public ModelObjective {
public:
    McObjective(ProDssmModel<double> base, McObjectiveData data, ObjectiveMode mode, McConfig cfg);

    double evaluate(const ProDssmModel<double>& model) const override;
    bool has_adjoint() const override { return false; }

private:
    McObjectiveData data_;
    ObjectiveMode mode_;
    McConfig cfg_;
};

}  // namespace prodssm

#endif  // PRODSSM_BASELINES_HPP
