#ifndef PRODSSM_GAUSSIAN_HPP
#define PRODSSM_GAUSSIAN_HPP

#include "prodssm/errors.hpp"
#include "prodssm/linalg.hpp"

namespace prodssm {

/// Jitter escalation: first attempt adds nothing, then 1e-10, 1e-9, ... up to the cap.
inline constexpr double kInitialJitter = 1e-10;
inline constexpr double kDefaultMaxJitter = 1e-4;

/// Mean and dense covariance of a multivariate normal.
template <class T>
struct GaussianBelief {
    Vector<T> mean;
    Matrix<T> cov;

    GaussianBelief() = default;
    /// Symmetrizes `cov`; throws DimensionMismatch if the shapes disagree.
    GaussianBelief(Vector<T> mean, Matrix<T> cov);

    Eigen::Index dim() const { return mean.size(); }
};

/// Moments of a joint Gaussian over two blocks (a, b).
template <class T>
struct JointBlocks {
    Vector<T> mean_a;
    Vector<T> mean_b;
    Matrix<T> cov_aa;
    Matrix<T> cov_bb;
    Matrix<T> cov_ab;

    /// [[aa, ab], [ab^T, bb]]
    Matrix<T> full_cov() const;
    Vector<T> full_mean() const;
    void check_dims() const;
};

/// Cholesky factor of a covariance after the jitter that made it factorizable.
template <class T>
struct CholeskyFactor {
    Matrix<T> lower;
    double jitter = 0.0;
};

/// Symmetrizes and factorizes, escalating diagonal jitter until it succeeds.
template <class T>
CholeskyFactor<T> jittered_cholesky(const Matrix<T>& cov, double max_jitter = kDefaultMaxJitter);

/// Symmetrized copy of `cov` plus the smallest jitter from the escalation schedule
/// that makes it Cholesky-factorizable. Throws NonPsdCovariance past `max_jitter`.
template <class T>
Matrix<T> repair_psd(const Matrix<T>& cov, double max_jitter = kDefaultMaxJitter);

/// Belief over block a given b = observed_b (Kalman update).
template <class T>
GaussianBelief<T> condition(const JointBlocks<T>& joint, const Vector<T>& observed_b);

template <class T>
T log_density(const GaussianBelief<T>& belief, const Vector<T>& point);

/// KL( N(mean, diag(var)) || N(0, I) ).
template <class T>
T kl_to_standard_normal(const Vector<T>& mean, const Vector<T>& diag_var);

/// Smallest eigenvalue of the symmetric part (value-level diagnostics).
double min_eigenvalue(const Mat& m);

}  // namespace prodssm

#endif  // PRODSSM_GAUSSIAN_HPP
