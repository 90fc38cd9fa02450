#include "prodssm/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

namespace prodssm {

template <class T>
GaussianBelief<T>::GaussianBelief(Vector<T> m, Matrix<T> c) : mean(std::move(m)) {
    detail::require_dims(c.rows() == mean.size() && c.cols() == mean.size(),
                         "GaussianBelief: mean/covariance dimensions disagree");
    cov = symmetrized(c);
}

template <class T>
Matrix<T> JointBlocks<T>::full_cov() const {
    const Eigen::Index na = mean_a.size();
    const Eigen::Index nb = mean_b.size();
    Matrix<T> full(na + nb, na + nb);
    full.topLeftCorner(na, na) = cov_aa;
    full.topRightCorner(na, nb) = cov_ab;
    full.bottomLeftCorner(nb, na) = cov_ab.transpose();
    full.bottomRightCorner(nb, nb) = cov_bb;
    return full;
}

template <class T>
Vector<T> JointBlocks<T>::full_mean() const {
    Vector<T> m(mean_a.size() + mean_b.size());
    m << mean_a, mean_b;
    return m;
}

template <class T>
void JointBlocks<T>::check_dims() const {
    const Eigen::Index na = mean_a.size();
    const Eigen::Index nb = mean_b.size();
    detail::require_dims(cov_aa.rows() == na && cov_aa.cols() == na, "JointBlocks: cov_aa shape");
    detail::require_dims(cov_bb.rows() == nb && cov_bb.cols() == nb, "JointBlocks: cov_bb shape");
    detail::require_dims(cov_ab.rows() == na && cov_ab.cols() == nb, "JointBlocks: cov_ab shape");
}

template <class T>
CholeskyFactor<T> jittered_cholesky(const Matrix<T>& cov, double max_jitter) {
    detail::require_dims(cov.rows() == cov.cols(), "repair_psd: matrix must be square");
    Matrix<T> sym = symmetrized(cov);
    const Mat values = values_of(sym);
    CholeskyFactor<T> out;
    double jitter = 0.0;
    for (;;) {
        Mat trial = values;
        trial.diagonal().array() += jitter;
        Eigen::LLT<Mat> llt(trial);
        if (llt.info() == Eigen::Success) {
            Mat lower = llt.matrixL();
            if (lower.allFinite()) {
                if constexpr (std::is_same_v<T, double>) out.lower = std::move(lower);
                break;
            }
        }
        jitter = (jitter == 0.0) ? kInitialJitter : jitter * 10.0;
        if (jitter > max_jitter * (1.0 + 1e-12)) {
            std::ostringstream msg;
            msg << "covariance not positive definite within jitter cap " << max_jitter;
            throw NonPsdCovariance(msg.str());
        }
    }
    if (jitter > 0.0) sym.diagonal().array() += T(jitter);
    out.jitter = jitter;
    if constexpr (std::is_same_v<T, double>) return out;
    if (!cholesky_lower(sym, out.lower)) {
        throw NonPsdCovariance("Cholesky failed after jitter repair");
    }
    return out;
}

template <class T>
Matrix<T> repair_psd(const Matrix<T>& cov, double max_jitter) {
    const CholeskyFactor<T> f = jittered_cholesky(cov, max_jitter);
    Matrix<T> out = symmetrized(cov);
    if (f.jitter > 0.0) out.diagonal().array() += T(f.jitter);
    return out;
}

namespace {

// Coordinates with an exactly zero row and column are point masses (e.g.
// deterministic weights); jitter is applied only to the remaining block.
template <class T>
Matrix<T> repair_live_block(const Matrix<T>& cov) {
    const Mat v = values_of(cov);
    std::vector<Eigen::Index> live;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        if (!v.row(i).isZero(0.0) || !v.col(i).isZero(0.0)) live.push_back(i);
    }
    const Eigen::Index k = static_cast<Eigen::Index>(live.size());
    if (k == v.rows()) return repair_psd(cov);
    Matrix<T> out = symmetrized(cov);
    if (k == 0) return out;
    Matrix<T> sub(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = out(live[i], live[j]);
    sub = repair_psd(sub);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) out(live[i], live[j]) = sub(i, j);
    return out;
}

}  // namespace

template <class T>
GaussianBelief<T> condition(const JointBlocks<T>& joint, const Vector<T>& observed_b) {
    joint.check_dims();
    detail::require_dims(observed_b.size() == joint.mean_b.size(),
                         "condition: observation length does not match block b");
    const CholeskyFactor<T> chol = jittered_cholesky(joint.cov_bb);

    // X = L^{-1} Σ_ba, so K Σ_bb K^T = X^T X and K (y - m_b) = X^T L^{-1} (y - m_b).
    Matrix<T> x = joint.cov_ab.transpose();
    solve_lower_in_place(chol.lower, x);
    Matrix<T> innovation = Matrix<T>(observed_b - joint.mean_b);
    solve_lower_in_place(chol.lower, innovation);

    Vector<T> mean = joint.mean_a + x.transpose() * innovation;
    Matrix<T> cov = joint.cov_aa - x.transpose() * x;
    return GaussianBelief<T>(std::move(mean), repair_live_block(cov));
}

template <class T>
T log_density(const GaussianBelief<T>& belief, const Vector<T>& point) {
    detail::require_dims(point.size() == belief.dim(), "log_density: point dimension");
    const CholeskyFactor<T> chol = jittered_cholesky(belief.cov);
    Matrix<T> r = point - belief.mean;
    solve_lower_in_place(chol.lower, r);
    using std::log;
    T log_det = T(0.0);
    for (Eigen::Index i = 0; i < belief.dim(); ++i) log_det += log(chol.lower(i, i));
    const double d = static_cast<double>(belief.dim());
    return T(-0.5 * d * std::log(2.0 * std::numbers::pi)) - log_det - T(0.5) * r.squaredNorm();
}

template <class T>
T kl_to_standard_normal(const Vector<T>& mean, const Vector<T>& diag_var) {
    detail::require_dims(mean.size() == diag_var.size(), "kl_to_standard_normal: sizes");
    using std::log;
    T kl = T(0.0);
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        if (!(value_of(diag_var(i)) > 0.0)) {
            throw NonPositiveVariance("kl_to_standard_normal: variance must be positive");
        }
        kl += -log(diag_var(i)) + diag_var(i) + mean(i) * mean(i) - T(1.0);
    }
    return T(0.5) * kl;
}

double min_eigenvalue(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

#define PRODSSM_INSTANTIATE(T)                                                          \
    template struct GaussianBelief<T>;                                                  \
    template struct JointBlocks<T>;                                                     \
    template CholeskyFactor<T> jittered_cholesky<T>(const Matrix<T>&, double);          \
    template Matrix<T> repair_psd<T>(const Matrix<T>&, double);                         \
    template GaussianBelief<T> condition<T>(const JointBlocks<T>&, const Vector<T>&);   \
    template T log_density<T>(const GaussianBelief<T>&, const Vector<T>&);              \
    template T kl_to_standard_normal<T>(const Vector<T>&, const Vector<T>&);

PRODSSM_INSTANTIATE(double)
PRODSSM_INSTANTIATE(ad::Var)

#undef PRODSSM_INSTANTIATE

}  // namespace prodssm
