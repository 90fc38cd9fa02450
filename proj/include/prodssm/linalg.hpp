#ifndef PRODSSM_LINALG_HPP
#define PRODSSM_LINALG_HPP

#include <type_traits>

#include <Eigen/Dense>

#include "prodssm/autodiff.hpp"

namespace prodssm {

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = Vector<double>;
using Mat = Matrix<double>;

template <class T>
inline constexpr bool is_ad_v = std::is_same_v<T, ad::Var>;

inline double value_of(double x) { return x; }
inline double value_of(const ad::Var& x) { return x.value(); }

template <class T>
Mat values_of(const Matrix<T>& m) {
    if constexpr (std::is_same_v<T, double>) {
        return m;
    } else {
        return m.unaryExpr([](const T& x) { return value_of(x); });
    }
}

template <class T>
Vec values_of(const Vector<T>& v) {
    if constexpr (std::is_same_v<T, double>) {
        return v;
    } else {
        return v.unaryExpr([](const T& x) { return value_of(x); });
    }
}

/// Promote a double matrix to scalar type T (constants on the tape).
template <class T, class Derived>
Matrix<T> promote(const Eigen::MatrixBase<Derived>& m) {
    return m.template cast<T>();
}

template <class T>
Matrix<T> symmetrized(const Matrix<T>& m) {
    return (m + m.transpose()) * T(0.5);
}

/// Lower Cholesky factor of a matrix already known to be positive definite
/// (checked on values by the caller). Returns false on a non-positive pivot.
template <class T>
bool cholesky_lower(const Matrix<T>& a, Matrix<T>& lower);

/// Solves L X = B in place for lower-triangular L.
template <class T>
void solve_lower_in_place(const Matrix<T>& lower, Matrix<T>& b);

/// Solves L^T X = B in place for lower-triangular L.
template <class T>
void solve_upper_transposed_in_place(const Matrix<T>& lower, Matrix<T>& b);

template <class T>
T standard_normal_cdf(const T& x) {
    using std::erfc;
    return T(0.5) * erfc(-x * T(0.7071067811865476));
}

template <class T>
T standard_normal_pdf(const T& x) {
    using std::exp;
    return T(0.3989422804014327) * exp(T(-0.5) * x * x);
}

}  // namespace prodssm

#endif  // PRODSSM_LINALG_HPP
