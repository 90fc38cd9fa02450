#include "prodssm/linalg.hpp"

namespace prodssm {

template <class T>
bool cholesky_lower(const Matrix<T>& a, Matrix<T>& lower) {
    const Eigen::Index n = a.rows();
    if constexpr (std::is_same_v<T, double>) {
        Eigen::LLT<Mat> llt(a);
        if (llt.info() != Eigen::Success) return false;
        lower = llt.matrixL();
        return true;
    } else {
        using std::sqrt;
        lower = Matrix<T>::Zero(n, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            T diag = a(j, j);
            for (Eigen::Index k = 0; k < j; ++k) diag -= lower(j, k) * lower(j, k);
            if (!(value_of(diag) > 0.0)) return false;
            const T ljj = sqrt(diag);
            lower(j, j) = ljj;
            for (Eigen::Index i = j + 1; i < n; ++i) {
                T s = a(i, j);
                for (Eigen::Index k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
                lower(i, j) = s / ljj;
            }
        }
        return true;
    }
}

template <class T>
void solve_lower_in_place(const Matrix<T>& lower, Matrix<T>& b) {
    if constexpr (std::is_same_v<T, double>) {
        lower.template triangularView<Eigen::Lower>().solveInPlace(b);
    } else {
        const Eigen::Index n = lower.rows();
        for (Eigen::Index c = 0; c < b.cols(); ++c) {
            for (Eigen::Index i = 0; i < n; ++i) {
                T s = b(i, c);
                for (Eigen::Index k = 0; k < i; ++k) s -= lower(i, k) * b(k, c);
                b(i, c) = s / lower(i, i);
            }
        }
    }
}

template <class T>
void solve_upper_transposed_in_place(const Matrix<T>& lower, Matrix<T>& b) {
    if constexpr (std::is_same_v<T, double>) {
        lower.transpose().template triangularView<Eigen::Upper>().solveInPlace(b);
    } else {
        const Eigen::Index n = lower.rows();
        for (Eigen::Index c = 0; c < b.cols(); ++c) {
            for (Eigen::Index i = n; i-- > 0;) {
                T s = b(i, c);
                for (Eigen::Index k = i + 1; k < n; ++k) s -= lower(k, i) * b(k, c);
                b(i, c) = s / lower(i, i);
            }
        }
    }
}

template bool cholesky_lower<double>(const Mat&, Mat&);
template bool cholesky_lower<ad::Var>(const Matrix<ad::Var>&, Matrix<ad::Var>&);
template void solve_lower_in_place<double>(const Mat&, Mat&);
template void solve_lower_in_place<ad::Var>(const Matrix<ad::Var>&, Matrix<ad::Var>&);
template void solve_upper_transposed_in_place<double>(const Mat&, Mat&);
template void solve_upper_transposed_in_place<ad::Var>(const Matrix<ad::Var>&,
                                                       Matrix<ad::Var>&);

}  // namespace prodssm
