#ifndef PRODSSM_MOMENT_LAYERS_HPP
#define PRODSSM_MOMENT_LAYERS_HPP

#include <memory>
#include <optional>
#include <vector>

#include "prodssm/errors.hpp"
#include "prodssm/linalg.hpp"

namespace prodssm {

/// Local: weights redrawn every time step, independent of the state.
/// Global: one draw per trajectory, correlated with the state.
enum class WeightScheme { Local, Global };

const char* to_string(WeightScheme scheme);
WeightScheme parse_scheme(const std::string& text);

/// Position of one affine layer inside the flattened weight vector:
/// A (rows x cols, row-major) at `offset`, then the bias of length `rows`.
struct AffineSlot {
    Eigen::Index in = 0;
    Eigen::Index out = 0;
    Eigen::Index offset = 0;

    Eigen::Index count() const { return in * out + out; }
    Eigen::Index a_index(Eigen::Index row, Eigen::Index col) const { return offset + row * in + col; }
    Eigen::Index b_index(Eigen::Index row) const { return offset + out * in + row; }
    Eigen::Index end() const { return offset + count(); }
};

struct WeightLayout {
    std::vector<AffineSlot> layers;
    Eigen::Index begin = 0;  ///< first index owned by this layout
    Eigen::Index total = 0;  ///< size of the full weight vector the layout indexes into

    /// Consecutive slots for the given (in, out) pairs starting at `begin`.
    static WeightLayout contiguous(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& shapes,
                                   Eigen::Index begin = 0);
    Eigen::Index end() const { return layers.empty() ? begin : layers.back().end(); }
    /// Throws LayoutOutOfBounds on gaps, overlaps, or slots beyond `total`.
    void validate() const;
};

/// Gaussian weight moments; covariance is diagonal unless `dense` is set.
template <class T>
struct WeightMoments {
    Vector<T> mean;
    Vector<T> var;
    std::optional<Matrix<T>> dense;

    Eigen::Index size() const { return mean.size(); }
    T cov(Eigen::Index i, Eigen::Index j) const {
        if (dense) return (*dense)(i, j);
        return i == j ? var(i) : T(0.0);
    }
    Matrix<T> full_cov() const { return dense ? *dense : Matrix<T>(var.asDiagonal()); }
};

template <class T>
using WeightMomentsPtr = std::shared_ptr<const WeightMoments<T>>;

/// Joint Gaussian over one layer's activations and the (unchanged) weights.
template <class T>
struct LayerBelief {
    Vector<T> state_mean;
    Matrix<T> state_cov;
    WeightMomentsPtr<T> weights;
    /// Cov[state, w]; empty means structurally zero (Local scheme).
    Matrix<T> state_weight_cov;
    /// Cov[state, network input], carried for residual connections.
    Matrix<T> input_cross_cov;
    /// Cov[network input, w]; null means zero. Constant through the network.
    std::shared_ptr<const Matrix<T>> input_weight_cov;

    Eigen::Index dim() const { return state_mean.size(); }
    bool has_weight_correlation() const { return state_weight_cov.size() > 0; }
    /// Dense Cov[state, w], materializing zeros if structurally absent.
    Matrix<T> cross_cov() const;
    /// Assembled covariance over (state, w).
    Matrix<T> joint_cov() const;
};

/// E[a x] for jointly Gaussian scalars.
template <class T>
T product_mean(const T& m_a, const T& m_x, const T& cov_ax);

/// Cov[a x, a' x'] for jointly Gaussian (a, x, a', x'), ordered as in `m`.
template <class T>
T product_cov(const Eigen::Matrix<T, 4, 1>& m, const Eigen::Matrix<T, 4, 4>& cov);

/// Cov[a x, w] for jointly Gaussian (a, x, w).
template <class T>
T product_cross_cov(const T& m_a, const T& m_x, const T& cov_aw, const T& cov_xw);

template <class T>
LayerBelief<T> affine_forward(const LayerBelief<T>& input, const WeightLayout& layout,
                              std::size_t layer_index, WeightScheme scheme);

/// Off-diagonal ReLU covariance: the Stein term Φ_i S_ij Φ_j alone, or with the
/// next Hermite term ½ c_i c_j S_ij², c_i = φ(m_i/σ_i)/σ_i.
enum class ReluCovariance { Linearized, SecondOrder };

/// Exact diagonal moments; cross terms per `mode`.
template <class T>
LayerBelief<T> relu_forward(const LayerBelief<T>& input,
                            ReluCovariance mode = ReluCovariance::SecondOrder);

/// E[A] of an affine layer (rows = out, cols = in).
template <class T>
Matrix<T> affine_expected_jacobian(const LayerBelief<T>& input, const WeightLayout& layout,
                                   std::size_t layer_index);

/// Expected Heaviside per dimension, i.e. the diagonal of E[d relu / dx].
template <class T>
Vector<T> relu_expected_jacobian(const LayerBelief<T>& input);

/// Standard deviations below this are treated as deterministic inputs.
inline constexpr double kDegenerateStd = 1e-12;

}  // namespace prodssm

#endif  // PRODSSM_MOMENT_LAYERS_HPP
