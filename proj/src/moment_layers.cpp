#include "prodssm/moment_layers.hpp"

#include <cmath>
#include <string>

namespace prodssm {

const char* to_string(WeightScheme scheme) {
    return scheme == WeightScheme::Local ? "local" : "global";
}

WeightScheme parse_scheme(const std::string& text) {
    if (text == "local") return WeightScheme::Local;
    if (text == "global") return WeightScheme::Global;
    throw ConfigError("unknown weight scheme '" + text + "' (expected local|global)");
}

WeightLayout WeightLayout::contiguous(
    const std::vector<std::pair<Eigen::Index, Eigen::Index>>& shapes, Eigen::Index begin) {
    WeightLayout layout;
    layout.begin = begin;
    Eigen::Index offset = begin;
    for (const auto& [in, out] : shapes) {
        AffineSlot slot{in, out, offset};
        layout.layers.push_back(slot);
        offset = slot.end();
    }
    layout.total = offset;
    return layout;
}

void WeightLayout::validate() const {
    Eigen::Index expected = begin;
    for (const AffineSlot& slot : layers) {
        if (slot.in <= 0 || slot.out <= 0) throw LayoutOutOfBounds("affine slot with empty shape");
        if (slot.offset != expected) throw LayoutOutOfBounds("weight layout has a gap or overlap");
        expected = slot.end();
    }
    if (expected > total) throw LayoutOutOfBounds("weight layout exceeds the weight vector");
}

template <class T>
Matrix<T> LayerBelief<T>::cross_cov() const {
    if (has_weight_correlation()) return state_weight_cov;
    return Matrix<T>::Zero(dim(), weights ? weights->size() : 0);
}

template <class T>
Matrix<T> LayerBelief<T>::joint_cov() const {
    const Eigen::Index n = dim();
    const Eigen::Index d = weights->size();
    Matrix<T> joint(n + d, n + d);
    joint.topLeftCorner(n, n) = state_cov;
    const Matrix<T> c = cross_cov();
    joint.topRightCorner(n, d) = c;
    joint.bottomLeftCorner(d, n) = c.transpose();
    joint.bottomRightCorner(d, d) = weights->full_cov();
    return joint;
}

template <class T>
T product_mean(const T& m_a, const T& m_x, const T& cov_ax) {
    return cov_ax + m_a * m_x;
}

template <class T>
T product_cov(const Eigen::Matrix<T, 4, 1>& m, const Eigen::Matrix<T, 4, 4>& c) {
    // order: a, x, a', x'
    constexpr int a = 0, x = 1, ap = 2, xp = 3;
    return c(a, ap) * c(x, xp) + c(a, ap) * m(x) * m(xp) + c(x, xp) * m(a) * m(ap) +
           c(a, xp) * c(x, ap) + c(a, xp) * m(x) * m(ap) + c(x, ap) * m(a) * m(xp);
}

template <class T>
T product_cross_cov(const T& m_a, const T& m_x, const T& cov_aw, const T& cov_xw) {
    return cov_aw * m_x + cov_xw * m_a;
}

namespace {

template <class T>
const AffineSlot& resolve_slot(const LayerBelief<T>& input, const WeightLayout& layout,
                               std::size_t layer_index) {
    if (layer_index >= layout.layers.size()) {
        throw LayoutOutOfBounds("affine layer index " + std::to_string(layer_index) +
                                " outside layout");
    }
    if (!input.weights) throw LayoutOutOfBounds("layer belief carries no weight moments");
    const AffineSlot& slot = layout.layers[layer_index];
    if (slot.end() > input.weights->size()) {
        throw LayoutOutOfBounds("affine slot exceeds weight vector");
    }
    detail::require_dims(input.dim() == slot.in, "affine_forward: input width " +
                                                     std::to_string(input.dim()) + " != " +
                                                     std::to_string(slot.in));
    return slot;
}

template <class T>
Matrix<T> mean_matrix(const WeightMoments<T>& w, const AffineSlot& s) {
    Matrix<T> a(s.out, s.in);
    for (Eigen::Index i = 0; i < s.out; ++i) {
        for (Eigen::Index m = 0; m < s.in; ++m) a(i, m) = w.mean(s.a_index(i, m));
    }
    return a;
}

}  // namespace

template <class T>
LayerBelief<T> affine_forward(const LayerBelief<T>& input, const WeightLayout& layout,
                              std::size_t layer_index, WeightScheme scheme) {
    const AffineSlot& s = resolve_slot(input, layout, layer_index);
    const WeightMoments<T>& w = *input.weights;
    const Eigen::Index n = s.in;
    const Eigen::Index p = s.out;
    const Eigen::Index b0 = s.b_index(0);
    const bool global = scheme == WeightScheme::Global;
    const bool correlated = global && input.has_weight_correlation();
    const Vector<T>& mx = input.state_mean;
    const Matrix<T>& sx = input.state_cov;

    const Matrix<T> ma = mean_matrix(w, s);

    LayerBelief<T> out;
    out.weights = input.weights;
    if (global) out.input_weight_cov = input.input_weight_cov;

    out.state_mean = ma * mx + w.mean.segment(b0, p);
    Matrix<T> cov = ma * sx * ma.transpose();

    // Terms driven by the weight covariance: Cov[A_im, A_jn] E[x_m x_n] and the bias blocks.
    if (w.dense) {
        const Matrix<T>& wc = *w.dense;
        const Matrix<T> second = sx + mx * mx.transpose();
        for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index j = i; j < p; ++j) {
                T acc = T(0.0);
                for (Eigen::Index m = 0; m < n; ++m) {
                    for (Eigen::Index k = 0; k < n; ++k) {
                        acc += wc(s.a_index(i, m), s.a_index(j, k)) * second(m, k);
                    }
                }
                cov(i, j) += acc;
                if (i != j) cov(j, i) += acc;
            }
        }
        Matrix<T> ab(p, p);
        for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index j = 0; j < p; ++j) {
                T acc = T(0.0);
                for (Eigen::Index m = 0; m < n; ++m) acc += wc(s.a_index(i, m), b0 + j) * mx(m);
                ab(i, j) = acc;
            }
        }
        cov += ab + ab.transpose() + wc.block(b0, b0, p, p);
    } else {
        for (Eigen::Index i = 0; i < p; ++i) {
            T acc = w.var(b0 + i);
            for (Eigen::Index m = 0; m < n; ++m) {
                acc += w.var(s.a_index(i, m)) * (sx(m, m) + mx(m) * mx(m));
            }
            cov(i, i) += acc;
        }
    }

    // Terms driven by Cov[x, w] (Global only).
    if (correlated) {
        const Matrix<T>& c = input.state_weight_cov;
        // G_i(r, c) = Cov[x_r, A_ic]; P row i = vec(G_i), Q row j = vec(G_j^T).
        Matrix<T> pm(p, n * n);
        Matrix<T> qm(p, n * n);
        Matrix<T> u(p, n);
        for (Eigen::Index i = 0; i < p; ++i) {
            T trace = T(0.0);
            for (Eigen::Index r = 0; r < n; ++r) {
                T ur = T(0.0);
                for (Eigen::Index k = 0; k < n; ++k) {
                    pm(i, r * n + k) = c(r, s.a_index(i, k));
                    qm(i, r * n + k) = c(k, s.a_index(i, r));
                    ur += c(r, s.a_index(i, k)) * mx(k);
                }
                u(i, r) = ur;
                trace += c(r, s.a_index(i, r));
            }
            out.state_mean(i) += trace;
        }
        const Matrix<T> bias_cross = ma * c.middleCols(b0, p);
        cov += pm * qm.transpose() + u * ma.transpose() + ma * u.transpose() + bias_cross +
               bias_cross.transpose();
        out.state_weight_cov = ma * c;
    }

    if (global) {
        const Eigen::Index dw = w.size();
        if (!correlated) out.state_weight_cov = Matrix<T>::Zero(p, dw);
        Matrix<T>& swc = out.state_weight_cov;
        if (w.dense) {
            const Matrix<T>& wc = *w.dense;
            for (Eigen::Index i = 0; i < p; ++i) {
                for (Eigen::Index m = 0; m < n; ++m) swc.row(i) += wc.row(s.a_index(i, m)) * mx(m);
                swc.row(i) += wc.row(b0 + i);
            }
        } else {
            for (Eigen::Index i = 0; i < p; ++i) {
                for (Eigen::Index m = 0; m < n; ++m) {
                    swc(i, s.a_index(i, m)) += w.var(s.a_index(i, m)) * mx(m);
                }
                swc(i, b0 + i) += w.var(b0 + i);
            }
        }
    }

    out.input_cross_cov = ma * input.input_cross_cov;
    if (global && input.input_weight_cov && out.input_cross_cov.cols() > 0) {
        const Matrix<T>& c0 = *input.input_weight_cov;
        for (Eigen::Index i = 0; i < p; ++i) {
            for (Eigen::Index q = 0; q < c0.rows(); ++q) {
                T acc = c0(q, b0 + i);
                for (Eigen::Index m = 0; m < n; ++m) acc += c0(q, s.a_index(i, m)) * mx(m);
                out.input_cross_cov(i, q) += acc;
            }
        }
    }

    out.state_cov = symmetrized(cov);
    return out;
}

namespace {

template <class T>
struct ReluGate {
    T mean;
    T var;
    T heaviside;  // E[1{x > 0}]
    T curvature;  // E[δ(x)] = φ(m/σ)/σ
};

template <class T>
ReluGate<T> relu_gate(const T& m, const T& v) {
    using std::sqrt;
    if (value_of(v) < -1e-10) throw NegativeVariance("relu_forward: negative input variance");
    const double sd = std::sqrt(std::max(value_of(v), 0.0));
    if (sd < kDegenerateStd) {
        const double mv = value_of(m);
        if (mv > 0.0) return {m, T(0.0), T(1.0), T(0.0)};
        if (mv < 0.0) return {T(0.0), T(0.0), T(0.0), T(0.0)};
        return {T(0.0), T(0.0), T(0.5), T(0.0)};
    }
    const T sigma = sqrt(v);
    const T alpha = m / sigma;
    const T cdf = standard_normal_cdf(alpha);
    const T pdf = standard_normal_pdf(alpha);
    const T mean = m * cdf + sigma * pdf;
    T var = (m * m + v) * cdf + m * sigma * pdf - mean * mean;
    if (value_of(var) < 0.0) var = T(0.0);
    return {mean, var, cdf, pdf / sigma};
}

}  // namespace

template <class T>
LayerBelief<T> relu_forward(const LayerBelief<T>& input, ReluCovariance mode) {
    const Eigen::Index n = input.dim();
    detail::require_dims(input.state_cov.rows() == n && input.state_cov.cols() == n,
                         "relu_forward: covariance shape");
    LayerBelief<T> out;
    out.weights = input.weights;
    out.input_weight_cov = input.input_weight_cov;
    out.state_mean.resize(n);
    Vector<T> gate(n);
    Vector<T> var(n);
    Vector<T> curvature(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const ReluGate<T> g = relu_gate(input.state_mean(i), input.state_cov(i, i));
        out.state_mean(i) = g.mean;
        var(i) = g.var;
        gate(i) = g.heaviside;
        curvature(i) = g.curvature;
    }
    out.state_cov = gate.asDiagonal() * input.state_cov * gate.asDiagonal();
    if (mode == ReluCovariance::SecondOrder) {
        const Matrix<T> squared = input.state_cov.cwiseProduct(input.state_cov);
        out.state_cov += T(0.5) * (curvature.asDiagonal() * squared * curvature.asDiagonal());
    }
    out.state_cov.diagonal() = var;
    if (input.has_weight_correlation()) {
        out.state_weight_cov = gate.asDiagonal() * input.state_weight_cov;
    }
    out.input_cross_cov = gate.asDiagonal() * input.input_cross_cov;
    return out;
}

template <class T>
Matrix<T> affine_expected_jacobian(const LayerBelief<T>& input, const WeightLayout& layout,
                                   std::size_t layer_index) {
    const AffineSlot& s = resolve_slot(input, layout, layer_index);
    return mean_matrix(*input.weights, s);
}

template <class T>
Vector<T> relu_expected_jacobian(const LayerBelief<T>& input) {
    Vector<T> gate(input.dim());
    for (Eigen::Index i = 0; i < input.dim(); ++i) {
        gate(i) = relu_gate(input.state_mean(i), input.state_cov(i, i)).heaviside;
    }
    return gate;
}

#define PRODSSM_INSTANTIATE(T)                                                               \
    template struct LayerBelief<T>;                                                          \
    template T product_mean<T>(const T&, const T&, const T&);                                \
    template T product_cov<T>(const Eigen::Matrix<T, 4, 1>&, const Eigen::Matrix<T, 4, 4>&); \
    template T product_cross_cov<T>(const T&, const T&, const T&, const T&);                 \
    template LayerBelief<T> affine_forward<T>(const LayerBelief<T>&, const WeightLayout&,    \
                                              std::size_t, WeightScheme);                    \
    template LayerBelief<T> relu_forward<T>(const LayerBelief<T>&, ReluCovariance);          \
    template Matrix<T> affine_expected_jacobian<T>(const LayerBelief<T>&, const WeightLayout&, \
                                                   std::size_t);                             \
    template Vector<T> relu_expected_jacobian<T>(const LayerBelief<T>&);

PRODSSM_INSTANTIATE(double)
PRODSSM_INSTANTIATE(ad::Var)

#undef PRODSSM_INSTANTIATE

}  // namespace prodssm
