#include "prodssm/model.hpp"

#include <cmath>
#include <string>

namespace prodssm {

NetworkSpec NetworkSpec::mlp(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                             Eigen::Index out, bool residual) {
    NetworkSpec spec;
    spec.input_dim = in;
    spec.residual = residual;
    for (Eigen::Index h : hidden) {
        spec.layers.push_back({LayerKind::Affine, h});
        spec.layers.push_back({LayerKind::Relu, 0});
    }
    spec.layers.push_back({LayerKind::Affine, out});
    return spec;
}

Eigen::Index NetworkSpec::output_dim() const {
    Eigen::Index dim = input_dim;
    for (const LayerSpec& l : layers) {
        if (l.kind == LayerKind::Affine) dim = l.out;
    }
    return dim;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> NetworkSpec::affine_shapes() const {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    Eigen::Index dim = input_dim;
    for (const LayerSpec& l : layers) {
        if (l.kind == LayerKind::Affine) {
            shapes.emplace_back(dim, l.out);
            dim = l.out;
        }
    }
    return shapes;
}

Eigen::Index NetworkSpec::weight_count() const {
    Eigen::Index count = 0;
    for (const auto& [in, out] : affine_shapes()) count += in * out + out;
    return count;
}

WeightLayout NetworkSpec::layout(Eigen::Index begin, Eigen::Index total) const {
    WeightLayout l = WeightLayout::contiguous(affine_shapes(), begin);
    l.total = total;
    l.validate();
    return l;
}

void NetworkSpec::validate() const {
    if (input_dim <= 0) throw DimensionMismatch("network input dimension must be positive");
    for (const LayerSpec& l : layers) {
        if (l.kind == LayerKind::Affine && l.out <= 0) {
            throw DimensionMismatch("affine layer with non-positive width");
        }
    }
    if (residual && output_dim() != input_dim) {
        throw DimensionMismatch("residual network requires input dim == output dim");
    }
}

template <class T>
Vector<T> forward_network(const NetworkSpec& spec, const WeightLayout& layout,
                          const Vector<T>& params, const Vector<T>& x) {
    detail::require_dims(x.size() == spec.input_dim, "forward_network: input dimension");
    if (layout.end() > params.size()) throw LayoutOutOfBounds("forward_network: parameters");
    Vector<T> h = x;
    std::size_t affine = 0;
    for (const LayerSpec& l : spec.layers) {
        if (l.kind == LayerKind::Affine) {
            const AffineSlot& s = layout.layers.at(affine++);
            Vector<T> next = params.segment(s.b_index(0), s.out);
            for (Eigen::Index i = 0; i < s.out; ++i) {
                for (Eigen::Index m = 0; m < s.in; ++m) next(i) += params(s.a_index(i, m)) * h(m);
            }
            h = std::move(next);
        } else {
            for (Eigen::Index i = 0; i < h.size(); ++i) {
                if (value_of(h(i)) < 0.0) h(i) = T(0.0);
            }
        }
    }
    if (spec.residual) h += x;
    return h;
}

template <class T>
NetworkPass<T> propagate_network(const NetworkSpec& spec, const WeightLayout& layout,
                                 LayerBelief<T> belief, WeightScheme scheme, bool with_jacobian) {
    const Eigen::Index n = belief.dim();
    detail::require_dims(n == spec.input_dim, "propagate_network: input dimension");
    if (spec.residual && belief.input_cross_cov.cols() == 0) {
        belief.input_cross_cov = belief.state_cov;
    }
    const Vector<T> in_mean = belief.state_mean;
    const Matrix<T> in_cov = belief.state_cov;
    const Matrix<T> in_weight_cov = belief.state_weight_cov;

    NetworkPass<T> pass;
    if (with_jacobian) pass.jacobian = Matrix<T>::Identity(n, n);
    std::size_t affine = 0;
    for (const LayerSpec& l : spec.layers) {
        if (l.kind == LayerKind::Affine) {
            if (with_jacobian) {
                pass.jacobian = affine_expected_jacobian(belief, layout, affine) * pass.jacobian;
            }
            belief = affine_forward(belief, layout, affine, scheme);
            ++affine;
        } else {
            if (with_jacobian) {
                pass.jacobian = relu_expected_jacobian(belief).asDiagonal() * pass.jacobian;
            }
            belief = relu_forward(belief);
        }
    }
    if (spec.residual) {
        const Matrix<T> cross = belief.input_cross_cov;  // Cov[net(x), x]
        belief.state_mean += in_mean;
        belief.state_cov += in_cov + cross + cross.transpose();
        belief.input_cross_cov += in_cov;
        if (scheme == WeightScheme::Global && in_weight_cov.size() > 0) {
            if (belief.has_weight_correlation()) {
                belief.state_weight_cov += in_weight_cov;
            } else {
                belief.state_weight_cov = in_weight_cov;
            }
        }
        if (with_jacobian) pass.jacobian += Matrix<T>::Identity(n, n);
    }
    pass.output = std::move(belief);
    return pass;
}

template <class T>
Vector<T> WeightDistribution<T>::variance() const {
    using std::exp;
    return log_var.unaryExpr([](const T& v) { return T(exp(v)); });
}

template <class T>
WeightLayout ProDssmModel<T>::f_layout() const {
    return f_spec.layout(0, weight_dim());
}

template <class T>
WeightLayout ProDssmModel<T>::l_layout() const {
    return variance.net.layout(f_spec.weight_count(), weight_dim());
}

template <class T>
WeightLayout ProDssmModel<T>::g_layout() const {
    return g_spec.layout(0, g_params.size());
}

template <class T>
GaussianBelief<T> ProDssmModel<T>::initial_belief() const {
    const Matrix<T> lower = initial_chol.template triangularView<Eigen::Lower>();
    return GaussianBelief<T>(initial_mean, lower * lower.transpose());
}

template <class T>
WeightMomentsPtr<T> ProDssmModel<T>::prior_weight_moments() const {
    auto w = std::make_shared<WeightMoments<T>>();
    w->mean = weights.mean;
    w->var = weights.variance();
    return w;
}

template <class T>
AugmentedBelief<T> ProDssmModel<T>::initial_augmented() const {
    const GaussianBelief<T> x0 = initial_belief();
    AugmentedBelief<T> b;
    b.state_mean = x0.mean;
    b.state_cov = x0.cov;
    b.weights = prior_weight_moments();
    if (scheme == WeightScheme::Global) {
        b.state_weight_cov = Matrix<T>::Zero(state_dim(), weight_dim());
    }
    return b;
}

template <class T>
Vector<T> ProDssmModel<T>::emission_variance() const {
    using std::exp;
    return log_r.unaryExpr([](const T& v) { return T(exp(v)); });
}

template <class T>
void ProDssmModel<T>::validate() const {
    f_spec.validate();
    g_spec.validate();
    const Eigen::Index dx = state_dim();
    detail::require_dims(f_spec.output_dim() == dx, "model: f must map D_x -> D_x");
    detail::require_dims(g_spec.input_dim == dx, "model: g input must be D_x");
    detail::require_dims(g_params.size() == g_spec.weight_count(), "model: g parameter count");
    detail::require_dims(log_r.size() == obs_dim(), "model: log_r length must be D_y");
    detail::require_dims(initial_mean.size() == dx, "model: initial mean length");
    detail::require_dims(initial_chol.rows() == dx && initial_chol.cols() == dx,
                         "model: initial covariance factor shape");
    Eigen::Index expected_w = f_spec.weight_count();
    if (variance.kind == VarianceKind::ConstantDiag) {
        detail::require_dims(variance.log_var.size() == dx, "model: constant log-variance length");
    } else {
        variance.net.validate();
        detail::require_dims(variance.net.input_dim == dx && variance.net.output_dim() == dx,
                             "model: variance network must map D_x -> D_x");
        expected_w += variance.net.weight_count();
    }
    detail::require_dims(weights.mean.size() == expected_w && weights.log_var.size() == expected_w,
                         "model: weight vector length " + std::to_string(weights.mean.size()) +
                             " != " + std::to_string(expected_w));
    auto finite = [](const auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            if (!std::isfinite(value_of(m.data()[i]))) return false;
        }
        return true;
    };
    if (!finite(weights.mean) || !finite(weights.log_var) || !finite(log_r) ||
        !finite(g_params) || !finite(initial_mean) || !finite(initial_chol) ||
        !finite(variance.log_var)) {
        throw NonPositiveVariance("model: non-finite parameter");
    }
}

template <class T>
template <class U>
ProDssmModel<U> ProDssmModel<T>::cast() const {
    ProDssmModel<U> m;
    m.f_spec = f_spec;
    m.variance.kind = variance.kind;
    m.variance.net = variance.net;
    m.variance.log_var = variance.log_var.template cast<U>();
    m.g_spec = g_spec;
    m.g_params = g_params.template cast<U>();
    m.log_r = log_r.template cast<U>();
    m.initial_mean = initial_mean.template cast<U>();
    m.initial_chol = initial_chol.template cast<U>();
    m.weights.mean = weights.mean.template cast<U>();
    m.weights.log_var = weights.log_var.template cast<U>();
    m.scheme = scheme;
    return m;
}

template <class T>
Matrix<T> AugmentedBelief<T>::cross_cov() const {
    if (has_weight_correlation()) return state_weight_cov;
    return Matrix<T>::Zero(state_dim(), weight_dim());
}

template <class T>
Vector<T> AugmentedBelief<T>::joint_mean() const {
    Vector<T> m(state_dim() + weight_dim());
    m.head(state_dim()) = state_mean;
    if (weights) m.tail(weight_dim()) = weights->mean;
    return m;
}

template <class T>
Matrix<T> AugmentedBelief<T>::joint_cov() const {
    const Eigen::Index n = state_dim();
    const Eigen::Index d = weight_dim();
    Matrix<T> c(n + d, n + d);
    c.topLeftCorner(n, n) = state_cov;
    if (d > 0) {
        const Matrix<T> xw = cross_cov();
        c.topRightCorner(n, d) = xw;
        c.bottomLeftCorner(d, n) = xw.transpose();
        c.bottomRightCorner(d, d) = weights->full_cov();
    }
    return c;
}

template <class T>
JointBlocks<T> EmissionMoments<T>::joint(const AugmentedBelief<T>& z) const {
    JointBlocks<T> j;
    j.mean_a = z.joint_mean();
    j.cov_aa = z.joint_cov();
    j.mean_b = mean;
    j.cov_bb = cov;
    const Eigen::Index n = z.state_dim();
    const Eigen::Index d = z.weight_dim();
    j.cov_ab.resize(n + d, mean.size());
    j.cov_ab.topRows(n) = cross_x.transpose();
    if (d > 0) {
        if (cross_w.size() > 0) {
            j.cov_ab.bottomRows(d) = cross_w.transpose();
        } else {
            j.cov_ab.bottomRows(d).setZero();
        }
    }
    return j;
}

template <class T>
JointBlocks<T> EmissionMoments<T>::joint_state(const AugmentedBelief<T>& z) const {
    JointBlocks<T> j;
    j.mean_a = z.state_mean;
    j.cov_aa = z.state_cov;
    j.mean_b = mean;
    j.cov_bb = cov;
    j.cov_ab = cross_x.transpose();
    return j;
}

namespace {

template <class T>
void check_belief(const AugmentedBelief<T>& b, const ProDssmModel<T>& model) {
    detail::require_dims(b.state_dim() == model.state_dim(), "belief state dimension");
    detail::require_dims(b.state_cov.rows() == b.state_dim() && b.state_cov.cols() == b.state_dim(),
                         "belief state covariance shape");
    if (b.weights) {
        detail::require_dims(b.weight_dim() == model.weight_dim(), "belief weight dimension");
    }
    if (b.has_weight_correlation()) {
        detail::require_dims(b.state_weight_cov.rows() == b.state_dim() &&
                                 b.state_weight_cov.cols() == model.weight_dim(),
                             "belief state-weight covariance shape");
    }
}

}  // namespace

template <class T>
AugmentedBelief<T> augmented_step(const AugmentedBelief<T>& belief, const ProDssmModel<T>& model) {
    check_belief(belief, model);
    const bool global = model.scheme == WeightScheme::Global;
    WeightMomentsPtr<T> w = (global && belief.weights) ? belief.weights
                                                       : model.prior_weight_moments();

    LayerBelief<T> in;
    in.state_mean = belief.state_mean;
    in.state_cov = belief.state_cov;
    in.weights = w;
    in.input_cross_cov = Matrix<T>(belief.state_dim(), 0);
    if (global && belief.has_weight_correlation()) {
        in.state_weight_cov = belief.state_weight_cov;
        in.input_weight_cov = std::make_shared<const Matrix<T>>(belief.state_weight_cov);
    }

    NetworkPass<T> f = propagate_network(model.f_spec, model.f_layout(), in, model.scheme);

    Vector<T> transition_var;
    if (model.variance.kind == VarianceKind::ConstantDiag) {
        using std::exp;
        transition_var = model.variance.log_var.unaryExpr([](const T& v) { return T(exp(v)); });
    } else {
        NetworkPass<T> l = propagate_network(model.variance.net, model.l_layout(), in, model.scheme);
        using std::exp;
        const Eigen::Index n = model.state_dim();
        transition_var.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            transition_var(i) = exp(l.output.state_mean(i) + T(0.5) * l.output.state_cov(i, i));
        }
    }

    AugmentedBelief<T> out;
    out.state_mean = std::move(f.output.state_mean);
    out.state_cov = symmetrized(f.output.state_cov);
    out.state_cov.diagonal() += transition_var;
    if (global) {
        out.weights = w;
        out.state_weight_cov = f.output.has_weight_correlation()
                                   ? std::move(f.output.state_weight_cov)
                                   : Matrix<T>::Zero(model.state_dim(), model.weight_dim());
    } else {
        out.weights = model.prior_weight_moments();
    }
    return out;
}

template <class T>
EmissionMoments<T> emission_moments(const AugmentedBelief<T>& belief,
                                    const ProDssmModel<T>& model) {
    check_belief(belief, model);
    auto g_weights = std::make_shared<WeightMoments<T>>();
    g_weights->mean = model.g_params;
    g_weights->var = Vector<T>::Zero(model.g_params.size());

    LayerBelief<T> in;
    in.state_mean = belief.state_mean;
    in.state_cov = belief.state_cov;
    in.weights = g_weights;
    in.input_cross_cov = Matrix<T>(belief.state_dim(), 0);

    NetworkPass<T> g = propagate_network(model.g_spec, model.g_layout(), in, WeightScheme::Local,
                                         /*with_jacobian=*/true);
    EmissionMoments<T> em;
    em.mean = std::move(g.output.state_mean);
    em.cov = symmetrized(g.output.state_cov);
    em.cov.diagonal() += model.emission_variance();
    em.cross_x = g.jacobian * belief.state_cov;
    if (belief.has_weight_correlation()) em.cross_w = g.jacobian * belief.state_weight_cov;
    return em;
}

Vec standard_normal_vector(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
}

Vec sample_weights(const ProDssmModel<double>& model, std::mt19937_64& rng) {
    const Vec sd = model.weights.variance().cwiseSqrt();
    return model.weights.mean + sd.cwiseProduct(standard_normal_vector(model.weight_dim(), rng));
}

Vec transition_mean(const ProDssmModel<double>& model, const Vec& x, const Vec& weights) {
    return forward_network<double>(model.f_spec, model.f_layout(), weights, x);
}

Vec transition_variance(const ProDssmModel<double>& model, const Vec& x, const Vec& weights) {
    if (model.variance.kind == VarianceKind::ConstantDiag) {
        return model.variance.log_var.array().exp();
    }
    return forward_network<double>(model.variance.net, model.l_layout(), weights, x).array().exp();
}

Vec emission_mean(const ProDssmModel<double>& model, const Vec& x) {
    return forward_network<double>(model.g_spec, model.g_layout(), model.g_params, x);
}

Vec sample_transition(const ProDssmModel<double>& model, const Vec& x, const Vec& weights,
                      std::mt19937_64& rng) {
    const Vec mean = transition_mean(model, x, weights);
    const Vec sd = transition_variance(model, x, weights).cwiseSqrt();
    return mean + sd.cwiseProduct(standard_normal_vector(mean.size(), rng));
}

Trajectory simulate(const ProDssmModel<double>& model, std::size_t steps, std::uint64_t seed) {
    model.validate();
    std::mt19937_64 rng(seed);
    Trajectory traj;
    const Mat lower = model.initial_chol.triangularView<Eigen::Lower>();
    traj.initial_latent = model.initial_mean + lower * standard_normal_vector(model.state_dim(), rng);
    const Vec r_sd = model.emission_variance().cwiseSqrt();
    Vec w = sample_weights(model, rng);
    Vec x = traj.initial_latent;
    for (std::size_t t = 0; t < steps; ++t) {
        if (t > 0 && model.scheme == WeightScheme::Local) w = sample_weights(model, rng);
        x = sample_transition(model, x, w, rng);
        const Vec y = emission_mean(model, x) + r_sd.cwiseProduct(standard_normal_vector(r_sd.size(), rng));
        traj.latents.push_back(x);
        traj.observations.push_back(y);
    }
    return traj;
}

ProDssmModel<double> make_model(const ModelShape& shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ProDssmModel<double> m;
    m.scheme = shape.scheme;
    m.f_spec = NetworkSpec::mlp(shape.state_dim, shape.f_hidden, shape.state_dim, shape.residual);
    m.variance.kind = shape.variance_kind;
    if (shape.variance_kind == VarianceKind::ConstantDiag) {
        m.variance.log_var = Vec::Constant(shape.state_dim, shape.initial_log_process_var);
    } else {
        m.variance.net = NetworkSpec::mlp(shape.state_dim, shape.l_hidden, shape.state_dim);
        m.variance.log_var = Vec(0);
    }
    m.g_spec = NetworkSpec::mlp(shape.state_dim, shape.g_hidden, shape.obs_dim);

    auto init_network = [&](const NetworkSpec& spec, const WeightLayout& layout, Vec& params,
                            double final_bias) {
        for (std::size_t k = 0; k < layout.layers.size(); ++k) {
            const AffineSlot& s = layout.layers[k];
            const double sd = std::sqrt(2.0 / static_cast<double>(s.in));
            for (Eigen::Index i = 0; i < s.out; ++i) {
                for (Eigen::Index j = 0; j < s.in; ++j) params(s.a_index(i, j)) = sd * normal(rng);
                params(s.b_index(i)) = (k + 1 == layout.layers.size()) ? final_bias : 0.0;
            }
        }
        (void)spec;
    };

    Eigen::Index dw = m.f_spec.weight_count();
    if (shape.variance_kind == VarianceKind::LogVarNet) dw += m.variance.net.weight_count();
    m.weights.mean = Vec::Zero(dw);
    m.weights.log_var = Vec::Constant(dw, shape.initial_log_weight_var);
    init_network(m.f_spec, m.f_spec.layout(0, dw), m.weights.mean, 0.0);
    if (shape.variance_kind == VarianceKind::LogVarNet) {
        init_network(m.variance.net, m.variance.net.layout(m.f_spec.weight_count(), dw),
                     m.weights.mean, shape.initial_log_process_var);
    }

    m.g_params = Vec::Zero(m.g_spec.weight_count());
    const WeightLayout gl = m.g_spec.layout(0, m.g_params.size());
    if (shape.g_hidden.empty() && shape.obs_dim == shape.state_dim) {
        const AffineSlot& s = gl.layers.front();
        for (Eigen::Index i = 0; i < s.out; ++i) m.g_params(s.a_index(i, i)) = 1.0;
    } else {
        init_network(m.g_spec, gl, m.g_params, 0.0);
    }
    m.log_r = Vec::Constant(shape.obs_dim, shape.initial_log_obs_var);
    m.initial_mean = Vec::Zero(shape.state_dim);
    m.initial_chol = Mat::Identity(shape.state_dim, shape.state_dim) * std::sqrt(shape.initial_state_var);
    m.validate();
    return m;
}

#define PRODSSM_INSTANTIATE(T)                                                                  \
    template Vector<T> forward_network<T>(const NetworkSpec&, const WeightLayout&,              \
                                          const Vector<T>&, const Vector<T>&);                  \
    template struct NetworkPass<T>;                                                             \
    template NetworkPass<T> propagate_network<T>(const NetworkSpec&, const WeightLayout&,       \
                                                 LayerBelief<T>, WeightScheme, bool);           \
    template struct WeightDistribution<T>;                                                      \
    template struct ProDssmModel<T>;                                                            \
    template struct AugmentedBelief<T>;                                                         \
    template struct EmissionMoments<T>;                                                         \
    template AugmentedBelief<T> augmented_step<T>(const AugmentedBelief<T>&,                    \
                                                  const ProDssmModel<T>&);                      \
    template EmissionMoments<T> emission_moments<T>(const AugmentedBelief<T>&,                  \
                                                    const ProDssmModel<T>&);

PRODSSM_INSTANTIATE(double)
PRODSSM_INSTANTIATE(ad::Var)

#undef PRODSSM_INSTANTIATE

template ProDssmModel<ad::Var> ProDssmModel<double>::cast<ad::Var>() const;
template ProDssmModel<double> ProDssmModel<double>::cast<double>() const;

}  // namespace prodssm
