#ifndef PRODSSM_AUTODIFF_HPP
#define PRODSSM_AUTODIFF_HPP

// Reverse-mode automatic differentiation on a per-thread scalar tape.
//
// A Var is a (value, tape index) pair. Arithmetic on Vars that are attached to
// the active tape appends one node per elementary operation holding the local
// partial derivatives with respect to at most two parents. Operations whose
// operands are all constants are folded and never touch the tape, so data,
// zero padding and fixed hyperparameters cost nothing.
//
//     ad::Tape tape;
//     ad::TapeScope scope(tape);
//     ad::Var x = ad::Var::independent(2.0);
//     ad::Var y = x * exp(x);
//     std::vector<double> g = tape.adjoints(y);   // g[x.index()] == 3 e^2

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace prodssm::ad {

inline constexpr std::uint32_t kConstant = std::numeric_limits<std::uint32_t>::max();

class Var;

class Tape {
public:
    Tape() { nodes_.reserve(1 << 16); }

    std::uint32_t push(std::uint32_t p0, double d0, std::uint32_t p1, double d1);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Adjoint of every tape entry with respect to `output`.
    std::vector<double> adjoints(const Var& output) const;

private:
    struct Node {
        double d0;
        double d1;
        std::uint32_t p0;
        std::uint32_t p1;
    };
    std::vector<Node> nodes_;
};

/// Tape receiving operations recorded on this thread, or nullptr.
Tape* active_tape();

/// Activates a tape on the current thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

class Var {
public:
    Var() = default;
    Var(double value) : value_(value) {}  // NOLINT: implicit promotion of constants
    Var(int value) : value_(static_cast<double>(value)) {}  // NOLINT

    /// New leaf on the active tape.
    static Var independent(double value);

    double value() const { return value_; }
    std::uint32_t index() const { return index_; }
    bool is_constant() const { return index_ == kConstant; }

    Var& operator+=(const Var& rhs);
    Var& operator-=(const Var& rhs);
    Var& operator*=(const Var& rhs);
    Var& operator/=(const Var& rhs);

    static Var unary(double value, const Var& a, double da);
    static Var binary(double value, const Var& a, double da, const Var& b, double db);

private:
    double value_ = 0.0;
    std::uint32_t index_ = kConstant;
};

inline Var Var::unary(double value, const Var& a, double da) {
    Var out(value);
    if (!a.is_constant()) out.index_ = active_tape()->push(a.index_, da, kConstant, 0.0);
    return out;
}

inline Var Var::binary(double value, const Var& a, double da, const Var& b, double db) {
    Var out(value);
    if (a.is_constant() && b.is_constant()) return out;
    if (a.is_constant()) {
        out.index_ = active_tape()->push(b.index_, db, kConstant, 0.0);
    } else if (b.is_constant()) {
        out.index_ = active_tape()->push(a.index_, da, kConstant, 0.0);
    } else {
        out.index_ = active_tape()->push(a.index_, da, b.index_, db);
    }
    return out;
}

inline Var operator+(const Var& a, const Var& b) {
    return Var::binary(a.value() + b.value(), a, 1.0, b, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
    return Var::binary(a.value() - b.value(), a, 1.0, b, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
    return Var::binary(a.value() * b.value(), a, b.value(), b, a.value());
}
inline Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.value();
    const double q = a.value() * inv;
    return Var::binary(q, a, inv, b, -q * inv);
}
inline Var operator-(const Var& a) { return Var::unary(-a.value(), a, -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var operator+(const Var& a, double b) { return Var::unary(a.value() + b, a, 1.0); }
inline Var operator+(double a, const Var& b) { return Var::unary(a + b.value(), b, 1.0); }
inline Var operator-(const Var& a, double b) { return Var::unary(a.value() - b, a, 1.0); }
inline Var operator-(double a, const Var& b) { return Var::unary(a - b.value(), b, -1.0); }
inline Var operator*(const Var& a, double b) { return Var::unary(a.value() * b, a, b); }
inline Var operator*(double a, const Var& b) { return Var::unary(a * b.value(), b, a); }
inline Var operator/(const Var& a, double b) { return Var::unary(a.value() / b, a, 1.0 / b); }
inline Var operator/(double a, const Var& b) {
    const double q = a / b.value();
    return Var::unary(q, b, -q / b.value());
}

inline Var& Var::operator+=(const Var& rhs) { return *this = *this + rhs; }
inline Var& Var::operator-=(const Var& rhs) { return *this = *this - rhs; }
inline Var& Var::operator*=(const Var& rhs) { return *this = *this * rhs; }
inline Var& Var::operator/=(const Var& rhs) { return *this = *this / rhs; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }
inline bool operator==(const Var& a, const Var& b) { return a.value() == b.value(); }
inline bool operator!=(const Var& a, const Var& b) { return a.value() != b.value(); }

inline Var exp(const Var& a) {
    const double e = std::exp(a.value());
    return Var::unary(e, a, e);
}
inline Var log(const Var& a) { return Var::unary(std::log(a.value()), a, 1.0 / a.value()); }
inline Var sqrt(const Var& a) {
    const double s = std::sqrt(a.value());
    return Var::unary(s, a, 0.5 / s);
}
inline Var abs(const Var& a) {
    return Var::unary(std::abs(a.value()), a, a.value() < 0.0 ? -1.0 : 1.0);
}
inline Var pow(const Var& a, double p) {
    const double v = std::pow(a.value(), p);
    return Var::unary(v, a, p * std::pow(a.value(), p - 1.0));
}
inline Var erfc(const Var& a) {
    constexpr double two_over_sqrt_pi = 1.1283791670955126;
    const double x = a.value();
    return Var::unary(std::erfc(x), a, -two_over_sqrt_pi * std::exp(-x * x));
}
inline Var erf(const Var& a) {
    constexpr double two_over_sqrt_pi = 1.1283791670955126;
    const double x = a.value();
    return Var::unary(std::erf(x), a, two_over_sqrt_pi * std::exp(-x * x));
}
inline bool isfinite(const Var& a) { return std::isfinite(a.value()); }
inline bool isnan(const Var& a) { return std::isnan(a.value()); }
inline bool isinf(const Var& a) { return std::isinf(a.value()); }

}  // namespace prodssm::ad

namespace Eigen {

template <>
struct NumTraits<prodssm::ad::Var> : NumTraits<double> {
    using Real = prodssm::ad::Var;
    using NonInteger = prodssm::ad::Var;
    using Nested = prodssm::ad::Var;
    using Literal = prodssm::ad::Var;
    enum {
        IsComplex = 0,
        IsInteger = 0,
        IsSigned = 1,
        RequireInitialization = 1,
        ReadCost = 1,
        AddCost = 3,
        MulCost = 3
    };
};

}  // namespace Eigen

#endif  // PRODSSM_AUTODIFF_HPP
