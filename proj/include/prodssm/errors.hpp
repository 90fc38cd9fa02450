#ifndef PRODSSM_ERRORS_HPP
#define PRODSSM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace prodssm {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Covariance could not be made Cholesky-factorizable within the jitter cap.
class NonPsdCovariance : public Error {
public:
    using Error::Error;
};

class NonPositiveVariance : public Error {
public:
    using Error::Error;
};

class NegativeVariance : public Error {
public:
    using Error::Error;
};

class LayoutOutOfBounds : public Error {
public:
    using Error::Error;
};

class NonFiniteObjective : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionMismatch(what);
}

}  // namespace detail
}  // namespace prodssm

#endif  // PRODSSM_ERRORS_HPP
