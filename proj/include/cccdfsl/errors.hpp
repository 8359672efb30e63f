#ifndef CCCDFSL_ERRORS_HPP
#define CCCDFSL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cccdfsl {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// numeric
struct NearZeroNorm : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct NonPositiveTemperature : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };

// bundle / checkpoint files
struct BadMagic : Error { using Error::Error; };
struct UnsupportedVersion : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };

// generator / losses / metrics
struct SpecInfeasible : Error { using Error::Error; };
struct EmptyAnchorSet : Error { using Error::Error; };
struct EmptyQuerySet : Error { using Error::Error; };
struct MissingClassSupport : Error { using Error::Error; };

} // namespace cccdfsl

#endif
