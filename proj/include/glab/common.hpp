// Shared vocabulary types and error hierarchy.
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace glab {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kSigmaData = 0.5;

enum class ClassId : std::uint8_t { A = 0, B = 1, Null = 2 };

inline constexpr int kNumClasses = 2;

std::string_view to_string(ClassId c);
ClassId class_from_string(std::string_view s);

inline int index_of(ClassId c) { return static_cast<int>(c); }

// Base of every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, violated invariant, capacity or resolution limits. Exit 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, solver failures. Exit 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Misuse of an internal API (shape mismatch, unsupported tape operation).
class ContractError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// Derives an independent stream seed from (seed, stream) with splitmix64 finalization.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(derive_seed(seed, stream)); }

}  // namespace glab
