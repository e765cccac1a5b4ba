#ifndef OTNEG_COMMON_HPP_
#define OTNEG_COMMON_HPP_

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace otneg {

// Row-major so that one row is one sample, matching the CSV and Python layouts.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorKind {
  DimensionMismatch,
  InvalidArgument,
  InfeasibleMask,
  NumericalOverflow,
  NonUnitNorm,
  WrongArity,
  ZeroVectorProjection,
  Config,
  Io,
  Checksum,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InfeasibleMask: return "InfeasibleMask";
    case ErrorKind::NumericalOverflow: return "NumericalOverflow";
    case ErrorKind::NonUnitNorm: return "NonUnitNorm";
    case ErrorKind::WrongArity: return "WrongArity";
    case ErrorKind::ZeroVectorProjection: return "ZeroVectorProjection";
    case ErrorKind::Config: return "Config";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Checksum: return "Checksum";
  }
  return "Unknown";
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace otneg

#endif  // OTNEG_COMMON_HPP_
