#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowfill {

// Dense row-major matrix; rows are frames / tokens, columns are features.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

using CharSeq = std::vector<int>;
using Durations = std::vector<int>;
using FrameTranscript = std::vector<int>;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* code() const noexcept { return "ERROR"; }
};

// Violated precondition on shapes, lengths or ids.
class ContractError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "CONTRACT"; }
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "DOMAIN"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "NUMERIC"; }
};

class IntegrationError : public NumericError {
 public:
  IntegrationError(const std::string& what, int step)
      : NumericError(what), step_(step) {}
  int step() const noexcept { return step_; }
  const char* code() const noexcept override { return "INTEGRATION"; }

 private:
  int step_;
};

class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, int step)
      : NumericError(what), step_(step) {}
  int step() const noexcept { return step_; }
  const char* code() const noexcept override { return "DIVERGED"; }

 private:
  int step_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "CONFIG"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* code() const noexcept override { return "DATA"; }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// Seeded random source. One instance per thread of execution.

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Uniform on [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  // Uniform integer on [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  Mat normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
    return m;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream, derived deterministically from this stream.
  Rng fork() { return Rng(next_u64() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace flowfill
