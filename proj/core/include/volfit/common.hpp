#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace volfit {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat34 = Eigen::Matrix<T, 3, 4>;

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidCameraError : public Error {
 public:
  using Error::Error;
};

class DegenerateParameterError : public Error {
 public:
  using Error::Error;
};

class DegenerateMixtureError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A gradient or parameter tensor contains NaN/Inf. `tensor()` names it.
class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(std::string tensor)
      : Error("non-finite value in tensor '" + tensor + "'"), tensor_(std::move(tensor)) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

class InvalidCheckError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training loss became NaN/Inf.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, std::string checkpoint)
      : Error("loss diverged at step " + std::to_string(step) +
              (checkpoint.empty() ? std::string() : "; pre-step checkpoint: " + checkpoint)),
        step_(step),
        checkpoint_(std::move(checkpoint)) {}
  long step() const { return step_; }
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  long step_;
  std::string checkpoint_;
};

}  // namespace volfit
