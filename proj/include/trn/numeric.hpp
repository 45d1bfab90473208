#pragma once

// Dense kernels used by the recurrent model: matrix storage, linear layers,
// nonlinearities, softmax / cross-entropy, an LSTM cell with its exact
// reverse-mode gradient, and a central-difference gradient checker.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trn {

/// Raised whenever operand shapes disagree. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
using Vector = std::vector<T>;

/// Row-major dense matrix with fixed dimensions.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      std::ostringstream msg;
      msg << "matrix " << rows_ << "x" << cols_ << " given " << values_.size()
          << " values";
      throw DimensionError(msg.str());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::span<T> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  std::string shape() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

  template <typename U>
  Matrix<U> cast() const {
    std::vector<U> out(values_.size());
    std::transform(values_.begin(), values_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return Matrix<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> values_;
};

namespace detail {

template <typename T>
using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using MutableRowMajorMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using VecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MutableVecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
RowMajorMap<T> map(const Matrix<T>& m) {
  return RowMajorMap<T>(m.values().data(), static_cast<Eigen::Index>(m.rows()),
                        static_cast<Eigen::Index>(m.cols()));
}
template <typename T>
MutableRowMajorMap<T> map(Matrix<T>& m) {
  return MutableRowMajorMap<T>(m.values().data(), static_cast<Eigen::Index>(m.rows()),
                               static_cast<Eigen::Index>(m.cols()));
}
template <typename T>
VecMap<T> map(std::span<const T> v) {
  return VecMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}
template <typename T>
MutableVecMap<T> map(std::span<T> v) {
  return MutableVecMap<T>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string vec_shape(std::size_t n) { return "[" + std::to_string(n) + "]"; }

[[noreturn]] inline void shape_mismatch(const std::string& op, const std::string& a,
                                        const std::string& b) {
  throw DimensionError(op + ": shape mismatch " + a + " vs " + b);
}

}  // namespace detail

/// Throws NonFiniteError if any value is NaN or infinite.
template <typename T>
void check_finite(std::span<const T> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteError(what + ": non-finite value at index " + std::to_string(i));
    }
  }
}

/// y = W x + b
template <typename T>
Vector<T> linear(const Matrix<T>& weight, std::span<const T> bias, std::span<const T> x) {
  if (weight.cols() != x.size()) {
    detail::shape_mismatch("linear", "W" + weight.shape(), "x" + detail::vec_shape(x.size()));
  }
  if (weight.rows() != bias.size()) {
    detail::shape_mismatch("linear", "W" + weight.shape(),
                           "b" + detail::vec_shape(bias.size()));
  }
  Vector<T> y(weight.rows());
  detail::map(std::span<T>(y)).noalias() = detail::map(weight) * detail::map(x);
  detail::map(std::span<T>(y)) += detail::map(bias);
  return y;
}

/// Accumulates the gradients of y = W x + b given dy. dx may be empty when
/// the input gradient is not needed.
template <typename T>
void linear_backward(const Matrix<T>& weight, std::span<const T> x, std::span<const T> dy,
                     Matrix<T>& dweight, std::span<T> dbias, std::span<T> dx) {
  if (dy.size() != weight.rows() || x.size() != weight.cols()) {
    detail::shape_mismatch("linear_backward", "W" + weight.shape(),
                           "dy" + detail::vec_shape(dy.size()) + " x" +
                               detail::vec_shape(x.size()));
  }
  if (dweight.rows() != weight.rows() || dweight.cols() != weight.cols() ||
      dbias.size() != weight.rows()) {
    detail::shape_mismatch("linear_backward", "W" + weight.shape(), "dW" + dweight.shape());
  }
  detail::map(dweight).noalias() += detail::map(dy) * detail::map(x).transpose();
  detail::map(dbias) += detail::map(dy);
  if (!dx.empty()) {
    if (dx.size() != weight.cols()) {
      detail::shape_mismatch("linear_backward", "W" + weight.shape(),
                             "dx" + detail::vec_shape(dx.size()));
    }
    detail::map(dx).noalias() += detail::map(weight).transpose() * detail::map(dy);
  }
}

template <typename T>
T sigmoid(T z) {
  return T{1} / (T{1} + std::exp(-z));
}

template <typename T>
Vector<T> relu(std::span<const T> z) {
  Vector<T> out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [](T v) { return v > T{0} ? v : T{0}; });
  return out;
}

/// Masks dy in place by the ReLU derivative evaluated at its output.
template <typename T>
void relu_backward(std::span<const T> output, std::span<T> dy) {
  if (output.size() != dy.size()) {
    detail::shape_mismatch("relu_backward", detail::vec_shape(output.size()),
                           detail::vec_shape(dy.size()));
  }
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(output[i] > T{0})) dy[i] = T{0};
  }
}

template <typename T>
Vector<T> softmax(std::span<const T> z) {
  if (z.empty()) throw DimensionError("softmax: empty input");
  const T peak = *std::max_element(z.begin(), z.end());
  Vector<T> out(z.size());
  T total{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// -log p[label] with p[label] clamped to at least 1e-12.
template <typename T>
T cross_entropy(std::span<const T> p, std::size_t label) {
  if (label >= p.size()) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                            " out of range for " + std::to_string(p.size()) + " classes");
  }
  return -std::log(std::max(p[label], static_cast<T>(kProbabilityFloor)));
}

/// Gradient of cross_entropy(softmax(z), label) with respect to z, scaled.
template <typename T>
Vector<T> softmax_cross_entropy_grad(std::span<const T> p, std::size_t label, T scale) {
  if (label >= p.size()) {
    throw std::out_of_range("softmax_cross_entropy_grad: label out of range");
  }
  Vector<T> dz(p.begin(), p.end());
  dz[label] -= T{1};
  for (auto& v : dz) v *= scale;
  return dz;
}

/// LSTM weights: gate rows ordered (input, forget, cell, output); columns
/// ordered (x, h_prev).
template <typename T>
struct LstmParams {
  Matrix<T> weight;  // 4H x (input + H)
  Matrix<T> bias;    // 4H x 1

  LstmParams() = default;
  LstmParams(std::size_t input_size, std::size_t hidden_size)
      : weight(4 * hidden_size, input_size + hidden_size), bias(4 * hidden_size, 1) {}

  std::size_t hidden_size() const noexcept { return weight.rows() / 4; }
  std::size_t input_size() const noexcept { return weight.cols() - hidden_size(); }

  template <typename U>
  LstmParams<U> cast() const {
    LstmParams<U> out;
    out.weight = weight.template cast<U>();
    out.bias = bias.template cast<U>();
    return out;
  }
};

/// One LSTM step with the intermediates needed for its backward pass.
template <typename T>
struct LstmStep {
  Vector<T> input;   // concat(x, h_prev)
  Vector<T> gates;   // activated (i, f, g, o), 4H
  Vector<T> c_prev;
  Vector<T> tanh_c;
  Vector<T> h;
  Vector<T> c;
};

template <typename T>
LstmStep<T> lstm_step(const LstmParams<T>& params, std::span<const T> x,
                      std::span<const T> h_prev, std::span<const T> c_prev) {
  const std::size_t hidden = params.hidden_size();
  if (x.size() != params.input_size()) {
    detail::shape_mismatch("lstm_step", "W" + params.weight.shape(),
                           "x" + detail::vec_shape(x.size()));
  }
  if (h_prev.size() != hidden || c_prev.size() != hidden) {
    detail::shape_mismatch("lstm_step", "hidden" + detail::vec_shape(hidden),
                           "h" + detail::vec_shape(h_prev.size()) + " c" +
                               detail::vec_shape(c_prev.size()));
  }
  LstmStep<T> step;
  step.input.reserve(x.size() + hidden);
  step.input.insert(step.input.end(), x.begin(), x.end());
  step.input.insert(step.input.end(), h_prev.begin(), h_prev.end());
  step.gates = linear(params.weight, params.bias.values(), std::span<const T>(step.input));
  for (std::size_t k = 0; k < hidden; ++k) {
    step.gates[k] = sigmoid(step.gates[k]);
    step.gates[hidden + k] = sigmoid(step.gates[hidden + k]);
    step.gates[2 * hidden + k] = std::tanh(step.gates[2 * hidden + k]);
    step.gates[3 * hidden + k] = sigmoid(step.gates[3 * hidden + k]);
  }
  step.c_prev.assign(c_prev.begin(), c_prev.end());
  step.c.resize(hidden);
  step.tanh_c.resize(hidden);
  step.h.resize(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    const T i = step.gates[k];
    const T f = step.gates[hidden + k];
    const T g = step.gates[2 * hidden + k];
    const T o = step.gates[3 * hidden + k];
    step.c[k] = f * c_prev[k] + i * g;
    step.tanh_c[k] = std::tanh(step.c[k]);
    step.h[k] = o * step.tanh_c[k];
  }
  return step;
}

template <typename T>
struct LstmInputGrads {
  Vector<T> dx;
  Vector<T> dh_prev;
  Vector<T> dc_prev;
};

/// Backward pass of one LSTM step. dh/dc are the total gradients arriving at
/// the step's outputs; parameter gradients are accumulated into grads.
template <typename T>
LstmInputGrads<T> lstm_backward(const LstmParams<T>& params, const LstmStep<T>& step,
                                std::span<const T> dh, std::span<const T> dc,
                                LstmParams<T>& grads) {
  const std::size_t hidden = params.hidden_size();
  if (dh.size() != hidden || dc.size() != hidden) {
    detail::shape_mismatch("lstm_backward", "hidden" + detail::vec_shape(hidden),
                           "dh" + detail::vec_shape(dh.size()));
  }
  Vector<T> dz(4 * hidden);
  LstmInputGrads<T> out;
  out.dc_prev.resize(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    const T i = step.gates[k];
    const T f = step.gates[hidden + k];
    const T g = step.gates[2 * hidden + k];
    const T o = step.gates[3 * hidden + k];
    const T tc = step.tanh_c[k];
    const T dc_total = dc[k] + dh[k] * o * (T{1} - tc * tc);
    dz[k] = dc_total * g * i * (T{1} - i);
    dz[hidden + k] = dc_total * step.c_prev[k] * f * (T{1} - f);
    dz[2 * hidden + k] = dc_total * i * (T{1} - g * g);
    dz[3 * hidden + k] = dh[k] * tc * o * (T{1} - o);
    out.dc_prev[k] = dc_total * f;
  }
  Vector<T> dinput(step.input.size(), T{0});
  linear_backward(params.weight, std::span<const T>(step.input), std::span<const T>(dz),
                  grads.weight, grads.bias.values(), std::span<T>(dinput));
  const std::size_t in = params.input_size();
  out.dx.assign(dinput.begin(), dinput.begin() + static_cast<std::ptrdiff_t>(in));
  out.dh_prev.assign(dinput.begin() + static_cast<std::ptrdiff_t>(in), dinput.end());
  return out;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares an analytic gradient against central differences, coordinate by
/// coordinate. Error per coordinate is |a - n| / max(1, |a|, |n|).
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<const double> theta,
                                  std::span<const double> analytic, double step = 1e-5) {
  if (theta.size() != analytic.size()) {
    detail::shape_mismatch("grad_check", "theta" + detail::vec_shape(theta.size()),
                           "gradient" + detail::vec_shape(analytic.size()));
  }
  std::vector<double> probe(theta.begin(), theta.end());
  GradCheckReport report;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + step;
    const double plus = loss(probe);
    probe[k] = saved - step;
    const double minus = loss(probe);
    probe[k] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NonFiniteError("grad_check: non-finite loss at coordinate " + std::to_string(k));
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double a = analytic[k];
    const double err =
        std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (k == 0 || err > report.max_relative_error) {
      report = {err, k, a, numeric};
    }
  }
  return report;
}

}  // namespace trn
