#pragma once

// Dense 64-bit containers plus the numerically careful probability
// primitives shared by the model and the losses, and the central-difference
// gradient oracle used by the tests and the gradcheck command.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiclass {

using Vector = std::vector<double>;

// Arguments of log() are clamped to this value so exact zeros coming out of
// underflowed softmaxes stay finite.
inline constexpr double kLogEps = 1e-12;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  Vector row_vector(std::size_t r) const {
    return Vector(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_),
                  data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols_));
  }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  Vector data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
inline bool all_finite(const Matrix& m) { return all_finite(m.data()); }

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Shift-invariant softmax (max subtraction), entries in (0,1], sum 1.
inline Vector softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  if (!all_finite(v)) throw std::invalid_argument("softmax: non-finite input");
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

inline Vector softmax(const Vector& v) { return softmax(std::span<const double>(v)); }

// Pulls d(loss)/d(pre-softmax input) back from p = softmax(input) and
// g = d(loss)/dp. Invariant to constant shifts of g.
inline Vector softmax_backward(const Vector& p, const Vector& g) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * g[i];
  Vector out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] * (g[i] - dot);
  return out;
}

inline void check_distribution(std::span<const double> p, const char* who) {
  double s = 0.0;
  for (double x : p) s += x;
  if (std::abs(s - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(who) + ": input does not sum to 1");
}

// KL(p || q) in nats; log arguments clamped at kLogEps.
inline double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_div: length mismatch");
  check_distribution(p, "kl_div");
  check_distribution(q, "kl_div");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    s += p[i] * std::log(std::max(p[i], kLogEps) / std::max(q[i], kLogEps));
  }
  return s;
}

inline double kl_div(const Vector& p, const Vector& q) {
  return kl_div(std::span<const double>(p), std::span<const double>(q));
}

// Jensen-Shannon divergence: symmetric, in [0, ln 2].
inline double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("jsd: length mismatch");
  Vector m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl_div(p, std::span<const double>(m)) +
         0.5 * kl_div(q, std::span<const double>(m));
}

inline double jsd(const Vector& p, const Vector& q) {
  return jsd(std::span<const double>(p), std::span<const double>(q));
}

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f,
                               Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff_grad: non-finite value at probe " +
                               std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace hiclass
