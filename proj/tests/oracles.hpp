#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "modgen/autograd.hpp"
#include "modgen/ops.hpp"

namespace modgen::testing {

// Exact OT with uniform, equal-size marginals: an optimal vertex of the
// Birkhoff polytope is a permutation, so enumerate them.
inline double exact_ot_oracle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("exact_ot_oracle: unequal batch sizes");
  if (a.rows() > 8) throw std::invalid_argument("exact_ot_oracle: refusing B > 8");
  const int n = static_cast<int>(a.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = 0.0;
      for (int e = 0; e < a.cols(); ++e) {
        const double diff = a(i, e) - b(perm[i], e);
        d += diff * diff;
      }
      total += d;
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / n;
}

inline Eigen::MatrixXd naive_cost(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (int e = 0; e < a.cols(); ++e) s += (a(i, e) - b(j, e)) * (a(i, e) - b(j, e));
      c(i, j) = s;
    }
  return c;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

// Weighted sum so every output element carries a distinct gradient.
inline Var<double> probe(const Var<double>& y, const Tensor<double>& weights) {
  Tensor<double> w = weights;
  w.reshape_in_place(y.shape());
  return sum_all(make_op<double>(
      [&] {
        Tensor<double> p = y.value();
        for (Index i = 0; i < p.numel(); ++i) p[i] *= w[i];
        return p;
      }(),
      {y}, [yn = y.node(), w](const Tensor<double>& g) {
        Tensor<double> gy = w;
        for (Index i = 0; i < gy.numel(); ++i) gy[i] *= g[i];
        yn->accumulate(std::move(gy));
      }));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};

// Compares the tape gradient of loss() w.r.t. `param` against central
// differences on up to `max_coords` evenly spaced coordinates.
inline GradCheckResult grad_check(const std::function<Var<double>()>& loss, Var<double>& param,
                                  int max_coords = 40, double h = 1e-6, double abs_floor = 1e-7) {
  param.zero_grad();
  const Var<double> out = loss();
  out.backward();
  const Tensor<double> analytic = param.grad();
  GradCheckResult res;
  const Index n = param.numel();
  const Index step = std::max<Index>(1, n / max_coords);
  for (Index i = 0; i < n; i += step) {
    double& x = param.mutable_value()[i];
    const double saved = x;
    x = saved + h;
    const double up = loss().item();
    x = saved - h;
    const double down = loss().item();
    x = saved;
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), abs_floor});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(fd - analytic[i]) / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace modgen::testing
