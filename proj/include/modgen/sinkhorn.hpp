#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "modgen/autograd.hpp"
#include "modgen/errors.hpp"

namespace modgen {

// B x E matrix of embeddings, one row per sample.
using EmbeddingBatch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SinkhornConfig {
  // Entropic regularization. With relative_epsilon the effective value is
  // epsilon * mean(C), recomputed for every cost matrix.
  double epsilon = 0.05;
  bool relative_epsilon = true;
  int max_iterations = 200;
  // L1 residual of the row marginals (column marginals are exact after each sweep).
  double tolerance = 1e-6;
  // Newton steps on the dual, taken only when the plain iterations stop
  // short of the tolerance. Near-permutation plans make Sinkhorn's
  // contraction factor approach 1; the dual Hessian is cheap at these sizes.
  int newton_steps = 30;

  void validate() const {
    require(epsilon > 0.0 && std::isfinite(epsilon), "sinkhorn: epsilon must be positive");
    require(max_iterations >= 1, "sinkhorn: max_iterations must be >= 1");
    require(tolerance > 0.0, "sinkhorn: tolerance must be positive");
    require(newton_steps >= 0, "sinkhorn: newton_steps must be >= 0");
  }
};

struct SinkhornResult {
  double distance = 0.0;  // <P, C>
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  double epsilon = 0.0;  // effective value used
  Eigen::MatrixXd plan;
  Eigen::VectorXd f, g;  // dual potentials
};

inline void validate_batch(const EmbeddingBatch& x, const char* what) {
  require(x.rows() >= 1, std::string(what) + ": embedding batch must have at least one row");
  if (!x.allFinite()) throw NumericalError(std::string(what) + ": embedding batch has non-finite entries");
}

// Squared Euclidean distances between the rows of a and b.
inline Eigen::MatrixXd cost_matrix(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  require(a.cols() == b.cols(), "cost_matrix: embedding dimension mismatch (" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) +
                                    ")");
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  return c;
}

namespace detail {

// Row-wise log-sum-exp of m.
inline Eigen::VectorXd row_logsumexp(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd mx = m.rowwise().maxCoeff();
  return mx.array() + (m.colwise() - mx).array().exp().rowwise().sum().log();
}

// Symmetric constraint Jacobian [diag(P1) P; P^T diag(P^T 1)] plus the outer
// product of its null vector (1, -1), which pins the (f + c, g - c) gauge.
inline Eigen::MatrixXd gauged_constraint_matrix(const Eigen::MatrixXd& plan) {
  const Index na = plan.rows(), nb = plan.cols(), n = na + nb;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  m.topLeftCorner(na, na).diagonal() = plan.rowwise().sum();
  m.bottomRightCorner(nb, nb).diagonal() = plan.colwise().sum().transpose();
  m.topRightCorner(na, nb) = plan;
  m.bottomLeftCorner(nb, na) = plan.transpose();
  Eigen::VectorXd v(n);
  v.head(na).setOnes();
  v.tail(nb).setConstant(-1.0);
  m += v * v.transpose() / static_cast<double>(n);
  return m;
}

inline Eigen::MatrixXd log_plan(const Eigen::MatrixXd& neg_c_over_eps, const Eigen::VectorXd& f,
                                const Eigen::VectorXd& g, double eps) {
  return (neg_c_over_eps.colwise() + f / eps).rowwise() + (g / eps).transpose();
}

}  // namespace detail

// Log-domain Sinkhorn with uniform marginals. Never throws on
// non-convergence; inspect `converged`.
inline SinkhornResult sinkhorn_solve(const Eigen::MatrixXd& cost, const SinkhornConfig& cfg) {
  cfg.validate();
  const Index na = cost.rows(), nb = cost.cols();
  require(na >= 1 && nb >= 1, "sinkhorn: empty cost matrix");
  SinkhornResult res;
  const double mean_cost = cost.mean();
  res.epsilon = cfg.relative_epsilon ? cfg.epsilon * mean_cost : cfg.epsilon;
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(na, 1.0 / static_cast<double>(na));
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(nb, 1.0 / static_cast<double>(nb));

  // A single row on either side admits exactly one coupling; so does an
  // all-zero cost matrix in the sense that every coupling costs 0.
  if (na == 1 || nb == 1 || !(mean_cost > 0.0)) {
    res.plan = a * b.transpose();
    res.distance = (res.plan.array() * cost.array()).sum();
    res.converged = true;
    res.f = Eigen::VectorXd::Zero(na);
    res.g = Eigen::VectorXd::Zero(nb);
    if (!(res.epsilon > 0.0)) res.epsilon = cfg.epsilon;
    return res;
  }

  const double eps = res.epsilon;
  const Eigen::VectorXd log_a = a.array().log();
  const Eigen::VectorXd log_b = b.array().log();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(na);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(nb);
  const Eigen::MatrixXd neg_c = -cost / eps;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    // rows: lse_i = log sum_j exp((g_j - C_ij) / eps)
    Eigen::MatrixXd z = neg_c.rowwise() + (g / eps).transpose();
    const Eigen::VectorXd lse_rows = detail::row_logsumexp(z);
    res.iterations = it;
    if (it > 1) {
      // Row sums of the current plan: exp(f_i / eps + lse_i).
      res.residual = ((f / eps + lse_rows).array().exp() - a.array()).abs().sum();
      if (res.residual <= cfg.tolerance) {
        res.converged = true;
        res.iterations = it - 1;
        break;
      }
    }
    f = eps * (log_a - lse_rows);
    z = neg_c.colwise() + f / eps;
    const Eigen::VectorXd lse_cols = detail::row_logsumexp(z.transpose());
    g = eps * (log_b - lse_cols);
  }
  auto row_residual = [&](const Eigen::VectorXd& fv, const Eigen::VectorXd& gv) {
    const Eigen::MatrixXd z = neg_c.rowwise() + (gv / eps).transpose();
    return ((fv / eps + detail::row_logsumexp(z)).array().exp() - a.array()).abs().sum();
  };
  if (!res.converged) res.residual = row_residual(f, g);
  if (res.residual > cfg.tolerance && cfg.newton_steps > 0) {
    // Maximize the concave dual <f,a> + <g,b> - eps * sum(P) by damped Newton.
    auto dual = [&](const Eigen::VectorXd& fv, const Eigen::VectorXd& gv) {
      return fv.dot(a) + gv.dot(b) - eps * detail::log_plan(neg_c, fv, gv, eps).array().exp().sum();
    };
    double current = dual(f, g);
    for (int step = 0; step < cfg.newton_steps && res.residual > cfg.tolerance; ++step) {
      const Eigen::MatrixXd plan = detail::log_plan(neg_c, f, g, eps).array().exp();
      Eigen::VectorXd grad(na + nb);
      grad.head(na) = a - plan.rowwise().sum();
      grad.tail(nb) = b - plan.colwise().sum().transpose();
      const Eigen::VectorXd dir = eps * detail::gauged_constraint_matrix(plan).ldlt().solve(grad);
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls, t *= 0.5) {
        const Eigen::VectorXd fv = f + t * dir.head(na);
        const Eigen::VectorXd gv = g + t * dir.tail(nb);
        const double value = dual(fv, gv);
        if (std::isfinite(value) && value >= current + 1e-4 * t * grad.dot(dir)) {
          f = fv;
          g = gv;
          current = value;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
      // Restore exact column marginals before measuring rows.
      const Eigen::MatrixXd z = neg_c.colwise() + f / eps;
      g = eps * (log_b - detail::row_logsumexp(z.transpose()));
      current = dual(f, g);
      res.residual = row_residual(f, g);
      ++res.iterations;
    }
  }
  res.converged = res.residual <= cfg.tolerance;
  res.plan = detail::log_plan(neg_c, f, g, eps).array().exp();
  res.distance = (res.plan.array() * cost.array()).sum();
  res.f = std::move(f);
  res.g = std::move(g);
  return res;
}

// Total derivative d<P*, C>/dC at the Sinkhorn fixed point, with P* a
// function of C through the dual potentials (and through epsilon when it
// is relative to mean(C)).
inline Eigen::MatrixXd sinkhorn_cost_gradient(const SinkhornResult& res, const Eigen::MatrixXd& cost,
                                              const SinkhornConfig& cfg) {
  const Index na = cost.rows(), nb = cost.cols();
  const Eigen::MatrixXd& plan = res.plan;
  if (na == 1 || nb == 1 || !(cost.mean() > 0.0)) return plan;
  const double eps = res.epsilon;
  const Eigen::MatrixXd w = plan.cwiseProduct(cost) / eps;

  const Index n = na + nb;
  const Eigen::MatrixXd m = detail::gauged_constraint_matrix(plan);
  Eigen::VectorXd rhs(n);
  rhs.head(na) = w.rowwise().sum();
  rhs.tail(nb) = w.colwise().sum().transpose();
  const Eigen::VectorXd z = m.ldlt().solve(rhs);

  Eigen::MatrixXd dual_sum = (-cost / eps).colwise() + z.head(na);
  dual_sum.rowwise() += z.tail(nb).transpose();
  Eigen::MatrixXd grad = plan.array() * (1.0 + dual_sum.array());
  if (cfg.relative_epsilon) {
    const Eigen::MatrixXd lp = detail::log_plan(-cost / eps, res.f, res.g, eps);
    const double d_eps = ((grad - plan).array() * lp.array()).sum();
    grad.array() += d_eps * cfg.epsilon / static_cast<double>(na * nb);
  }
  return grad;
}

// Value-only divergence between two embedding batches.
inline SinkhornResult sinkhorn_distance(const EmbeddingBatch& a, const EmbeddingBatch& b,
                                        const SinkhornConfig& cfg) {
  validate_batch(a, "sinkhorn_distance");
  validate_batch(b, "sinkhorn_distance");
  return sinkhorn_solve(cost_matrix(a, b), cfg);
}

template <typename T>
EmbeddingBatch to_embedding_batch(const Tensor<T>& t) {
  require(t.rank() == 2, "embedding tensor must be [B, E], got " + shape_string(t.shape()));
  EmbeddingBatch out(t.dim(0), t.dim(1));
  for (Index i = 0; i < t.numel(); ++i) out.data()[i] = static_cast<double>(t[i]);
  return out;
}

// Differentiable divergence on the tape. a: [Ba, E], b: [Bb, E] -> scalar.
template <typename T>
Var<T> sinkhorn_distance(const Var<T>& a, const Var<T>& b, const SinkhornConfig& cfg,
                         SinkhornResult* info = nullptr) {
  const EmbeddingBatch ea = to_embedding_batch(a.value());
  const EmbeddingBatch eb = to_embedding_batch(b.value());
  validate_batch(ea, "sinkhorn_distance");
  validate_batch(eb, "sinkhorn_distance");
  const Eigen::MatrixXd cost = cost_matrix(ea, eb);
  SinkhornResult res = sinkhorn_solve(cost, cfg);
  const double value = res.distance;
  Eigen::MatrixXd grad_c;
  if (grad_enabled() && (a.requires_grad() || b.requires_grad()))
    grad_c = sinkhorn_cost_gradient(res, cost, cfg);
  if (info) *info = std::move(res);
  auto an = a.node(), bn = b.node();
  return make_op<T>(Tensor<T>::scalar(static_cast<T>(value)), {a, b},
                    [an, bn, ea, eb, grad_c = std::move(grad_c)](const Tensor<T>& g) {
    const double s = static_cast<double>(g.item());
    // C_ij = |a_i - b_j|^2
    if (an->requires_grad) {
      EmbeddingBatch ga = 2.0 * s * (grad_c.rowwise().sum().asDiagonal() * ea - grad_c * eb);
      Tensor<T> t(an->value.shape());
      for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(ga.data()[i]);
      an->accumulate(std::move(t));
    }
    if (bn->requires_grad) {
      EmbeddingBatch gb =
          2.0 * s * (grad_c.colwise().sum().transpose().asDiagonal() * eb - grad_c.transpose() * ea);
      Tensor<T> t(bn->value.shape());
      for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(gb.data()[i]);
      bn->accumulate(std::move(t));
    }
  });
}

}  // namespace modgen
