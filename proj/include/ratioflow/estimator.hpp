#pragma once

// Intensity-ratio model and its quasi-maximum-likelihood fit.
//
// With z = theta . x, an arriving market order is MA with probability
// r_MA = 1 / (1 + exp(-z)) and MB with r_MB = 1 / (1 + exp(z)). The baseline
// intensity cancels in the ratio, so theta = vartheta_MA - vartheta_MB is all
// that can be (and needs to be) estimated.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ratioflow/core.hpp"
#include "ratioflow/dataset.hpp"

namespace ratioflow {

inline constexpr double kDefaultBoxRadius = 50.0;
inline constexpr double kStepTolerance = 1e-6;

/// A point of the box parameter space [-R, R]^d.
struct Theta {
  Eigen::VectorXd values;
  double box_radius = kDefaultBoxRadius;

  std::size_t dimension() const noexcept { return static_cast<std::size_t>(values.size()); }
};

struct RatioPair {
  double ma = 0.5;
  double mb = 0.5;
};

/// Both ratios for linear predictor z. The larger one is computed directly
/// and the smaller as its complement, which is exact for values >= 1/2, so
/// ma + mb == 1 holds exactly in floating point.
inline RatioPair ratio_pair(double z) noexcept {
  const double e = std::exp(-std::abs(z));
  const double big = 1.0 / (1.0 + e);
  const double small = 1.0 - big;
  return z >= 0.0 ? RatioPair{big, small} : RatioPair{small, big};
}

inline double ratio(double z, OrderSide side) noexcept {
  const auto r = ratio_pair(z);
  return side == OrderSide::MA ? r.ma : r.mb;
}

inline double linear_predictor(const Eigen::VectorXd& theta, std::span<const double> x) {
  if (static_cast<std::size_t>(theta.size()) != x.size())
    throw Error(ErrorCode::DimensionMismatch, "theta has dimension " + std::to_string(theta.size()) +
                                                  ", features " + std::to_string(x.size()));
  double z = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) z += theta[static_cast<Eigen::Index>(j)] * x[j];
  return z;
}

inline double ratio(const Theta& theta, std::span<const double> x, OrderSide side) {
  return ratio(linear_predictor(theta.values, x), side);
}

/// log(1 + exp(u)) without overflow.
inline double softplus(double u) noexcept { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }

/// log r^side at linear predictor z.
inline double log_ratio(double z, OrderSide side) noexcept {
  return side == OrderSide::MA ? -softplus(-z) : -softplus(z);
}

/// Value, gradient and (optionally) Hessian of the quasi-log likelihood.
struct Derivatives {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;  // empty unless requested
};

namespace detail {

struct Accum {
  double value = 0.0;
  std::vector<double> grad;
  std::vector<double> hess;  // packed upper triangle

  void add(const Accum& o) {
    value += o.value;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += o.grad[i];
    for (std::size_t i = 0; i < hess.size(); ++i) hess[i] += o.hess[i];
  }
};

inline constexpr std::size_t kChunk = 1024;

}  // namespace detail

/// Sums over fixed-size chunks combined by a pairwise tree, so the result is
/// reproducible bit for bit and carries less rounding than a flat sum.
inline Derivatives evaluate(const Eigen::VectorXd& theta, const Dataset& data, bool with_hessian = true) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "quasi-log likelihood of an empty dataset");
  if (static_cast<std::size_t>(theta.size()) != data.d)
    throw Error(ErrorCode::DimensionMismatch, "theta has dimension " + std::to_string(theta.size()) + ", data " +
                                                  std::to_string(data.d));
  const std::size_t d = data.d;
  const std::size_t n = data.size();
  const std::size_t chunks = (n + detail::kChunk - 1) / detail::kChunk;
  const std::size_t packed = with_hessian ? d * (d + 1) / 2 : 0;

  std::vector<detail::Accum> acc(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    auto& a = acc[c];
    a.grad.assign(d, 0.0);
    a.hess.assign(packed, 0.0);
    const std::size_t end = std::min(n, (c + 1) * detail::kChunk);
    for (std::size_t i = c * detail::kChunk; i < end; ++i) {
      const double* x = data.x.data() + i * d;
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += theta[static_cast<Eigen::Index>(j)] * x[j];
      const OrderSide s = data.side[i];
      a.value += log_ratio(z, s);
      // 1{MA} - r_MA is the probability of the side not taken. Computing it
      // as e / (1 + e) keeps precision when it is tiny, so the score does not
      // vanish early under separation.
      const double e = std::exp(-std::abs(z));
      const double lo = e / (1.0 + e), hi = 1.0 / (1.0 + e);
      const double resid = s == OrderSide::MA ? (z >= 0 ? lo : hi) : -(z >= 0 ? hi : lo);
      for (std::size_t j = 0; j < d; ++j) a.grad[j] += resid * x[j];
      if (with_hessian) {
        const double w = e / ((1.0 + e) * (1.0 + e));  // r_MA * r_MB
        std::size_t k = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const double wx = w * x[j];
          for (std::size_t l = j; l < d; ++l) a.hess[k++] -= wx * x[l];
        }
      }
    }
  }
  for (std::size_t stride = 1; stride < chunks; stride *= 2)
    for (std::size_t c = 0; c + stride < chunks; c += 2 * stride) acc[c].add(acc[c + stride]);

  Derivatives out;
  out.value = acc[0].value;
  out.gradient = Eigen::Map<const Eigen::VectorXd>(acc[0].grad.data(), static_cast<Eigen::Index>(d));
  if (with_hessian) {
    out.hessian.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    std::size_t k = 0;
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t l = j; l < d; ++l) {
        const auto jj = static_cast<Eigen::Index>(j), ll = static_cast<Eigen::Index>(l);
        out.hessian(jj, ll) = out.hessian(ll, jj) = acc[0].hess[k++];
      }
  }
  return out;
}

/// Sum over samples of log r^side. Always <= 0.
inline double quasi_log_likelihood(const Eigen::VectorXd& theta, const Dataset& data) {
  return evaluate(theta, data, false).value;
}

inline Eigen::VectorXd gradient(const Eigen::VectorXd& theta, const Dataset& data) {
  return evaluate(theta, data, false).gradient;
}

inline Eigen::MatrixXd hessian(const Eigen::VectorXd& theta, const Dataset& data) {
  return evaluate(theta, data, true).hessian;
}

struct GammaEstimate {
  Eigen::MatrixXd gamma;
  double min_eigenvalue = 0.0;
  bool degenerate = false;  // smallest eigenvalue <= 1e-10
};

inline constexpr double kGammaEigenFloor = 1e-10;

/// Empirical information per session: (1/T) sum r_MA r_MB x x^T.
inline GammaEstimate estimate_gamma(const Eigen::VectorXd& theta_hat, const Dataset& data) {
  const double t = static_cast<double>(std::max<std::size_t>(data.sessions, 1));
  GammaEstimate g;
  g.gamma = -hessian(theta_hat, data) / t;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g.gamma, Eigen::EigenvaluesOnly);
  g.min_eigenvalue = es.eigenvalues().minCoeff();
  g.degenerate = !(g.min_eigenvalue > kGammaEigenFloor);
  return g;
}

/// sqrt(diag(Gamma^-1) / T); absent when Gamma is not invertible.
inline std::optional<Eigen::VectorXd> standard_errors(const Eigen::MatrixXd& gamma, std::size_t sessions) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gamma);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > kGammaEigenFloor)) return std::nullopt;
  const Eigen::MatrixXd inv =
      es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return (inv.diagonal() / static_cast<double>(std::max<std::size_t>(sessions, 1))).cwiseSqrt().eval();
}

struct FitOptions {
  double tolerance = 1e-8;  // on the projected-gradient max-norm per sample
  int max_iter = 100;
  int max_halvings = 30;
  double box_radius = kDefaultBoxRadius;
  double ridge = 0.0;  // optional penalty (ridge/2)|theta|^2
};

struct FitResult {
  Theta theta_hat;
  double objective = 0.0;  // H_T at theta_hat, without the ridge term
  double gradient_norm = 0.0;
  int iterations = 0;
  Eigen::MatrixXd gamma_hat;
  std::optional<Eigen::VectorXd> std_errors;
  bool converged = false;
  bool boundary_hit = false;
  double ridge = 0.0;
  std::size_t sessions = 0;
  std::size_t samples = 0;
  std::vector<std::string> warnings;

  std::size_t dimension() const noexcept { return theta_hat.dimension(); }
  /// Usable for prediction and model comparison.
  bool usable() const noexcept { return converged || boundary_hit; }
};

namespace detail {

inline Eigen::VectorXd project(Eigen::VectorXd v, double r) { return v.cwiseMax(-r).cwiseMin(r); }

inline bool at_upper(double v, double r) { return v >= r; }
inline bool at_lower(double v, double r) { return v <= -r; }

inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& g, const Eigen::VectorXd& theta, double r) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index j = 0; j < g.size(); ++j)
    if ((at_upper(theta[j], r) && g[j] > 0) || (at_lower(theta[j], r) && g[j] < 0)) pg[j] = 0.0;
  return pg;
}

inline Eigen::VectorXd penalized_gradient(const Derivatives& ev, const Eigen::VectorXd& theta, double ridge) {
  return ridge > 0 ? Eigen::VectorXd(ev.gradient - ridge * theta) : ev.gradient;
}

inline double penalized_value(const Derivatives& ev, const Eigen::VectorXd& theta, double ridge) {
  return ridge > 0 ? ev.value - 0.5 * ridge * theta.squaredNorm() : ev.value;
}

/// Directions along which the feature matrix has (numerically) no variation.
inline std::vector<Eigen::VectorXd> null_directions(const Dataset& data) {
  const auto d = static_cast<Eigen::Index>(data.d);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Eigen::Map<const Eigen::VectorXd> x(data.x.data() + i * data.d, d);
    gram.selfadjointView<Eigen::Upper>().rankUpdate(x);
  }
  gram = gram.selfadjointView<Eigen::Upper>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const double scale = std::max(1.0, es.eigenvalues().maxCoeff());
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index k = 0; k < d; ++k)
    if (es.eigenvalues()[k] <= 1e-10 * scale) out.push_back(es.eigenvectors().col(k));
  return out;
}

}  // namespace detail

/// Maximizes H_T over [-R, R]^d by projected Newton with step halving.
/// Throws SingularHessian on rank-deficient features. Non-convergence is
/// reported in the result, not thrown.
inline FitResult fit_qmle(const Dataset& data, const FitOptions& opts = {}) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "cannot fit an empty dataset");
  if (data.d == 0) throw Error(ErrorCode::DimensionMismatch, "zero-dimensional model");
  if (data.size() < data.d + 1)
    throw Error(ErrorCode::EmptyDataset, "need at least d + 1 = " + std::to_string(data.d + 1) + " samples, got " +
                                             std::to_string(data.size()));
  if (const auto null = detail::null_directions(data); !null.empty()) {
    std::ostringstream os;
    os << "features are rank deficient; null directions:";
    Eigen::IOFormat fmt(6, Eigen::DontAlignCols, ", ", ", ", "", "", "[", "]");
    for (const auto& v : null) os << ' ' << v.transpose().format(fmt);
    throw Error(ErrorCode::SingularHessian, os.str());
  }

  const double r = opts.box_radius;
  const auto d = static_cast<Eigen::Index>(data.d);
  FitResult res;
  res.ridge = opts.ridge;
  res.sessions = data.sessions;
  res.samples = data.size();
  res.theta_hat.box_radius = r;
  const std::size_t n_ma = data.count(OrderSide::MA);
  if (n_ma == 0 || n_ma == data.size()) res.warnings.emplace_back("one_sided_data");

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  Derivatives ev = evaluate(theta, data, true);
  double value = detail::penalized_value(ev, theta, opts.ridge);
  // The gradient is a sum over samples, so the tolerance applies per sample.
  const double n = static_cast<double>(data.size());

  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd g = detail::penalized_gradient(ev, theta, opts.ridge);
    const Eigen::VectorXd pg = detail::projected_gradient(g, theta, r);
    res.gradient_norm = pg.lpNorm<Eigen::Infinity>();
    res.iterations = iter;
    const bool small_gradient = res.gradient_norm <= opts.tolerance * n;

    // Newton direction on the coordinates not pinned at an active bound.
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < d; ++j)
      if (pg[j] != 0.0 || !(detail::at_upper(theta[j], r) || detail::at_lower(theta[j], r))) free.push_back(j);
    const auto nf = static_cast<Eigen::Index>(free.size());
    if (nf == 0) {
      // Every coordinate is pinned with the gradient pointing outward.
      res.converged = true;
      break;
    }
    Eigen::MatrixXd neg_h(nf, nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      gf[a] = g[free[static_cast<std::size_t>(a)]];
      for (Eigen::Index b = 0; b < nf; ++b)
        neg_h(a, b) = -ev.hessian(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
      neg_h(a, a) += opts.ridge;
    }
    Eigen::VectorXd pf;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_h);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) pf = ldlt.solve(gf);
    if (pf.size() != nf || !pf.allFinite() || pf.dot(gf) <= 0.0) {
      // Fall back to a scaled gradient step.
      const double scale = std::max(neg_h.diagonal().cwiseAbs().maxCoeff(), 1e-300);
      pf = gf / scale;
    }
    Eigen::VectorXd step = Eigen::VectorXd::Zero(d);
    for (Eigen::Index a = 0; a < nf; ++a) step[free[static_cast<std::size_t>(a)]] = pf[a];

    // A small gradient alone is not enough: under separation the gradient
    // vanishes exponentially while the Newton step stays of order one, and
    // the iteration should run on to the box edge.
    const Eigen::VectorXd landed = detail::project(theta + step, r) - theta;
    if (small_gradient && landed.lpNorm<Eigen::Infinity>() <= kStepTolerance) {
      res.converged = true;
      break;
    }
    if (iter >= opts.max_iter) {
      res.warnings.emplace_back("did_not_converge: iteration limit");
      break;
    }

    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, alpha *= 0.5) {
      Eigen::VectorXd cand = detail::project(theta + alpha * step, r);
      if (cand == theta) break;
      Derivatives cev = evaluate(cand, data, true);
      const double cval = detail::penalized_value(cev, cand, opts.ridge);
      if (cval >= value) {
        theta = std::move(cand);
        ev = std::move(cev);
        value = cval;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // At a stationary point rounding can block every candidate step.
      if (small_gradient) res.converged = true;
      else res.warnings.emplace_back("did_not_converge: no ascent step found");
      break;
    }
  }

  res.theta_hat.values = theta;
  res.objective = ev.value;
  for (Eigen::Index j = 0; j < d; ++j)
    if (std::abs(theta[j]) >= r) res.boundary_hit = true;
  if (res.boundary_hit) res.warnings.emplace_back("boundary_hit: estimate on the parameter box edge");

  const double t = static_cast<double>(std::max<std::size_t>(data.sessions, 1));
  res.gamma_hat = -ev.hessian / t;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(res.gamma_hat, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > kGammaEigenFloor)) res.warnings.emplace_back("gamma_degenerate");
  res.std_errors = standard_errors(res.gamma_hat, data.sessions);
  if (opts.ridge > 0) res.warnings.emplace_back("ridge_penalty_applied");
  return res;
}

}  // namespace ratioflow
