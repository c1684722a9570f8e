#pragma once
// Mean-field variational inference for the per-observation-weight regression
// model (ARD) and its equal-weight baseline (LG).
//
// Factorization q(phi) q(sigma^2) prod_i q(w_i) with
//   q(phi)     = N(m, S)
//   q(sigma^2) = InvGamma(a, b)
//   q(w_i)     = Gamma(c_i, d_i)        (free observations only)
// Coordinate-ascent updates, in this order every cycle:
//   S = (E[1/s2] X^T W X + I / lambda)^-1
//   m = S (E[1/s2] X^T W y + mu / lambda * 1)
//   a = alpha_s2 + N/2,  b = beta_s2 + 1/2 sum_i E[w_i] r_i
//   c_i = alpha_w + 1/2, d_i = beta_w + 1/2 E[1/s2] r_i
// with r_i = (y_i - x_i^T m)^2 + x_i^T S x_i and W = diag(E[w_i]).
// Iteration stops once the ELBO changes by less than vi_tolerance.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "driftfb/errors.hpp"
#include "driftfb/model.hpp"

namespace driftfb {

enum class ModelKind { ARD, LG };

inline const char* to_string(ModelKind k) { return k == ModelKind::ARD ? "ard" : "lg"; }

struct FitRequest {
  std::vector<Observation> observations;
  Hyperparameters hyper = Hyperparameters::simulation();
  ModelKind model_kind = ModelKind::ARD;
  std::uint64_t rng_seed = 0;
};

enum class SolverRoute {
  Auto,    // dual when N < D, primal otherwise
  Primal,  // D x D Cholesky
  Dual,    // N x N Cholesky through the Woodbury identity
};

struct FitOptions {
  SolverRoute route = SolverRoute::Auto;
  /// Also record the ELBO after every single factor update (three entries per
  /// cycle) into `update_trace`.
  std::vector<double>* update_trace = nullptr;
};

namespace detail {

constexpr double kFloor = 1e-12;

inline double floored(double v) { return v < kFloor ? kFloor : v; }

// Observations that take part in a fit, packed for linear algebra.
struct Design {
  Matrix X;                     // N x D
  Vector y;                     // N
  std::vector<bool> locked;     // per row
  std::vector<ObservationId> ids;
  Eigen::Index dim = 0;

  [[nodiscard]] Eigen::Index rows() const { return X.rows(); }
};

inline Design make_design(const FitRequest& req) {
  Design d;
  Eigen::Index dim = -1;
  std::vector<const Observation*> used;
  for (const auto& o : req.observations) {
    if (o.weight_mode == WeightMode::Deleted) continue;
    if (dim < 0) dim = o.features.dim();
    if (o.features.dim() != dim) {
      throw DimensionError("observations have mixed feature dimensions");
    }
    if (!std::isfinite(o.value) || !o.features.values().allFinite()) {
      throw NumericError("observation " + std::to_string(o.id) + " has non-finite input");
    }
    used.push_back(&o);
  }
  d.dim = dim < 0 ? 0 : dim;
  const auto n = static_cast<Eigen::Index>(used.size());
  d.X.resize(n, d.dim);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Observation& o = *used[static_cast<std::size_t>(i)];
    d.X.row(i) = o.features.values().transpose();
    d.y[i] = o.value;
    d.locked.push_back(req.model_kind == ModelKind::LG || o.weight_mode == WeightMode::Locked);
    d.ids.push_back(o.id);
  }
  return d;
}

// Solution of the q(phi) update for given precision and weights.
struct PhiSolution {
  Vector mean;
  PhiCovariance cov;
  double log_det = 0.0;
  double trace = 0.0;
  Vector quad;  // x_i^T S x_i per row
};

class PhiSolver {
 public:
  PhiSolver(const Design& design, const Hyperparameters& hyper, SolverRoute route)
      : design_(design), hyper_(hyper) {
    const Eigen::Index n = design.rows();
    const Eigen::Index dim = design.dim;
    dual_ = route == SolverRoute::Dual || (route == SolverRoute::Auto && n < dim);
    if (dual_) gram_ = design.X * design.X.transpose();
  }

  [[nodiscard]] PhiSolution solve(double precision, const Vector& weights) const {
    return dual_ ? solve_dual(precision, weights) : solve_primal(precision, weights);
  }

 private:
  [[nodiscard]] Vector prior_shift() const {
    return Vector::Constant(design_.dim, hyper_.mu_phi / hyper_.lambda_phi);
  }

  [[nodiscard]] PhiSolution solve_primal(double precision, const Vector& weights) const {
    const Matrix& X = design_.X;
    const Vector cw = precision * weights;
    Matrix A = X.transpose() * cw.asDiagonal() * X;
    A.diagonal().array() += 1.0 / hyper_.lambda_phi;
    const Vector rhs = X.transpose() * cw.cwiseProduct(design_.y) + prior_shift();

    Eigen::LLT<Matrix> llt(A);
    if (llt.info() != Eigen::Success) {
      throw SingularModelError("posterior precision of phi is not positive definite");
    }
    PhiSolution out;
    Matrix S = llt.solve(Matrix::Identity(A.rows(), A.cols()));
    S = 0.5 * (S + S.transpose());
    out.mean = llt.solve(rhs);
    double log_det_a = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) log_det_a += std::log(llt.matrixL()(i, i));
    out.log_det = -2.0 * log_det_a;
    out.quad = (X * S).cwiseProduct(X).rowwise().sum();
    out.trace = S.trace();
    out.cov = PhiCovariance::dense(std::move(S));
    return out;
  }

  // S = lambda I - lambda^2 X^T (B^-1 + lambda K)^-1 X with B = precision * W,
  // evaluated through P = I + lambda B^1/2 K B^1/2.
  [[nodiscard]] PhiSolution solve_dual(double precision, const Vector& weights) const {
    const Matrix& X = design_.X;
    const double lambda = hyper_.lambda_phi;
    const Eigen::Index n = X.rows();
    const Vector bh = (precision * weights).cwiseSqrt();

    Matrix P = lambda * (bh.asDiagonal() * gram_ * bh.asDiagonal());
    P.diagonal().array() += 1.0;
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success) {
      throw SingularModelError("dual system matrix is not positive definite");
    }
    Matrix core = llt.solve(Matrix(bh.asDiagonal()));
    core = (lambda * lambda) * (bh.asDiagonal() * core);
    core = 0.5 * (core + core.transpose());

    const Vector rhs =
        X.transpose() * (precision * weights).cwiseProduct(design_.y) + prior_shift();
    PhiSolution out;
    out.mean = lambda * rhs - X.transpose() * (core * (X * rhs));

    double log_det_p = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) log_det_p += std::log(llt.matrixL()(i, i));
    out.log_det = static_cast<double>(design_.dim) * std::log(lambda) - 2.0 * log_det_p;

    const Matrix kck = gram_ * core * gram_;
    out.quad = lambda * gram_.diagonal() - kck.diagonal();
    out.trace = lambda * static_cast<double>(design_.dim) - (core.array() * gram_.array()).sum();
    out.cov = PhiCovariance::low_rank(lambda, X, std::move(core));
    return out;
  }

  const Design& design_;
  const Hyperparameters& hyper_;
  bool dual_ = false;
  Matrix gram_;
};

inline double lgamma_(double v) { return std::lgamma(v); }
inline double digamma_(double v) { return boost::math::digamma(v); }

// Variational lower bound for the given factors. `quad` is x_i^T S x_i.
inline double compute_elbo(const Design& d, const Hyperparameters& h, const Vector& mean,
                           double trace_cov, double log_det_cov, const Vector& quad,
                           double s_shape, double s_scale, const std::vector<WeightFactor>& w) {
  constexpr double log2pi = 1.8378770664093454835606594728112;  // log(2 pi)
  const auto dim = static_cast<double>(mean.size());

  const double e_prec = s_shape / s_scale;
  const double e_log_s2 = std::log(s_scale) - digamma_(s_shape);

  double elbo = 0.0;
  // likelihood
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto& wf = w[static_cast<std::size_t>(i)];
    const double e_w = wf.mean();
    const double e_log_w = wf.locked ? 0.0 : digamma_(wf.shape) - std::log(wf.rate);
    const double resid = d.y[i] - d.X.row(i).dot(mean);
    const double r = resid * resid + quad[i];
    elbo += -0.5 * log2pi + 0.5 * e_log_w - 0.5 * e_log_s2 - 0.5 * e_w * e_prec * r;
  }
  // phi prior + entropy
  const double lambda = h.lambda_phi;
  const double sq = (mean.array() - h.mu_phi).square().sum();
  elbo += -0.5 * dim * (log2pi + std::log(lambda)) - (sq + trace_cov) / (2.0 * lambda);
  elbo += 0.5 * dim * (1.0 + log2pi) + 0.5 * log_det_cov;
  // sigma^2 prior + entropy
  elbo += h.alpha_sigma2 * std::log(h.beta_sigma2) - lgamma_(h.alpha_sigma2) -
          (h.alpha_sigma2 + 1.0) * e_log_s2 - h.beta_sigma2 * e_prec;
  elbo += s_shape + std::log(s_scale) + lgamma_(s_shape) - (1.0 + s_shape) * digamma_(s_shape);
  // weight priors + entropies
  for (const auto& wf : w) {
    if (wf.locked) continue;
    const double e_w = wf.shape / wf.rate;
    const double e_log_w = digamma_(wf.shape) - std::log(wf.rate);
    elbo += h.alpha_w * std::log(h.beta_w) - lgamma_(h.alpha_w) + (h.alpha_w - 1.0) * e_log_w -
            h.beta_w * e_w;
    elbo += wf.shape - std::log(wf.rate) + lgamma_(wf.shape) + (1.0 - wf.shape) * digamma_(wf.shape);
  }
  if (!std::isfinite(elbo)) throw NumericError("ELBO evaluated to a non-finite value");
  return elbo;
}

inline Vector weight_means(const std::vector<WeightFactor>& w) {
  Vector out(static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) out[static_cast<Eigen::Index>(i)] = w[i].mean();
  return out;
}

inline PosteriorState prior_state(const Hyperparameters& h, Eigen::Index dim) {
  PosteriorState s;
  s.phi_mean = Vector::Constant(dim, h.mu_phi);
  s.phi_cov = PhiCovariance::low_rank(h.lambda_phi, Matrix(0, dim), Matrix(0, 0));
  s.log_det_cov = static_cast<double>(dim) * std::log(h.lambda_phi);
  s.sigma2_shape = h.alpha_sigma2;
  s.sigma2_scale = h.beta_sigma2;
  s.elbo = 0.0;
  s.iterations_run = 0;
  s.converged = true;
  s.elbo_trace = {0.0};
  return s;
}

}  // namespace detail

/// Runs coordinate-ascent VI to convergence. `dim_hint` fixes the model
/// dimension when there are no observations (otherwise it is taken from the
/// data, and a mismatch with a positive hint throws DimensionError).
inline PosteriorState fit(const FitRequest& req, Eigen::Index dim_hint = 0,
                          const FitOptions& opts = {}) {
  req.hyper.validate();
  const detail::Design d = detail::make_design(req);
  if (d.rows() > 0 && dim_hint > 0 && d.dim != dim_hint) {
    throw DimensionError("observation dimension does not match model dimension");
  }
  const Hyperparameters& h = req.hyper;
  if (d.rows() == 0) return detail::prior_state(h, dim_hint);

  const Eigen::Index n = d.rows();
  const Eigen::Index dim = d.dim;
  if (dim < 1) throw DimensionError("feature dimension must be at least 1");

  // Initial state drawn from the prior: q(phi) is the prior itself, sigma^2
  // and the free weights get prior draws as their initial means.
  std::mt19937_64 rng(req.rng_seed);
  std::gamma_distribution<double> sigma_gamma(h.alpha_sigma2, 1.0);
  const double sigma2_draw = detail::floored(h.beta_sigma2 / detail::floored(sigma_gamma(rng)));
  double s_shape = h.alpha_sigma2;
  double s_scale = s_shape * sigma2_draw;

  std::gamma_distribution<double> weight_gamma(h.alpha_w, 1.0 / h.beta_w);
  std::vector<WeightFactor> weights(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& wf = weights[static_cast<std::size_t>(i)];
    wf.obs_id = d.ids[static_cast<std::size_t>(i)];
    wf.locked = d.locked[static_cast<std::size_t>(i)];
    if (!wf.locked) {
      wf.shape = h.alpha_w;
      wf.rate = h.alpha_w / detail::floored(weight_gamma(rng));
    }
  }

  detail::PhiSolution phi;
  const PosteriorState prior = detail::prior_state(h, dim);
  phi.mean = prior.phi_mean;
  phi.cov = prior.phi_cov;
  phi.log_det = prior.log_det_cov;
  phi.trace = h.lambda_phi * static_cast<double>(dim);
  phi.quad = h.lambda_phi * d.X.rowwise().squaredNorm();

  auto elbo_now = [&] {
    return detail::compute_elbo(d, h, phi.mean, phi.trace, phi.log_det, phi.quad, s_shape,
                                s_scale, weights);
  };

  PosteriorState out;
  double prev = elbo_now();
  out.elbo_trace.push_back(prev);
  if (opts.update_trace) opts.update_trace->push_back(prev);

  const detail::PhiSolver solver(d, h, opts.route);
  int iters = 0;
  bool converged = false;
  while (true) {
    phi = solver.solve(s_shape / s_scale, detail::weight_means(weights));
    if (opts.update_trace) opts.update_trace->push_back(elbo_now());

    Vector r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double resid = d.y[i] - d.X.row(i).dot(phi.mean);
      r[i] = resid * resid + phi.quad[i];
    }

    s_shape = h.alpha_sigma2 + 0.5 * static_cast<double>(n);
    s_scale = detail::floored(h.beta_sigma2 + 0.5 * detail::weight_means(weights).dot(r));
    if (opts.update_trace) opts.update_trace->push_back(elbo_now());

    const double e_prec = s_shape / s_scale;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& wf = weights[static_cast<std::size_t>(i)];
      if (wf.locked) continue;
      wf.shape = h.alpha_w + 0.5;
      wf.rate = detail::floored(h.beta_w + 0.5 * e_prec * r[i]);
    }
    const double cur = elbo_now();
    if (opts.update_trace) opts.update_trace->push_back(cur);
    out.elbo_trace.push_back(cur);
    ++iters;

    if (!std::isfinite(cur)) throw NumericError("ELBO diverged");
    if (std::abs(cur - prev) < h.vi_tolerance) {
      converged = true;
      break;
    }
    prev = cur;
    if (h.vi_max_iters && iters >= *h.vi_max_iters) break;
  }

  out.phi_mean = std::move(phi.mean);
  out.phi_cov = std::move(phi.cov);
  out.log_det_cov = phi.log_det;
  out.sigma2_shape = s_shape;
  out.sigma2_scale = s_scale;
  out.weights = std::move(weights);
  out.elbo = out.elbo_trace.back();
  out.iterations_run = iters;
  out.converged = converged;
  return out;
}

/// Evidence lower bound of `state` for the data in `req`.
inline double elbo(const FitRequest& req, const PosteriorState& state) {
  const detail::Design d = detail::make_design(req);
  if (d.rows() > 0 && d.dim != state.dim()) {
    throw DimensionError("state dimension does not match observations");
  }
  if (state.weights.size() != static_cast<std::size_t>(d.rows())) {
    throw DimensionError("state holds a different number of weight factors");
  }
  Vector quad(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    quad[i] = state.phi_cov.quad_form(d.X.row(i).transpose());
  }
  return detail::compute_elbo(d, req.hyper, state.phi_mean, state.phi_cov.trace(), state.log_det_cov,
                              quad, state.sigma2_shape, state.sigma2_scale, state.weights);
}

}  // namespace driftfb
