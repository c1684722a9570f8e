#pragma once
// Data types of the drift-aware relevance model:
//
//   y_i ~ Normal(x_i . phi, sigma^2 / w_i)
//   phi_j ~ Normal(mu_phi, lambda_phi)          (lambda_phi is a variance)
//   sigma^2 ~ InverseGamma(alpha_sigma2, beta_sigma2)   (shape / scale)
//   w_i ~ Gamma(alpha_w, beta_w)                (shape / rate)
//   w_i = 1 exactly for locked observations
//
// Everything here is a plain value type; inference lives in inference.hpp.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "driftfb/errors.hpp"

namespace driftfb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Non-negative feature vector, usually an L2-normalized TF-IDF row.
class FeatureVector {
 public:
  FeatureVector() = default;
  explicit FeatureVector(Vector values) : values_(std::move(values)) {}
  FeatureVector(std::initializer_list<double> values) : values_(values.size()) {
    Eigen::Index i = 0;
    for (double v : values) values_[i++] = v;
  }

  [[nodiscard]] Eigen::Index dim() const { return values_.size(); }
  [[nodiscard]] const Vector& values() const { return values_; }
  [[nodiscard]] double operator[](Eigen::Index i) const { return values_[i]; }
  [[nodiscard]] double norm() const { return values_.norm(); }
  [[nodiscard]] bool is_zero() const { return values_.squaredNorm() == 0.0; }

  [[nodiscard]] bool all_finite_nonnegative() const {
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]) || values_[i] < 0.0) return false;
    }
    return true;
  }

  /// Returns a unit-norm copy. Throws ValidationError on the zero vector or
  /// on negative / non-finite components.
  [[nodiscard]] FeatureVector normalized() const {
    if (!all_finite_nonnegative()) {
      throw ValidationError("feature vector has negative or non-finite components");
    }
    const double n = values_.norm();
    if (n == 0.0) throw ValidationError("cannot normalize the zero feature vector");
    return FeatureVector(values_ / n);
  }

  friend bool operator==(const FeatureVector& a, const FeatureVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  Vector values_;
};

enum class WeightMode { Free, Locked, Deleted };

inline const char* to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::Free: return "free";
    case WeightMode::Locked: return "locked";
    case WeightMode::Deleted: return "deleted";
  }
  return "?";
}

inline WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "free") return WeightMode::Free;
  if (s == "locked") return WeightMode::Locked;
  if (s == "deleted") return WeightMode::Deleted;
  throw ValidationError("unknown weight mode: " + s);
}

using ObservationId = std::uint64_t;

/// One unit of relevance feedback.
struct Observation {
  ObservationId id = 0;
  FeatureVector features;
  double value = 0.0;
  WeightMode weight_mode = WeightMode::Free;
  std::uint64_t created_at = 0;

  Observation() = default;
  Observation(ObservationId id_, FeatureVector f, double v,
              WeightMode mode = WeightMode::Free, std::uint64_t created = 0)
      : id(id_), features(std::move(f)), value(v), weight_mode(mode), created_at(created) {
    if (!(value >= 0.0 && value <= 1.0)) {
      throw ValidationError("feedback value must lie in [0, 1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Hyperparameters

struct Hyperparameters {
  double mu_phi = 0.0;
  double lambda_phi = 0.1;
  double alpha_sigma2 = 2.5;
  double beta_sigma2 = 0.5;
  double alpha_w = 0.7;
  double beta_w = 1.0;
  double vi_tolerance = 0.1;
  // nullopt means no iteration cap.
  std::optional<int> vi_max_iters;

  Hyperparameters() = default;
  Hyperparameters(double mu, double lambda, double a_s, double b_s, double a_w,
                  double b_w, double tol, std::optional<int> max_iters)
      : mu_phi(mu), lambda_phi(lambda), alpha_sigma2(a_s), beta_sigma2(b_s),
        alpha_w(a_w), beta_w(b_w), vi_tolerance(tol), vi_max_iters(max_iters) {
    validate();
  }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ValidationError(std::string(name) + " must be positive and finite");
      }
    };
    if (!std::isfinite(mu_phi)) throw ValidationError("mu_phi must be finite");
    positive(lambda_phi, "lambda_phi");
    positive(alpha_sigma2, "alpha_sigma2");
    positive(beta_sigma2, "beta_sigma2");
    positive(alpha_w, "alpha_w");
    positive(beta_w, "beta_w");
    positive(vi_tolerance, "vi_tolerance");
    if (vi_max_iters && *vi_max_iters < 1) {
      throw ValidationError("vi_max_iters must be a positive integer");
    }
  }

  /// Offline simulation settings.
  static Hyperparameters simulation() {
    return {0.0, 0.1, 2.5, 0.5, 0.7, 1.0, 0.1, std::nullopt};
  }
  /// On-line settings, capped at 10 variational iterations.
  static Hyperparameters interactive() { return {0.0, 0.1, 2.0, 0.1, 1.0, 1.0, 0.1, 10}; }

  static Hyperparameters preset(const std::string& name) {
    if (name == "simulation") return simulation();
    if (name == "interactive") return interactive();
    throw ValidationError("unknown preset: " + name);
  }

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("cannot format number");
  return std::string(buf, end);
}

inline double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError("bad numeric value for " + key + ": '" + s + "'");
  }
  return v;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Writes one `key = value` line per field. Values round-trip exactly.
inline void write_config(std::ostream& out, const Hyperparameters& h) {
  using detail::format_double;
  out << "mu_phi = " << format_double(h.mu_phi) << '\n'
      << "lambda_phi = " << format_double(h.lambda_phi) << '\n'
      << "alpha_sigma2 = " << format_double(h.alpha_sigma2) << '\n'
      << "beta_sigma2 = " << format_double(h.beta_sigma2) << '\n'
      << "alpha_w = " << format_double(h.alpha_w) << '\n'
      << "beta_w = " << format_double(h.beta_w) << '\n'
      << "vi_tolerance = " << format_double(h.vi_tolerance) << '\n'
      << "vi_max_iters = "
      << (h.vi_max_iters ? std::to_string(*h.vi_max_iters) : std::string("unbounded")) << '\n';
}

inline std::string to_config_string(const Hyperparameters& h) {
  std::ostringstream out;
  write_config(out, h);
  return out.str();
}

/// Parses the format produced by write_config. Blank lines and lines starting
/// with '#' are skipped; missing keys keep the simulation preset's value.
inline Hyperparameters read_config(std::istream& in) {
  Hyperparameters h = Hyperparameters::simulation();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + " has no '='");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = detail::trim(t.substr(eq + 1));
    if (key == "mu_phi") h.mu_phi = detail::parse_double(val, key);
    else if (key == "lambda_phi") h.lambda_phi = detail::parse_double(val, key);
    else if (key == "alpha_sigma2") h.alpha_sigma2 = detail::parse_double(val, key);
    else if (key == "beta_sigma2") h.beta_sigma2 = detail::parse_double(val, key);
    else if (key == "alpha_w") h.alpha_w = detail::parse_double(val, key);
    else if (key == "beta_w") h.beta_w = detail::parse_double(val, key);
    else if (key == "vi_tolerance") h.vi_tolerance = detail::parse_double(val, key);
    else if (key == "vi_max_iters") {
      if (val == "unbounded") {
        h.vi_max_iters.reset();
      } else {
        h.vi_max_iters = static_cast<int>(detail::parse_double(val, key));
      }
    } else {
      throw ValidationError("unknown config key: " + key);
    }
  }
  h.validate();
  return h;
}

inline Hyperparameters from_config_string(const std::string& s) {
  std::istringstream in(s);
  return read_config(in);
}

// ---------------------------------------------------------------------------
// Posterior

/// Covariance of q(phi). Kept either dense, or in the low-rank-update form
///   S = prior_variance * I - B^T C B
/// where B (N x D) holds the feature rows and C (N x N) is symmetric. The
/// low-rank form is what the dual solver produces when N < D.
class PhiCovariance {
 public:
  PhiCovariance() = default;

  static PhiCovariance dense(Matrix s) {
    PhiCovariance c;
    c.dense_ = std::move(s);
    c.dim_ = c.dense_.rows();
    c.is_dense_ = true;
    return c;
  }

  static PhiCovariance low_rank(double prior_variance, Matrix basis, Matrix core) {
    PhiCovariance c;
    c.prior_variance_ = prior_variance;
    c.basis_ = std::move(basis);
    c.core_ = std::move(core);
    c.dim_ = c.basis_.cols();
    c.is_dense_ = false;
    return c;
  }

  [[nodiscard]] Eigen::Index dim() const { return dim_; }
  [[nodiscard]] bool is_dense() const { return is_dense_; }

  /// Materializes the full D x D matrix.
  [[nodiscard]] Matrix matrix() const {
    if (is_dense_) return dense_;
    Matrix s = -(basis_.transpose() * core_ * basis_);
    s.diagonal().array() += prior_variance_;
    return s;
  }

  /// x^T S x
  [[nodiscard]] double quad_form(const Vector& x) const {
    if (is_dense_) return x.dot(dense_ * x);
    const Vector bx = basis_ * x;
    return prior_variance_ * x.squaredNorm() - bx.dot(core_ * bx);
  }

  [[nodiscard]] Vector apply(const Vector& v) const {
    if (is_dense_) return dense_ * v;
    return prior_variance_ * v - basis_.transpose() * (core_ * (basis_ * v));
  }

  [[nodiscard]] double trace() const {
    if (is_dense_) return dense_.trace();
    // tr(B^T C B) = sum_ij C_ij (B B^T)_ij
    const Matrix gram = basis_ * basis_.transpose();
    return prior_variance_ * static_cast<double>(dim_) - (core_.array() * gram.array()).sum();
  }

 private:
  bool is_dense_ = true;
  Eigen::Index dim_ = 0;
  Matrix dense_;
  double prior_variance_ = 0.0;
  Matrix basis_;
  Matrix core_;
};

/// Variational factor of one observation's weight. Locked observations carry
/// no Gamma factor and report E[w] = 1 exactly.
struct WeightFactor {
  ObservationId obs_id = 0;
  bool locked = false;
  double shape = 1.0;
  double rate = 1.0;

  [[nodiscard]] double mean() const { return locked ? 1.0 : shape / rate; }
};

struct PosteriorState {
  Vector phi_mean;
  PhiCovariance phi_cov;
  double log_det_cov = 0.0;
  double sigma2_shape = 1.0;
  double sigma2_scale = 1.0;
  std::vector<WeightFactor> weights;
  double elbo = 0.0;
  int iterations_run = 0;
  bool converged = false;
  /// ELBO at initialization followed by the value after each full cycle.
  std::vector<double> elbo_trace;

  [[nodiscard]] Eigen::Index dim() const { return phi_mean.size(); }
  [[nodiscard]] double expected_precision() const { return sigma2_shape / sigma2_scale; }

  [[nodiscard]] const WeightFactor* find_weight(ObservationId id) const {
    for (const auto& w : weights) {
      if (w.obs_id == id) return &w;
    }
    return nullptr;
  }
};

/// E[w_i] of an observation included in the fit.
inline double expected_weight(const PosteriorState& state, ObservationId obs_id) {
  const WeightFactor* w = state.find_weight(obs_id);
  if (w == nullptr) {
    throw NotFound("observation " + std::to_string(obs_id) + " is not part of the fitted posterior");
  }
  return w->mean();
}

/// Posterior-mean relevance. Not clamped: the linear model may leave [0, 1].
inline double predict_relevance(const PosteriorState& state, const Vector& features) {
  if (features.size() != state.phi_mean.size()) {
    throw DimensionError("feature dimension " + std::to_string(features.size()) +
                         " does not match model dimension " +
                         std::to_string(state.phi_mean.size()));
  }
  return state.phi_mean.dot(features);
}

inline double predict_relevance(const PosteriorState& state, const FeatureVector& features) {
  return predict_relevance(state, features.values());
}

}  // namespace driftfb
