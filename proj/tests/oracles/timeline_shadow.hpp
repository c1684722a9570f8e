#pragma once
// Independent model of a feedback timeline: the fit request a session should
// be using, rebuilt from a plain list of rows without the session module.

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "driftfb/inference.hpp"
#include "driftfb/session.hpp"

namespace oracle {

using namespace driftfb;

struct Shadow {
  struct Row {
    std::string term;
    double value;
    bool locked = false;
    bool deleted = false;
    std::uint64_t seq;
    std::uint64_t changed;
  };
  std::vector<Row> rows;
  std::uint64_t seq = 1;
  std::size_t window = 1;

  FitRequest request(const KeywordSpace& space, const SessionConfig& cfg) const {
    std::vector<std::pair<std::uint64_t, std::size_t>> by_change;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i].deleted) by_change.emplace_back(rows[i].changed, i);
    }
    std::sort(by_change.rbegin(), by_change.rend());
    std::vector<bool> recent(rows.size(), false);
    for (std::size_t k = 0; k < by_change.size() && k < window; ++k) recent[by_change[k].second] = true;
    FitRequest req;
    req.hyper = cfg.hyper;
    req.model_kind = cfg.model;
    req.rng_seed = cfg.seed;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.deleted) continue;
      const bool lock = r.locked || recent[i];
      req.observations.emplace_back(r.seq, *space.find(r.term), r.value,
                                    lock ? WeightMode::Locked : WeightMode::Free, r.seq);
    }
    return req;
  }
};

/// Largest absolute difference between two posteriors over phi mean, phi
/// covariance, sigma^2 scale and expected weights (infinity on a shape
/// mismatch).
inline double posterior_gap(const PosteriorState& a, const PosteriorState& b) {
  if (a.phi_mean.size() != b.phi_mean.size() || a.weights.size() != b.weights.size()) {
    return std::numeric_limits<double>::infinity();
  }
  double gap = 0.0;
  if (a.phi_mean.size() > 0) {
    gap = std::max(gap, (a.phi_mean - b.phi_mean).cwiseAbs().maxCoeff());
    gap = std::max(gap, (a.phi_cov.matrix() - b.phi_cov.matrix()).cwiseAbs().maxCoeff());
  }
  gap = std::max(gap, std::abs(a.sigma2_scale - b.sigma2_scale));
  for (std::size_t k = 0; k < a.weights.size(); ++k) {
    if (a.weights[k].obs_id != b.weights[k].obs_id) return std::numeric_limits<double>::infinity();
    gap = std::max(gap, std::abs(a.weights[k].mean() - b.weights[k].mean()));
  }
  return gap;
}

/// Runs `steps` random apply/lock/delete operations on a fresh session over
/// `space` (terms "k0".."k<terms-1>") and returns the largest posterior gap
/// between the session and a from-scratch fit of the shadow's rows.
inline double replay_trial(std::uint64_t trial, int steps, std::shared_ptr<const KeywordSpace> space,
                           int terms) {
  SessionConfig cfg;
  cfg.seed = trial + 11;
  cfg.recency_window = trial % 3;
  cfg.model = trial % 4 == 3 ? ModelKind::LG : ModelKind::ARD;
  SessionState s = new_session("replay", cfg, space);
  Shadow sh;
  sh.window = cfg.recency_window;
  std::mt19937_64 rng(trial);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int step = 0; step < steps; ++step) {
    const double r = u(rng);
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < sh.rows.size(); ++i) {
      if (!sh.rows[i].deleted) live.push_back(i);
    }
    if (r < 0.6 || live.empty()) {
      const std::string term = "k" + std::to_string(rng() % static_cast<std::uint64_t>(terms));
      const double value = std::round(u(rng) * 4) / 4;
      s = apply_feedback(s, term, value, FeedbackSource::UserRadar);
      const std::uint64_t seq = sh.seq++;
      bool found = false;
      for (auto& row : sh.rows) {
        if (row.term == term && !row.deleted) {
          row.value = value;
          row.locked = false;
          row.changed = seq;
          found = true;
        }
      }
      if (!found) sh.rows.push_back({term, value, false, false, seq, seq});
    } else {
      const std::size_t i = live[rng() % live.size()];
      const std::string id = "e" + std::to_string(sh.rows[i].seq);
      if (r < 0.8) {
        s = lock_feedback(s, id);
        sh.rows[i].locked = true;
      } else {
        s = delete_feedback(s, id);
        sh.rows[i].deleted = true;
      }
    }
    const auto want = fit(sh.request(*s.space, s.config), s.space->dim);
    worst = std::max(worst, posterior_gap(want, s.posterior));
  }
  return worst;
}

}  // namespace oracle
