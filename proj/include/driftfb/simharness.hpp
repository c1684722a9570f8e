#pragma once
// Simulated-user retrieval experiment.
//
// A session picks a target group, seeds the model with two of its documents,
// then repeats: fit, rank every document by its predicted relevance, score
// the top of the list, optionally show one past feedback for revision, and
// give one noisy feedback on a listed document.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "driftfb/corpus.hpp"
#include "driftfb/errors.hpp"
#include "driftfb/inference.hpp"
#include "driftfb/model.hpp"
#include "driftfb/ranking.hpp"
#include "driftfb/session.hpp"

namespace driftfb::sim {

enum class Scenario { A, B, C, D };
enum class SimModel { ARD, LG, Oracle };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::A: return "A";
    case Scenario::B: return "B";
    case Scenario::C: return "C";
    case Scenario::D: return "D";
  }
  return "?";
}

inline const char* to_string(SimModel m) {
  switch (m) {
    case SimModel::ARD: return "ard";
    case SimModel::LG: return "lg";
    case SimModel::Oracle: return "oracle";
  }
  return "?";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "A" || s == "a") return Scenario::A;
  if (s == "B" || s == "b") return Scenario::B;
  if (s == "C" || s == "c") return Scenario::C;
  if (s == "D" || s == "d") return Scenario::D;
  throw ValidationError("unknown scenario: " + s);
}

inline SimModel sim_model_from_string(const std::string& s) {
  if (s == "ard" || s == "ARD") return SimModel::ARD;
  if (s == "lg" || s == "LG") return SimModel::LG;
  if (s == "oracle" || s == "Oracle") return SimModel::Oracle;
  throw ValidationError("unknown model: " + s);
}

struct NoiseProfile {
  double p_positive = 0.70;
  double p_negative = 0.10;
  double p_random = 0.20;
  double p_random_high = 0.875;
  double value_positive = 1.0;
  double value_negative = 0.0;

  void validate() const {
    for (double p : {p_positive, p_negative, p_random, p_random_high}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("noise probabilities must lie in [0, 1]");
    }
    if (std::abs(p_positive + p_negative + p_random - 1.0) > 1e-12) {
      throw ValidationError("noise branch probabilities must sum to 1");
    }
  }
};

struct SimConfig {
  std::size_t list_size = 50;
  std::size_t steps = 100;
  std::size_t sessions = 50;
  std::size_t seed_positives = 2;
  /// Seed positives are locked and never offered for revision.
  bool exempt_seeds = true;
  std::size_t recency_window = 1;
  Hyperparameters hyper = Hyperparameters::simulation();
  NoiseProfile noise;
  std::uint64_t rng_seed = 1;
  std::size_t threads = 1;

  void validate() const {
    if (list_size == 0 || steps == 0 || sessions == 0 || seed_positives == 0) {
      throw ValidationError("simulation counts must be positive");
    }
    hyper.validate();
    noise.validate();
  }
};

enum class Branch { Positive, Negative, Random };

struct StepFeedback {
  std::size_t doc = 0;  // corpus row
  double value = 0.0;
  Branch branch = Branch::Random;
};

/// One noisy feedback on an item of `list`. `relevant(doc)` is the ground
/// truth. A branch with no eligible item falls back to the random branch.
template <class Rng, class Pred>
StepFeedback simulate_step_feedback(const std::vector<std::size_t>& list, Pred relevant,
                                    const NoiseProfile& noise, Rng& rng) {
  if (list.empty()) throw ValidationError("feedback list is empty");
  std::vector<std::size_t> pos, neg;
  for (std::size_t d : list) (relevant(d) ? pos : neg).push_back(d);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](const std::vector<std::size_t>& v) {
    std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
    return v[pick(rng)];
  };
  const double r = u(rng);
  if (r < noise.p_positive && !pos.empty()) {
    return {uniform(pos), noise.value_positive, Branch::Positive};
  }
  if (r >= noise.p_positive && r < noise.p_positive + noise.p_negative && !neg.empty()) {
    return {uniform(neg), noise.value_negative, Branch::Negative};
  }
  const std::size_t d = uniform(list);
  const double v = u(rng) < noise.p_random_high ? noise.value_positive : noise.value_negative;
  return {d, v, Branch::Random};
}

inline double f1_of_list(std::size_t hits, std::size_t list_size, std::size_t group_size) {
  if (list_size == 0 || group_size == 0) throw ValidationError("list and group sizes must be positive");
  if (hits == 0) return 0.0;
  const double p = static_cast<double>(hits) / static_cast<double>(list_size);
  const double r = static_cast<double>(hits) / static_cast<double>(group_size);
  return 2.0 * p * r / (p + r);
}

/// Ground-truth grouping of the corpus rows.
struct Groups {
  std::vector<std::string> names;
  std::vector<std::size_t> of_doc;                // group index per corpus row
  std::vector<std::vector<std::size_t>> members;  // corpus rows per group
};

inline Groups corpus_groups(const Corpus& corpus) {
  Groups g;
  std::map<std::string, std::size_t> idx;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& label = corpus.documents()[d].label;
    if (!label) throw ValidationError("document " + corpus.documents()[d].doc_id + " has no group label");
    auto [it, inserted] = idx.emplace(*label, g.names.size());
    if (inserted) {
      g.names.push_back(*label);
      g.members.emplace_back();
    }
    g.of_doc.push_back(it->second);
    g.members[it->second].push_back(d);
  }
  return g;
}

struct SessionResult {
  std::vector<double> f1;       // one per step
  std::vector<double> seconds;  // fit wall-clock per step
  std::size_t target_group = 0;
  bool failed = false;
  std::string error;
};

struct SimObservation {
  std::size_t doc;
  double value;
  bool locked;
  bool seed;
  std::uint64_t created;
  std::uint64_t changed;
};

/// splitmix64 step; derives independent seeds from (seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Fit request for one step. Observation ids are indices into `obs`; the
/// Oracle sees only observations whose value matches the ground truth.
inline FitRequest step_fit_request(const std::vector<SimObservation>& obs, const std::vector<bool>& recent,
                                   const std::vector<bool>& correct, SimModel model,
                                   const Hyperparameters& hyper, const Matrix& weights,
                                   std::uint64_t rng_seed) {
  FitRequest req;
  req.hyper = hyper;
  req.model_kind = model == SimModel::ARD ? ModelKind::ARD : ModelKind::LG;
  req.rng_seed = rng_seed;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& o = obs[i];
    if (model == SimModel::Oracle && !correct[i]) continue;
    const bool lock = o.locked || recent[i];
    req.observations.emplace_back(i, FeatureVector(weights.row(static_cast<Eigen::Index>(o.doc)).transpose()),
                                  o.value, lock ? WeightMode::Locked : WeightMode::Free, o.created);
  }
  return req;
}

/// Runs one simulated session. Sessions with the same `session_seed` share
/// their target group and seed documents across models and scenarios.
inline SessionResult run_session(const Corpus& corpus, const Groups& groups, SimModel model,
                                 Scenario scenario, const SimConfig& cfg,
                                 std::uint64_t session_seed) {
  SessionResult res;
  std::mt19937_64 setup_rng(derive_seed(session_seed, 0));
  std::mt19937_64 noise_rng(derive_seed(session_seed, 1));
  std::mt19937_64 highlight_rng(derive_seed(session_seed, 2));
  const std::uint64_t fit_seed = derive_seed(session_seed, 3);

  std::uniform_int_distribution<std::size_t> pick_group(0, groups.names.size() - 1);
  const std::size_t target = pick_group(setup_rng);
  res.target_group = target;
  const auto& members = groups.members[target];
  if (members.size() < cfg.seed_positives) throw InsufficientDataError("target group too small");
  auto relevant = [&](std::size_t d) { return groups.of_doc[d] == target; };
  auto correct = [&](const SimObservation& o) {
    return o.value == (relevant(o.doc) ? cfg.noise.value_positive : cfg.noise.value_negative);
  };

  std::vector<SimObservation> obs;
  std::uint64_t clock = 0;
  {
    std::vector<std::size_t> pool = members;
    std::shuffle(pool.begin(), pool.end(), setup_rng);
    for (std::size_t i = 0; i < cfg.seed_positives; ++i) {
      ++clock;
      obs.push_back({pool[i], cfg.noise.value_positive, cfg.exempt_seeds, cfg.exempt_seeds, clock, clock});
    }
  }

  const Matrix& W = corpus.weights();
  try {
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      // most recently changed observations are fit as locked
      std::vector<std::size_t> order(obs.size());
      for (std::size_t i = 0; i < obs.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return obs[a].changed > obs[b].changed; });
      std::vector<bool> recent(obs.size(), false);
      for (std::size_t k = 0; k < order.size() && k < cfg.recency_window; ++k) recent[order[k]] = true;

      std::vector<bool> is_correct(obs.size());
      for (std::size_t i = 0; i < obs.size(); ++i) is_correct[i] = correct(obs[i]);
      const FitRequest req = step_fit_request(obs, recent, is_correct, model, cfg.hyper, W,
                                              derive_seed(fit_seed, step));

      const auto t0 = std::chrono::steady_clock::now();
      const PosteriorState post = fit(req, W.cols());
      const auto t1 = std::chrono::steady_clock::now();
      res.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());

      const Vector scores = W * post.phi_mean;
      const RankedList list = top_k(scores, cfg.list_size);
      std::size_t hits = 0;
      for (std::size_t d : list.docs) hits += relevant(d) ? 1 : 0;
      res.f1.push_back(f1_of_list(hits, cfg.list_size, members.size()));

      ++clock;
      if (scenario != Scenario::A) {
        std::vector<HighlightCandidate> cands;
        std::vector<std::size_t> cand_obs;
        for (std::size_t i = 0; i < obs.size(); ++i) {
          const auto& o = obs[i];
          if (o.locked || o.seed || recent[i]) continue;
          double w = 1.0;
          if (const WeightFactor* f = post.find_weight(i)) w = f->mean();
          cands.push_back({std::to_string(i), w, correct(o)});
          cand_obs.push_back(i);
        }
        const HighlightPolicy policy = model == SimModel::ARD   ? HighlightPolicy::LowestWeight
                                       : model == SimModel::LG ? HighlightPolicy::UniformRandom
                                                               : HighlightPolicy::OracleTruth;
        if (auto pick = select_highlight(cands, policy, highlight_rng)) {
          SimObservation& o = obs[cand_obs[*pick]];
          const bool wrong = !correct(o);
          if (wrong && (scenario == Scenario::B || scenario == Scenario::C)) {
            o.value = relevant(o.doc) ? cfg.noise.value_positive : cfg.noise.value_negative;
            o.changed = clock;
          } else if (!wrong && (scenario == Scenario::B || scenario == Scenario::D)) {
            o.locked = true;
          }
        }
      }

      // the user rates a listed document it has not rated yet when possible
      std::vector<std::size_t> unrated;
      for (std::size_t d : list.docs) {
        if (std::none_of(obs.begin(), obs.end(), [&](const SimObservation& o) { return o.doc == d; })) {
          unrated.push_back(d);
        }
      }
      const StepFeedback fb = simulate_step_feedback(unrated.empty() ? list.docs : unrated, relevant,
                                                     cfg.noise, noise_rng);
      ++clock;
      auto existing = std::find_if(obs.begin(), obs.end(), [&](const SimObservation& o) { return o.doc == fb.doc; });
      if (existing == obs.end()) {
        obs.push_back({fb.doc, fb.value, false, false, clock, clock});
      } else {
        existing->value = fb.value;
        existing->locked = false;
        existing->changed = clock;
      }
    }
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

struct CellResult {
  SimModel model = SimModel::ARD;
  Scenario scenario = Scenario::A;
  std::vector<double> mean_f1;
  std::vector<double> stderr_f1;
  std::vector<double> mean_seconds;
  std::size_t sessions_ok = 0;
  std::size_t failures = 0;
  std::vector<std::string> errors;

  [[nodiscard]] double final_f1() const { return mean_f1.empty() ? 0.0 : mean_f1.back(); }
};

/// Per-step mean, standard error and mean runtime over successful sessions.
inline CellResult aggregate(SimModel model, Scenario scenario, const std::vector<SessionResult>& runs,
                            std::size_t steps) {
  CellResult c;
  c.model = model;
  c.scenario = scenario;
  c.mean_f1.assign(steps, 0.0);
  c.stderr_f1.assign(steps, 0.0);
  c.mean_seconds.assign(steps, 0.0);
  std::vector<const SessionResult*> ok;
  for (const auto& r : runs) {
    if (r.failed) {
      ++c.failures;
      c.errors.push_back(r.error);
    } else {
      ok.push_back(&r);
    }
  }
  c.sessions_ok = ok.size();
  if (ok.empty()) return c;
  const double n = static_cast<double>(ok.size());
  for (std::size_t t = 0; t < steps; ++t) {
    double sum = 0.0, secs = 0.0;
    for (const auto* r : ok) {
      sum += r->f1[t];
      secs += r->seconds[t];
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto* r : ok) ss += (r->f1[t] - mean) * (r->f1[t] - mean);
    c.mean_f1[t] = mean;
    c.stderr_f1[t] = ok.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    c.mean_seconds[t] = secs / n;
  }
  return c;
}

/// Runs every (model, scenario) cell. Session s of every cell uses the same
/// derived seed, so cells differ only in model and scenario.
inline std::vector<CellResult> run_experiment(const Corpus& corpus, const std::vector<SimModel>& models,
                                              const std::vector<Scenario>& scenarios, const SimConfig& cfg,
                                              std::ostream* progress = nullptr) {
  cfg.validate();
  if (models.empty() || scenarios.empty()) throw ValidationError("empty experiment grid");
  const Groups groups = corpus_groups(corpus);
  std::vector<CellResult> out;
  std::mutex log_mutex;
  for (SimModel m : models) {
    for (Scenario sc : scenarios) {
      std::vector<SessionResult> runs(cfg.sessions);
      const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.sessions));
      std::size_t next = 0;
      std::mutex next_mutex;
      auto worker = [&] {
        for (;;) {
          std::size_t s;
          {
            std::lock_guard lock(next_mutex);
            if (next >= cfg.sessions) return;
            s = next++;
          }
          runs[s] = run_session(corpus, groups, m, sc, cfg, derive_seed(cfg.rng_seed, s));
        }
      };
      if (threads == 1) {
        worker();
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
      }
      out.push_back(aggregate(m, sc, runs, cfg.steps));
      if (progress) {
        std::lock_guard lock(log_mutex);
        *progress << to_string(m) << ' ' << to_string(sc) << ": final F1 " << out.back().final_f1()
                  << " (" << out.back().failures << " failed)\n";
      }
    }
  }
  return out;
}

inline void write_csv(std::ostream& os, const std::vector<CellResult>& cells) {
  os << "model,scenario,step,mean_f1,stderr_f1,mean_step_seconds\n";
  for (const auto& c : cells) {
    for (std::size_t t = 0; t < c.mean_f1.size(); ++t) {
      os << to_string(c.model) << ',' << to_string(c.scenario) << ',' << (t + 1) << ','
         << detail::format_double(c.mean_f1[t]) << ',' << detail::format_double(c.stderr_f1[t]) << ','
         << detail::format_double(c.mean_seconds[t]) << '\n';
    }
  }
}

struct CsvRow {
  std::string model;
  std::string scenario;
  std::size_t step = 0;
  double mean_f1 = 0.0;
  double stderr_f1 = 0.0;
  double mean_step_seconds = 0.0;
};

inline std::vector<CsvRow> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || detail::trim(line) != "model,scenario,step,mean_f1,stderr_f1,mean_step_seconds") {
    throw ValidationError("unexpected CSV header");
  }
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(detail::trim(cell));
    if (f.size() != 6) throw ValidationError("line " + std::to_string(lineno) + ": expected 6 fields");
    CsvRow r;
    r.model = f[0];
    r.scenario = f[1];
    r.step = static_cast<std::size_t>(detail::parse_double(f[2], "step"));
    r.mean_f1 = detail::parse_double(f[3], "mean_f1");
    r.stderr_f1 = detail::parse_double(f[4], "stderr_f1");
    r.mean_step_seconds = detail::parse_double(f[5], "mean_step_seconds");
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Wide table for plotting: one row per step, one F1 column per curve
/// (named model_scenario), in order of first appearance.
inline void write_plotdata(std::ostream& os, const std::vector<CsvRow>& rows, bool runtime = false) {
  std::vector<std::string> curves;
  std::map<std::string, std::map<std::size_t, double>> series;
  std::size_t max_step = 0;
  for (const auto& r : rows) {
    const std::string key = r.model + "_" + r.scenario;
    if (!series.count(key)) curves.push_back(key);
    series[key][r.step] = runtime ? r.mean_step_seconds : r.mean_f1;
    max_step = std::max(max_step, r.step);
  }
  os << "step";
  for (const auto& c : curves) os << ',' << c;
  os << '\n';
  for (std::size_t t = 1; t <= max_step; ++t) {
    os << t;
    for (const auto& c : curves) {
      os << ',';
      auto it = series[c].find(t);
      if (it != series[c].end()) os << detail::format_double(it->second);
    }
    os << '\n';
  }
}

}  // namespace driftfb::sim
