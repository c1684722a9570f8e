#pragma once
// Feedback timeline of one search session.
//
// Every mutation returns a new SessionState whose posterior has already been
// refit on the surviving feedback, so a state is never observable with a
// stale model. Feedback whose keyword has no feature vector in the current
// keyword space stays on the timeline but does not enter the fit.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "driftfb/errors.hpp"
#include "driftfb/inference.hpp"
#include "driftfb/model.hpp"
#include "driftfb/ranking.hpp"

namespace driftfb {

enum class Highlight { None, Light, Medium, Dark };

inline const char* to_string(Highlight h) {
  switch (h) {
    case Highlight::None: return "none";
    case Highlight::Light: return "light";
    case Highlight::Medium: return "medium";
    case Highlight::Dark: return "dark";
  }
  return "?";
}

struct HighlightThresholds {
  double light = 0.65;
  double medium = 0.55;
  double dark = 0.45;
};

/// Highlight intensity for an estimated feedback accuracy E[w].
inline Highlight highlight_level(double expected_weight, const HighlightThresholds& t = {}) {
  if (expected_weight < t.dark) return Highlight::Dark;
  if (expected_weight < t.medium) return Highlight::Medium;
  if (expected_weight < t.light) return Highlight::Light;
  return Highlight::None;
}

enum class FeedbackSource { UserRadar, UserTimeline, PseudoFeedback, ArchivedSession };

inline const char* to_string(FeedbackSource s) {
  switch (s) {
    case FeedbackSource::UserRadar: return "user_radar";
    case FeedbackSource::UserTimeline: return "user_timeline";
    case FeedbackSource::PseudoFeedback: return "pseudo_feedback";
    case FeedbackSource::ArchivedSession: return "archived_session";
  }
  return "?";
}

inline FeedbackSource feedback_source_from_string(const std::string& s) {
  if (s == "user_radar") return FeedbackSource::UserRadar;
  if (s == "user_timeline") return FeedbackSource::UserTimeline;
  if (s == "pseudo_feedback") return FeedbackSource::PseudoFeedback;
  if (s == "archived_session") return FeedbackSource::ArchivedSession;
  throw ValidationError("unknown feedback source: " + s);
}

struct TimelineEntry {
  std::string entry_id;
  ObservationId obs_id = 0;
  std::string term;
  double value = 0.0;
  WeightMode mode = WeightMode::Free;
  std::uint64_t created_at = 0;
  /// Sequence number of the last value change; drives the recency window.
  std::uint64_t updated_at = 0;
  FeedbackSource source = FeedbackSource::UserRadar;
  Highlight highlight = Highlight::None;

  friend bool operator==(const TimelineEntry&, const TimelineEntry&) = default;
};

struct ArchivedKeyword {
  std::string term;
  double value = 0.0;
  friend bool operator==(const ArchivedKeyword&, const ArchivedKeyword&) = default;
};

struct ArchivedList {
  std::string archive_id;  // id of the session it came from
  std::vector<ArchivedKeyword> keywords;
  friend bool operator==(const ArchivedList&, const ArchivedList&) = default;
};

/// Keyword feature vectors the model is currently fit on.
struct KeywordSpace {
  Eigen::Index dim = 0;
  std::map<std::string, FeatureVector> features;

  [[nodiscard]] const FeatureVector* find(const std::string& term) const {
    auto it = features.find(term);
    return it == features.end() ? nullptr : &it->second;
  }

  static KeywordSpace from_candidates(const std::vector<KeywordCandidate>& kws, Eigen::Index dim) {
    KeywordSpace s;
    s.dim = dim;
    for (const auto& k : kws) s.features.emplace(k.term, k.features);
    return s;
  }
};

struct SessionConfig {
  Hyperparameters hyper = Hyperparameters::interactive();
  ModelKind model = ModelKind::ARD;
  std::uint64_t seed = 0;
  /// This many most recently changed entries are fit as locked and never
  /// highlighted.
  std::size_t recency_window = 1;
  HighlightThresholds thresholds;

  friend bool operator==(const SessionConfig& a, const SessionConfig& b) {
    return a.hyper == b.hyper && a.model == b.model && a.seed == b.seed &&
           a.recency_window == b.recency_window;
  }
};

struct SessionState {
  std::string session_id;
  SessionConfig config;
  std::vector<TimelineEntry> timeline;  // ascending created_at
  std::vector<ArchivedList> archived;
  std::shared_ptr<const KeywordSpace> space = std::make_shared<KeywordSpace>();
  RankedList current_slice;
  PosteriorState posterior;
  std::uint64_t next_seq = 1;

  [[nodiscard]] const TimelineEntry* find_entry(const std::string& entry_id) const {
    for (const auto& e : timeline) {
      if (e.entry_id == entry_id) return &e;
    }
    return nullptr;
  }

  [[nodiscard]] const TimelineEntry* live_entry_for(const std::string& term) const {
    for (const auto& e : timeline) {
      if (e.term == term && e.mode != WeightMode::Deleted) return &e;
    }
    return nullptr;
  }
};

namespace detail {

// Entry ids inside the recency window: the most recently changed live entries.
inline std::vector<std::string> recent_entries(const SessionState& s) {
  std::vector<const TimelineEntry*> live;
  for (const auto& e : s.timeline) {
    if (e.mode != WeightMode::Deleted) live.push_back(&e);
  }
  std::sort(live.begin(), live.end(), [](const TimelineEntry* a, const TimelineEntry* b) {
    return a->updated_at > b->updated_at;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < live.size() && i < s.config.recency_window; ++i) {
    out.push_back(live[i]->entry_id);
  }
  return out;
}

inline bool contains(const std::vector<std::string>& v, const std::string& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace detail

/// The request the session's posterior is fit from.
inline FitRequest session_fit_request(const SessionState& s) {
  FitRequest req;
  req.hyper = s.config.hyper;
  req.model_kind = s.config.model;
  req.rng_seed = s.config.seed;
  const auto recent = detail::recent_entries(s);
  for (const auto& e : s.timeline) {
    if (e.mode == WeightMode::Deleted) continue;
    const FeatureVector* f = s.space->find(e.term);
    if (f == nullptr) continue;
    const WeightMode mode = detail::contains(recent, e.entry_id) ? WeightMode::Locked : e.mode;
    req.observations.emplace_back(e.obs_id, *f, e.value, mode, e.created_at);
  }
  return req;
}

/// Highlight level per live entry, in timeline order.
inline std::vector<std::pair<std::string, Highlight>> compute_highlights(const SessionState& s) {
  const auto recent = detail::recent_entries(s);
  std::vector<std::pair<std::string, Highlight>> out;
  for (const auto& e : s.timeline) {
    if (e.mode == WeightMode::Deleted) continue;
    Highlight h = Highlight::None;
    if (e.mode == WeightMode::Free && !detail::contains(recent, e.entry_id)) {
      if (const WeightFactor* w = s.posterior.find_weight(e.obs_id)) {
        h = highlight_level(w->mean(), s.config.thresholds);
      }
    }
    out.emplace_back(e.entry_id, h);
  }
  return out;
}

/// Refits the posterior and recomputes highlights.
inline SessionState refit(SessionState s) {
  s.posterior = fit(session_fit_request(s), s.space->dim);
  const auto levels = compute_highlights(s);
  std::size_t k = 0;
  for (auto& e : s.timeline) {
    if (e.mode == WeightMode::Deleted) {
      e.highlight = Highlight::None;
      continue;
    }
    e.highlight = levels[k++].second;
  }
  return s;
}

inline SessionState new_session(std::string session_id, SessionConfig config,
                                std::shared_ptr<const KeywordSpace> space) {
  SessionState s;
  s.session_id = std::move(session_id);
  s.config = config;
  s.space = std::move(space);
  return refit(std::move(s));
}

inline SessionState with_keyword_space(SessionState s, std::shared_ptr<const KeywordSpace> space,
                                       RankedList slice = {}) {
  s.space = std::move(space);
  s.current_slice = std::move(slice);
  return refit(std::move(s));
}

inline bool is_archived_term(const SessionState& s, const std::string& term) {
  for (const auto& list : s.archived) {
    for (const auto& k : list.keywords) {
      if (k.term == term) return true;
    }
  }
  return false;
}

/// Gives feedback `value` to `term`. A term that already has a live entry is
/// updated in place (and unlocked); otherwise a new entry is appended.
inline SessionState apply_feedback(SessionState s, const std::string& term, double value,
                                   FeedbackSource source) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ValidationError("feedback value must lie in [0, 1]");
  }
  const bool live = s.live_entry_for(term) != nullptr;
  if (!live && s.space->find(term) == nullptr && !is_archived_term(s, term)) {
    throw NotFound("unknown keyword: " + term);
  }
  const std::uint64_t seq = s.next_seq++;
  if (live) {
    for (auto& e : s.timeline) {
      if (e.term == term && e.mode != WeightMode::Deleted) {
        e.value = value;
        e.mode = WeightMode::Free;
        e.updated_at = seq;
      }
    }
  } else {
    TimelineEntry e;
    e.entry_id = "e" + std::to_string(seq);
    e.obs_id = seq;
    e.term = term;
    e.value = value;
    e.created_at = seq;
    e.updated_at = seq;
    e.source = source;
    s.timeline.push_back(std::move(e));
  }
  return refit(std::move(s));
}

inline TimelineEntry& live_entry_or_throw(SessionState& s, const std::string& entry_id) {
  for (auto& e : s.timeline) {
    if (e.entry_id == entry_id && e.mode != WeightMode::Deleted) return e;
  }
  throw NotFound("no live timeline entry " + entry_id);
}

/// Marks feedback as certainly accurate (weight fixed at 1).
inline SessionState lock_feedback(SessionState s, const std::string& entry_id) {
  TimelineEntry& e = live_entry_or_throw(s, entry_id);
  if (e.mode == WeightMode::Locked) return s;
  e.mode = WeightMode::Locked;
  return refit(std::move(s));
}

/// Removes the feedback's effect on the model; the entry stays as history.
inline SessionState delete_feedback(SessionState s, const std::string& entry_id) {
  TimelineEntry& e = live_entry_or_throw(s, entry_id);
  e.mode = WeightMode::Deleted;
  return refit(std::move(s));
}

/// Live entries, most recent first.
inline std::vector<TimelineEntry> timeline_display_order(const SessionState& s) {
  std::vector<TimelineEntry> out;
  for (const auto& e : s.timeline) {
    if (e.mode != WeightMode::Deleted) out.push_back(e);
  }
  std::sort(out.begin(), out.end(),
            [](const TimelineEntry& a, const TimelineEntry& b) { return a.created_at > b.created_at; });
  return out;
}

/// The session's distinct live terms with their latest values, or nothing
/// for a session without feedback.
inline std::optional<ArchivedList> archive_session(const SessionState& s) {
  std::vector<const TimelineEntry*> live;
  for (const auto& e : s.timeline) {
    if (e.mode != WeightMode::Deleted) live.push_back(&e);
  }
  if (live.empty()) return std::nullopt;
  std::stable_sort(live.begin(), live.end(), [](const TimelineEntry* a, const TimelineEntry* b) {
    return a->updated_at < b->updated_at;
  });
  ArchivedList out;
  out.archive_id = s.session_id;
  for (const TimelineEntry* e : live) {
    auto it = std::find_if(out.keywords.begin(), out.keywords.end(),
                           [&](const ArchivedKeyword& k) { return k.term == e->term; });
    if (it == out.keywords.end()) {
      out.keywords.push_back({e->term, e->value});
    } else {
      it->value = e->value;
    }
  }
  return out;
}

inline SessionState attach_archive(SessionState s, ArchivedList list) {
  std::erase_if(s.archived, [&](const ArchivedList& a) { return a.archive_id == list.archive_id; });
  s.archived.push_back(std::move(list));
  return s;
}

inline SessionState remove_archive(SessionState s, const std::string& archive_id) {
  const auto before = s.archived.size();
  std::erase_if(s.archived, [&](const ArchivedList& a) { return a.archive_id == archive_id; });
  if (s.archived.size() == before) throw NotFound("no archived list " + archive_id);
  return s;
}

// ---------------------------------------------------------------------------
// Highlight selection used by the simulated user

enum class HighlightPolicy { LowestWeight, UniformRandom, OracleTruth };

struct HighlightCandidate {
  std::string entry_id;
  double expected_weight = 1.0;
  bool agrees_with_truth = true;
};

/// One entry to show the user, or nothing when no candidate qualifies.
/// LowestWeight: argmin E[w] with ties broken uniformly at random.
/// UniformRandom: any candidate. OracleTruth: a random candidate whose
/// feedback disagrees with the ground truth.
template <class Rng>
std::optional<std::size_t> select_highlight(const std::vector<HighlightCandidate>& cands,
                                            HighlightPolicy policy, Rng& rng) {
  std::vector<std::size_t> pool;
  switch (policy) {
    case HighlightPolicy::LowestWeight: {
      double best = 0.0;
      for (std::size_t i = 0; i < cands.size(); ++i) {
        const double w = cands[i].expected_weight;
        if (pool.empty() || w < best) {
          pool.assign(1, i);
          best = w;
        } else if (w == best) {
          pool.push_back(i);
        }
      }
      break;
    }
    case HighlightPolicy::UniformRandom:
      for (std::size_t i = 0; i < cands.size(); ++i) pool.push_back(i);
      break;
    case HighlightPolicy::OracleTruth:
      for (std::size_t i = 0; i < cands.size(); ++i) {
        if (!cands[i].agrees_with_truth) pool.push_back(i);
      }
      break;
  }
  if (pool.empty()) return std::nullopt;
  if (pool.size() == 1) return pool.front();
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

/// Session-level wrapper: candidates are the free, fitted entries outside the
/// recency window. `truth` maps a term to its correct feedback value (only
/// needed for OracleTruth).
template <class Rng>
std::optional<std::string> select_highlight_for_simulation(
    const SessionState& s, HighlightPolicy policy, Rng& rng,
    const std::map<std::string, double>& truth = {}) {
  const auto recent = detail::recent_entries(s);
  std::vector<HighlightCandidate> cands;
  for (const auto& e : s.timeline) {
    if (e.mode != WeightMode::Free || detail::contains(recent, e.entry_id)) continue;
    const WeightFactor* w = s.posterior.find_weight(e.obs_id);
    if (w == nullptr) continue;
    bool agrees = true;
    if (auto it = truth.find(e.term); it != truth.end()) agrees = it->second == e.value;
    cands.push_back({e.entry_id, w->mean(), agrees});
  }
  auto pick = select_highlight(cands, policy, rng);
  if (!pick) return std::nullopt;
  return cands[*pick].entry_id;
}

// ---------------------------------------------------------------------------
// Snapshot (the posterior is not stored; it is recomputed on restore)

inline nlohmann::json session_to_json(const SessionState& s) {
  using nlohmann::json;
  json j;
  j["session_id"] = s.session_id;
  j["next_seq"] = s.next_seq;
  json cfg;
  cfg["hyper"] = to_config_string(s.config.hyper);
  cfg["model"] = to_string(s.config.model);
  cfg["seed"] = s.config.seed;
  cfg["recency_window"] = s.config.recency_window;
  j["config"] = cfg;
  json tl = json::array();
  for (const auto& e : s.timeline) {
    tl.push_back({{"entry_id", e.entry_id},
                  {"obs_id", e.obs_id},
                  {"term", e.term},
                  {"value", e.value},
                  {"mode", to_string(e.mode)},
                  {"created_at", e.created_at},
                  {"updated_at", e.updated_at},
                  {"source", to_string(e.source)}});
  }
  j["timeline"] = tl;
  json ar = json::array();
  for (const auto& a : s.archived) {
    json kws = json::array();
    for (const auto& k : a.keywords) kws.push_back({{"term", k.term}, {"value", k.value}});
    ar.push_back({{"archive_id", a.archive_id}, {"keywords", kws}});
  }
  j["archived"] = ar;
  j["slice"] = {{"docs", s.current_slice.docs}, {"scores", s.current_slice.scores}};
  return j;
}

/// Restores everything but the keyword space and posterior; call
/// with_keyword_space() afterwards to refit.
inline SessionState session_from_json(const nlohmann::json& j) {
  SessionState s;
  s.session_id = j.at("session_id").get<std::string>();
  s.next_seq = j.at("next_seq").get<std::uint64_t>();
  const auto& cfg = j.at("config");
  s.config.hyper = from_config_string(cfg.at("hyper").get<std::string>());
  s.config.model = cfg.at("model").get<std::string>() == "lg" ? ModelKind::LG : ModelKind::ARD;
  s.config.seed = cfg.at("seed").get<std::uint64_t>();
  s.config.recency_window = cfg.at("recency_window").get<std::size_t>();
  for (const auto& je : j.at("timeline")) {
    TimelineEntry e;
    e.entry_id = je.at("entry_id").get<std::string>();
    e.obs_id = je.at("obs_id").get<ObservationId>();
    e.term = je.at("term").get<std::string>();
    e.value = je.at("value").get<double>();
    e.mode = weight_mode_from_string(je.at("mode").get<std::string>());
    e.created_at = je.at("created_at").get<std::uint64_t>();
    e.updated_at = je.at("updated_at").get<std::uint64_t>();
    e.source = feedback_source_from_string(je.at("source").get<std::string>());
    s.timeline.push_back(std::move(e));
  }
  for (const auto& ja : j.at("archived")) {
    ArchivedList a;
    a.archive_id = ja.at("archive_id").get<std::string>();
    for (const auto& k : ja.at("keywords")) {
      a.keywords.push_back({k.at("term").get<std::string>(), k.at("value").get<double>()});
    }
    s.archived.push_back(std::move(a));
  }
  s.current_slice.docs = j.at("slice").at("docs").get<std::vector<std::size_t>>();
  s.current_slice.scores = j.at("slice").at("scores").get<std::vector<double>>();
  return s;
}

}  // namespace driftfb
