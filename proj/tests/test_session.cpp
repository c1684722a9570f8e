#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "driftfb/session.hpp"
#include "oracles/timeline_shadow.hpp"

using namespace driftfb;

namespace {

std::shared_ptr<const KeywordSpace> make_space(int terms, Eigen::Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto s = std::make_shared<KeywordSpace>();
  s->dim = dim;
  for (int t = 0; t < terms; ++t) {
    Vector v(dim);
    for (Eigen::Index j = 0; j < dim; ++j) v[j] = std::abs(n(rng));
    s->features.emplace("k" + std::to_string(t), FeatureVector(v).normalized());
  }
  return s;
}

SessionState fresh(std::size_t window = 1, ModelKind model = ModelKind::ARD) {
  SessionConfig cfg;
  cfg.seed = 11;
  cfg.recency_window = window;
  cfg.model = model;
  return new_session("s1", cfg, make_space(12, 6, 3));
}

const auto kRadar = FeedbackSource::UserRadar;

}  // namespace

TEST(Highlight, Thresholds) {
  EXPECT_EQ(highlight_level(0.66), Highlight::None);
  EXPECT_EQ(highlight_level(0.65), Highlight::None);
  EXPECT_EQ(highlight_level(0.60), Highlight::Light);
  EXPECT_EQ(highlight_level(0.55), Highlight::Light);
  EXPECT_EQ(highlight_level(0.50), Highlight::Medium);
  EXPECT_EQ(highlight_level(0.45), Highlight::Medium);
  EXPECT_EQ(highlight_level(0.40), Highlight::Dark);
  EXPECT_EQ(highlight_level(1.0), Highlight::None);
}

TEST(Highlight, MonotoneInWeight) {
  for (int i = 0; i < 1000; ++i) {
    const double a = i / 1000.0, b = (i + 1) / 1000.0;
    EXPECT_GE(static_cast<int>(highlight_level(a)), static_cast<int>(highlight_level(b)));
  }
}

TEST(Session, ApplyFeedbackAppendsAndUpdatesInPlace) {
  auto s = fresh();
  s = apply_feedback(s, "k1", 0.2, kRadar);
  s = apply_feedback(s, "k2", 0.9, kRadar);
  ASSERT_EQ(s.timeline.size(), 2u);
  EXPECT_EQ(timeline_display_order(s).front().term, "k2");

  s = apply_feedback(s, "k1", 0.8, kRadar);
  ASSERT_EQ(s.timeline.size(), 2u);
  EXPECT_EQ(s.timeline[0].term, "k1");
  EXPECT_EQ(s.timeline[0].value, 0.8);

  EXPECT_THROW(apply_feedback(s, "k1", 1.2, kRadar), ValidationError);
  EXPECT_THROW(apply_feedback(s, "k1", -0.1, kRadar), ValidationError);
  EXPECT_THROW(apply_feedback(s, "k1", std::nan(""), kRadar), ValidationError);
  EXPECT_THROW(apply_feedback(s, "nope", 0.5, kRadar), NotFound);
}

TEST(Session, LockSemantics) {
  auto s = fresh();
  s = apply_feedback(s, "k1", 0.9, kRadar);
  s = apply_feedback(s, "k2", 0.1, kRadar);
  s = apply_feedback(s, "k3", 0.4, kRadar);
  const std::string id = s.timeline[0].entry_id;
  s = lock_feedback(s, id);
  EXPECT_EQ(s.timeline[0].mode, WeightMode::Locked);
  EXPECT_EQ(expected_weight(s.posterior, s.timeline[0].obs_id), 1.0);
  EXPECT_EQ(s.timeline[0].highlight, Highlight::None);

  const auto again = lock_feedback(s, id);
  EXPECT_EQ(again.timeline, s.timeline);
  EXPECT_EQ(again.posterior.phi_mean, s.posterior.phi_mean);
  EXPECT_EQ(again.posterior.elbo, s.posterior.elbo);

  s = apply_feedback(s, "k1", 0.3, kRadar);
  EXPECT_EQ(s.timeline[0].mode, WeightMode::Free);

  EXPECT_THROW(lock_feedback(s, "e999"), NotFound);
}

TEST(Session, DeleteSemantics) {
  auto s = fresh();
  s = apply_feedback(s, "k4", 0.7, kRadar);
  s = delete_feedback(s, s.timeline[0].entry_id);
  const auto prior = fit(FitRequest{{}, s.config.hyper, ModelKind::ARD, 0}, 6);
  EXPECT_EQ(s.posterior.phi_mean, prior.phi_mean);
  EXPECT_TRUE(s.posterior.phi_cov.matrix().isApprox(prior.phi_cov.matrix(), 0.0));
  EXPECT_EQ(s.posterior.sigma2_shape, prior.sigma2_shape);
  EXPECT_EQ(s.posterior.sigma2_scale, prior.sigma2_scale);
  EXPECT_TRUE(timeline_display_order(s).empty());
  ASSERT_EQ(s.timeline.size(), 1u);  // kept as history

  EXPECT_THROW(delete_feedback(s, s.timeline[0].entry_id), NotFound);
  EXPECT_THROW(delete_feedback(s, "e42"), NotFound);

  // deleted term can receive feedback again as a new entry
  s = apply_feedback(s, "k4", 0.2, kRadar);
  EXPECT_EQ(s.timeline.size(), 2u);
}

TEST(Session, RecentEntriesAreLockedAndNeverHighlighted) {
  auto s = fresh(2);
  for (int i = 0; i < 6; ++i) s = apply_feedback(s, "k" + std::to_string(i), i % 2 ? 1.0 : 0.0, kRadar);
  const auto req = session_fit_request(s);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(req.observations[i].weight_mode, i >= 4 ? WeightMode::Locked : WeightMode::Free);
  }
  for (std::size_t i = 4; i < 6; ++i) EXPECT_EQ(s.timeline[i].highlight, Highlight::None);
  // adjusting an old entry makes it the most recent one
  s = apply_feedback(s, "k0", 0.5, kRadar);
  const auto req2 = session_fit_request(s);
  EXPECT_EQ(req2.observations[0].weight_mode, WeightMode::Locked);
  EXPECT_EQ(req2.observations[4].weight_mode, WeightMode::Free);
  EXPECT_EQ(req2.observations[5].weight_mode, WeightMode::Locked);
}

TEST(Session, HighlightsFollowExpectedWeights) {
  auto s = fresh();
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 12; ++i) s = apply_feedback(s, "k" + std::to_string(i), coin(rng) ? 1.0 : 0.0, kRadar);
  const auto recent = s.timeline.back().entry_id;
  for (const auto& e : s.timeline) {
    if (e.entry_id == recent || e.mode != WeightMode::Free) {
      EXPECT_EQ(e.highlight, Highlight::None);
      continue;
    }
    EXPECT_EQ(e.highlight, highlight_level(expected_weight(s.posterior, e.obs_id)));
  }
}

TEST(Session, DisplayOrderIsReverseChronological) {
  auto s = fresh();
  for (int i : {3, 1, 7, 5}) s = apply_feedback(s, "k" + std::to_string(i), 0.5, kRadar);
  s = apply_feedback(s, "k1", 0.9, kRadar);
  const auto order = timeline_display_order(s);
  std::vector<std::string> terms;
  for (const auto& e : order) terms.push_back(e.term);
  EXPECT_EQ(terms, (std::vector<std::string>{"k5", "k7", "k1", "k3"}));
}

TEST(SelectHighlight, Examples) {
  std::mt19937_64 rng(1);
  std::vector<HighlightCandidate> c = {{"a", 0.9, true}, {"b", 0.3, true}, {"c", 0.7, true}};
  EXPECT_EQ(select_highlight(c, HighlightPolicy::LowestWeight, rng), std::optional<std::size_t>(1));
  EXPECT_EQ(select_highlight(c, HighlightPolicy::OracleTruth, rng), std::nullopt);
  c[2].agrees_with_truth = false;
  EXPECT_EQ(select_highlight(c, HighlightPolicy::OracleTruth, rng), std::optional<std::size_t>(2));
  EXPECT_EQ(select_highlight(std::vector<HighlightCandidate>{}, HighlightPolicy::UniformRandom, rng),
            std::nullopt);
}

TEST(SelectHighlight, TiesAndUniformPolicyAreUniform) {
  constexpr int n = 4, trials = 100000;
  const double p = 1.0 / n, sd = std::sqrt(trials * p * (1 - p));
  std::vector<HighlightCandidate> tied(n, {"x", 0.5, true});
  for (auto policy : {HighlightPolicy::LowestWeight, HighlightPolicy::UniformRandom}) {
    std::mt19937_64 rng(99);
    std::vector<int> hits(n, 0);
    for (int t = 0; t < trials; ++t) ++hits[*select_highlight(tied, policy, rng)];
    for (int h : hits) EXPECT_NEAR(h, trials * p, 3 * sd);
  }
}

TEST(SelectHighlight, SessionWrapperSkipsLockedDeletedAndRecent) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = fresh();
    std::mt19937_64 ops(static_cast<std::uint64_t>(trial));
    for (int i = 0; i < 8; ++i) s = apply_feedback(s, "k" + std::to_string(i), (ops() % 2) ? 1.0 : 0.0, kRadar);
    s = lock_feedback(s, s.timeline[ops() % 8].entry_id);
    const auto del = s.timeline[ops() % 8].entry_id;
    if (s.find_entry(del)->mode != WeightMode::Deleted) s = delete_feedback(s, del);
    const auto recent = detail::recent_entries(s);
    for (int k = 0; k < 20; ++k) {
      const auto pick = select_highlight_for_simulation(s, HighlightPolicy::LowestWeight, rng);
      ASSERT_TRUE(pick.has_value());
      const auto* e = s.find_entry(*pick);
      EXPECT_EQ(e->mode, WeightMode::Free);
      EXPECT_FALSE(detail::contains(recent, *pick));
    }
  }
}

TEST(Archive, Semantics) {
  auto s = fresh();
  EXPECT_FALSE(archive_session(s).has_value());
  s = apply_feedback(s, "k1", 0.3, kRadar);
  s = apply_feedback(s, "k2", 0.6, kRadar);
  s = apply_feedback(s, "k1", 0.9, kRadar);
  const auto a = archive_session(s);
  ASSERT_TRUE(a.has_value());
  ASSERT_EQ(a->keywords.size(), 2u);
  EXPECT_EQ(a->archive_id, "s1");
  double k1 = -1;
  for (const auto& k : a->keywords) {
    if (k.term == "k1") k1 = k.value;
  }
  EXPECT_EQ(k1, 0.9);

  SessionConfig cfg;
  auto next = new_session("s2", cfg, std::make_shared<KeywordSpace>(KeywordSpace{6, {}}));
  next = attach_archive(next, *a);
  EXPECT_TRUE(is_archived_term(next, "k2"));
  next = apply_feedback(next, "k2", 0.5, FeedbackSource::ArchivedSession);
  EXPECT_EQ(next.timeline.back().source, FeedbackSource::ArchivedSession);
  next = remove_archive(next, "s1");
  EXPECT_TRUE(next.archived.empty());
  EXPECT_THROW(remove_archive(next, "s1"), NotFound);
  EXPECT_THROW(apply_feedback(next, "k1", 0.5, kRadar), NotFound);
}

TEST(Snapshot, RoundTrip) {
  auto s = fresh();
  for (int i = 0; i < 5; ++i) s = apply_feedback(s, "k" + std::to_string(i), i / 4.0, kRadar);
  s = lock_feedback(s, s.timeline[1].entry_id);
  s = delete_feedback(s, s.timeline[2].entry_id);
  s = attach_archive(s, ArchivedList{"old", {{"k9", 0.25}}});
  const auto text = session_to_json(s).dump();
  auto back = with_keyword_space(session_from_json(nlohmann::json::parse(text)), s.space);
  EXPECT_EQ(back.timeline, s.timeline);
  EXPECT_EQ(back.archived, s.archived);
  EXPECT_EQ(back.config, s.config);
  EXPECT_EQ(back.next_seq, s.next_seq);
  EXPECT_EQ(back.posterior.phi_mean, s.posterior.phi_mean);
}

TEST(Session, ReplayEquivalence) {
  const auto space = make_space(12, 6, 3);
  for (std::uint64_t trial = 0; trial < 60; ++trial) {
    EXPECT_LE(oracle::replay_trial(trial, 25, space, 12), 1e-10) << "trial " << trial;
  }
}
