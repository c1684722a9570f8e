#pragma once
// Keyword features, keyword relevance display and document ranking.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "driftfb/corpus.hpp"
#include "driftfb/errors.hpp"
#include "driftfb/model.hpp"

namespace driftfb {

/// Documents (corpus row indices) with non-increasing scores. Equal scores are
/// ordered by ascending document id, which is ascending row index because
/// Corpus keeps its rows sorted by id.
struct RankedList {
  std::vector<std::size_t> docs;
  std::vector<double> scores;

  [[nodiscard]] std::size_t size() const { return docs.size(); }
  [[nodiscard]] bool empty() const { return docs.empty(); }
};

/// Best `k` entries of `scores` (all of them when k >= size).
inline RankedList top_k(const Vector& scores, std::size_t k) {
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = scores[static_cast<Eigen::Index>(a)];
    const double sb = scores[static_cast<Eigen::Index>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  };
  k = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  RankedList out;
  out.docs = idx;
  for (std::size_t d : idx) out.scores.push_back(scores[static_cast<Eigen::Index>(d)]);
  return out;
}

struct KeywordCandidate {
  std::string term;
  std::size_t vocab_index = 0;
  FeatureVector features;  // one component per slice document
  double estimated_relevance = 0.0;
  double displayed_relevance = 0.0;
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Relevance shown for a keyword: the clamped estimate, averaged with the
/// user's own feedback when there is some.
inline double displayed_keyword_relevance(double estimated, std::optional<double> user_feedback) {
  const double est = clamp01(estimated);
  if (!user_feedback) return est;
  return 0.5 * (est + *user_feedback);
}

/// Feature vectors of the vocabulary terms over a slice of top documents:
/// component d is the term's TF-IDF weight in slice document d, then
/// L2-normalized. Terms absent from the slice are left out. At most
/// `pool_cap` terms are kept (largest summed weight first); terms listed in
/// `required` are kept regardless of the cap when they occur in the slice.
inline std::vector<KeywordCandidate> build_keyword_features(
    const std::vector<std::size_t>& slice, const Corpus& corpus, std::size_t pool_cap = 1000,
    const std::vector<std::string>& required = {}) {
  if (slice.empty()) throw EmptySliceError("keyword features need at least one document");
  const auto k = static_cast<Eigen::Index>(slice.size());
  const auto& vocab = corpus.vocabulary();
  const auto terms = static_cast<Eigen::Index>(vocab.size());

  Matrix sub(k, terms);  // slice docs x terms
  for (Eigen::Index d = 0; d < k; ++d) {
    sub.row(d) = corpus.weights().row(static_cast<Eigen::Index>(slice[static_cast<std::size_t>(d)]));
  }
  const Vector mass = sub.colwise().sum().transpose();

  std::vector<std::size_t> present;
  for (Eigen::Index t = 0; t < terms; ++t) {
    if (mass[t] > 0.0) present.push_back(static_cast<std::size_t>(t));
  }
  std::vector<std::size_t> keep = present;
  if (keep.size() > pool_cap) {
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
      return mass[static_cast<Eigen::Index>(a)] > mass[static_cast<Eigen::Index>(b)];
    });
    keep.resize(pool_cap);
    std::unordered_set<std::size_t> chosen(keep.begin(), keep.end());
    for (const auto& term : required) {
      auto idx = vocab.find(term);
      if (idx && mass[static_cast<Eigen::Index>(*idx)] > 0.0 && chosen.insert(*idx).second) {
        keep.push_back(*idx);
      }
    }
    std::sort(keep.begin(), keep.end());
  }

  std::vector<KeywordCandidate> out;
  out.reserve(keep.size());
  for (std::size_t t : keep) {
    const Vector col = sub.col(static_cast<Eigen::Index>(t));
    KeywordCandidate c;
    c.term = vocab.terms[t];
    c.vocab_index = t;
    c.features = FeatureVector(col / col.norm());
    out.push_back(std::move(c));
  }
  return out;
}

/// Number of keywords whose relevance drives document scores.
constexpr std::size_t kScoringKeywords = 10;

/// Indices of the `n` most relevant keywords (ties by term).
inline std::vector<std::size_t> most_relevant_keywords(const std::vector<KeywordCandidate>& kws,
                                                       std::size_t n = kScoringKeywords) {
  std::vector<std::size_t> idx(kws.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (kws[a].displayed_relevance != kws[b].displayed_relevance) {
      return kws[a].displayed_relevance > kws[b].displayed_relevance;
    }
    return kws[a].term < kws[b].term;
  });
  if (idx.size() > n) idx.resize(n);
  return idx;
}

/// Scores every document by sum over the ten most relevant keywords of
/// (displayed relevance x the document's TF-IDF weight of that keyword) and
/// returns the best `top_m`.
inline RankedList rank_documents(const std::vector<KeywordCandidate>& keywords,
                                 const Corpus& corpus, std::size_t top_m) {
  if (keywords.empty()) throw ValidationError("rank_documents needs at least one keyword");
  if (top_m < 1) throw ValidationError("top_m must be at least 1");
  Vector scores = Vector::Zero(static_cast<Eigen::Index>(corpus.size()));
  for (std::size_t i : most_relevant_keywords(keywords)) {
    const auto& kw = keywords[i];
    scores += kw.displayed_relevance * corpus.weights().col(static_cast<Eigen::Index>(kw.vocab_index));
  }
  return top_k(scores, top_m);
}

/// Documents ranked by cosine similarity to the query alone; only documents
/// sharing at least one vocabulary term with the query are returned.
inline RankedList retrieve(const Tokens& query, const Corpus& corpus, std::size_t k) {
  const auto q = vectorize(query, corpus.vocabulary());
  if (q.empty) throw NoResultsError("query has no terms in the vocabulary");
  const Vector scores = corpus.weights() * q.features.values();
  RankedList all = top_k(scores, k);
  RankedList out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all.scores[i] <= 0.0) break;
    out.docs.push_back(all.docs[i]);
    out.scores.push_back(all.scores[i]);
  }
  if (out.empty()) throw NoResultsError("no document matches the query");
  return out;
}

struct PseudoFeedback {
  std::string term;
  double value = 0.0;
};

/// Keyword counts -> feedback: keep terms at least half as common as the most
/// common one, valued count / max_count. Sorted by value, then term.
inline std::vector<PseudoFeedback> pseudo_feedback_from_counts(
    const std::vector<std::pair<std::string, std::size_t>>& counts) {
  std::size_t c_max = 0;
  for (const auto& [t, c] : counts) c_max = std::max(c_max, c);
  std::vector<PseudoFeedback> out;
  if (c_max == 0) return out;
  for (const auto& [t, c] : counts) {
    if (2 * c >= c_max) {
      out.push_back({t, static_cast<double>(c) / static_cast<double>(c_max)});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.term < b.term;
  });
  return out;
}

/// Bootstraps feedback from a text query: retrieve `retrieval_k` documents by
/// the query alone, count in how many of them each keyword occurs and turn
/// the counts into feedback values.
inline std::vector<PseudoFeedback> pseudo_feedback_from_query(const Tokens& query,
                                                              const Corpus& corpus,
                                                              std::size_t retrieval_k = 400) {
  if (query.empty()) throw ValidationError("empty query");
  const RankedList hits = retrieve(query, corpus, retrieval_k);
  const auto& vocab = corpus.vocabulary();
  std::vector<std::size_t> df(vocab.size(), 0);
  for (std::size_t d : hits.docs) {
    const auto row = corpus.weights().row(static_cast<Eigen::Index>(d));
    for (Eigen::Index t = 0; t < row.size(); ++t) {
      if (row[t] > 0.0) ++df[static_cast<std::size_t>(t)];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> counts;
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    if (df[t] > 0) counts.emplace_back(vocab.terms[t], df[t]);
  }
  return pseudo_feedback_from_counts(counts);
}

}  // namespace driftfb
