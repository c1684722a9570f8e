#pragma once
// Document ingestion and TF-IDF features.
//
// Tokens: lowercase alphanumeric runs of length >= 2. TF is the raw count,
// IDF = ln(N / df_count), and every document vector is L2-normalized. Terms
// are kept when min_df <= df <= max_df and ordered lexicographically.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "driftfb/errors.hpp"
#include "driftfb/model.hpp"

namespace driftfb {

using Tokens = std::vector<std::string>;

inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

struct Vocabulary {
  std::vector<std::string> terms;
  std::vector<double> document_frequency;  // fraction of documents
  std::vector<double> idf;
  std::unordered_map<std::string, std::size_t> index;

  [[nodiscard]] std::size_t size() const { return terms.size(); }
  [[nodiscard]] bool empty() const { return terms.empty(); }

  [[nodiscard]] std::optional<std::size_t> find(const std::string& term) const {
    auto it = index.find(term);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  void rebuild_index() {
    index.clear();
    for (std::size_t i = 0; i < terms.size(); ++i) index.emplace(terms[i], i);
  }
};

inline Vocabulary build_vocabulary(const std::vector<Tokens>& docs, double max_df, double min_df) {
  if (!(min_df >= 0.0 && min_df < max_df && max_df <= 1.0)) {
    throw ValidationError("document-frequency thresholds must satisfy 0 <= min_df < max_df <= 1");
  }
  if (docs.empty()) throw EmptyCorpusError("cannot build a vocabulary from an empty corpus");

  std::map<std::string, std::size_t> counts;  // ordered: lexicographic term order
  for (const auto& doc : docs) {
    std::unordered_set<std::string_view> seen;
    for (const auto& tok : doc) {
      if (seen.insert(tok).second) ++counts[tok];
    }
  }
  const auto n = static_cast<double>(docs.size());
  Vocabulary v;
  for (const auto& [term, c] : counts) {
    const double df = static_cast<double>(c) / n;
    if (df < min_df || df > max_df) continue;
    v.terms.push_back(term);
    v.document_frequency.push_back(df);
    v.idf.push_back(std::log(n / static_cast<double>(c)));
  }
  if (v.terms.empty()) throw EmptyVocabularyError("every term was removed by the df thresholds");
  v.rebuild_index();
  return v;
}

struct Vectorized {
  FeatureVector features;
  bool empty = false;
};

inline Vectorized vectorize(const Tokens& doc, const Vocabulary& vocab) {
  if (vocab.empty()) throw EmptyVocabularyError("vectorize needs a non-empty vocabulary");
  Vector raw = Vector::Zero(static_cast<Eigen::Index>(vocab.size()));
  for (const auto& tok : doc) {
    if (auto idx = vocab.find(tok)) raw[static_cast<Eigen::Index>(*idx)] += 1.0;
  }
  for (std::size_t i = 0; i < vocab.size(); ++i) raw[static_cast<Eigen::Index>(i)] *= vocab.idf[i];
  const double norm = raw.norm();
  if (norm == 0.0) return {FeatureVector(std::move(raw)), true};
  return {FeatureVector(raw / norm), false};
}

// ---------------------------------------------------------------------------

struct RawDocument {
  std::string doc_id;
  std::optional<std::string> label;
  std::string text;
};

struct Document {
  std::string doc_id;
  std::optional<std::string> label;
  std::string text;
  FeatureVector tfidf;
};

struct CorpusSettings {
  double max_df = 0.2;
  double min_df = 0.04;

  friend bool operator==(const CorpusSettings&, const CorpusSettings&) = default;
};

/// Vectorized document collection, rows sorted by document id. Documents
/// without any vocabulary term are dropped and counted in `excluded_empty`.
class Corpus {
 public:
  Corpus() = default;
  Corpus(Vocabulary vocab, std::vector<Document> docs, std::size_t excluded_empty = 0)
      : vocab_(std::move(vocab)), docs_(std::move(docs)), excluded_empty_(excluded_empty) {
    std::sort(docs_.begin(), docs_.end(),
              [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
    weights_.resize(static_cast<Eigen::Index>(docs_.size()),
                    static_cast<Eigen::Index>(vocab_.size()));
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      weights_.row(static_cast<Eigen::Index>(i)) = docs_[i].tfidf.values().transpose();
      by_id_.emplace(docs_[i].doc_id, i);
    }
  }

  [[nodiscard]] const Vocabulary& vocabulary() const { return vocab_; }
  [[nodiscard]] const std::vector<Document>& documents() const { return docs_; }
  [[nodiscard]] std::size_t size() const { return docs_.size(); }
  [[nodiscard]] std::size_t dim() const { return vocab_.size(); }
  [[nodiscard]] std::size_t excluded_empty() const { return excluded_empty_; }
  /// Row d holds the TF-IDF vector of document d.
  [[nodiscard]] const Matrix& weights() const { return weights_; }

  [[nodiscard]] std::optional<std::size_t> find(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

 private:
  Vocabulary vocab_;
  std::vector<Document> docs_;
  std::size_t excluded_empty_ = 0;
  Matrix weights_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

inline Corpus build_corpus(const std::vector<RawDocument>& raw, const CorpusSettings& settings) {
  if (raw.empty()) throw EmptyCorpusError("no documents");
  std::vector<Tokens> toks;
  toks.reserve(raw.size());
  for (const auto& r : raw) toks.push_back(tokenize(r.text));
  Vocabulary vocab = build_vocabulary(toks, settings.max_df, settings.min_df);
  std::vector<Document> docs;
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto v = vectorize(toks[i], vocab);
    if (v.empty) {
      ++excluded;
      continue;
    }
    docs.push_back({raw[i].doc_id, raw[i].label, raw[i].text, std::move(v.features)});
  }
  return Corpus(std::move(vocab), std::move(docs), excluded);
}

// ---------------------------------------------------------------------------
// 20-Newsgroups layout: <root>/<group>/<message-file>

inline std::vector<RawDocument> load_newsgroups(const std::filesystem::path& root,
                                                std::size_t per_group, std::size_t groups) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw IoError("dataset directory not found: " + root.string());
  }
  std::vector<fs::path> group_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) group_dirs.push_back(e.path());
  }
  std::sort(group_dirs.begin(), group_dirs.end());
  if (group_dirs.size() < groups) {
    throw InsufficientDataError("dataset has " + std::to_string(group_dirs.size()) +
                                " groups, " + std::to_string(groups) + " requested");
  }
  std::vector<RawDocument> out;
  if (per_group == 0) return out;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(group_dirs[g])) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < per_group) {
      throw InsufficientDataError("group " + group_dirs[g].filename().string() + " has only " +
                                  std::to_string(files.size()) + " messages");
    }
    const std::string label = group_dirs[g].filename().string();
    for (std::size_t i = 0; i < per_group; ++i) {
      std::ifstream in(files[i], std::ios::binary);
      if (!in) throw IoError("cannot read " + files[i].string());
      std::ostringstream ss;
      ss << in.rdbuf();
      out.push_back({label + "/" + files[i].filename().string(), label, ss.str()});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Snapshot cache

namespace detail {

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

/// Content hash of the raw documents and the preprocessing settings.
inline std::string corpus_cache_key(const std::vector<RawDocument>& raw,
                                    const CorpusSettings& settings) {
  std::uint64_t h = detail::fnv1a("driftfb-corpus-v1");
  for (const auto& r : raw) {
    h = detail::fnv1a(r.doc_id, h);
    h = detail::fnv1a(std::string(1, '\0'), h);
    h = detail::fnv1a(r.label.value_or(""), h);
    h = detail::fnv1a(std::string(1, '\0'), h);
    h = detail::fnv1a(r.text, h);
  }
  h = detail::fnv1a(detail::format_double(settings.max_df), h);
  h = detail::fnv1a(detail::format_double(settings.min_df), h);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Snapshot of a built corpus: vocabulary plus sparse TF-IDF rows.
inline nlohmann::json corpus_to_json(const Corpus& c, const std::string& key) {
  nlohmann::json j;
  j["format"] = "driftfb-corpus";
  j["version"] = 1;
  j["key"] = key;
  j["excluded_empty"] = c.excluded_empty();
  const auto& v = c.vocabulary();
  j["terms"] = v.terms;
  j["document_frequency"] = v.document_frequency;
  j["idf"] = v.idf;
  auto& docs = j["documents"] = nlohmann::json::array();
  for (const auto& d : c.documents()) {
    nlohmann::json jd;
    jd["id"] = d.doc_id;
    jd["label"] = d.label ? nlohmann::json(*d.label) : nlohmann::json(nullptr);
    jd["text"] = d.text;
    auto& idx = jd["idx"] = nlohmann::json::array();
    auto& val = jd["val"] = nlohmann::json::array();
    for (Eigen::Index t = 0; t < d.tfidf.dim(); ++t) {
      if (d.tfidf[t] != 0.0) {
        idx.push_back(t);
        val.push_back(d.tfidf[t]);
      }
    }
    docs.push_back(std::move(jd));
  }
  return j;
}

inline Corpus corpus_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "driftfb-corpus") throw IoError("not a corpus snapshot");
  Vocabulary v;
  v.terms = j.at("terms").get<std::vector<std::string>>();
  v.document_frequency = j.at("document_frequency").get<std::vector<double>>();
  v.idf = j.at("idf").get<std::vector<double>>();
  v.rebuild_index();
  std::vector<Document> docs;
  for (const auto& jd : j.at("documents")) {
    Vector x = Vector::Zero(static_cast<Eigen::Index>(v.size()));
    const auto& idx = jd.at("idx");
    const auto& val = jd.at("val");
    for (std::size_t k = 0; k < idx.size(); ++k) x[idx[k].get<Eigen::Index>()] = val[k].get<double>();
    std::optional<std::string> label;
    if (!jd.at("label").is_null()) label = jd.at("label").get<std::string>();
    docs.push_back({jd.at("id").get<std::string>(), label, jd.at("text").get<std::string>(),
                    FeatureVector(std::move(x))});
  }
  return Corpus(std::move(v), std::move(docs), j.value("excluded_empty", std::size_t{0}));
}

/// Builds the corpus, reusing `cache_file` when its key matches the inputs.
inline Corpus build_corpus_cached(const std::vector<RawDocument>& raw,
                                  const CorpusSettings& settings,
                                  const std::filesystem::path& cache_file) {
  const std::string key = corpus_cache_key(raw, settings);
  if (std::ifstream in(cache_file); in) {
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.value("key", "") == key) return corpus_from_json(j);
    } catch (const nlohmann::json::exception&) {
      // unreadable cache: rebuild below
    }
  }
  Corpus c = build_corpus(raw, settings);
  std::ofstream out(cache_file);
  if (!out) throw IoError("cannot write corpus cache " + cache_file.string());
  out << corpus_to_json(c, key).dump();
  return c;
}

}  // namespace driftfb
