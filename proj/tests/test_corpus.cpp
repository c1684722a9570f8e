#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>

#include "driftfb/corpus.hpp"
#include "driftfb/synthetic.hpp"
#include "temp_dir.hpp"

using namespace driftfb;

namespace {

// 2000 documents; term "t<k>" appears in exactly counts[k] of them.
std::vector<Tokens> docs_with_counts(const std::vector<std::size_t>& counts) {
  std::vector<Tokens> docs(2000, Tokens{"filler"});
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (std::size_t d = 0; d < counts[k]; ++d) docs[(d * 7 + k) % 2000].push_back("t" + std::to_string(k));
  }
  return docs;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

}  // namespace

TEST(Tokenize, LowercasesSplitsAndDropsShortTokens) {
  EXPECT_EQ(tokenize("Hello, WORLD! a b2 x-ray 42"),
            (Tokens{"hello", "world", "b2", "ray", "42"}));
  EXPECT_TRUE(tokenize("").empty());
}

TEST(BuildVocabulary, DocumentFrequencyThresholds) {
  const auto docs = docs_with_counts({500, 79, 80, 400, 401, 200});
  const auto v = build_vocabulary(docs, 0.2, 0.04);
  EXPECT_FALSE(v.find("t0"));  // df 0.25
  EXPECT_FALSE(v.find("t1"));  // df 0.0395
  EXPECT_TRUE(v.find("t2"));   // df 0.04
  EXPECT_TRUE(v.find("t3"));   // df 0.2
  EXPECT_FALSE(v.find("t4"));  // df 0.2005
  EXPECT_TRUE(v.find("t5"));
  EXPECT_FALSE(v.find("filler"));
  for (double df : v.document_frequency) {
    EXPECT_GE(df, 0.04);
    EXPECT_LE(df, 0.2);
  }
  EXPECT_TRUE(std::is_sorted(v.terms.begin(), v.terms.end()));
  EXPECT_NEAR(v.idf[*v.find("t5")], std::log(2000.0 / 200.0), 1e-15);
}

TEST(BuildVocabulary, UbiquitousTermHasZeroIdf) {
  const std::vector<Tokens> docs = {{"aa", "bb"}, {"aa"}, {"aa", "cc"}};
  const auto v = build_vocabulary(docs, 1.0, 0.0);
  ASSERT_TRUE(v.find("aa"));
  EXPECT_EQ(v.idf[*v.find("aa")], 0.0);
  EXPECT_EQ(v.terms, (std::vector<std::string>{"aa", "bb", "cc"}));
}

TEST(BuildVocabulary, Errors) {
  EXPECT_THROW(build_vocabulary({}, 0.2, 0.04), EmptyCorpusError);
  EXPECT_THROW(build_vocabulary({{"aa"}, {"aa"}}, 0.2, 0.04), EmptyVocabularyError);
  EXPECT_THROW(build_vocabulary({{"aa"}}, 0.1, 0.2), ValidationError);
}

TEST(BuildVocabulary, IdempotentAndPermutationInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> w(0, 60), len(1, 30);
  std::vector<Tokens> docs(300);
  for (auto& d : docs) {
    const int n = len(rng);
    for (int i = 0; i < n; ++i) d.push_back("w" + std::to_string(w(rng)));
  }
  const auto a = build_vocabulary(docs, 0.5, 0.05);
  const auto b = build_vocabulary(docs, 0.5, 0.05);
  std::shuffle(docs.begin(), docs.end(), rng);
  const auto c = build_vocabulary(docs, 0.5, 0.05);
  EXPECT_EQ(a.terms, b.terms);
  EXPECT_EQ(a.terms, c.terms);
  EXPECT_EQ(a.idf, c.idf);
  EXPECT_EQ(a.document_frequency, c.document_frequency);
}

TEST(Vectorize, Examples) {
  Vocabulary v;
  v.terms = {"alpha", "beta", "gamma"};
  v.document_frequency = {0.1, 0.1, 0.1};
  v.idf = {1.0, 2.0, 0.5};
  v.rebuild_index();

  const auto none = vectorize({"zzz", "yyy"}, v);
  EXPECT_TRUE(none.empty);
  EXPECT_TRUE(none.features.is_zero());

  const auto single = vectorize({"gamma"}, v);
  EXPECT_FALSE(single.empty);
  EXPECT_EQ(single.features.values(), (Vector(3) << 0.0, 0.0, 1.0).finished());

  // tf (2, 1) x idf (1, 2) = (2, 2) -> (2, 2) / sqrt(8)
  const auto two = vectorize({"alpha", "beta", "alpha", "unknown"}, v);
  EXPECT_NEAR(two.features[0], 0.70710678118654752, 1e-15);
  EXPECT_NEAR(two.features[1], 0.70710678118654752, 1e-15);
  EXPECT_EQ(two.features[2], 0.0);

  EXPECT_THROW(vectorize({"alpha"}, Vocabulary{}), EmptyVocabularyError);
}

TEST(Vectorize, UnitNormForNonEmptyDocuments) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> w(0, 40), len(0, 25);
  std::vector<Tokens> docs(200);
  for (auto& d : docs) {
    const int n = len(rng);
    for (int i = 0; i < n; ++i) d.push_back("w" + std::to_string(w(rng)));
  }
  const auto vocab = build_vocabulary(docs, 0.6, 0.02);
  for (const auto& d : docs) {
    const auto v = vectorize(d, vocab);
    if (!v.empty) EXPECT_NEAR(v.features.norm(), 1.0, 1e-9);
  }
}

TEST(LoadNewsgroups, FixtureLayout) {
  TempDir tmp;
  for (const char* g : {"sci.space", "rec.autos"}) {
    for (int m = 0; m < 3; ++m) {
      write_file(tmp.path() / g / std::to_string(100 + m), std::string(g) + " message " + std::to_string(m));
    }
  }
  const auto docs = load_newsgroups(tmp.path(), 3, 2);
  ASSERT_EQ(docs.size(), 6u);
  EXPECT_EQ(*docs[0].label, "rec.autos");
  EXPECT_EQ(docs[0].doc_id, "rec.autos/100");
  EXPECT_EQ(*docs[5].label, "sci.space");
  EXPECT_EQ(docs[5].doc_id, "sci.space/102");

  EXPECT_TRUE(load_newsgroups(tmp.path(), 0, 2).empty());
  EXPECT_EQ(load_newsgroups(tmp.path(), 2, 1).size(), 2u);
  EXPECT_THROW(load_newsgroups(tmp.path(), 4, 2), InsufficientDataError);
  EXPECT_THROW(load_newsgroups(tmp.path(), 1, 3), InsufficientDataError);
  EXPECT_THROW(load_newsgroups(tmp.path() / "missing", 1, 1), IoError);
}

TEST(CorpusCache, ReusesSnapshotAndTracksSettings) {
  TempDir tmp;
  std::vector<RawDocument> raw;
  for (int i = 0; i < 40; ++i) {
    raw.push_back({"d" + std::to_string(100 + i), std::string(i % 2 ? "odd" : "even"),
                   "shared word" + std::to_string(i % 5) + " tag" + std::to_string(i % 3)});
  }
  const CorpusSettings settings{0.6, 0.05};
  const auto cache = tmp.path() / "corpus.json";
  const Corpus built = build_corpus_cached(raw, settings, cache);
  ASSERT_TRUE(std::filesystem::exists(cache));
  const Corpus loaded = build_corpus_cached(raw, settings, cache);
  EXPECT_EQ(built.vocabulary().terms, loaded.vocabulary().terms);
  EXPECT_EQ(built.weights(), loaded.weights());
  EXPECT_EQ(built.documents()[3].label, loaded.documents()[3].label);

  EXPECT_NE(corpus_cache_key(raw, settings), corpus_cache_key(raw, CorpusSettings{0.7, 0.05}));
  auto changed = raw;
  changed[0].text += " extra";
  EXPECT_NE(corpus_cache_key(raw, settings), corpus_cache_key(changed, settings));
}

TEST(SyntheticNewsgroups, DefaultConfigurationShape) {
  TempDir tmp;
  synthetic::write_newsgroups(tmp.path());
  const auto raw = load_newsgroups(tmp.path(), 100, 20);
  ASSERT_EQ(raw.size(), 2000u);
  const Corpus c = build_corpus(raw, CorpusSettings{});
  EXPECT_EQ(c.excluded_empty(), 0u);
  EXPECT_EQ(c.size(), 2000u);
  for (double df : c.vocabulary().document_frequency) {
    EXPECT_GE(df, 0.04);
    EXPECT_LE(df, 0.2);
  }
  // Snapshot of the generated collection's dimension (default generator seed).
  RecordProperty("vocabulary_size", static_cast<int>(c.dim()));
  EXPECT_EQ(c.dim(), 533);

  // regenerating gives the same corpus
  TempDir again;
  synthetic::write_newsgroups(again.path());
  const Corpus c2 = build_corpus(load_newsgroups(again.path(), 100, 20), CorpusSettings{});
  EXPECT_EQ(c.vocabulary().terms, c2.vocabulary().terms);
  EXPECT_EQ(c.weights(), c2.weights());
}
