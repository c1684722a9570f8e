#pragma once
// Synthetic stand-in for the 20-Newsgroups collection, written in the same
// directory layout (<root>/<group>/<message>) so it goes through the regular
// loader. Groups share vocabulary within their hierarchy (comp.*, rec.*, ...)
// and documents borrow words from other groups, so topics overlap.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "driftfb/corpus.hpp"
#include "driftfb/errors.hpp"

namespace driftfb::synthetic {

struct Settings {
  std::size_t per_group = 100;
  std::uint64_t seed = 20;
  // words specific to a single group
  std::size_t core_words = 10;
  double p_core = 0.55;
  // words shared by a hierarchy (comp, rec, sci, ...)
  std::size_t family_words = 24;
  double p_family = 0.35;
  // uninformative words that survive the df thresholds
  std::size_t noise_words = 401;
  double p_noise = 0.09;
  // very common and very rare words (removed by the thresholds)
  std::size_t common_words = 40;
  double p_common = 0.55;
  std::size_t rare_words = 4000;
  std::size_t rare_per_doc = 25;
  // probability that a document mentions another group's topic
  double p_crosstalk = 0.45;
  double p_cross_core = 0.35;
};

struct GroupInfo {
  const char* name;
  int family;
};

inline const std::vector<GroupInfo>& groups() {
  static const std::vector<GroupInfo> g = {
      {"alt.atheism", 4},
      {"comp.graphics", 0},
      {"comp.os.ms-windows.misc", 0},
      {"comp.sys.ibm.pc.hardware", 0},
      {"comp.sys.mac.hardware", 0},
      {"comp.windows.x", 0},
      {"misc.forsale", 5},
      {"rec.autos", 1},
      {"rec.motorcycles", 1},
      {"rec.sport.baseball", 1},
      {"rec.sport.hockey", 1},
      {"sci.crypt", 2},
      {"sci.electronics", 2},
      {"sci.med", 2},
      {"sci.space", 2},
      {"soc.religion.christian", 4},
      {"talk.politics.guns", 3},
      {"talk.politics.mideast", 3},
      {"talk.politics.misc", 3},
      {"talk.religion.misc", 4},
  };
  return g;
}

constexpr int kFamilies = 6;

/// Deterministic word for an index; the numeric suffix keeps words unique.
inline std::string word(std::size_t index) {
  static const char* syll[] = {"ba", "ke", "lo", "mi", "nu", "ra", "si", "to", "ve", "za",
                               "dor", "fen", "gal", "hin", "jur", "kel", "mar", "nol",
                               "pri", "quo", "sar", "tem", "vil", "wex"};
  constexpr std::size_t k = sizeof(syll) / sizeof(syll[0]);
  std::string out;
  std::size_t v = index;
  do {
    out += syll[v % k];
    v /= k;
  } while (v > 0);
  out += syll[(index * 7 + 3) % k];
  return out + std::to_string(index);
}

/// Writes `groups().size()` directories of `per_group` messages under `root`.
inline void write_newsgroups(const std::filesystem::path& root, const Settings& s = {}) {
  namespace fs = std::filesystem;
  const auto& gs = groups();
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::poisson_distribution<int> extra(1.0);

  std::size_t next = 0;
  auto take = [&](std::size_t n) {
    std::vector<std::string> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back(word(next++));
    return w;
  };
  std::vector<std::vector<std::string>> core(gs.size()), family(kFamilies);
  for (auto& c : core) c = take(s.core_words);
  for (auto& f : family) f = take(s.family_words);
  const auto noise = take(s.noise_words);
  const auto common = take(s.common_words);
  const auto rare = take(s.rare_words);

  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string());

  std::uniform_int_distribution<std::size_t> pick_group(0, gs.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_rare(0, rare.size() - 1);
  std::size_t message_id = 10000;
  for (std::size_t g = 0; g < gs.size(); ++g) {
    const fs::path dir = root / gs[g].name;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    for (std::size_t m = 0; m < s.per_group; ++m) {
      std::vector<std::string> toks;
      auto emit = [&](const std::string& w) {
        const int copies = 1 + extra(rng);
        for (int c = 0; c < copies; ++c) toks.push_back(w);
      };
      for (const auto& w : core[g]) {
        if (u(rng) < s.p_core) emit(w);
      }
      for (const auto& w : family[static_cast<std::size_t>(gs[g].family)]) {
        if (u(rng) < s.p_family) emit(w);
      }
      if (u(rng) < s.p_crosstalk) {
        std::size_t other = pick_group(rng);
        if (other == g) other = (other + 1) % gs.size();
        for (const auto& w : core[other]) {
          if (u(rng) < s.p_cross_core) emit(w);
        }
        for (const auto& w : family[static_cast<std::size_t>(gs[other].family)]) {
          if (u(rng) < s.p_family * 0.5) emit(w);
        }
      }
      for (const auto& w : noise) {
        if (u(rng) < s.p_noise) emit(w);
      }
      for (const auto& w : common) {
        if (u(rng) < s.p_common) emit(w);
      }
      for (std::size_t r = 0; r < s.rare_per_doc; ++r) toks.push_back(rare[pick_rare(rng)]);
      std::shuffle(toks.begin(), toks.end(), rng);

      std::ofstream out(dir / std::to_string(message_id));
      if (!out) throw IoError("cannot write message in " + dir.string());
      out << "Subject: message " << message_id << "\n\n";
      for (std::size_t i = 0; i < toks.size(); ++i) {
        out << toks[i] << ((i + 1) % 12 == 0 ? '\n' : ' ');
      }
      out << '\n';
      ++message_id;
    }
  }
}

}  // namespace driftfb::synthetic
