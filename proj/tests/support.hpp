#pragma once

// Shared test helpers: seeded generators, scalar reference implementations and scratch directories.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "stepviz/stepviz.hpp"

namespace stepviz::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform() < p; }
  std::uint64_t bits() { return rng_(); }

  std::string word() {
    static const char* words[] = {"cake",  "bowl",  "flour", "spoon",  "pot",   "soil",  "seed",  "ribbon",
                                  "plate", "knife", "sugar", "butter", "vase",  "tulip", "paint", "brush",
                                  "tray",  "glass", "lemon", "water",  "box",   "paper", "egg",   "pan"};
    return words[integer(0, 23)];
  }

  std::string sentence(int min_words, int max_words) {
    const int n = integer(min_words, max_words);
    std::string s;
    for (int k = 0; k < n; ++k) {
      if (k) s += ' ';
      s += word();
    }
    if (coin(0.7)) s += '.';
    return s;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline Matrix random_matrix(Gen& g, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<float>(g.uniform(-scale, scale));
  return m;
}

inline FeatureBlock random_block(Gen& g, std::size_t n, std::size_t p, std::size_t dk, std::size_t dv,
                                 double scale = 1.5) {
  FeatureBlock b;
  const auto P = static_cast<Eigen::Index>(p);
  for (std::size_t j = 0; j < n; ++j) {
    b.queries.push_back(random_matrix(g, P, static_cast<Eigen::Index>(dk), scale));
    b.keys.push_back(random_matrix(g, P, static_cast<Eigen::Index>(dk), scale));
    b.values.push_back(random_matrix(g, P, static_cast<Eigen::Index>(dv), scale));
  }
  return b;
}

// Off-diagonal entries in [0,1], some exactly zero when zero_prob > 0.
inline SimilarityMatrix random_similarity(Gen& g, std::size_t n, double zero_prob = 0.0, double lo = 0.0) {
  SimilarityMatrix w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      w.at(i, j) = g.coin(zero_prob) ? 0.0 : g.uniform(lo, 1.0);
    }
  }
  return w;
}

inline std::vector<std::vector<std::uint8_t>> random_masks(Gen& g, std::size_t n, std::size_t p, double on = 0.6) {
  std::vector<std::vector<std::uint8_t>> m(n, std::vector<std::uint8_t>(p));
  for (auto& v : m) {
    for (auto& b : v) b = g.coin(on) ? 1 : 0;
  }
  return m;
}

struct OracleResult {
  std::vector<std::vector<double>> weights;  // P × N·P
  std::vector<std::vector<double>> output;   // P × d_v
};

// Brute-force loops in double: weight 0 for columns where S or M is 0, softmax over the rest.
inline OracleResult oracle_shared_attention(const FeatureBlock& b, const SimilarityMatrix& w,
                                            const std::vector<std::vector<std::uint8_t>>& masks, std::size_t i) {
  const std::size_t n = b.images();
  const std::size_t p = b.positions();
  const std::size_t dk = b.key_dim();
  const std::size_t dv = b.value_dim();
  OracleResult r;
  r.weights.assign(p, std::vector<double>(n * p, 0.0));
  r.output.assign(p, std::vector<double>(dv, 0.0));
  for (std::size_t row = 0; row < p; ++row) {
    std::vector<double> logit(n * p, 0.0);
    std::vector<bool> keep(n * p, false);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double s = (j == i) ? 1.0 : w.at(i, j);
      for (std::size_t c = 0; c < p; ++c) {
        const bool m = (j == i) || masks.empty() || masks[j][c] != 0;
        const std::size_t col = j * p + c;
        if (!m || s == 0.0) continue;
        double dot = 0.0;
        for (std::size_t d = 0; d < dk; ++d) {
          dot += static_cast<double>(b.queries[i](static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(d))) *
                 static_cast<double>(b.keys[j](static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d)));
        }
        logit[col] = dot / std::sqrt(static_cast<double>(dk)) + std::log(s);
        keep[col] = true;
        mx = std::max(mx, logit[col]);
      }
    }
    double z = 0.0;
    for (std::size_t col = 0; col < n * p; ++col) {
      if (keep[col]) z += std::exp(logit[col] - mx);
    }
    for (std::size_t col = 0; col < n * p; ++col) {
      if (!keep[col]) continue;
      const double a = std::exp(logit[col] - mx) / z;
      r.weights[row][col] = a;
      const std::size_t j = col / p;
      const std::size_t c = col % p;
      for (std::size_t d = 0; d < dv; ++d) {
        r.output[row][d] += a * static_cast<double>(b.values[j](static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d)));
      }
    }
  }
  return r;
}

// Plans with random text, valid references and a valid similarity matrix.
inline Plan random_plan(Gen& g, std::size_t n) {
  Plan plan;
  plan.goal = "making " + g.word();
  for (std::size_t k = 0; k < n; ++k) {
    PlanStep s;
    s.index = k;
    s.title = g.sentence(1, 3);
    s.action = g.sentence(2, 9);
    s.state = g.sentence(2, 9);
    const int objs = g.integer(1, 3);
    for (int o = 0; o < objs; ++o) {
      ObjectTag t;
      t.label = g.word();
      if (k > 0 && g.coin(0.5)) {
        t.continuity = static_cast<Continuity>(g.integer(1, 3));
        t.reference_step = static_cast<std::size_t>(g.integer(0, static_cast<int>(k) - 1));
      }
      s.objects.push_back(t);
    }
    plan.steps.push_back(std::move(s));
  }
  plan.similarity = random_similarity(g, n);
  return plan;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("stepviz_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

inline std::filesystem::path samples_dir() { return STEPVIZ_SAMPLES_DIR; }

// Mean over image pairs of the L2 distance between final latents.
inline double mean_pairwise_l2(const std::vector<Latent>& lat) {
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < lat.size(); ++a) {
    for (std::size_t b = a + 1; b < lat.size(); ++b) {
      double d = 0.0;
      for (std::size_t k = 0; k < lat[a].size(); ++k) {
        const double x = static_cast<double>(lat[a][k]) - static_cast<double>(lat[b][k]);
        d += x * x;
      }
      sum += std::sqrt(d);
      ++pairs;
    }
  }
  return sum / pairs;
}

}  // namespace stepviz::testing
