#pragma once

#include <cstddef>
#include <vector>

#include "stepviz/error.hpp"

namespace stepviz {

// N×N step-to-step state similarity. Row i scales how much image i borrows from every other image.
// Not required to be symmetric.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(std::size_t n, double fill = 0.0) : n_(n), values_(n * n, fill) {
    for (std::size_t i = 0; i < n; ++i) at(i, i) = 1.0;
  }

  static SimilarityMatrix identity(std::size_t n) { return SimilarityMatrix(n, 0.0); }
  static SimilarityMatrix ones(std::size_t n) { return SimilarityMatrix(n, 1.0); }

  static SimilarityMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    SimilarityMatrix m;
    m.n_ = rows.size();
    m.values_.reserve(m.n_ * m.n_);
    for (const auto& r : rows) {
      if (r.size() != m.n_) throw ShapeMismatch("similarity matrix is not square");
      m.values_.insert(m.values_.end(), r.begin(), r.end());
    }
    return m;
  }

  std::size_t size() const { return n_; }
  double& at(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }
  double at(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }

  std::vector<std::vector<double>> rows() const {
    std::vector<std::vector<double>> out(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      out[i].assign(values_.begin() + static_cast<std::ptrdiff_t>(i * n_),
                    values_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_));
    }
    return out;
  }

  bool operator==(const SimilarityMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

}  // namespace stepviz
