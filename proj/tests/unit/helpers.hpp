#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "lgmm/kernel.hpp"
#include "lgmm/matrix.hpp"
#include "oracles.hpp"

namespace testing {

inline oracle::Mat to_oracle(const lgmm::Matrix& m) {
  oracle::Mat out(m.rows(), std::vector<oracle::Real>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline oracle::Mat to_oracle(const lgmm::FeatureMatrix& f) { return to_oracle(f.matrix()); }

inline lgmm::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                  double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  lgmm::Matrix m(rows, cols);
  for (double& x : m.values()) x = u(rng);
  return m;
}

inline lgmm::FeatureMatrix random_features(std::mt19937_64& rng, std::size_t rows, std::size_t dim) {
  return lgmm::FeatureMatrix(random_matrix(rng, rows, dim));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("lgmm_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
