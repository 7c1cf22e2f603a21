#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "csegnet/tensor.hpp"

namespace testutil {

using Rng = std::mt19937_64;

template <typename T = float>
csegnet::BasicTensor<T> random_tensor(const csegnet::Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  csegnet::BasicTensor<T> t(shape, T(0));
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

inline std::vector<double> to_double(const csegnet::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline std::vector<std::uint8_t> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<std::uint8_t> out(n);
  for (auto& v : out) v = static_cast<std::uint8_t>(rng() % static_cast<std::uint64_t>(classes));
  return out;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("csegnet_test_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testutil
