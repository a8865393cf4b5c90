#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "cnnqa/random.hpp"
#include "cnnqa/tensor.hpp"
#include "cnnqa/trainer.hpp"

namespace support {

inline cnnqa::Tensor random_tensor(std::vector<std::size_t> shape, cnnqa::Rng& rng,
                                   double lo = -1.0, double hi = 1.0) {
  cnnqa::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_relative_error(std::span<const double> analytic,
                                 std::span<const double> numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, cnnqa::relative_error(analytic[i], numeric[i]));
  return worst;
}

/// Numeric gradient of f with respect to the entries of `t`, restoring `t`.
inline std::vector<double> numeric_gradient(cnnqa::Tensor& t, const std::function<double()>& f,
                                            double h = 1e-5) {
  std::vector<double> x(t.values().begin(), t.values().end());
  auto g = cnnqa::finite_difference_gradient(
      [&](std::span<const double> v) {
        std::copy(v.begin(), v.end(), t.values().begin());
        return f();
      },
      x, h);
  std::copy(x.begin(), x.end(), t.values().begin());
  return g;
}

/// sum(out * weights): a scalar probe whose gradient w.r.t. out is `weights`.
inline double weighted_sum(const cnnqa::Tensor& out, const cnnqa::Tensor& weights) {
  return cnnqa::dot(out.values(), weights.values());
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cnnqa_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace support
