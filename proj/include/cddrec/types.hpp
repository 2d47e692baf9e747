// Copyright 2026 The cddrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>

namespace cddrec {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using IdMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Named sub-streams so that, e.g., toggling prediction sampling on or off
// never shifts the draws consumed by the diffusion noise.
enum class RngPurpose : std::uint64_t {
  init = 1,
  diffusion = 2,
  prediction = 3,
  augmentation = 4,
  negatives = 5,
  shuffle = 6,
  dropout = 7,
  eval = 8,
};

// Deterministic random stream keyed by (seed, purpose, a, b). The trainer
// keys a/b with (epoch, batch_index) so a resumed run replays the exact
// draws of an uninterrupted one.
class RngStream {
 public:
  RngStream(std::uint64_t seed, RngPurpose purpose, std::uint64_t a = 0,
            std::uint64_t b = 0) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(purpose), a, b};
    gen_.seed(seq);
  }

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }

  // Inclusive range.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }

  void fill_normal(Mat& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal();
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace cddrec
