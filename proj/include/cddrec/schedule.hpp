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

#include <string>
#include <vector>

#include "cddrec/types.hpp"

namespace cddrec {

enum class ScheduleShape { linear };

// Variance used when sampling a prediction at step t.
//   paper:    (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
//   standard: beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
enum class PosteriorVarianceMode { paper, standard };

struct ScheduleOptions {
  PosteriorVarianceMode posterior_variance_mode = PosteriorVarianceMode::paper;
  double posterior_variance_floor = 0.0;
};

// Immutable noise-schedule tables for steps t = 1..T, with the convention
// alpha_bar_0 = 1 so step 0 is the uncorrupted state.
class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;

  int max_step() const { return max_step_; }
  double beta_max() const { return beta_max_; }
  ScheduleShape shape() const { return shape_; }
  const ScheduleOptions& options() const { return options_; }

  // Valid for 1 <= t <= T.
  double beta(int t) const;
  double alpha(int t) const;
  // Valid for 0 <= t <= T; alpha_bar(0) == 1.
  double alpha_bar(int t) const;
  // Valid for 1 <= t <= T; equals 0 at t = 1 unless a floor is set.
  double posterior_variance(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  friend DiffusionSchedule build_schedule(int, double, ScheduleShape,
                                          const ScheduleOptions&);
  int max_step_ = 0;
  double beta_max_ = 0.0;
  ScheduleShape shape_ = ScheduleShape::linear;
  ScheduleOptions options_;
  std::vector<double> betas_;        // betas_[t] for t in 1..T; index 0 unused
  std::vector<double> alphas_;       // 1 - beta_t
  std::vector<double> alpha_bars_;   // alpha_bars_[0] == 1
  std::vector<double> posterior_;    // posterior_[t] for t in 1..T
};

// Linear shape: beta_t = beta_max * t / T, so beta_T == beta_max.
DiffusionSchedule build_schedule(int max_step, double beta_max,
                                 ScheduleShape shape = ScheduleShape::linear,
                                 const ScheduleOptions& options = {});

// Closed-form corruption: sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
// t = 0 returns x0 unchanged.
Vec marginal_sample(const DiffusionSchedule& schedule, const Vec& x0, int t,
                    const Vec& eps);

// Matrix form, applied row-wise with matching eps.
Mat marginal_sample(const DiffusionSchedule& schedule, const Mat& x0, int t,
                    const Mat& eps);

std::string to_string(ScheduleShape shape);
ScheduleShape schedule_shape_from_string(const std::string& s);
std::string to_string(PosteriorVarianceMode mode);
PosteriorVarianceMode posterior_mode_from_string(const std::string& s);

}  // namespace cddrec
