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
#include "cddrec/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace cddrec {

namespace {

void check_step(int t, int lo, int hi, const char* what) {
  if (t < lo || t > hi) {
    throw std::out_of_range(std::string(what) + ": step " + std::to_string(t) +
                            " outside [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
  }
}

}  // namespace

DiffusionSchedule build_schedule(int max_step, double beta_max,
                                 ScheduleShape shape,
                                 const ScheduleOptions& options) {
  if (max_step < 1) {
    throw std::invalid_argument("build_schedule: T must be >= 1, got " +
                                std::to_string(max_step));
  }
  if (!(beta_max > 0.0 && beta_max < 1.0)) {
    throw std::invalid_argument("build_schedule: beta_max must lie in (0, 1)");
  }

  DiffusionSchedule s;
  s.max_step_ = max_step;
  s.beta_max_ = beta_max;
  s.shape_ = shape;
  s.options_ = options;
  s.betas_.assign(static_cast<std::size_t>(max_step) + 1, 0.0);
  s.alphas_.assign(static_cast<std::size_t>(max_step) + 1, 0.0);
  s.alpha_bars_.assign(static_cast<std::size_t>(max_step) + 1, 0.0);
  s.posterior_.assign(static_cast<std::size_t>(max_step) + 1, 0.0);

  s.alpha_bars_[0] = 1.0;
  for (int t = 1; t <= max_step; ++t) {
    s.betas_[t] = beta_max * static_cast<double>(t) / max_step;
    s.alphas_[t] = 1.0 - s.betas_[t];
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * s.alphas_[t];
  }
  for (int t = 1; t <= max_step; ++t) {
    double v = (1.0 - s.alpha_bars_[t - 1]) / (1.0 - s.alpha_bars_[t]);
    if (options.posterior_variance_mode == PosteriorVarianceMode::standard) {
      v *= s.betas_[t];
    }
    s.posterior_[t] = std::max(v, options.posterior_variance_floor);
  }
  return s;
}

double DiffusionSchedule::beta(int t) const {
  check_step(t, 1, max_step_, "beta");
  return betas_[t];
}

double DiffusionSchedule::alpha(int t) const {
  check_step(t, 1, max_step_, "alpha");
  return alphas_[t];
}

double DiffusionSchedule::alpha_bar(int t) const {
  check_step(t, 0, max_step_, "alpha_bar");
  return alpha_bars_[t];
}

double DiffusionSchedule::posterior_variance(int t) const {
  check_step(t, 1, max_step_, "posterior_variance");
  return posterior_[t];
}

Vec marginal_sample(const DiffusionSchedule& schedule, const Vec& x0, int t,
                    const Vec& eps) {
  if (eps.size() != x0.size()) {
    throw std::invalid_argument("marginal_sample: eps dimension mismatch");
  }
  if (t == 0) return x0;
  check_step(t, 1, schedule.max_step(), "marginal_sample");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Mat marginal_sample(const DiffusionSchedule& schedule, const Mat& x0, int t,
                    const Mat& eps) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) {
    throw std::invalid_argument("marginal_sample: eps shape mismatch");
  }
  if (t == 0) return x0;
  check_step(t, 1, schedule.max_step(), "marginal_sample");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

std::string to_string(ScheduleShape shape) {
  switch (shape) {
    case ScheduleShape::linear:
      return "linear";
  }
  return "linear";
}

ScheduleShape schedule_shape_from_string(const std::string& s) {
  if (s == "linear") return ScheduleShape::linear;
  throw std::invalid_argument("unknown schedule shape: " + s);
}

std::string to_string(PosteriorVarianceMode mode) {
  return mode == PosteriorVarianceMode::paper ? "paper" : "standard";
}

PosteriorVarianceMode posterior_mode_from_string(const std::string& s) {
  if (s == "paper") return PosteriorVarianceMode::paper;
  if (s == "standard") return PosteriorVarianceMode::standard;
  throw std::invalid_argument("unknown posterior variance mode: " + s);
}

}  // namespace cddrec
