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

#include <iosfwd>
#include <string>
#include <vector>

#include "cddrec/types.hpp"

namespace cddrec {

// Generation dissimilarity between a diffused target and a prediction:
// the negative inner product, so that smaller means better aligned and
// sigmoid(-dissimilarity) is the usual pairwise-ranking probability.
double dissimilarity(const Vec& x_t, const Vec& x_hat);

// Pairwise ranking loss over P non-pad positions: each prediction row is
// pushed toward its diffused positive target and away from a diffused
// negative. Logits are clamped to [-15, 15] before the log-sigmoid, and the
// clamp also zeroes the gradient outside that window.
double cross_divergence_loss(const Mat& x_hat, const Mat& x_pos,
                             const Mat& x_neg);

// Same loss, accumulating d(loss)/d(input) into the gradient matrices.
// The gradient matrices must already have the input shapes; contributions
// are added so several loss terms can share buffers.
double cross_divergence_loss_grad(const Mat& x_hat, const Mat& x_pos,
                                  const Mat& x_neg, Mat& d_x_hat,
                                  Mat& d_x_pos, Mat& d_x_neg);

// Plain mean squared error between predictions and positives, used by the
// mse_only training variant in place of the ranking loss.
double mse_loss(const Mat& x_hat, const Mat& x_pos);
double mse_loss_grad(const Mat& x_hat, const Mat& x_pos, Mat& d_x_hat,
                     Mat& d_x_pos);

// Which positions serve as in-batch negatives for the InfoNCE terms:
// every non-pad position in the batch, or only positions from the same
// sequence as the anchor.
enum class NegativeScope { batch, sequence };
std::string to_string(NegativeScope scope);
NegativeScope negative_scope_from_string(const std::string& text);

// InfoNCE between predictions and diffused targets. For anchor i the
// positive logit is <x_hat_i, x_t_i>/tau and the denominator sums
// exp(<x_hat_i, x_t_j>/tau) over all keys plus exp(<x_hat_i, x_hat_j>/tau)
// over the other anchors. `groups` (one id per row) restricts both sums to
// rows with the anchor's id; null means the whole batch.
double in_view_infonce(const Mat& x_hat, const Mat& x_t, double tau,
                       const std::vector<int>* groups = nullptr);
double in_view_infonce_grad(const Mat& x_hat, const Mat& x_t, double tau,
                            Mat& d_x_hat, Mat& d_x_t,
                            const std::vector<int>* groups = nullptr);

// Cross-view InfoNCE: identical structure with predictions from the
// augmented input view as positives and keys.
double cross_view_infonce(const Mat& x_hat, const Mat& x_hat_aug, double tau,
                          const std::vector<int>* groups = nullptr);
double cross_view_infonce_grad(const Mat& x_hat, const Mat& x_hat_aug,
                               double tau, Mat& d_x_hat, Mat& d_x_hat_aug,
                               const std::vector<int>* groups = nullptr);

// Ablation switches for the combined objective.
//   full        ranking + both contrastive terms, 1/(t+1) step weights
//   mse_only    mean squared error per step, nothing else
//   no_rescale  full objective but steps averaged uniformly
//   single_view drop the cross-view term and the augmented pass
//   in_only     ranking + in-view term
//   cross_only  ranking + cross-view term
//   cd_only     ranking term alone
enum class LossVariant {
  full,
  mse_only,
  no_rescale,
  single_view,
  in_only,
  cross_only,
  cd_only,
};
std::string to_string(LossVariant variant);
LossVariant loss_variant_from_string(const std::string& text);

// Which passes a variant needs; the trainer skips the augmented-view
// encode entirely when no term consumes it.
bool variant_needs_augmented_view(LossVariant variant);
bool variant_has_in_view(LossVariant variant);
bool variant_has_cross_view(LossVariant variant);
bool variant_uses_mse(LossVariant variant);

// Weight of step t in the combined objective: 1/(t+1), or a uniform
// 1/(T+1) under no_rescale.
double step_weight(int t, int max_step, LossVariant variant);

struct StepLosses {
  double cd = 0.0;  // ranking loss, or the MSE under mse_only
  double in_view = 0.0;
  double cross_view = 0.0;
};

struct LossBreakdown {
  std::vector<StepLosses> per_step;  // index t = 0..T
  double total = 0.0;
  double lambda = 0.0;
  double tau = 0.0;
};

// Combine per-step components into the weighted total. Components a
// variant does not use are expected to be zero and do not contribute.
// A non-finite used component raises an error naming the step.
LossBreakdown total_loss(const std::vector<StepLosses>& per_step,
                         double lambda, double tau,
                         LossVariant variant = LossVariant::full);

// One tab-separated line per step: epoch, t, cd, in, cross, total.
void append_loss_log(std::ostream& out, int epoch,
                     const LossBreakdown& breakdown);

}  // namespace cddrec
