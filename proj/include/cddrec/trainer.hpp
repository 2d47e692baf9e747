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
#include <vector>

#include "cddrec/corpus.hpp"
#include "cddrec/model.hpp"
#include "cddrec/objective.hpp"
#include "cddrec/schedule.hpp"
#include "cddrec/types.hpp"

namespace cddrec {

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 128;
  double dropout = 0.2;
  int d = 128;
  int max_len = 20;
  int max_step = 10;  // T
  double beta_max = 0.04;
  double lambda = 0.1;
  double tau = 1.0;
  int patience = 50;
  int max_epochs = 500;
  std::uint64_t seed = 1;

  EncoderKind encoder = EncoderKind::attention;
  int blocks = 2;
  int heads = 2;

  LossVariant variant = LossVariant::full;
  NegativeScope negative_scope = NegativeScope::batch;
  PosteriorVarianceMode posterior_mode = PosteriorVarianceMode::paper;
  double posterior_floor = 0.0;
  NoiseScaleMode noise_scale = NoiseScaleMode::paper;

  // Chain toggles: corrupt the targets, and perturb the predicted mean,
  // or run either side of the chain as an identity.
  bool diffuse_targets_enabled = true;
  bool sample_predictions = true;

  double clip_norm = 5.0;
  // 0 trains every step t = 0..T per batch; a positive value draws that
  // many distinct steps per batch instead (t = 0 is always kept).
  int step_subsample = 0;
  AugmentOptions augment;
};

ModelConfig model_config(const TrainConfig& config);

// All stochastic ingredients of one training step, drawn up front and keyed
// by (seed, purpose, epoch, batch): the loss is then a deterministic
// function of the parameters, which is what the finite-difference gradient
// checks and the resume-bitwise guarantee rely on.
struct NoiseBundle {
  std::vector<int> steps;                        // active t values, ascending
  std::vector<IdMat> negative_ids;               // [T+1], B x L, 0 at pads
  std::vector<std::vector<Mat>> target_eps;      // [T+1][B], L x d
  std::vector<std::vector<Mat>> neg_eps;         // [T+1][B]
  std::vector<std::vector<Mat>> pred_eps;        // [T+1][B]
  std::vector<std::vector<Mat>> pred_eps_aug;    // [T+1][B], only if needed
};

// Negatives are drawn uniformly from the items absent from each user's full
// interaction history, one per position and step, fresh every batch.
NoiseBundle draw_noise_bundle(const PaddedBatch& batch,
                              const std::vector<InteractionSequence>& sequences,
                              int item_count, const TrainConfig& config,
                              int epoch, int batch_index);

// Loss over all active diffusion steps for one batch. With `grads` null this
// is a pure function of the parameters; otherwise parameter gradients are
// accumulated into it. Both paths share one implementation.
LossBreakdown train_losses(const PaddedBatch& batch, const NoiseBundle& bundle,
                           const ModelState& state,
                           const DiffusionSchedule& schedule,
                           const TrainConfig& config, int epoch,
                           int batch_index, ModelState* grads);

struct AdamState {
  ModelState m;
  ModelState v;
  long steps = 0;
};

AdamState make_adam_state(const ModelState& state);

// Scales gradients so their global L2 norm is at most `max_norm`;
// returns the norm before clipping.
double clip_global_norm(ModelState& grads, double max_norm);

void adam_update(ModelState& state, const ModelState& grads, AdamState& adam,
                 double learning_rate);

// One optimization step: draw the noise bundle, accumulate gradients over
// every active diffusion step, clip, update, and re-zero the pad row.
LossBreakdown train_step(const PaddedBatch& batch,
                         const std::vector<InteractionSequence>& sequences,
                         ModelState& state, AdamState& adam,
                         const DiffusionSchedule& schedule,
                         const TrainConfig& config, int epoch,
                         int batch_index);

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_valid_metric = 0.0;
  std::vector<LossBreakdown> loss_history;  // one averaged entry per epoch
  double wall_time_seconds = 0.0;
};

struct FitResult {
  ModelState state;
  AdamState adam;
  TrainReport report;
};

// Full training loop with validation-MRR early stopping. Returns the best
// state (by validation MRR), its optimizer state, and the run report.
// `progress` receives one line per epoch
// (epoch, train_total, valid_MRR, best_MRR, patience_left) and `loss_log`
// the per-step loss table.
FitResult fit(const std::vector<InteractionSequence>& sequences,
              int item_count, const TrainConfig& config,
              std::ostream* progress = nullptr,
              std::ostream* loss_log = nullptr);

}  // namespace cddrec
