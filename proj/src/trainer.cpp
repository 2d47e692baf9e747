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

#include "cddrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "cddrec/eval.hpp"

namespace cddrec {

ModelConfig model_config(const TrainConfig& config) {
  ModelConfig mc;
  mc.d = config.d;
  mc.max_len = config.max_len;
  mc.max_step = config.max_step;
  mc.encoder = config.encoder;
  mc.blocks = config.blocks;
  mc.heads = config.heads;
  mc.dropout = config.dropout;
  return mc;
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Flattened list of the non-pad positions of a mask, plus the batch row of
// each so the contrastive losses can group by sequence.
struct Positions {
  std::vector<int> b;
  std::vector<int> j;
  std::vector<int> group;

  int size() const { return int(b.size()); }
};

Positions collect_positions(const BoolMat& mask) {
  Positions out;
  for (Eigen::Index bb = 0; bb < mask.rows(); ++bb) {
    for (Eigen::Index jj = 0; jj < mask.cols(); ++jj) {
      if (mask(bb, jj)) {
        out.b.push_back(int(bb));
        out.j.push_back(int(jj));
        out.group.push_back(int(bb));
      }
    }
  }
  return out;
}

Mat gather(const std::vector<Mat>& source, const Positions& pos) {
  const Eigen::Index d = source.empty() ? 0 : source[0].cols();
  Mat out(pos.size(), d);
  for (int p = 0; p < pos.size(); ++p) {
    out.row(p) = source[pos.b[p]].row(pos.j[p]);
  }
  return out;
}

std::vector<Mat> zero_like_rows(int count, int rows, int cols) {
  return std::vector<Mat>(count, Mat::Zero(rows, cols));
}

std::vector<int> active_steps(const TrainConfig& config, RngStream& rng) {
  const int T = config.max_step;
  std::vector<int> steps(T + 1);
  std::iota(steps.begin(), steps.end(), 0);
  if (config.step_subsample <= 0 || config.step_subsample >= T + 1) {
    return steps;
  }
  // Keep t = 0 (the inference step) and draw the rest without replacement.
  std::vector<int> rest(steps.begin() + 1, steps.end());
  const int extra = config.step_subsample - 1;
  for (int i = 0; i < extra; ++i) {
    const int pick = i + int(rng.uniform_int(0, int(rest.size()) - 1 - i));
    std::swap(rest[i], rest[pick]);
  }
  std::vector<int> out = {0};
  out.insert(out.end(), rest.begin(), rest.begin() + extra);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

NoiseBundle draw_noise_bundle(const PaddedBatch& batch,
                              const std::vector<InteractionSequence>& sequences,
                              int item_count, const TrainConfig& config,
                              int epoch, int batch_index) {
  const int B = int(batch.input_ids.rows());
  const int L = int(batch.input_ids.cols());
  const int T = config.max_step;
  const bool need_aug = variant_needs_augmented_view(config.variant);

  NoiseBundle bundle;
  RngStream neg_rng(config.seed, RngPurpose::negatives, std::uint64_t(epoch),
                    std::uint64_t(batch_index));
  bundle.steps = active_steps(config, neg_rng);

  // Per-row exclusion sets: the user's full history, targets included.
  std::vector<std::unordered_set<int>> history(B);
  for (int b = 0; b < B; ++b) {
    const int seq = batch.sequence_index[b];
    if (seq < 0 || seq >= int(sequences.size())) {
      throw std::out_of_range("batch references a missing sequence");
    }
    history[b].insert(sequences[seq].items.begin(),
                      sequences[seq].items.end());
    if (int(history[b].size()) >= item_count) {
      throw std::runtime_error(
          "user " + std::to_string(sequences[seq].user_index) +
          " has interacted with every item; no negative candidates");
    }
  }

  bundle.negative_ids.assign(T + 1, IdMat());
  bundle.target_eps.assign(T + 1, {});
  bundle.neg_eps.assign(T + 1, {});
  bundle.pred_eps.assign(T + 1, {});
  bundle.pred_eps_aug.assign(T + 1, {});

  RngStream noise_rng(config.seed, RngPurpose::diffusion, std::uint64_t(epoch),
                      std::uint64_t(batch_index));
  RngStream pred_rng(config.seed, RngPurpose::prediction, std::uint64_t(epoch),
                     std::uint64_t(batch_index));

  for (int t : bundle.steps) {
    IdMat negs = IdMat::Zero(B, L);
    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < L; ++j) {
        if (!batch.pad_mask(b, j)) continue;
        int candidate = 0;
        int tries = 0;
        do {
          candidate = int(neg_rng.uniform_int(1, item_count));
          if (++tries > 100000) {
            throw std::runtime_error("negative sampling failed to converge");
          }
        } while (history[b].count(candidate) > 0);
        negs(b, j) = candidate;
      }
    }
    bundle.negative_ids[t] = std::move(negs);

    auto draw_block = [&](RngStream& rng) {
      std::vector<Mat> eps(B);
      for (int b = 0; b < B; ++b) {
        eps[b].resize(L, config.d);
        rng.fill_normal(eps[b]);
      }
      return eps;
    };
    bundle.target_eps[t] = draw_block(noise_rng);
    bundle.neg_eps[t] = draw_block(noise_rng);
    bundle.pred_eps[t] = draw_block(pred_rng);
    if (need_aug) bundle.pred_eps_aug[t] = draw_block(pred_rng);
  }
  return bundle;
}

LossBreakdown train_losses(const PaddedBatch& batch, const NoiseBundle& bundle,
                           const ModelState& state,
                           const DiffusionSchedule& schedule,
                           const TrainConfig& config, int epoch,
                           int batch_index, ModelState* grads) {
  const int B = int(batch.input_ids.rows());
  const int L = state.config.max_len;
  const int d = state.config.d;
  const int T = schedule.max_step();
  const bool want_cache = grads != nullptr;
  const bool need_aug = variant_needs_augmented_view(config.variant);
  const bool use_mse = variant_uses_mse(config.variant);
  const bool use_in = variant_has_in_view(config.variant);
  const bool use_cross = variant_has_cross_view(config.variant);

  RngStream drop_rng(config.seed, RngPurpose::dropout, std::uint64_t(epoch),
                     std::uint64_t(batch_index));
  Encoded enc =
      encode_sequence(batch.input_ids, state, true, &drop_rng, want_cache);
  Encoded enc_aug;
  if (need_aug) {
    enc_aug = encode_sequence(batch.augmented_input_ids, state, true,
                              &drop_rng, want_cache);
  }

  const Positions orig = collect_positions(batch.pad_mask);
  if (orig.size() == 0) throw std::runtime_error("empty effective batch");
  BoolMat both_mask =
      batch.pad_mask && (batch.augmented_input_ids.array() != 0);
  const Positions both = collect_positions(both_mask);

  const bool by_sequence = config.negative_scope == NegativeScope::sequence;
  const std::vector<int>* orig_groups = by_sequence ? &orig.group : nullptr;
  const std::vector<int>* both_groups = by_sequence ? &both.group : nullptr;

  std::vector<Mat> d_es, d_es_aug;
  if (want_cache) {
    d_es = zero_like_rows(B, L, d);
    if (need_aug) d_es_aug = zero_like_rows(B, L, d);
  }

  std::vector<StepLosses> per_step(T + 1);
  for (int t : bundle.steps) {
    const bool identity = !config.diffuse_targets_enabled;
    auto x_t_full = diffuse_targets(batch.target_ids, t, state, schedule,
                                    bundle.target_eps[t], identity);
    std::vector<Mat> x_neg_full;
    if (!use_mse) {
      x_neg_full = diffuse_targets(bundle.negative_ids[t], t, state, schedule,
                                   bundle.neg_eps[t], identity);
    }

    Denoised den = denoise_mean(enc, t, state, want_cache);
    auto x_hat_full =
        sample_prediction(den.mu, t, schedule, bundle.pred_eps[t],
                          !config.sample_predictions, config.noise_scale);
    Denoised den_aug;
    std::vector<Mat> x_aug_full;
    if (need_aug) {
      den_aug = denoise_mean(enc_aug, t, state, want_cache);
      x_aug_full =
          sample_prediction(den_aug.mu, t, schedule, bundle.pred_eps_aug[t],
                            !config.sample_predictions, config.noise_scale);
    }

    Mat Xh = gather(x_hat_full, orig);
    Mat Xt = gather(x_t_full, orig);
    Mat Xn;
    if (!use_mse) Xn = gather(x_neg_full, orig);

    StepLosses& sl = per_step[t];
    const double w = step_weight(t, T, config.variant);
    const double wl = w * config.lambda;

    // Gradient of the clean target embedding through the closed-form
    // corruption: d(x_t)/d(x_0) = sqrt(alpha_bar_t).
    const double fac =
        (identity || t == 0) ? 1.0 : std::sqrt(schedule.alpha_bar(t));

    if (grads == nullptr) {
      sl.cd = use_mse ? mse_loss(Xh, Xt) : cross_divergence_loss(Xh, Xt, Xn);
      if (use_in && orig.size() >= 2) {
        sl.in_view = in_view_infonce(Xh, Xt, config.tau, orig_groups);
      }
      if (use_cross && both.size() >= 2) {
        Mat Xh2 = gather(x_hat_full, both);
        Mat Xa2 = gather(x_aug_full, both);
        sl.cross_view = cross_view_infonce(Xh2, Xa2, config.tau, both_groups);
      }
      continue;
    }

    std::vector<Mat> d_mu = zero_like_rows(B, L, d);
    std::vector<Mat> d_mu_aug;
    if (need_aug) d_mu_aug = zero_like_rows(B, L, d);

    Mat dXh = Mat::Zero(orig.size(), d);
    Mat dXt = Mat::Zero(orig.size(), d);
    Mat dXn;
    if (use_mse) {
      sl.cd = mse_loss_grad(Xh, Xt, dXh, dXt);
    } else {
      dXn = Mat::Zero(orig.size(), d);
      sl.cd = cross_divergence_loss_grad(Xh, Xt, Xn, dXh, dXt, dXn);
    }
    // The ranking term enters with weight w; fold it in now so the InfoNCE
    // contribution below can reuse the same buffers at weight w*lambda.
    dXh *= w;
    dXt *= w;

    if (use_in && orig.size() >= 2) {
      Mat ih = Mat::Zero(orig.size(), d);
      Mat it = Mat::Zero(orig.size(), d);
      sl.in_view = in_view_infonce_grad(Xh, Xt, config.tau, ih, it,
                                        orig_groups);
      dXh += wl * ih;
      dXt += wl * it;
    }

    for (int p = 0; p < orig.size(); ++p) {
      const int bb = orig.b[p], jj = orig.j[p];
      d_mu[bb].row(jj) += dXh.row(p);
      grads->item_embeddings.row(batch.target_ids(bb, jj)) +=
          fac * dXt.row(p);
      if (!use_mse) {
        grads->item_embeddings.row(bundle.negative_ids[t](bb, jj)) +=
            fac * w * dXn.row(p);
      }
    }

    if (use_cross && both.size() >= 2) {
      Mat Xh2 = gather(x_hat_full, both);
      Mat Xa2 = gather(x_aug_full, both);
      Mat ch = Mat::Zero(both.size(), d);
      Mat ca = Mat::Zero(both.size(), d);
      sl.cross_view =
          cross_view_infonce_grad(Xh2, Xa2, config.tau, ch, ca, both_groups);
      for (int p = 0; p < both.size(); ++p) {
        d_mu[both.b[p]].row(both.j[p]) += wl * ch.row(p);
        d_mu_aug[both.b[p]].row(both.j[p]) += wl * ca.row(p);
      }
    }

    denoise_backward(state, enc, den, t, d_mu, *grads, d_es);
    if (need_aug) {
      denoise_backward(state, enc_aug, den_aug, t, d_mu_aug, *grads,
                       d_es_aug);
    }
  }

  if (grads != nullptr) {
    encode_backward(state, enc, d_es, *grads);
    if (need_aug) encode_backward(state, enc_aug, d_es_aug, *grads);
  }
  return total_loss(per_step, config.lambda, config.tau, config.variant);
}

AdamState make_adam_state(const ModelState& state) {
  AdamState adam;
  adam.m = zeros_like(state);
  adam.v = zeros_like(state);
  adam.steps = 0;
  return adam;
}

namespace {

std::vector<Mat*> param_list(ModelState& state) {
  std::vector<Mat*> out;
  visit_params(state, [&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

std::vector<const Mat*> param_list(const ModelState& state) {
  std::vector<const Mat*> out;
  visit_params(state,
               [&](const std::string&, const Mat& m) { out.push_back(&m); });
  return out;
}

}  // namespace

double clip_global_norm(ModelState& grads, double max_norm) {
  double sq = 0.0;
  auto params = param_list(grads);
  for (const Mat* g : params) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (Mat* g : param_list(grads)) *g *= scale;
  }
  return norm;
}

void adam_update(ModelState& state, const ModelState& grads, AdamState& adam,
                 double learning_rate) {
  adam.steps += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, double(adam.steps));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, double(adam.steps));
  auto p = param_list(state);
  auto g = param_list(grads);
  auto m = param_list(adam.m);
  auto v = param_list(adam.v);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i]->array() =
        kAdamBeta1 * m[i]->array() + (1.0 - kAdamBeta1) * g[i]->array();
    v[i]->array() = kAdamBeta2 * v[i]->array() +
                    (1.0 - kAdamBeta2) * g[i]->array().square();
    p[i]->array() -= learning_rate * (m[i]->array() / bc1) /
                     ((v[i]->array() / bc2).sqrt() + kAdamEps);
  }
}

LossBreakdown train_step(const PaddedBatch& batch,
                         const std::vector<InteractionSequence>& sequences,
                         ModelState& state, AdamState& adam,
                         const DiffusionSchedule& schedule,
                         const TrainConfig& config, int epoch,
                         int batch_index) {
  NoiseBundle bundle = draw_noise_bundle(batch, sequences, state.item_count,
                                         config, epoch, batch_index);
  ModelState grads = zeros_like(state);
  LossBreakdown breakdown = train_losses(batch, bundle, state, schedule,
                                         config, epoch, batch_index, &grads);
  // The pad embedding is pinned at zero: no gradient in, re-zeroed out.
  grads.item_embeddings.row(0).setZero();
  clip_global_norm(grads, config.clip_norm);
  adam_update(state, grads, adam, config.learning_rate);
  state.item_embeddings.row(0).setZero();
  return breakdown;
}

FitResult fit(const std::vector<InteractionSequence>& sequences,
              int item_count, const TrainConfig& config,
              std::ostream* progress, std::ostream* loss_log) {
  if (sequences.empty()) throw std::invalid_argument("empty corpus");
  const auto members = trainable_members(sequences);
  if (members.empty()) {
    throw std::invalid_argument("no sequence has enough items to train on");
  }
  const auto start = std::chrono::steady_clock::now();

  RngStream init_rng(config.seed, RngPurpose::init);
  ModelState state = init_model(model_config(config), item_count, init_rng);
  AdamState adam = make_adam_state(state);
  DiffusionSchedule schedule = build_schedule(
      config.max_step, config.beta_max, ScheduleShape::linear,
      {config.posterior_mode, config.posterior_floor});

  EvalOptions vopt;
  vopt.split = EvalSplit::valid;
  vopt.batch_size = config.batch_size;
  vopt.with_per_step = false;
  vopt.with_subgroups = false;

  ModelState best_state = state;
  AdamState best_adam = adam;
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  TrainReport report;
  BatchOptions bopt;
  bopt.max_len = config.max_len;
  bopt.augment = config.augment;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<int> order = members;
    RngStream shuffle_rng(config.seed, RngPurpose::shuffle,
                          std::uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    std::vector<StepLosses> sums(config.max_step + 1);
    double total_sum = 0.0;
    int rows = 0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += std::size_t(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + std::size_t(config.batch_size));
      std::vector<int> slice(order.begin() + begin, order.begin() + end);
      RngStream aug_rng(config.seed, RngPurpose::augmentation,
                        std::uint64_t(epoch), std::uint64_t(batch_index));
      PaddedBatch pb = make_training_batch(sequences, slice, bopt, aug_rng);
      LossBreakdown bd = train_step(pb, sequences, state, adam, schedule,
                                    config, epoch, batch_index);
      const double weight = double(slice.size());
      for (std::size_t t = 0; t < sums.size(); ++t) {
        sums[t].cd += bd.per_step[t].cd * weight;
        sums[t].in_view += bd.per_step[t].in_view * weight;
        sums[t].cross_view += bd.per_step[t].cross_view * weight;
      }
      total_sum += bd.total * weight;
      rows += int(slice.size());
      ++batch_index;
    }

    LossBreakdown epoch_bd;
    epoch_bd.lambda = config.lambda;
    epoch_bd.tau = config.tau;
    epoch_bd.per_step.resize(sums.size());
    for (std::size_t t = 0; t < sums.size(); ++t) {
      epoch_bd.per_step[t] = {sums[t].cd / rows, sums[t].in_view / rows,
                              sums[t].cross_view / rows};
    }
    epoch_bd.total = total_sum / rows;
    report.loss_history.push_back(epoch_bd);
    if (loss_log != nullptr) append_loss_log(*loss_log, epoch, epoch_bd);

    const double mrr =
        evaluate_split(sequences, state, schedule, vopt).ranking.mrr;
    report.epochs_run = epoch;
    if (mrr > best) {
      best = mrr;
      best_epoch = epoch;
      best_state = state;
      best_adam = adam;
    }
    const int since_best = epoch - best_epoch;
    const int patience_left = std::max(0, config.patience - since_best);
    if (progress != nullptr) {
      *progress << epoch << '\t' << epoch_bd.total << '\t' << mrr << '\t'
                << best << '\t' << patience_left << std::endl;
    }
    if (since_best > config.patience) break;
  }

  report.best_epoch = best_epoch;
  report.best_valid_metric = best;
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return {std::move(best_state), std::move(best_adam), std::move(report)};
}

}  // namespace cddrec
