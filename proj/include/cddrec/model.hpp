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

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cddrec/schedule.hpp"
#include "cddrec/types.hpp"

namespace cddrec {

enum class EncoderKind { attention, recurrent };
std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

// How much prediction noise rides on top of mu at step t:
//   paper: beta_hat_t * eps      sqrt: sqrt(beta_hat_t) * eps
enum class NoiseScaleMode { paper, sqrt };
std::string to_string(NoiseScaleMode mode);
NoiseScaleMode noise_scale_mode_from_string(const std::string& s);

struct ModelConfig {
  int d = 128;
  int max_len = 20;
  int max_step = 10;  // diffusion horizon T; step table has T+1 rows
  EncoderKind encoder = EncoderKind::attention;
  int blocks = 2;  // attention encoder depth
  int heads = 2;   // attention heads; d must divide evenly
  double dropout = 0.2;
};

// Vectors (biases, layer-norm scales) are stored d x 1 so one visitor type
// covers every parameter.
struct AttentionBlockParams {
  Mat Wq, Wk, Wv;          // d x d projections
  Mat W1, b1, W2, b2;      // position-wise feed-forward, hidden width d
  Mat ln1_g, ln1_b;        // layer norm after the attention sublayer
  Mat ln2_g, ln2_b;        // layer norm after the feed-forward sublayer
};

struct RecurrentParams {
  Mat Wz, Uz, bz;  // update gate
  Mat Wr, Ur, br;  // reset gate
  Mat Wh, Uh, bh;  // candidate state
};

struct DecoderParams {
  Mat Wq, Wk, Wv;  // cross-attention projections, d x d
};

struct ModelState {
  ModelConfig config;
  int item_count = 0;
  Mat item_embeddings;      // (item_count+1) x d, row 0 = padding, held at zero
  Mat position_embeddings;  // max_len x d
  Mat step_embeddings;      // (max_step+1) x d, row t = e_t
  std::vector<AttentionBlockParams> encoder_blocks;  // attention kind only
  RecurrentParams recurrent;                         // recurrent kind only
  DecoderParams decoder;
};

ModelState init_model(const ModelConfig& config, int item_count,
                      RngStream& rng);

// Same shapes, all parameters zero; used for gradients and optimizer moments.
ModelState zeros_like(const ModelState& state);

// Visits every learnable matrix of the active encoder kind in a fixed,
// documented order (embeddings, encoder, decoder). Checkpoints, the
// optimizer, and gradient clipping all rely on this order.
void visit_params(ModelState& state,
                  const std::function<void(const std::string&, Mat&)>& fn);
void visit_params(
    const ModelState& state,
    const std::function<void(const std::string&, const Mat&)>& fn);

struct EncodeCache;  // forward/backward intermediates, declared in model.cpp

struct Encoded {
  std::vector<Mat> e_s;  // B entries of max_len x d
  BoolMat mask;          // B x max_len, true where the input holds a real item
  std::shared_ptr<EncodeCache> cache;  // present only when requested
};

// Embeds items + positions and runs the configured encoder under a causal
// mask; padded positions are invisible to every real position. Dropout is
// active only in train_mode and then requires a stream.
Encoded encode_sequence(const IdMat& input_ids, const ModelState& state,
                        bool train_mode, RngStream* dropout_rng = nullptr,
                        bool want_cache = false);

// Accumulates parameter gradients for d(loss)/d(e_s) into grads. The cache
// from the matching forward call must be present.
void encode_backward(const ModelState& state, const Encoded& enc,
                     const std::vector<Mat>& d_es, ModelState& grads);

struct DenoiseCache;

struct Denoised {
  std::vector<Mat> mu;  // B entries of max_len x d
  std::shared_ptr<DenoiseCache> cache;
};

// Cross-attention with the step embedding e_t as the (broadcast) query and
// e_s as keys/values, causally masked; the raw attention output is mu.
Denoised denoise_mean(const Encoded& enc, int t, const ModelState& state,
                      bool want_cache = false);

void denoise_backward(const ModelState& state, const Encoded& enc,
                      const Denoised& den, int t,
                      const std::vector<Mat>& d_mu, ModelState& grads,
                      std::vector<Mat>& d_es);

// Looks up target embeddings and corrupts them to step t in closed form.
// identity = true (or t = 0) returns the clean embeddings, which also
// implements the no-diffusion ablation. The eps overload consumes pre-drawn
// noise so a loss evaluation can be replayed exactly.
std::vector<Mat> diffuse_targets(const IdMat& target_ids, int t,
                                 const ModelState& state,
                                 const DiffusionSchedule& schedule,
                                 RngStream& rng, bool identity = false);
std::vector<Mat> diffuse_targets(const IdMat& target_ids, int t,
                                 const ModelState& state,
                                 const DiffusionSchedule& schedule,
                                 const std::vector<Mat>& eps,
                                 bool identity = false);

// Noise multiplier applied to eps at step t; zero at t = 0.
double prediction_noise_scale(const DiffusionSchedule& schedule, int t,
                              NoiseScaleMode mode);

// x_hat = mu + scale(t) * eps; deterministic = true returns mu unchanged
// (inference and the no-denoising ablation).
std::vector<Mat> sample_prediction(const std::vector<Mat>& mu, int t,
                                   const DiffusionSchedule& schedule,
                                   RngStream& rng, bool deterministic,
                                   NoiseScaleMode mode);
std::vector<Mat> sample_prediction(const std::vector<Mat>& mu, int t,
                                   const DiffusionSchedule& schedule,
                                   const std::vector<Mat>& eps,
                                   bool deterministic, NoiseScaleMode mode);

// Deterministic mu at the final non-pad position, dotted against every real
// item embedding. Column c scores item index c+1.
Mat predict_scores(const IdMat& input_ids, const ModelState& state,
                   const DiffusionSchedule& schedule, int t_infer = 0);

// Uniform interface over the two encoder kinds; encode_sequence and
// encode_backward dispatch through this.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Encoded encode(const IdMat& input_ids, const ModelState& state,
                         bool train_mode, RngStream* dropout_rng,
                         bool want_cache) const = 0;
  virtual void backward(const ModelState& state, const Encoded& enc,
                        const std::vector<Mat>& d_es,
                        ModelState& grads) const = 0;
};

std::unique_ptr<Encoder> make_encoder(EncoderKind kind);

// Per-head attention weight matrices of one block, for inspection; requires
// the forward pass to have kept its cache.
std::vector<Mat> attention_weights(const Encoded& enc, int b, int block);

}  // namespace cddrec
