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
#include "cddrec/model.hpp"

#include <cmath>
#include <stdexcept>

namespace cddrec {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;

// A position sees earlier real items; an all-pad prefix degenerates to
// self-attention so no softmax row is ever empty.
bool visible(int j, int k, const BoolMat& mask, int b) {
  return k <= j && (mask(b, k) || k == j);
}

Mat draw_dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                      RngStream& rng) {
  Mat m(rows, cols);
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = rng.uniform() >= rate ? 1.0 / keep : 0.0;
    }
  }
  return m;
}

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, Vec& mean,
               Vec& inv_std) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat out(n, d);
  mean.resize(n);
  inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double m = x.row(r).mean();
    const double var = (x.row(r).array() - m).square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    mean(r) = m;
    inv_std(r) = inv;
    out.row(r) = ((x.row(r).array() - m) * inv) * g.col(0).transpose().array() +
                 b.col(0).transpose().array();
  }
  return out;
}

Mat layer_norm_backward(const Mat& x, const Mat& g, const Vec& mean,
                        const Vec& inv_std, const Mat& dy, Mat& dg, Mat& db) {
  using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
  const Eigen::Index n = x.rows(), d = x.cols();
  Mat dx(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    RowArr xhat = (x.row(r).array() - mean(r)) * inv_std(r);
    RowArr dxhat = dy.row(r).array() * g.col(0).transpose().array();
    dg.col(0) += (dy.row(r).array() * xhat).matrix().transpose();
    db.col(0) += dy.row(r).transpose();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xhat).mean();
    dx.row(r) = (inv_std(r) * (dxhat - m1 - xhat * m2)).matrix();
  }
  return dx;
}

// Softmax over the visible keys of each query row; invisible entries stay 0.
Mat masked_softmax_rows(const Mat& scores, const BoolMat& mask, int b) {
  const Eigen::Index L = scores.rows();
  Mat a = Mat::Zero(L, L);
  for (Eigen::Index j = 0; j < L; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k <= j; ++k) {
      if (visible(j, k, mask, b)) mx = std::max(mx, scores(j, k));
    }
    double z = 0.0;
    for (Eigen::Index k = 0; k <= j; ++k) {
      if (visible(j, k, mask, b)) {
        a(j, k) = std::exp(scores(j, k) - mx);
        z += a(j, k);
      }
    }
    for (Eigen::Index k = 0; k <= j; ++k) a(j, k) /= z;
  }
  return a;
}

// d(softmax)/d(scores) given the weights; rows with zero weight pass zeros.
Mat softmax_rows_backward(const Mat& a, const Mat& da) {
  Mat ds = a;
  Eigen::VectorXd rowdot = (a.array() * da.array()).rowwise().sum();
  for (Eigen::Index j = 0; j < a.rows(); ++j) {
    ds.row(j) =
        a.row(j).array() * (da.row(j).array() - rowdot(j));
  }
  return ds;
}

void check_ids(const IdMat& ids, const ModelState& state, const char* who) {
  if (ids.cols() != state.config.max_len) {
    throw std::invalid_argument(std::string(who) + ": expected " +
                                std::to_string(state.config.max_len) +
                                " columns, got " + std::to_string(ids.cols()));
  }
  for (Eigen::Index b = 0; b < ids.rows(); ++b) {
    for (Eigen::Index j = 0; j < ids.cols(); ++j) {
      if (ids(b, j) < 0 || ids(b, j) > state.item_count) {
        throw std::out_of_range(std::string(who) + ": item index " +
                                std::to_string(ids(b, j)) +
                                " outside [0, " +
                                std::to_string(state.item_count) + "]");
      }
    }
  }
}

}  // namespace

struct AttentionBlockCache {
  Mat X;               // block input
  Mat Q, K, V, H;      // projections and concatenated context
  std::vector<Mat> A;  // per-head attention weights
  Mat drop1, drop2;    // scaled dropout masks, empty when inactive
  Mat sum1, Y1, Z, R, sum2, Y2;
  Vec mu1, inv1, mu2, inv2;
};

struct SeqEncodeCache {
  Mat E;      // item + position embeddings
  Mat dropE;  // scaled mask on E, empty when inactive
  std::vector<AttentionBlockCache> blocks;
  Mat Hgru, Zg, Rg, Hc;  // recurrent states and gates
};

struct EncodeCache {
  IdMat ids;
  std::vector<SeqEncodeCache> seq;
};

struct SeqDenoiseCache {
  Eigen::RowVectorXd q;     // step query after projection
  Mat K, V;                 // key/value projections of e_s
  std::vector<Mat> alpha;   // per-head attention weights
};

struct DenoiseCache {
  std::vector<SeqDenoiseCache> seq;
};

std::string to_string(EncoderKind kind) {
  return kind == EncoderKind::attention ? "attention" : "recurrent";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "attention") return EncoderKind::attention;
  if (s == "recurrent") return EncoderKind::recurrent;
  throw std::invalid_argument("unknown encoder kind: " + s);
}

std::string to_string(NoiseScaleMode mode) {
  return mode == NoiseScaleMode::paper ? "paper" : "sqrt";
}

NoiseScaleMode noise_scale_mode_from_string(const std::string& s) {
  if (s == "paper") return NoiseScaleMode::paper;
  if (s == "sqrt") return NoiseScaleMode::sqrt;
  throw std::invalid_argument("unknown noise scale mode: " + s);
}

ModelState init_model(const ModelConfig& config, int item_count,
                      RngStream& rng) {
  if (config.d < 1 || config.max_len < 1 || config.max_step < 1) {
    throw std::invalid_argument("init_model: d, max_len, max_step must be >= 1");
  }
  if (config.heads < 1 || config.d % config.heads != 0) {
    throw std::invalid_argument("init_model: heads must divide d");
  }
  if (config.blocks < 1) throw std::invalid_argument("init_model: blocks < 1");
  if (config.dropout < 0.0 || config.dropout >= 1.0) {
    throw std::invalid_argument("init_model: dropout must lie in [0, 1)");
  }
  if (item_count < 1) throw std::invalid_argument("init_model: no items");

  const int d = config.d;
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    rng.fill_normal(m);
    return Mat(m * kInitStd);
  };

  ModelState s;
  s.config = config;
  s.item_count = item_count;
  s.item_embeddings = draw(item_count + 1, d);
  s.item_embeddings.row(0).setZero();
  s.position_embeddings = draw(config.max_len, d);
  s.step_embeddings = draw(config.max_step + 1, d);

  if (config.encoder == EncoderKind::attention) {
    s.encoder_blocks.resize(config.blocks);
    for (auto& blk : s.encoder_blocks) {
      blk.Wq = draw(d, d);
      blk.Wk = draw(d, d);
      blk.Wv = draw(d, d);
      blk.W1 = draw(d, d);
      blk.b1 = Mat::Zero(d, 1);
      blk.W2 = draw(d, d);
      blk.b2 = Mat::Zero(d, 1);
      blk.ln1_g = Mat::Ones(d, 1);
      blk.ln1_b = Mat::Zero(d, 1);
      blk.ln2_g = Mat::Ones(d, 1);
      blk.ln2_b = Mat::Zero(d, 1);
    }
  } else {
    auto& g = s.recurrent;
    g.Wz = draw(d, d); g.Uz = draw(d, d); g.bz = Mat::Zero(d, 1);
    g.Wr = draw(d, d); g.Ur = draw(d, d); g.br = Mat::Zero(d, 1);
    g.Wh = draw(d, d); g.Uh = draw(d, d); g.bh = Mat::Zero(d, 1);
  }
  s.decoder.Wq = draw(d, d);
  s.decoder.Wk = draw(d, d);
  s.decoder.Wv = draw(d, d);
  return s;
}

namespace {

template <typename State, typename Fn>
void visit_impl(State& s, const Fn& fn) {
  fn("item_embeddings", s.item_embeddings);
  fn("position_embeddings", s.position_embeddings);
  fn("step_embeddings", s.step_embeddings);
  if (s.config.encoder == EncoderKind::attention) {
    for (std::size_t i = 0; i < s.encoder_blocks.size(); ++i) {
      auto& blk = s.encoder_blocks[i];
      const std::string p = "enc" + std::to_string(i) + ".";
      fn(p + "Wq", blk.Wq);
      fn(p + "Wk", blk.Wk);
      fn(p + "Wv", blk.Wv);
      fn(p + "W1", blk.W1);
      fn(p + "b1", blk.b1);
      fn(p + "W2", blk.W2);
      fn(p + "b2", blk.b2);
      fn(p + "ln1_g", blk.ln1_g);
      fn(p + "ln1_b", blk.ln1_b);
      fn(p + "ln2_g", blk.ln2_g);
      fn(p + "ln2_b", blk.ln2_b);
    }
  } else {
    auto& g = s.recurrent;
    fn("gru.Wz", g.Wz);
    fn("gru.Uz", g.Uz);
    fn("gru.bz", g.bz);
    fn("gru.Wr", g.Wr);
    fn("gru.Ur", g.Ur);
    fn("gru.br", g.br);
    fn("gru.Wh", g.Wh);
    fn("gru.Uh", g.Uh);
    fn("gru.bh", g.bh);
  }
  fn("dec.Wq", s.decoder.Wq);
  fn("dec.Wk", s.decoder.Wk);
  fn("dec.Wv", s.decoder.Wv);
}

}  // namespace

void visit_params(ModelState& state,
                  const std::function<void(const std::string&, Mat&)>& fn) {
  visit_impl(state, fn);
}

void visit_params(
    const ModelState& state,
    const std::function<void(const std::string&, const Mat&)>& fn) {
  visit_impl(state, fn);
}

ModelState zeros_like(const ModelState& state) {
  ModelState z = state;
  visit_params(z, [](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

namespace {

class AttentionEncoder final : public Encoder {
 public:
  Encoded encode(const IdMat& ids, const ModelState& state, bool train_mode,
                 RngStream* dropout_rng, bool want_cache) const override {
    check_ids(ids, state, "encode_sequence");
    const int B = static_cast<int>(ids.rows());
    const int L = state.config.max_len;
    const int d = state.config.d;
    const int heads = state.config.heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool drop = train_mode && state.config.dropout > 0.0;
    if (drop && dropout_rng == nullptr) {
      throw std::invalid_argument(
          "encode_sequence: dropout active but no rng stream given");
    }

    Encoded out;
    out.mask = BoolMat::Constant(B, L, false);
    out.e_s.resize(B);
    auto cache = std::make_shared<EncodeCache>();
    cache->ids = ids;
    cache->seq.resize(B);

    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < L; ++j) out.mask(b, j) = ids(b, j) != 0;
      auto& sc = cache->seq[b];

      Mat E(L, d);
      for (int j = 0; j < L; ++j) {
        E.row(j) = state.item_embeddings.row(ids(b, j)) +
                   state.position_embeddings.row(j);
      }
      sc.E = E;
      Mat X = E;
      if (drop) {
        sc.dropE = draw_dropout_mask(L, d, state.config.dropout, *dropout_rng);
        X = X.cwiseProduct(sc.dropE);
      }

      sc.blocks.resize(state.encoder_blocks.size());
      for (std::size_t blk = 0; blk < state.encoder_blocks.size(); ++blk) {
        const auto& p = state.encoder_blocks[blk];
        auto& c = sc.blocks[blk];
        c.X = X;
        c.Q = X * p.Wq;
        c.K = X * p.Wk;
        c.V = X * p.Wv;
        c.H.setZero(L, d);
        c.A.resize(heads);
        for (int h = 0; h < heads; ++h) {
          Mat scores = c.Q.middleCols(h * dh, dh) *
                       c.K.middleCols(h * dh, dh).transpose() * scale;
          c.A[h] = masked_softmax_rows(scores, out.mask, b);
          c.H.middleCols(h * dh, dh) = c.A[h] * c.V.middleCols(h * dh, dh);
        }
        Mat D1 = c.H;
        if (drop) {
          c.drop1 = draw_dropout_mask(L, d, state.config.dropout, *dropout_rng);
          D1 = D1.cwiseProduct(c.drop1);
        }
        c.sum1 = X + D1;
        c.Y1 = layer_norm(c.sum1, p.ln1_g, p.ln1_b, c.mu1, c.inv1);
        c.Z = (c.Y1 * p.W1).rowwise() + p.b1.col(0).transpose();
        c.R = c.Z.cwiseMax(0.0);
        Mat F = (c.R * p.W2).rowwise() + p.b2.col(0).transpose();
        if (drop) {
          c.drop2 = draw_dropout_mask(L, d, state.config.dropout, *dropout_rng);
          F = F.cwiseProduct(c.drop2);
        }
        c.sum2 = c.Y1 + F;
        c.Y2 = layer_norm(c.sum2, p.ln2_g, p.ln2_b, c.mu2, c.inv2);
        X = c.Y2;
      }
      out.e_s[b] = X;
    }
    if (want_cache) out.cache = std::move(cache);
    return out;
  }

  void backward(const ModelState& state, const Encoded& enc,
                const std::vector<Mat>& d_es, ModelState& grads) const override {
    if (!enc.cache) {
      throw std::logic_error("encode_backward: forward ran without a cache");
    }
    const auto& cache = *enc.cache;
    const int L = state.config.max_len;
    const int d = state.config.d;
    const int heads = state.config.heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t b = 0; b < cache.seq.size(); ++b) {
      const auto& sc = cache.seq[b];
      Mat dX = d_es[b];
      for (int blk = static_cast<int>(sc.blocks.size()) - 1; blk >= 0; --blk) {
        const auto& p = state.encoder_blocks[blk];
        auto& gp = grads.encoder_blocks[blk];
        const auto& c = sc.blocks[blk];

        Mat dsum2 = layer_norm_backward(c.sum2, p.ln2_g, c.mu2, c.inv2, dX,
                                        gp.ln2_g, gp.ln2_b);
        Mat dF = c.drop2.size() ? dsum2.cwiseProduct(c.drop2) : dsum2;
        Mat dR = dF * p.W2.transpose();
        gp.W2 += c.R.transpose() * dF;
        gp.b2.col(0) += dF.colwise().sum().transpose();
        Mat dZ = dR.cwiseProduct((c.Z.array() > 0.0).cast<double>().matrix());
        gp.W1 += c.Y1.transpose() * dZ;
        gp.b1.col(0) += dZ.colwise().sum().transpose();
        Mat dY1 = dsum2 + dZ * p.W1.transpose();

        Mat dsum1 = layer_norm_backward(c.sum1, p.ln1_g, c.mu1, c.inv1, dY1,
                                        gp.ln1_g, gp.ln1_b);
        Mat dH = c.drop1.size() ? dsum1.cwiseProduct(c.drop1) : dsum1;
        Mat dXblock = dsum1;  // residual branch

        Mat dQ = Mat::Zero(L, d), dK = Mat::Zero(L, d), dV = Mat::Zero(L, d);
        for (int h = 0; h < heads; ++h) {
          auto dHh = dH.middleCols(h * dh, dh);
          Mat dA = dHh * c.V.middleCols(h * dh, dh).transpose();
          dV.middleCols(h * dh, dh) = c.A[h].transpose() * dHh;
          Mat dS = softmax_rows_backward(c.A[h], dA);
          dQ.middleCols(h * dh, dh) = dS * c.K.middleCols(h * dh, dh) * scale;
          dK.middleCols(h * dh, dh) =
              dS.transpose() * c.Q.middleCols(h * dh, dh) * scale;
        }
        gp.Wq += c.X.transpose() * dQ;
        gp.Wk += c.X.transpose() * dK;
        gp.Wv += c.X.transpose() * dV;
        dXblock += dQ * p.Wq.transpose() + dK * p.Wk.transpose() +
                   dV * p.Wv.transpose();
        dX = dXblock;
      }
      Mat dE = sc.dropE.size() ? dX.cwiseProduct(sc.dropE) : dX;
      for (int j = 0; j < L; ++j) {
        grads.item_embeddings.row(cache.ids(b, j)) += dE.row(j);
        grads.position_embeddings.row(j) += dE.row(j);
      }
    }
  }
};

class RecurrentEncoder final : public Encoder {
 public:
  Encoded encode(const IdMat& ids, const ModelState& state, bool train_mode,
                 RngStream* dropout_rng, bool want_cache) const override {
    check_ids(ids, state, "encode_sequence");
    const int B = static_cast<int>(ids.rows());
    const int L = state.config.max_len;
    const int d = state.config.d;
    const bool drop = train_mode && state.config.dropout > 0.0;
    if (drop && dropout_rng == nullptr) {
      throw std::invalid_argument(
          "encode_sequence: dropout active but no rng stream given");
    }
    const auto& g = state.recurrent;

    Encoded out;
    out.mask = BoolMat::Constant(B, L, false);
    out.e_s.resize(B);
    auto cache = std::make_shared<EncodeCache>();
    cache->ids = ids;
    cache->seq.resize(B);

    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < L; ++j) out.mask(b, j) = ids(b, j) != 0;
      auto& sc = cache->seq[b];
      Mat E(L, d);
      for (int j = 0; j < L; ++j) {
        E.row(j) = state.item_embeddings.row(ids(b, j)) +
                   state.position_embeddings.row(j);
      }
      sc.E = E;
      Mat X = E;
      if (drop) {
        sc.dropE = draw_dropout_mask(L, d, state.config.dropout, *dropout_rng);
        X = X.cwiseProduct(sc.dropE);
      }

      sc.Hgru.setZero(L, d);
      sc.Zg.setZero(L, d);
      sc.Rg.setZero(L, d);
      sc.Hc.setZero(L, d);
      Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(d);
      for (int j = 0; j < L; ++j) {
        if (!out.mask(b, j)) {
          sc.Hgru.row(j) = h;  // padded steps carry the state through
          continue;
        }
        Eigen::RowVectorXd x = X.row(j);
        Eigen::RowVectorXd z =
            ((x * g.Wz + h * g.Uz).array() + g.bz.col(0).transpose().array())
                .unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        Eigen::RowVectorXd r =
            ((x * g.Wr + h * g.Ur).array() + g.br.col(0).transpose().array())
                .unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
        Eigen::RowVectorXd hc =
            ((x * g.Wh + (r.cwiseProduct(h)) * g.Uh).array() +
             g.bh.col(0).transpose().array())
                .tanh();
        h = (1.0 - z.array()) * h.array() + z.array() * hc.array();
        sc.Zg.row(j) = z;
        sc.Rg.row(j) = r;
        sc.Hc.row(j) = hc;
        sc.Hgru.row(j) = h;
      }
      out.e_s[b] = sc.Hgru;
    }
    if (want_cache) out.cache = std::move(cache);
    return out;
  }

  void backward(const ModelState& state, const Encoded& enc,
                const std::vector<Mat>& d_es, ModelState& grads) const override {
    if (!enc.cache) {
      throw std::logic_error("encode_backward: forward ran without a cache");
    }
    const auto& cache = *enc.cache;
    const int L = state.config.max_len;
    const int d = state.config.d;
    const auto& g = state.recurrent;
    auto& gg = grads.recurrent;

    for (std::size_t b = 0; b < cache.seq.size(); ++b) {
      const auto& sc = cache.seq[b];
      Mat X = sc.dropE.size() ? Mat(sc.E.cwiseProduct(sc.dropE)) : sc.E;
      Mat dXin = Mat::Zero(L, d);
      Eigen::RowVectorXd dh = Eigen::RowVectorXd::Zero(d);
      for (int j = L - 1; j >= 0; --j) {
        dh += d_es[b].row(j);
        if (!enc.mask(b, j)) continue;  // state passed through unchanged
        Eigen::RowVectorXd h_prev = j > 0
                                        ? Eigen::RowVectorXd(sc.Hgru.row(j - 1))
                                        : Eigen::RowVectorXd::Zero(d);
        Eigen::RowVectorXd z = sc.Zg.row(j);
        Eigen::RowVectorXd r = sc.Rg.row(j);
        Eigen::RowVectorXd hc = sc.Hc.row(j);
        Eigen::RowVectorXd x = X.row(j);

        Eigen::RowVectorXd dz = dh.cwiseProduct(hc - h_prev);
        Eigen::RowVectorXd dhc = dh.cwiseProduct(z);
        Eigen::RowVectorXd dh_prev =
            dh.cwiseProduct(Eigen::RowVectorXd::Ones(d) - z);

        Eigen::RowVectorXd da_h =
            dhc.array() * (1.0 - hc.array() * hc.array());
        gg.Wh += x.transpose() * da_h;
        gg.Uh += (r.cwiseProduct(h_prev)).transpose() * da_h;
        gg.bh.col(0) += da_h.transpose();
        dXin.row(j) += da_h * g.Wh.transpose();
        Eigen::RowVectorXd drh = da_h * g.Uh.transpose();
        Eigen::RowVectorXd dr = drh.cwiseProduct(h_prev);
        dh_prev += drh.cwiseProduct(r);

        Eigen::RowVectorXd da_r = dr.array() * r.array() * (1.0 - r.array());
        gg.Wr += x.transpose() * da_r;
        gg.Ur += h_prev.transpose() * da_r;
        gg.br.col(0) += da_r.transpose();
        dXin.row(j) += da_r * g.Wr.transpose();
        dh_prev += da_r * g.Ur.transpose();

        Eigen::RowVectorXd da_z = dz.array() * z.array() * (1.0 - z.array());
        gg.Wz += x.transpose() * da_z;
        gg.Uz += h_prev.transpose() * da_z;
        gg.bz.col(0) += da_z.transpose();
        dXin.row(j) += da_z * g.Wz.transpose();
        dh_prev += da_z * g.Uz.transpose();

        dh = dh_prev;
      }
      Mat dE = sc.dropE.size() ? Mat(dXin.cwiseProduct(sc.dropE)) : dXin;
      for (int j = 0; j < L; ++j) {
        grads.item_embeddings.row(cache.ids(b, j)) += dE.row(j);
        grads.position_embeddings.row(j) += dE.row(j);
      }
    }
  }
};

}  // namespace

std::unique_ptr<Encoder> make_encoder(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::attention:
      return std::make_unique<AttentionEncoder>();
    case EncoderKind::recurrent:
      return std::make_unique<RecurrentEncoder>();
  }
  throw std::invalid_argument("make_encoder: unknown encoder kind");
}

Encoded encode_sequence(const IdMat& input_ids, const ModelState& state,
                        bool train_mode, RngStream* dropout_rng,
                        bool want_cache) {
  return make_encoder(state.config.encoder)
      ->encode(input_ids, state, train_mode, dropout_rng, want_cache);
}

void encode_backward(const ModelState& state, const Encoded& enc,
                     const std::vector<Mat>& d_es, ModelState& grads) {
  make_encoder(state.config.encoder)->backward(state, enc, d_es, grads);
}

Denoised denoise_mean(const Encoded& enc, int t, const ModelState& state,
                      bool want_cache) {
  if (t < 0 || t > state.config.max_step) {
    throw std::out_of_range("denoise_mean: step " + std::to_string(t) +
                            " outside [0, " +
                            std::to_string(state.config.max_step) + "]");
  }
  const int B = static_cast<int>(enc.e_s.size());
  const int L = state.config.max_len;
  const int d = state.config.d;
  const int heads = state.config.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::RowVectorXd q =
      state.step_embeddings.row(t) * state.decoder.Wq;

  Denoised out;
  out.mu.resize(B);
  auto cache = std::make_shared<DenoiseCache>();
  cache->seq.resize(B);
  for (int b = 0; b < B; ++b) {
    auto& sc = cache->seq[b];
    sc.q = q;
    sc.K = enc.e_s[b] * state.decoder.Wk;
    sc.V = enc.e_s[b] * state.decoder.Wv;
    sc.alpha.assign(heads, Mat::Zero(L, L));
    Mat mu(L, d);
    for (int h = 0; h < heads; ++h) {
      Eigen::RowVectorXd qh = q.segment(h * dh, dh);
      Vec key_scores = sc.K.middleCols(h * dh, dh) * qh.transpose() * scale;
      auto& alpha = sc.alpha[h];
      for (int j = 0; j < L; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k <= j; ++k) {
          if (visible(j, k, enc.mask, b)) mx = std::max(mx, key_scores(k));
        }
        double z = 0.0;
        for (int k = 0; k <= j; ++k) {
          if (visible(j, k, enc.mask, b)) {
            alpha(j, k) = std::exp(key_scores(k) - mx);
            z += alpha(j, k);
          }
        }
        for (int k = 0; k <= j; ++k) alpha(j, k) /= z;
      }
      mu.middleCols(h * dh, dh) = alpha * sc.V.middleCols(h * dh, dh);
    }
    out.mu[b] = mu;
  }
  if (want_cache) out.cache = std::move(cache);
  return out;
}

void denoise_backward(const ModelState& state, const Encoded& enc,
                      const Denoised& den, int t,
                      const std::vector<Mat>& d_mu, ModelState& grads,
                      std::vector<Mat>& d_es) {
  if (!den.cache) {
    throw std::logic_error("denoise_backward: forward ran without a cache");
  }
  const int L = state.config.max_len;
  const int d = state.config.d;
  const int heads = state.config.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Eigen::RowVectorXd dq = Eigen::RowVectorXd::Zero(d);
  for (std::size_t b = 0; b < den.cache->seq.size(); ++b) {
    const auto& sc = den.cache->seq[b];
    Mat dK = Mat::Zero(L, d), dV = Mat::Zero(L, d);
    for (int h = 0; h < heads; ++h) {
      auto dMuh = d_mu[b].middleCols(h * dh, dh);
      const auto& alpha = sc.alpha[h];
      Mat dAlpha = dMuh * sc.V.middleCols(h * dh, dh).transpose();
      dV.middleCols(h * dh, dh) = alpha.transpose() * dMuh;
      Mat dS = softmax_rows_backward(alpha, dAlpha);
      // Scores depend on k only: s_{jk} = q_h . K_{hk} * scale.
      Eigen::RowVectorXd col_sums = dS.colwise().sum();
      dq.segment(h * dh, dh) +=
          col_sums * sc.K.middleCols(h * dh, dh) * scale;
      dK.middleCols(h * dh, dh) =
          col_sums.transpose() * sc.q.segment(h * dh, dh) * scale;
    }
    grads.decoder.Wk += enc.e_s[b].transpose() * dK;
    grads.decoder.Wv += enc.e_s[b].transpose() * dV;
    d_es[b] += dK * state.decoder.Wk.transpose() +
               dV * state.decoder.Wv.transpose();
  }
  grads.decoder.Wq += state.step_embeddings.row(t).transpose() * dq;
  grads.step_embeddings.row(t) += dq * state.decoder.Wq.transpose();
}

std::vector<Mat> diffuse_targets(const IdMat& target_ids, int t,
                                 const ModelState& state,
                                 const DiffusionSchedule& schedule,
                                 const std::vector<Mat>& eps, bool identity) {
  check_ids(target_ids, state, "diffuse_targets");
  const int B = static_cast<int>(target_ids.rows());
  const int L = state.config.max_len;
  const int d = state.config.d;
  std::vector<Mat> out(B);
  for (int b = 0; b < B; ++b) {
    Mat x0(L, d);
    for (int j = 0; j < L; ++j) {
      x0.row(j) = state.item_embeddings.row(target_ids(b, j));
    }
    if (identity || t == 0) {
      out[b] = x0;
    } else {
      out[b] = marginal_sample(schedule, x0, t, eps.at(b));
    }
  }
  return out;
}

std::vector<Mat> diffuse_targets(const IdMat& target_ids, int t,
                                 const ModelState& state,
                                 const DiffusionSchedule& schedule,
                                 RngStream& rng, bool identity) {
  const int B = static_cast<int>(target_ids.rows());
  std::vector<Mat> eps(B);
  for (int b = 0; b < B; ++b) {
    eps[b].resize(state.config.max_len, state.config.d);
    rng.fill_normal(eps[b]);
  }
  return diffuse_targets(target_ids, t, state, schedule, eps, identity);
}

double prediction_noise_scale(const DiffusionSchedule& schedule, int t,
                              NoiseScaleMode mode) {
  if (t < 0 || t > schedule.max_step()) {
    throw std::out_of_range("prediction_noise_scale: step out of range");
  }
  if (t == 0) return 0.0;
  const double v = schedule.posterior_variance(t);
  return mode == NoiseScaleMode::paper ? v : std::sqrt(v);
}

std::vector<Mat> sample_prediction(const std::vector<Mat>& mu, int t,
                                   const DiffusionSchedule& schedule,
                                   const std::vector<Mat>& eps,
                                   bool deterministic, NoiseScaleMode mode) {
  if (deterministic) return mu;
  const double s = prediction_noise_scale(schedule, t, mode);
  std::vector<Mat> out(mu.size());
  for (std::size_t b = 0; b < mu.size(); ++b) {
    out[b] = s == 0.0 ? mu[b] : Mat(mu[b] + s * eps.at(b));
  }
  return out;
}

std::vector<Mat> sample_prediction(const std::vector<Mat>& mu, int t,
                                   const DiffusionSchedule& schedule,
                                   RngStream& rng, bool deterministic,
                                   NoiseScaleMode mode) {
  std::vector<Mat> eps(mu.size());
  for (std::size_t b = 0; b < mu.size(); ++b) {
    eps[b].resize(mu[b].rows(), mu[b].cols());
    rng.fill_normal(eps[b]);
  }
  return sample_prediction(mu, t, schedule, eps, deterministic, mode);
}

Mat predict_scores(const IdMat& input_ids, const ModelState& state,
                   const DiffusionSchedule& schedule, int t_infer) {
  (void)schedule;  // the deterministic mean needs no noise scale
  auto enc = encode_sequence(input_ids, state, /*train_mode=*/false);
  auto den = denoise_mean(enc, t_infer, state);
  const int B = static_cast<int>(input_ids.rows());
  const int L = state.config.max_len;
  Mat scores(B, state.item_count);
  auto items = state.item_embeddings.bottomRows(state.item_count);
  for (int b = 0; b < B; ++b) {
    int last = L - 1;
    for (int j = L - 1; j >= 0; --j) {
      if (enc.mask(b, j)) {
        last = j;
        break;
      }
    }
    scores.row(b) = den.mu[b].row(last) * items.transpose();
  }
  return scores;
}

std::vector<Mat> attention_weights(const Encoded& enc, int b, int block) {
  if (!enc.cache) throw std::logic_error("attention_weights: no cache");
  return enc.cache->seq.at(b).blocks.at(block).A;
}

}  // namespace cddrec
