#include <cmath>
#include <stdexcept>
#include <vector>

#include "cddrec/model.hpp"
#include "doctest.h"

using namespace cddrec;

namespace {

ModelState small_state(EncoderKind kind, int d = 4, int L = 3, int T = 3,
                       int blocks = 2, int heads = 2, int items = 6,
                       double dropout = 0.0, std::uint64_t seed = 11) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.max_len = L;
  cfg.max_step = T;
  cfg.encoder = kind;
  cfg.blocks = blocks;
  cfg.heads = heads;
  cfg.dropout = dropout;
  RngStream rng(seed, RngPurpose::init);
  return init_model(cfg, items, rng);
}

std::vector<Mat> random_like(const std::vector<Mat>& shape, std::uint64_t seed) {
  RngStream rng(seed, RngPurpose::eval);
  std::vector<Mat> out(shape.size());
  for (std::size_t b = 0; b < shape.size(); ++b) {
    out[b].resize(shape[b].rows(), shape[b].cols());
    rng.fill_normal(out[b]);
  }
  return out;
}

double inner(const std::vector<Mat>& a, const std::vector<Mat>& b) {
  double v = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v += (a[i].array() * b[i].array()).sum();
  }
  return v;
}

struct ParamSlot {
  std::string name;
  Mat* value;
  const Mat* grad;
};

std::vector<ParamSlot> slots(ModelState& state, const ModelState& grads) {
  std::vector<ParamSlot> out;
  visit_params(state, [&](const std::string& name, Mat& m) {
    out.push_back({name, &m, nullptr});
  });
  std::size_t i = 0;
  visit_params(grads, [&](const std::string&, const Mat& m) {
    out[i++].grad = &m;
  });
  return out;
}

// Central finite differences of `loss` against the analytic gradients for
// every parameter entry. The normalization layers sit close to their epsilon
// floor at this parameter scale, which inflates higher-order terms, so the
// step is small and the tolerance allows for truncation error.
template <typename LossFn>
void check_grads(ModelState& state, const ModelState& grads, LossFn loss,
                 double h = 1e-6, double tol = 1e-5) {
  for (auto& slot : slots(state, grads)) {
    for (Eigen::Index c = 0; c < slot.value->cols(); ++c) {
      for (Eigen::Index r = 0; r < slot.value->rows(); ++r) {
        const double saved = (*slot.value)(r, c);
        (*slot.value)(r, c) = saved + h;
        const double up = loss(state);
        (*slot.value)(r, c) = saved - h;
        const double down = loss(state);
        (*slot.value)(r, c) = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = (*slot.grad)(r, c);
        const double rel = std::abs(analytic - numeric) /
                           std::max({1.0, std::abs(analytic), std::abs(numeric)});
        INFO(slot.name << "(" << r << "," << c << "): analytic " << analytic
                       << " numeric " << numeric);
        CHECK(rel <= tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("attention weights match a hand-computed softmax") {
  auto state = small_state(EncoderKind::attention, /*d=*/2, /*L=*/3, /*T=*/1,
                           /*blocks=*/1, /*heads=*/1, /*items=*/3);
  state.position_embeddings.setZero();
  state.item_embeddings.row(1) << 1.0, 0.0;
  state.item_embeddings.row(2) << 0.0, 1.0;
  state.item_embeddings.row(3) << 1.0, 1.0;
  state.encoder_blocks[0].Wq = Mat::Identity(2, 2);
  state.encoder_blocks[0].Wk = Mat::Identity(2, 2);

  IdMat ids(1, 3);
  ids << 1, 2, 3;
  auto enc = encode_sequence(ids, state, false, nullptr, /*want_cache=*/true);
  Mat A = attention_weights(enc, 0, 0)[0];

  const double s = 1.0 / std::sqrt(2.0);  // scores scale at d = 1 head of 2
  const double e1 = std::exp(s), e2 = std::exp(2.0 * s);
  CHECK(A(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(A(1, 0) == doctest::Approx(1.0 / (1.0 + e1)).epsilon(1e-12));
  CHECK(A(1, 1) == doctest::Approx(e1 / (1.0 + e1)).epsilon(1e-12));
  CHECK(A(2, 0) == doctest::Approx(e1 / (2.0 * e1 + e2)).epsilon(1e-12));
  CHECK(A(2, 2) == doctest::Approx(e2 / (2.0 * e1 + e2)).epsilon(1e-12));
  CHECK(A(1, 0) == doctest::Approx(0.330236).epsilon(1e-4));
  CHECK(A(2, 2) == doctest::Approx(0.503490).epsilon(1e-4));
  for (int j = 0; j < 3; ++j) {
    CHECK(A.row(j).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Padded keys get zero weight; a lone visible token attends to itself.
  IdMat padded(1, 3);
  padded << 0, 1, 2;
  auto enc2 = encode_sequence(padded, state, false, nullptr, true);
  Mat A2 = attention_weights(enc2, 0, 0)[0];
  CHECK(A2(1, 0) == 0.0);
  CHECK(A2(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(A2(2, 0) == 0.0);
  CHECK(A2(2, 1) + A2(2, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero query/key projections reduce the decoder to prefix averages") {
  auto state = small_state(EncoderKind::attention, 4, 3, 2, 1, 2, 5);
  state.decoder.Wq.setZero();
  state.decoder.Wk.setZero();

  Encoded enc;
  enc.mask = BoolMat::Constant(1, 3, true);
  Mat e_s(3, 4);
  RngStream rng(5, RngPurpose::eval);
  rng.fill_normal(e_s);
  enc.e_s = {e_s};

  auto den = denoise_mean(enc, 1, state);
  Mat proj = e_s * state.decoder.Wv;
  for (int j = 0; j < 3; ++j) {
    Mat want = proj.topRows(j + 1).colwise().mean();
    CHECK((den.mu[0].row(j) - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("outputs at a position ignore later items") {
  for (auto kind : {EncoderKind::attention, EncoderKind::recurrent}) {
    auto state = small_state(kind, 4, 4, 2, 2, 2, 9);
    IdMat a(1, 4), b(1, 4);
    a << 3, 1, 4, 2;
    b << 3, 1, 4, 9;  // only the last position differs
    auto ea = encode_sequence(a, state, false);
    auto eb = encode_sequence(b, state, false);
    for (int j = 0; j < 3; ++j) {
      CHECK((ea.e_s[0].row(j) - eb.e_s[0].row(j)).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((ea.e_s[0].row(3) - eb.e_s[0].row(3)).cwiseAbs().maxCoeff() > 0.0);

    auto da = denoise_mean(ea, 1, state);
    auto db = denoise_mean(eb, 1, state);
    for (int j = 0; j < 3; ++j) {
      CHECK((da.mu[0].row(j) - db.mu[0].row(j)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("batch order only permutes the outputs") {
  auto state = small_state(EncoderKind::attention, 4, 3, 2, 2, 2, 9);
  IdMat fwd(2, 3), rev(2, 3);
  fwd << 1, 2, 3, 0, 7, 8;
  rev << 0, 7, 8, 1, 2, 3;
  auto ef = encode_sequence(fwd, state, false);
  auto er = encode_sequence(rev, state, false);
  CHECK((ef.e_s[0] - er.e_s[1]).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ef.e_s[1] - er.e_s[0]).cwiseAbs().maxCoeff() == 0.0);

  auto schedule = build_schedule(2, 0.1);
  Mat sf = predict_scores(fwd, state, schedule);
  Mat sr = predict_scores(rev, state, schedule);
  CHECK((sf.row(0) - sr.row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sf.row(1) - sr.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("recurrent encoder carries state across padded positions") {
  auto state = small_state(EncoderKind::recurrent, 4, 4, 2, 1, 1, 9);
  // Zero the position table so a padded slot adds nothing new downstream.
  state.position_embeddings.setZero();
  IdMat ids(1, 4);
  ids << 2, 0, 3, 0;
  auto enc = encode_sequence(ids, state, false);
  CHECK((enc.e_s[0].row(1) - enc.e_s[0].row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((enc.e_s[0].row(3) - enc.e_s[0].row(2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((enc.e_s[0].row(2) - enc.e_s[0].row(0)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("prediction sampling honors the flag, the floor, and the scale") {
  auto state = small_state(EncoderKind::attention, 4, 3, 3, 1, 2, 5);
  auto schedule = build_schedule(3, 0.3);
  std::vector<Mat> mu = {Mat::Constant(3, 4, 0.5)};

  RngStream rng(3, RngPurpose::prediction);
  auto det = sample_prediction(mu, 2, schedule, rng, true, NoiseScaleMode::paper);
  CHECK((det[0] - mu[0]).cwiseAbs().maxCoeff() == 0.0);

  // Step 1 has zero posterior variance, so sampling changes nothing.
  auto still = sample_prediction(mu, 1, schedule, rng, false, NoiseScaleMode::paper);
  CHECK((still[0] - mu[0]).cwiseAbs().maxCoeff() == 0.0);
  auto at0 = sample_prediction(mu, 0, schedule, rng, false, NoiseScaleMode::paper);
  CHECK((at0[0] - mu[0]).cwiseAbs().maxCoeff() == 0.0);

  std::vector<Mat> eps = {Mat::Constant(3, 4, 2.0)};
  auto paper = sample_prediction(mu, 2, schedule, eps, false, NoiseScaleMode::paper);
  auto root = sample_prediction(mu, 2, schedule, eps, false, NoiseScaleMode::sqrt);
  const double v = schedule.posterior_variance(2);
  CHECK(paper[0](0, 0) == doctest::Approx(0.5 + v * 2.0).epsilon(1e-14));
  CHECK(root[0](0, 0) == doctest::Approx(0.5 + std::sqrt(v) * 2.0).epsilon(1e-14));

  // Monte-Carlo: the sample mean sits on mu within four standard errors.
  const int n = 10000;
  double sum = 0.0;
  std::vector<Mat> one = {Mat::Constant(1, 1, 0.25)};
  RngStream mc(17, RngPurpose::prediction);
  for (int i = 0; i < n; ++i) {
    sum += sample_prediction(one, 3, schedule, mc, false,
                             NoiseScaleMode::paper)[0](0, 0);
  }
  const double scale = prediction_noise_scale(schedule, 3, NoiseScaleMode::paper);
  CHECK(std::abs(sum / n - 0.25) < 4.0 * scale / std::sqrt(n));
}

TEST_CASE("diffuse_targets corrupts embeddings by the schedule") {
  auto state = small_state(EncoderKind::attention, 4, 3, 3, 1, 2, 5);
  auto schedule = build_schedule(3, 0.3);
  IdMat targets(1, 3);
  targets << 0, 2, 4;

  std::vector<Mat> eps = {Mat::Constant(3, 4, 1.0)};
  auto clean = diffuse_targets(targets, 2, state, schedule, eps, true);
  CHECK((clean[0].row(0)).cwiseAbs().maxCoeff() == 0.0);  // pad row
  CHECK((clean[0].row(1) - state.item_embeddings.row(2)).cwiseAbs().maxCoeff() ==
        0.0);

  auto at0 = diffuse_targets(targets, 0, state, schedule, eps, false);
  CHECK((at0[0] - clean[0]).cwiseAbs().maxCoeff() == 0.0);

  auto noisy = diffuse_targets(targets, 2, state, schedule, eps, false);
  const double ab = schedule.alpha_bar(2);
  Mat want = std::sqrt(ab) * clean[0] + std::sqrt(1.0 - ab) * eps[0];
  CHECK((noisy[0] - want).cwiseAbs().maxCoeff() < 1e-15);

  IdMat bad(1, 3);
  bad << 0, 99, 1;
  RngStream rng(1, RngPurpose::diffusion);
  CHECK_THROWS_AS(diffuse_targets(bad, 1, state, schedule, rng, false),
                  std::out_of_range);
}

TEST_CASE("predict_scores reads the final non-pad position") {
  auto state = small_state(EncoderKind::attention, 4, 4, 2, 1, 2, 5);
  state.item_embeddings.row(3).setZero();
  auto schedule = build_schedule(2, 0.1);
  IdMat ids(2, 4);
  ids << 0, 1, 2, 4, 0, 0, 5, 1;

  Mat scores = predict_scores(ids, state, schedule, 0);
  REQUIRE(scores.rows() == 2);
  REQUIRE(scores.cols() == 5);
  // Item 3 has a zero embedding, so its score is exactly zero everywhere.
  CHECK(scores(0, 2) == 0.0);
  CHECK(scores(1, 2) == 0.0);

  auto enc = encode_sequence(ids, state, false);
  auto den = denoise_mean(enc, 0, state);
  Mat want0 = den.mu[0].row(3) * state.item_embeddings.bottomRows(5).transpose();
  CHECK((scores.row(0) - want0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the step embedding steers the denoised mean") {
  auto state = small_state(EncoderKind::attention, 4, 3, 3, 1, 2, 5);
  IdMat ids(1, 3);
  ids << 1, 2, 3;
  auto enc = encode_sequence(ids, state, false);
  double max_gap = 0.0;
  for (int t1 = 0; t1 <= 3; ++t1) {
    for (int t2 = t1 + 1; t2 <= 3; ++t2) {
      auto a = denoise_mean(enc, t1, state);
      auto b = denoise_mean(enc, t2, state);
      max_gap = std::max(max_gap, (a.mu[0] - b.mu[0]).cwiseAbs().maxCoeff());
    }
  }
  CHECK(max_gap > 0.0);
  CHECK_THROWS_AS(denoise_mean(enc, 4, state), std::out_of_range);
  CHECK_THROWS_AS(denoise_mean(enc, -1, state), std::out_of_range);
}

TEST_CASE("encoder inputs are validated") {
  auto state = small_state(EncoderKind::attention, 4, 3, 2, 1, 2, 5);
  IdMat wrong(1, 2);
  wrong << 1, 2;
  CHECK_THROWS_AS(encode_sequence(wrong, state, false), std::invalid_argument);
  IdMat oob(1, 3);
  oob << 1, 6, 2;
  CHECK_THROWS_AS(encode_sequence(oob, state, false), std::out_of_range);

  auto dropout_state = small_state(EncoderKind::attention, 4, 3, 2, 1, 2, 5,
                                   /*dropout=*/0.5);
  IdMat ok(1, 3);
  ok << 1, 2, 3;
  CHECK_THROWS_AS(encode_sequence(ok, dropout_state, true, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_encoder(static_cast<EncoderKind>(7)),
                  std::invalid_argument);
}

TEST_CASE("encoder gradients match finite differences") {
  for (auto kind : {EncoderKind::attention, EncoderKind::recurrent}) {
    CAPTURE(to_string(kind));
    auto state = small_state(kind);
    IdMat ids(2, 3);
    ids << 0, 1, 2, 3, 4, 5;

    auto enc = encode_sequence(ids, state, false, nullptr, true);
    auto C = random_like(enc.e_s, 23);
    ModelState grads = zeros_like(state);
    encode_backward(state, enc, C, grads);

    auto loss = [&](const ModelState& s) {
      auto e = encode_sequence(ids, s, false);
      return inner(e.e_s, C);
    };
    check_grads(state, grads, loss);
  }
}

TEST_CASE("decoder gradients match finite differences through the encoder") {
  auto state = small_state(EncoderKind::attention);
  IdMat ids(2, 3);
  ids << 0, 1, 2, 3, 4, 5;
  const int t = 2;

  auto enc = encode_sequence(ids, state, false, nullptr, true);
  auto den = denoise_mean(enc, t, state, /*want_cache=*/true);
  auto C = random_like(den.mu, 31);

  ModelState grads = zeros_like(state);
  std::vector<Mat> d_es(enc.e_s.size());
  for (std::size_t b = 0; b < d_es.size(); ++b) {
    d_es[b] = Mat::Zero(enc.e_s[b].rows(), enc.e_s[b].cols());
  }
  denoise_backward(state, enc, den, t, C, grads, d_es);
  encode_backward(state, enc, d_es, grads);

  auto loss = [&](const ModelState& s) {
    auto e = encode_sequence(ids, s, false);
    auto d = denoise_mean(e, t, s);
    return inner(d.mu, C);
  };
  check_grads(state, grads, loss);
}

TEST_CASE("dropout scales by the keep probability and is keyed") {
  auto state = small_state(EncoderKind::attention, 4, 3, 2, 1, 2, 5,
                           /*dropout=*/0.4, /*seed=*/3);
  IdMat ids(1, 3);
  ids << 1, 2, 3;
  RngStream a(9, RngPurpose::dropout, 1, 2);
  RngStream b(9, RngPurpose::dropout, 1, 2);
  auto ea = encode_sequence(ids, state, true, &a);
  auto eb = encode_sequence(ids, state, true, &b);
  CHECK((ea.e_s[0] - eb.e_s[0]).cwiseAbs().maxCoeff() == 0.0);

  RngStream c(9, RngPurpose::dropout, 1, 3);
  auto ec = encode_sequence(ids, state, true, &c);
  CHECK((ea.e_s[0] - ec.e_s[0]).cwiseAbs().maxCoeff() > 0.0);

  // Inference never applies dropout.
  auto plain1 = encode_sequence(ids, state, false);
  auto plain2 = encode_sequence(ids, state, false);
  CHECK((plain1.e_s[0] - plain2.e_s[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder kinds share shapes and the naming scheme") {
  IdMat ids(2, 3);
  ids << 1, 2, 3, 0, 4, 5;
  for (auto kind : {EncoderKind::attention, EncoderKind::recurrent}) {
    auto state = small_state(kind);
    auto enc = encode_sequence(ids, state, false);
    REQUIRE(enc.e_s.size() == 2);
    CHECK(enc.e_s[0].rows() == 3);
    CHECK(enc.e_s[0].cols() == 4);
  }
  CHECK(to_string(EncoderKind::attention) == "attention");
  CHECK(encoder_kind_from_string("recurrent") == EncoderKind::recurrent);
  CHECK_THROWS_AS(encoder_kind_from_string("mlp"), std::invalid_argument);

  // Parameter names differ only in the encoder section.
  auto att = small_state(EncoderKind::attention);
  auto rec = small_state(EncoderKind::recurrent);
  std::vector<std::string> att_names, rec_names;
  visit_params(att, [&](const std::string& n, const Mat&) {
    att_names.push_back(n);
  });
  visit_params(rec, [&](const std::string& n, const Mat&) {
    rec_names.push_back(n);
  });
  CHECK(att_names.front() == "item_embeddings");
  CHECK(att_names.back() == "dec.Wv");
  CHECK(rec_names.back() == "dec.Wv");
  for (const auto& n : rec_names) CHECK(n.substr(0, 3) != "enc");
}
