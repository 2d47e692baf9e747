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

#include "cddrec/objective.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace cddrec {

namespace {

constexpr double kLogitClamp = 15.0;

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

double cross_divergence_impl(const Mat& x_hat, const Mat& x_pos,
                             const Mat& x_neg, Mat* d_x_hat, Mat* d_x_pos,
                             Mat* d_x_neg) {
  require_same_shape(x_hat, x_pos, "cross_divergence_loss");
  require_same_shape(x_hat, x_neg, "cross_divergence_loss");
  const Eigen::Index P = x_hat.rows();
  if (P == 0) throw std::invalid_argument("empty effective batch");

  double loss = 0.0;
  for (Eigen::Index p = 0; p < P; ++p) {
    const double raw_pos = x_hat.row(p).dot(x_pos.row(p));
    const double raw_neg = x_hat.row(p).dot(x_neg.row(p));
    const double c_pos = std::clamp(raw_pos, -kLogitClamp, kLogitClamp);
    const double c_neg = std::clamp(raw_neg, -kLogitClamp, kLogitClamp);
    loss += softplus(-c_pos) + softplus(c_neg);
    if (d_x_hat != nullptr) {
      // The clamp is flat outside its window, so saturated logits pass no
      // gradient.
      const bool pos_live = std::abs(raw_pos) < kLogitClamp;
      const bool neg_live = std::abs(raw_neg) < kLogitClamp;
      const double g_pos = pos_live ? (sigmoid(c_pos) - 1.0) / double(P) : 0.0;
      const double g_neg = neg_live ? sigmoid(c_neg) / double(P) : 0.0;
      d_x_hat->row(p) += g_pos * x_pos.row(p) + g_neg * x_neg.row(p);
      d_x_pos->row(p) += g_pos * x_hat.row(p);
      d_x_neg->row(p) += g_neg * x_hat.row(p);
    }
  }
  return loss / double(P);
}

double mse_impl(const Mat& x_hat, const Mat& x_pos, Mat* d_x_hat,
                Mat* d_x_pos) {
  require_same_shape(x_hat, x_pos, "mse_loss");
  const Eigen::Index P = x_hat.rows();
  if (P == 0) throw std::invalid_argument("empty effective batch");
  Mat diff = x_hat - x_pos;
  if (d_x_hat != nullptr) {
    *d_x_hat += (2.0 / double(P)) * diff;
    *d_x_pos -= (2.0 / double(P)) * diff;
  }
  return diff.squaredNorm() / double(P);
}

// Shared InfoNCE core. Anchors are rows of `x_hat`; `keys` supplies the
// positives (matching row) and one set of in-batch negatives, the other
// anchors supply the second set. Streams one anchor at a time so memory
// stays linear in the batch.
double infonce_impl(const Mat& x_hat, const Mat& keys, double tau,
                    Mat* d_x_hat, Mat* d_keys,
                    const std::vector<int>* groups) {
  require_same_shape(x_hat, keys, "infonce");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  const Eigen::Index P = x_hat.rows();
  if (P < 2) throw std::invalid_argument("InfoNCE needs at least 2 positions");
  if (groups != nullptr && Eigen::Index(groups->size()) != P) {
    throw std::invalid_argument("group labels do not match the batch");
  }

  double loss = 0.0;
  Vec s_row(P), r_row(P);
  for (Eigen::Index i = 0; i < P; ++i) {
    s_row.noalias() = keys * x_hat.row(i).transpose() / tau;
    r_row.noalias() = x_hat * x_hat.row(i).transpose() / tau;

    auto visible = [&](Eigen::Index j) {
      return groups == nullptr || (*groups)[j] == (*groups)[i];
    };

    double m = -std::numeric_limits<double>::infinity();
    Eigen::Index seen = 0;
    for (Eigen::Index j = 0; j < P; ++j) {
      if (!visible(j)) continue;
      ++seen;
      m = std::max(m, s_row(j));
      if (j != i) m = std::max(m, r_row(j));
    }
    if (seen < 2) {
      throw std::invalid_argument(
          "negative scope leaves an anchor without negatives");
    }

    double z = 0.0;
    for (Eigen::Index j = 0; j < P; ++j) {
      if (!visible(j)) continue;
      z += std::exp(s_row(j) - m);
      if (j != i) z += std::exp(r_row(j) - m);
    }
    loss += m + std::log(z) - s_row(i);

    if (d_x_hat != nullptr) {
      const double inv = 1.0 / (double(P) * z * tau);
      for (Eigen::Index j = 0; j < P; ++j) {
        if (!visible(j)) continue;
        double a = std::exp(s_row(j) - m) * inv;
        if (j == i) a -= 1.0 / (double(P) * tau);
        d_x_hat->row(i) += a * keys.row(j);
        d_keys->row(j) += a * x_hat.row(i);
        if (j != i) {
          const double b = std::exp(r_row(j) - m) * inv;
          d_x_hat->row(i) += b * x_hat.row(j);
          d_x_hat->row(j) += b * x_hat.row(i);
        }
      }
    }
  }
  return loss / double(P);
}

}  // namespace

double dissimilarity(const Vec& x_t, const Vec& x_hat) {
  if (x_t.size() != x_hat.size()) {
    throw std::invalid_argument("dissimilarity: dimension mismatch (" +
                                std::to_string(x_t.size()) + " vs " +
                                std::to_string(x_hat.size()) + ")");
  }
  return -x_t.dot(x_hat);
}

double cross_divergence_loss(const Mat& x_hat, const Mat& x_pos,
                             const Mat& x_neg) {
  return cross_divergence_impl(x_hat, x_pos, x_neg, nullptr, nullptr, nullptr);
}

double cross_divergence_loss_grad(const Mat& x_hat, const Mat& x_pos,
                                  const Mat& x_neg, Mat& d_x_hat,
                                  Mat& d_x_pos, Mat& d_x_neg) {
  return cross_divergence_impl(x_hat, x_pos, x_neg, &d_x_hat, &d_x_pos,
                               &d_x_neg);
}

double mse_loss(const Mat& x_hat, const Mat& x_pos) {
  return mse_impl(x_hat, x_pos, nullptr, nullptr);
}

double mse_loss_grad(const Mat& x_hat, const Mat& x_pos, Mat& d_x_hat,
                     Mat& d_x_pos) {
  return mse_impl(x_hat, x_pos, &d_x_hat, &d_x_pos);
}

std::string to_string(NegativeScope scope) {
  return scope == NegativeScope::batch ? "batch" : "sequence";
}

NegativeScope negative_scope_from_string(const std::string& text) {
  if (text == "batch") return NegativeScope::batch;
  if (text == "sequence") return NegativeScope::sequence;
  throw std::invalid_argument("unknown negative scope: " + text);
}

double in_view_infonce(const Mat& x_hat, const Mat& x_t, double tau,
                       const std::vector<int>* groups) {
  return infonce_impl(x_hat, x_t, tau, nullptr, nullptr, groups);
}

double in_view_infonce_grad(const Mat& x_hat, const Mat& x_t, double tau,
                            Mat& d_x_hat, Mat& d_x_t,
                            const std::vector<int>* groups) {
  return infonce_impl(x_hat, x_t, tau, &d_x_hat, &d_x_t, groups);
}

double cross_view_infonce(const Mat& x_hat, const Mat& x_hat_aug, double tau,
                          const std::vector<int>* groups) {
  return infonce_impl(x_hat, x_hat_aug, tau, nullptr, nullptr, groups);
}

double cross_view_infonce_grad(const Mat& x_hat, const Mat& x_hat_aug,
                               double tau, Mat& d_x_hat, Mat& d_x_hat_aug,
                               const std::vector<int>* groups) {
  return infonce_impl(x_hat, x_hat_aug, tau, &d_x_hat, &d_x_hat_aug, groups);
}

std::string to_string(LossVariant variant) {
  switch (variant) {
    case LossVariant::full: return "full";
    case LossVariant::mse_only: return "mse_only";
    case LossVariant::no_rescale: return "no_rescale";
    case LossVariant::single_view: return "single_view";
    case LossVariant::in_only: return "in_only";
    case LossVariant::cross_only: return "cross_only";
    case LossVariant::cd_only: return "cd_only";
  }
  throw std::invalid_argument("unknown loss variant");
}

LossVariant loss_variant_from_string(const std::string& text) {
  for (auto v : {LossVariant::full, LossVariant::mse_only,
                 LossVariant::no_rescale, LossVariant::single_view,
                 LossVariant::in_only, LossVariant::cross_only,
                 LossVariant::cd_only}) {
    if (text == to_string(v)) return v;
  }
  throw std::invalid_argument("unknown loss variant: " + text);
}

bool variant_needs_augmented_view(LossVariant variant) {
  return variant_has_cross_view(variant);
}

bool variant_has_in_view(LossVariant variant) {
  switch (variant) {
    case LossVariant::full:
    case LossVariant::no_rescale:
    case LossVariant::single_view:
    case LossVariant::in_only:
      return true;
    default:
      return false;
  }
}

bool variant_has_cross_view(LossVariant variant) {
  switch (variant) {
    case LossVariant::full:
    case LossVariant::no_rescale:
    case LossVariant::cross_only:
      return true;
    default:
      return false;
  }
}

bool variant_uses_mse(LossVariant variant) {
  return variant == LossVariant::mse_only;
}

double step_weight(int t, int max_step, LossVariant variant) {
  if (t < 0 || t > max_step) throw std::out_of_range("step out of range");
  if (variant == LossVariant::no_rescale) return 1.0 / double(max_step + 1);
  return 1.0 / double(t + 1);
}

LossBreakdown total_loss(const std::vector<StepLosses>& per_step,
                         double lambda, double tau, LossVariant variant) {
  if (per_step.empty()) {
    throw std::invalid_argument("total_loss: no step components");
  }
  const int T = int(per_step.size()) - 1;
  LossBreakdown out;
  out.per_step = per_step;
  out.lambda = lambda;
  out.tau = tau;
  for (int t = 0; t <= T; ++t) {
    const StepLosses& s = per_step[t];
    const char* bad = nullptr;
    if (!std::isfinite(s.cd)) bad = "cd";
    if (!std::isfinite(s.in_view)) bad = "in_view";
    if (!std::isfinite(s.cross_view)) bad = "cross_view";
    if (bad != nullptr) {
      throw std::runtime_error("non-finite " + std::string(bad) +
                               " at step " + std::to_string(t));
    }
    double term = s.cd;
    if (variant_has_in_view(variant)) term += lambda * s.in_view;
    if (variant_has_cross_view(variant)) term += lambda * s.cross_view;
    out.total += step_weight(t, T, variant) * term;
  }
  return out;
}

void append_loss_log(std::ostream& out, int epoch,
                     const LossBreakdown& breakdown) {
  for (std::size_t t = 0; t < breakdown.per_step.size(); ++t) {
    const StepLosses& s = breakdown.per_step[t];
    out << epoch << '\t' << t << '\t' << s.cd << '\t' << s.in_view << '\t'
        << s.cross_view << '\t' << breakdown.total << '\n';
  }
}

}  // namespace cddrec
