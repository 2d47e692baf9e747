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

#include "cddrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace cddrec {

std::string to_string(TieBreak tie) {
  switch (tie) {
    case TieBreak::optimistic: return "optimistic";
    case TieBreak::pessimistic: return "pessimistic";
    case TieBreak::mid: return "mid";
  }
  throw std::invalid_argument("unknown tie break");
}

TieBreak tie_break_from_string(const std::string& text) {
  for (auto t : {TieBreak::optimistic, TieBreak::pessimistic, TieBreak::mid}) {
    if (text == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown tie break: " + text);
}

std::vector<double> target_ranks(const Mat& scores,
                                 const std::vector<int>& targets,
                                 TieBreak tie) {
  const Eigen::Index users = scores.rows();
  const Eigen::Index items = scores.cols();
  if (Eigen::Index(targets.size()) != users) {
    throw std::invalid_argument("one target per score row required");
  }
  std::vector<double> ranks(targets.size());
  for (Eigen::Index u = 0; u < users; ++u) {
    const int target = targets[u];
    if (target == 0) throw std::invalid_argument("target is the pad item");
    if (target < 1 || target > items) {
      throw std::out_of_range("target item " + std::to_string(target) +
                              " outside the catalog");
    }
    const double s = scores(u, target - 1);
    const auto row = scores.row(u).array();
    const Eigen::Index greater = (row > s).count();
    const Eigen::Index ties = (row == s).count() - 1;  // excludes the target
    const double optimistic = double(greater + 1);
    const double pessimistic = double(greater + ties + 1);
    switch (tie) {
      case TieBreak::optimistic: ranks[u] = optimistic; break;
      case TieBreak::pessimistic: ranks[u] = pessimistic; break;
      case TieBreak::mid: ranks[u] = 0.5 * (optimistic + pessimistic); break;
    }
  }
  return ranks;
}

RankMetrics rank_metrics_from_ranks(const std::vector<double>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("no ranks to summarize");
  RankMetrics out;
  const double n = double(ranks.size());
  for (int k : {1, 5, 10}) {
    out.recall[k] =
        std::count_if(ranks.begin(), ranks.end(),
                      [&](double r) { return r <= k; }) /
        n;
  }
  for (int k : {5, 10}) {
    double sum = 0.0;
    for (double r : ranks) {
      if (r <= k) sum += 1.0 / std::log2(r + 1.0);
    }
    out.ndcg[k] = sum / n;
  }
  out.mrr = std::accumulate(ranks.begin(), ranks.end(), 0.0,
                            [](double acc, double r) { return acc + 1.0 / r; }) /
            n;
  return out;
}

RankMetrics rank_metrics(const Mat& scores, const std::vector<int>& targets,
                         TieBreak tie) {
  return rank_metrics_from_ranks(target_ranks(scores, targets, tie));
}

AvgChange avg_change(const Vec& scores_row, int top_n) {
  if (top_n < 2) throw std::invalid_argument("top_n must be at least 2");
  if (scores_row.size() < top_n) {
    throw std::invalid_argument("fewer than top_n candidates (" +
                                std::to_string(scores_row.size()) + " < " +
                                std::to_string(top_n) + ")");
  }
  std::vector<double> top(scores_row.data(),
                          scores_row.data() + scores_row.size());
  std::partial_sort(top.begin(), top.begin() + top_n, top.end(),
                    std::greater<double>());
  top.resize(top_n);

  AvgChange out;
  const double low = top.back();  // smallest of the sorted top-n
  if (low <= 0.0) {
    const double shift = 1.0 - low;
    for (double& s : top) s += shift;
    out.shifted = true;
  }
  double sum = 0.0;
  for (int i = 0; i + 1 < top_n; ++i) {
    sum += std::abs(top[i + 1] - top[i]) / top[i];
  }
  out.value = sum / double(top_n - 1) * 100.0;
  return out;
}

std::map<int, double> per_step_analysis(const IdMat& input_ids,
                                        const ModelState& state,
                                        const DiffusionSchedule& schedule,
                                        int top_n) {
  std::map<int, double> out;
  const int users = int(input_ids.rows());
  if (users == 0) throw std::invalid_argument("no users to analyze");
  for (int t = schedule.max_step(); t >= 0; --t) {
    Mat scores = predict_scores(input_ids, state, schedule, t);
    const int n = std::min<int>(top_n, int(scores.cols()));
    double mean = 0.0;
    for (int u = 0; u < users; ++u) {
      Vec row = scores.row(u).transpose();
      mean += avg_change(row, n).value;
    }
    out[t] = mean / double(users);
  }
  return out;
}

SubgroupReport subgroup_report(
    const std::vector<double>& ranks,
    const std::vector<SubgroupAssignment>& buckets) {
  if (ranks.size() != buckets.size()) {
    throw std::invalid_argument("one bucket assignment per rank required");
  }
  SubgroupReport out;
  std::map<int, std::vector<double>> by_len, by_freq;
  for (std::size_t u = 0; u < ranks.size(); ++u) {
    by_len[buckets[u].length_bucket].push_back(ranks[u]);
    by_freq[buckets[u].frequency_bucket].push_back(ranks[u]);
  }
  auto fill = [](const std::map<int, std::vector<double>>& groups,
                 auto label, std::map<std::string, SubgroupStats>& dest) {
    for (const auto& [b, members] : groups) {
      auto m = rank_metrics_from_ranks(members);
      dest[label(b)] = {int(members.size()), m.recall[10], m.ndcg[10]};
    }
  };
  fill(by_len, length_bucket_label, out.by_length);
  fill(by_freq, frequency_bucket_label, out.by_frequency);
  return out;
}

MetricsReport evaluate_split(const std::vector<InteractionSequence>& sequences,
                             const ModelState& state,
                             const DiffusionSchedule& schedule,
                             const EvalOptions& options) {
  if (sequences.empty()) throw std::invalid_argument("no sequences to evaluate");
  std::vector<int> members(sequences.size());
  std::iota(members.begin(), members.end(), 0);

  MetricsReport report;
  report.users = int(members.size());

  std::vector<double> ranks;
  ranks.reserve(members.size());
  double change_sum = 0.0;
  bool any_shifted = false;
  std::map<int, double> step_sums;

  const int batch = std::max(1, options.batch_size);
  for (std::size_t begin = 0; begin < members.size(); begin += batch) {
    const std::size_t end = std::min(members.size(), begin + batch);
    std::vector<int> chunk(members.begin() + begin, members.begin() + end);
    EvalBatch eb = make_eval_batch(sequences, chunk, options.split,
                                   state.config.max_len);
    Mat scores = predict_scores(eb.input_ids, state, schedule, options.t_infer);
    const int top_n = std::min<int>(options.top_n, int(scores.cols()));
    auto chunk_ranks = target_ranks(scores, eb.targets, options.tie);
    ranks.insert(ranks.end(), chunk_ranks.begin(), chunk_ranks.end());
    for (Eigen::Index u = 0; u < scores.rows(); ++u) {
      Vec row = scores.row(u).transpose();
      auto ac = avg_change(row, top_n);
      change_sum += ac.value;
      any_shifted = any_shifted || ac.shifted;
    }
    if (options.with_per_step) {
      // Per-user accumulation keeps the result independent of batch size.
      for (int t = schedule.max_step(); t >= 0; --t) {
        Mat step_scores = predict_scores(eb.input_ids, state, schedule, t);
        for (Eigen::Index u = 0; u < step_scores.rows(); ++u) {
          Vec row = step_scores.row(u).transpose();
          step_sums[t] += avg_change(row, top_n).value;
        }
      }
    }
  }

  report.ranking = rank_metrics_from_ranks(ranks);
  report.change.value = change_sum / double(report.users);
  report.change.shifted = any_shifted;
  if (options.with_per_step) {
    for (const auto& [t, sum] : step_sums) {
      report.per_step_change[t] = sum / double(report.users);
    }
  }
  if (options.with_subgroups) {
    auto buckets = bucket(sequences, options.bucket_options);
    report.subgroup = subgroup_report(ranks, buckets);
  }
  return report;
}

void write_report_human(std::ostream& out, const MetricsReport& report) {
  out << "users evaluated: " << report.users << "\n";
  for (const auto& [k, v] : report.ranking.recall) {
    out << "  Recall@" << k << "  " << v << "\n";
  }
  for (const auto& [k, v] : report.ranking.ndcg) {
    out << "  NDCG@" << k << "    " << v << "\n";
  }
  out << "  MRR       " << report.ranking.mrr << "\n";
  out << "  Avg.Change " << report.change.value << "%"
      << (report.change.shifted ? " (scores shifted positive)" : "") << "\n";
  if (!report.subgroup.by_length.empty()) {
    out << "by training length:\n";
    for (const auto& [label, s] : report.subgroup.by_length) {
      out << "  " << label << "  n=" << s.size << "  R@10=" << s.recall10
          << "  N@10=" << s.ndcg10 << "\n";
    }
    out << "by target frequency:\n";
    for (const auto& [label, s] : report.subgroup.by_frequency) {
      out << "  " << label << "  n=" << s.size << "  R@10=" << s.recall10
          << "  N@10=" << s.ndcg10 << "\n";
    }
  }
}

void write_report_kv(std::ostream& out, const MetricsReport& report) {
  for (const auto& [k, v] : report.ranking.recall) {
    out << "metric.recall@" << k << " = " << v << "\n";
  }
  for (const auto& [k, v] : report.ranking.ndcg) {
    out << "metric.ndcg@" << k << " = " << v << "\n";
  }
  out << "metric.mrr = " << report.ranking.mrr << "\n";
  out << "metric.avg_change = " << report.change.value << "\n";
  out << "metric.avg_change_shifted = " << (report.change.shifted ? 1 : 0)
      << "\n";
  out << "metric.users = " << report.users << "\n";
  for (const auto& [t, v] : report.per_step_change) {
    out << "metric.avg_change.t" << t << " = " << v << "\n";
  }
  auto dump = [&](const char* prefix,
                  const std::map<std::string, SubgroupStats>& groups) {
    for (const auto& [label, s] : groups) {
      out << "metric." << prefix << "." << label << ".size = " << s.size
          << "\n";
      out << "metric." << prefix << "." << label << ".recall@10 = "
          << s.recall10 << "\n";
      out << "metric." << prefix << "." << label << ".ndcg@10 = " << s.ndcg10
          << "\n";
    }
  };
  dump("length", report.subgroup.by_length);
  dump("frequency", report.subgroup.by_frequency);
}

void write_per_step_series(std::ostream& out,
                           const std::map<int, double>& series) {
  for (const auto& [t, v] : series) out << t << '\t' << v << '\n';
}

void write_subgroup_series(std::ostream& out,
                           const std::map<std::string, SubgroupStats>& groups) {
  for (const auto& [label, s] : groups) {
    out << label << '\t' << s.recall10 << '\t' << s.ndcg10 << '\t' << s.size
        << '\n';
  }
}

}  // namespace cddrec
