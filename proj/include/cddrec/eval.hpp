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
#include <map>
#include <string>
#include <vector>

#include "cddrec/corpus.hpp"
#include "cddrec/model.hpp"
#include "cddrec/schedule.hpp"
#include "cddrec/types.hpp"

namespace cddrec {

// How tied scores resolve into a rank. Optimistic counts only strictly
// greater scores ahead of the target; pessimistic also counts every tie;
// mid takes their average (hence ranks are doubles).
enum class TieBreak { optimistic, pessimistic, mid };
std::string to_string(TieBreak tie);
TieBreak tie_break_from_string(const std::string& text);

// Rank of each user's target among the full catalog. Column c of `scores`
// belongs to item c+1; targets are 1-based item indices (0 is the pad and
// rejected).
std::vector<double> target_ranks(const Mat& scores,
                                 const std::vector<int>& targets,
                                 TieBreak tie = TieBreak::optimistic);

struct RankMetrics {
  std::map<int, double> recall;  // K in {1, 5, 10}
  std::map<int, double> ndcg;    // K in {5, 10}
  double mrr = 0.0;
};

RankMetrics rank_metrics(const Mat& scores, const std::vector<int>& targets,
                         TieBreak tie = TieBreak::optimistic);
RankMetrics rank_metrics_from_ranks(const std::vector<double>& ranks);

// Mean absolute percentage drop between consecutive top-n scores, sorted
// descending: (1/(n-1)) * sum_i |s_{i+1} - s_i| / s_i * 100. The ratio needs
// positive scores, so when the top-n contains a value <= 0 every score is
// shifted by (1 - min) first and `shifted` records that this happened.
struct AvgChange {
  double value = 0.0;
  bool shifted = false;
};

AvgChange avg_change(const Vec& scores_row, int top_n = 40);

// avg_change of each user's score row at inference step t, averaged over
// users, for every t = T..0. Scores come from the deterministic denoised
// mean, so the map isolates how sharpness evolves along the chain.
std::map<int, double> per_step_analysis(const IdMat& input_ids,
                                        const ModelState& state,
                                        const DiffusionSchedule& schedule,
                                        int top_n = 40);

struct SubgroupStats {
  int size = 0;
  double recall10 = 0.0;
  double ndcg10 = 0.0;
};

// Recall@10 / NDCG@10 per corpus bucket. Buckets nobody falls into are
// absent from the maps rather than reported as zero.
struct SubgroupReport {
  std::map<std::string, SubgroupStats> by_length;
  std::map<std::string, SubgroupStats> by_frequency;
};

SubgroupReport subgroup_report(const std::vector<double>& ranks,
                               const std::vector<SubgroupAssignment>& buckets);

struct MetricsReport {
  RankMetrics ranking;
  AvgChange change;                        // at the inference step
  std::map<int, double> per_step_change;   // t -> mean avg_change
  SubgroupReport subgroup;
  int users = 0;
};

struct EvalOptions {
  EvalSplit split = EvalSplit::test;
  TieBreak tie = TieBreak::optimistic;
  int t_infer = 0;
  int batch_size = 128;
  int top_n = 40;  // clipped to the catalog size for small corpora
  bool with_per_step = true;
  bool with_subgroups = true;
  BucketOptions bucket_options;
};

MetricsReport evaluate_split(const std::vector<InteractionSequence>& sequences,
                             const ModelState& state,
                             const DiffusionSchedule& schedule,
                             const EvalOptions& options = {});

// Report writers: a human-readable table, a flat key-value form
// ("metric.recall@5 = 0.0765"), and two-column series for plotting.
void write_report_human(std::ostream& out, const MetricsReport& report);
void write_report_kv(std::ostream& out, const MetricsReport& report);
void write_per_step_series(std::ostream& out,
                           const std::map<int, double>& series);
void write_subgroup_series(std::ostream& out,
                           const std::map<std::string, SubgroupStats>& groups);

}  // namespace cddrec
