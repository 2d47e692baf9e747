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

#ifndef CDDREC_COMMANDS_HPP_
#define CDDREC_COMMANDS_HPP_

#include <iosfwd>
#include <string>

#include "cddrec/config.hpp"

namespace cddrec {

// Workdir layout shared by the commands. prepare writes the corpus caches at
// the top of the workdir; train/evaluate write into a run directory beneath
// it so several runs can share one prepared corpus.
std::string catalog_cache_path(const RunConfig& config);
std::string sequences_cache_path(const RunConfig& config);
std::string run_directory(const RunConfig& config,
                          const std::string& fallback_name);

// Each command throws on failure; diagnostics go to `diag`, data to files.

// Raw interactions -> filtered caches plus a one-line stats summary
// (users=... items=... interactions=... avg_length=...).
void cmd_prepare(const RunConfig& config, std::ostream& diag);

// Fits on the prepared corpus and writes the best checkpoint, the config
// echo, the per-epoch progress log and the per-step loss log.
void cmd_train(const RunConfig& config, std::ostream& diag);

// Loads a checkpoint and writes the metric report (human table + flat
// key-value file) along with per-step and subgroup plot data.
void cmd_evaluate(const RunConfig& config, std::ostream& diag);

// Trains and evaluates every (max_step, beta_max) grid cell; a failing cell
// is recorded in the summary and the sweep moves on. Emits mrr_vs_T.tsv and
// mrr_vs_beta.tsv plot data over the successful cells.
void cmd_sweep(const RunConfig& config, std::ostream& diag);

}  // namespace cddrec

#endif  // CDDREC_COMMANDS_HPP_
