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

#ifndef CDDREC_CONFIG_HPP_
#define CDDREC_CONFIG_HPP_

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "cddrec/corpus.hpp"
#include "cddrec/eval.hpp"
#include "cddrec/trainer.hpp"

namespace cddrec {

// One flat key-value configuration covering every command: training fields,
// data paths, evaluation options and sweep grids. The serialized form is a
// plain `key = value` text file so a run can be diffed and replayed anywhere.
struct RunConfig {
  TrainConfig train;

  std::string data_in;
  InteractionFormat data_format = InteractionFormat::tsv;
  std::string workdir = "runs";
  // Name of the directory (under workdir) a train/evaluate run writes to.
  // Empty derives one from the seed, keeping reruns byte-identical.
  std::string run_name;
  // Checkpoint consumed by evaluate; empty means the run's own best one.
  std::string checkpoint;
  int min_count = 5;

  EvalSplit split = EvalSplit::test;
  TieBreak tie = TieBreak::optimistic;
  int t_infer = 0;
  int top_n = 40;
  int eval_batch_size = 128;
  bool with_per_step = true;
  bool with_subgroups = true;
  bool count_valid_in_frequency = false;

  std::vector<int> sweep_steps;
  std::vector<double> sweep_beta_max;

  // Which keys were given explicitly (file or flag). lambda and tau have no
  // usable silent default: training commands refuse to run without them.
  std::set<std::string> keys_seen;

  bool has(const std::string& key) const { return keys_seen.count(key) > 0; }
};

// Every accepted key, in the order the echo file lists them. The CLI builds
// one flag per key from this list so flags and file keys cannot drift apart.
const std::vector<std::string>& run_config_keys();

// Sets one key, validating the value; throws on an unknown key or a value
// that does not parse. Shared by the file parser and the CLI flag handling.
void apply_config_key(RunConfig& config, const std::string& key,
                      const std::string& value);

// Parses `key = value` lines; `#` lines and blank lines are ignored.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::string& path);

// Throws unless lambda and tau were given explicitly.
void require_training_keys(const RunConfig& config);

// Full echo of every key in a stable order; parsing it back reproduces the
// config exactly (doubles are written with round-trip precision).
std::string serialize_run_config(const RunConfig& config);

EvalOptions eval_options(const RunConfig& config);

}  // namespace cddrec

#endif  // CDDREC_CONFIG_HPP_
