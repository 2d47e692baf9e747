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

#include <optional>
#include <string>

#include "cddrec/model.hpp"
#include "cddrec/schedule.hpp"
#include "cddrec/trainer.hpp"

namespace cddrec {

// Versioned training snapshot (header "cddrec-ckpt v1"): model config and
// parameters in their declared order, the schedule as its defining scalars
// (tables are rebuilt on load), optional optimizer state, and the training
// position. The binary payload is integrity-checked with a trailing hash,
// so round-trips are bitwise.
struct Checkpoint {
  ModelState state;
  double beta_max = 0.0;
  ScheduleShape shape = ScheduleShape::linear;
  PosteriorVarianceMode posterior_mode = PosteriorVarianceMode::paper;
  double posterior_floor = 0.0;
  std::optional<AdamState> adam;
  int epoch = 0;
  double best_metric = 0.0;
};

DiffusionSchedule checkpoint_schedule(const Checkpoint& ck);

void save_checkpoint(const std::string& path, const Checkpoint& ck);

// Throws on a missing file, a foreign or future version header, a payload
// whose hash does not match, or shapes that disagree with the config block.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cddrec
