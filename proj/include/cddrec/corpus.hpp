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

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cddrec/types.hpp"

namespace cddrec {

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  std::int64_t timestamp = 0;
};

enum class InteractionFormat { tsv, csv };

// Reads one interaction per line: user, item, timestamp (an optional rating
// column between item and timestamp is accepted and ignored). Blank lines are
// skipped; anything else that does not parse raises with its line number.
std::vector<RawInteraction> load_interactions(const std::string& path,
                                              InteractionFormat format);

// Item index 0 is reserved for padding; real items occupy 1..item_count.
struct ItemCatalog {
  std::vector<std::string> index_to_key;  // [0] is the empty pad slot
  std::unordered_map<std::string, int> key_to_index;

  int item_count() const { return static_cast<int>(index_to_key.size()) - 1; }
};

struct InteractionSequence {
  int user_index = 0;
  std::vector<int> items;  // chronological, length >= 3, no pad index

  // Leave-one-out split: everything before the last two items trains the
  // model, the next-to-last is the validation target, the last is the test
  // target.
  std::vector<int> train_part() const {
    return {items.begin(), items.end() - 2};
  }
  int valid_target() const { return items[items.size() - 2]; }
  int test_target() const { return items.back(); }
};

// Iterative min-count filtering to a fixpoint, chronological ordering per
// user (ties keep file order), and catalog construction over the survivors.
// Sequences shorter than 3 are dropped afterwards; if nothing survives the
// corpus is empty and that is an error.
std::pair<std::vector<InteractionSequence>, ItemCatalog> build_sequences(
    const std::vector<RawInteraction>& interactions, int min_count = 5);

// Keeps the most recent max_len items and left-pads with 0 to exactly
// max_len.
std::vector<int> pad_truncate(const std::vector<int>& items, int max_len = 20);

enum class AugmentKind { crop, mask, reorder };

// crop:    keep ceil(ratio*len) contiguous items at a uniform start
// mask:    zero out floor(ratio*len) uniformly chosen positions
// reorder: shuffle a contiguous window of floor(ratio*len) items in place
std::vector<int> augment(const std::vector<int>& items, RngStream& rng,
                         AugmentKind kind, double ratio);

struct AugmentOptions {
  double crop_ratio = 0.6;
  double mask_ratio = 0.3;
  double reorder_ratio = 0.25;
};

// Draws the kind uniformly, then applies it at that kind's ratio.
std::vector<int> augment_any(const std::vector<int>& items, RngStream& rng,
                             const AugmentOptions& options = {});

struct PaddedBatch {
  IdMat input_ids;            // B x L, left-padded
  IdMat target_ids;           // B x L, input shifted left; last slot = next item
  BoolMat pad_mask;           // true where input_ids holds a real item
  IdMat augmented_input_ids;  // second view of the same inputs
  std::vector<int> sequence_index;  // row -> position in the sequence list
};

struct BatchOptions {
  int max_len = 20;
  AugmentOptions augment;
};

// Sequence indices eligible for training: at least two items before the
// validation target, so an input/target pair exists.
std::vector<int> trainable_members(
    const std::vector<InteractionSequence>& sequences);

// Builds the two-view training batch for the given members. Inputs are the
// training items minus their last element, targets the training items minus
// their first, so every non-pad column predicts its successor.
PaddedBatch make_training_batch(
    const std::vector<InteractionSequence>& sequences,
    const std::vector<int>& members, const BatchOptions& options,
    RngStream& augment_rng);

enum class EvalSplit { valid, test };
std::string to_string(EvalSplit split);
EvalSplit eval_split_from_string(const std::string& s);

struct EvalBatch {
  IdMat input_ids;           // B x L histories up to the held-out item
  std::vector<int> targets;  // the held-out item per row
  std::vector<int> sequence_index;
};

EvalBatch make_eval_batch(const std::vector<InteractionSequence>& sequences,
                          const std::vector<int>& members, EvalSplit split,
                          int max_len);

// Subgroup breakdowns: training-part length in {<=10, 11-20, 21-30, >30} and
// test-target training frequency in {<=20, 21-40, 41-60, >60}.
struct BucketOptions {
  bool count_valid_in_frequency = false;
};

struct SubgroupAssignment {
  int length_bucket = 0;
  int frequency_bucket = 0;
};

std::vector<SubgroupAssignment> bucket(
    const std::vector<InteractionSequence>& sequences,
    const BucketOptions& options = {});

std::string length_bucket_label(int b);
std::string frequency_bucket_label(int b);

// Cached corpus artifacts. Both files start with the header
// "#cddrec-corpus v1"; the catalog holds one "key<TAB>index" per line and
// the sequence file one "user_index<TAB>space-joined item indices" per line.
void write_catalog(const std::string& path, const ItemCatalog& catalog);
ItemCatalog read_catalog(const std::string& path);
void write_sequences(const std::string& path,
                     const std::vector<InteractionSequence>& sequences);
std::vector<InteractionSequence> read_sequences(const std::string& path);

}  // namespace cddrec
