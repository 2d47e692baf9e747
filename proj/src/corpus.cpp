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
#include "cddrec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cddrec {

namespace {

constexpr const char* kCorpusHeader = "#cddrec-corpus v1";

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, delim)) out.push_back(field);
  return out;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c); });
}

std::int64_t parse_timestamp(const std::string& s) {
  std::size_t used = 0;
  try {
    std::int64_t v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  // Some exports write integral timestamps with a decimal point.
  try {
    double d = std::stod(s, &used);
    if (used == s.size() && d == std::floor(d)) {
      return static_cast<std::int64_t>(d);
    }
  } catch (const std::exception&) {
  }
  throw std::runtime_error("timestamp '" + s + "' is not an integer");
}

[[noreturn]] void line_error(const std::string& path, int line_no,
                             const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::vector<RawInteraction> load_interactions(const std::string& path,
                                              InteractionFormat format) {
  auto in = open_for_read(path);
  const char delim = format == InteractionFormat::tsv ? '\t' : ',';
  std::vector<RawInteraction> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (is_blank(line)) continue;
    auto fields = split(line, delim);
    if (fields.size() != 3 && fields.size() != 4) {
      line_error(path, line_no,
                 "expected user, item, [rating,] timestamp; got " +
                     std::to_string(fields.size()) + " fields");
    }
    RawInteraction r;
    r.user_key = fields[0];
    r.item_key = fields[1];
    if (r.user_key.empty() || r.item_key.empty()) {
      line_error(path, line_no, "empty user or item key");
    }
    try {
      r.timestamp = parse_timestamp(fields.back());
    } catch (const std::exception& e) {
      line_error(path, line_no, e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::pair<std::vector<InteractionSequence>, ItemCatalog> build_sequences(
    const std::vector<RawInteraction>& interactions, int min_count) {
  if (min_count < 1) {
    throw std::invalid_argument("build_sequences: min_count must be >= 1");
  }

  std::vector<bool> alive(interactions.size(), true);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, int> user_n, item_n;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (!alive[i]) continue;
      ++user_n[interactions[i].user_key];
      ++item_n[interactions[i].item_key];
    }
    for (std::size_t i = 0; i < interactions.size(); ++i) {
      if (!alive[i]) continue;
      if (user_n[interactions[i].user_key] < min_count ||
          item_n[interactions[i].item_key] < min_count) {
        alive[i] = false;
        changed = true;
      }
    }
  }

  ItemCatalog catalog;
  catalog.index_to_key.push_back("");  // pad slot
  std::unordered_map<std::string, std::vector<std::size_t>> per_user;
  std::vector<std::string> user_order;
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    if (!alive[i]) continue;
    const auto& r = interactions[i];
    if (catalog.key_to_index.emplace(r.item_key, catalog.item_count() + 1)
            .second) {
      catalog.index_to_key.push_back(r.item_key);
    }
    auto [it, fresh] = per_user.try_emplace(r.user_key);
    if (fresh) user_order.push_back(r.user_key);
    it->second.push_back(i);
  }

  std::vector<InteractionSequence> sequences;
  for (const auto& user : user_order) {
    auto& rows = per_user[user];
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return interactions[a].timestamp < interactions[b].timestamp;
    });
    if (rows.size() < 3) continue;
    InteractionSequence seq;
    seq.user_index = static_cast<int>(sequences.size());
    seq.items.reserve(rows.size());
    for (auto i : rows) {
      seq.items.push_back(catalog.key_to_index.at(interactions[i].item_key));
    }
    sequences.push_back(std::move(seq));
  }
  if (sequences.empty()) {
    throw std::runtime_error("empty corpus after filtering");
  }
  return {std::move(sequences), std::move(catalog)};
}

std::vector<int> pad_truncate(const std::vector<int>& items, int max_len) {
  if (max_len < 1) throw std::invalid_argument("pad_truncate: max_len < 1");
  std::vector<int> out(static_cast<std::size_t>(max_len), 0);
  const std::size_t keep =
      std::min(items.size(), static_cast<std::size_t>(max_len));
  std::copy(items.end() - keep, items.end(), out.end() - keep);
  return out;
}

std::vector<int> augment(const std::vector<int>& items, RngStream& rng,
                         AugmentKind kind, double ratio) {
  if (items.empty()) throw std::invalid_argument("augment: empty sequence");
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("augment: ratio must lie in (0, 1)");
  }
  const int len = static_cast<int>(items.size());
  switch (kind) {
    case AugmentKind::crop: {
      int n = static_cast<int>(std::ceil(ratio * len));
      n = std::clamp(n, 1, len);
      int start = rng.uniform_int(0, len - n);
      return {items.begin() + start, items.begin() + start + n};
    }
    case AugmentKind::mask: {
      int k = std::clamp(static_cast<int>(std::floor(ratio * len)), 0, len);
      std::vector<int> out = items;
      if (k == 0) return out;
      std::vector<int> pos(items.size());
      for (int i = 0; i < len; ++i) pos[i] = i;
      for (int i = 0; i < k; ++i) {
        std::swap(pos[i], pos[rng.uniform_int(i, len - 1)]);
        out[pos[i]] = 0;
      }
      return out;
    }
    case AugmentKind::reorder: {
      int k = std::clamp(static_cast<int>(std::floor(ratio * len)), 0, len);
      std::vector<int> out = items;
      if (k <= 1) return out;
      int start = rng.uniform_int(0, len - k);
      for (int i = k - 1; i >= 1; --i) {
        std::swap(out[start + i], out[start + rng.uniform_int(0, i)]);
      }
      return out;
    }
  }
  throw std::invalid_argument("augment: unknown kind");
}

std::vector<int> augment_any(const std::vector<int>& items, RngStream& rng,
                             const AugmentOptions& options) {
  switch (rng.uniform_int(0, 2)) {
    case 0:
      return augment(items, rng, AugmentKind::crop, options.crop_ratio);
    case 1:
      return augment(items, rng, AugmentKind::mask, options.mask_ratio);
    default:
      return augment(items, rng, AugmentKind::reorder, options.reorder_ratio);
  }
}

std::vector<int> trainable_members(
    const std::vector<InteractionSequence>& sequences) {
  std::vector<int> members;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i].items.size() >= 4) members.push_back(static_cast<int>(i));
  }
  return members;
}

PaddedBatch make_training_batch(
    const std::vector<InteractionSequence>& sequences,
    const std::vector<int>& members, const BatchOptions& options,
    RngStream& augment_rng) {
  if (members.empty()) {
    throw std::invalid_argument("make_training_batch: empty member list");
  }
  const int B = static_cast<int>(members.size());
  const int L = options.max_len;
  if (L < 1) throw std::invalid_argument("make_training_batch: max_len < 1");

  PaddedBatch batch;
  batch.input_ids.setZero(B, L);
  batch.target_ids.setZero(B, L);
  batch.augmented_input_ids.setZero(B, L);
  batch.pad_mask = BoolMat::Constant(B, L, false);
  batch.sequence_index = members;

  for (int b = 0; b < B; ++b) {
    const auto& seq = sequences.at(members[b]);
    auto train = seq.train_part();
    if (train.size() < 2) {
      throw std::invalid_argument(
          "make_training_batch: sequence " + std::to_string(members[b]) +
          " has fewer than two training items");
    }
    std::vector<int> input(train.begin(), train.end() - 1);
    std::vector<int> target(train.begin() + 1, train.end());
    auto view = augment_any(input, augment_rng, options.augment);

    auto in_row = pad_truncate(input, L);
    auto tg_row = pad_truncate(target, L);
    auto av_row = pad_truncate(view, L);
    for (int j = 0; j < L; ++j) {
      batch.input_ids(b, j) = in_row[j];
      batch.target_ids(b, j) = tg_row[j];
      batch.augmented_input_ids(b, j) = av_row[j];
      batch.pad_mask(b, j) = in_row[j] != 0;
    }
  }
  return batch;
}

std::string to_string(EvalSplit split) {
  return split == EvalSplit::valid ? "valid" : "test";
}

EvalSplit eval_split_from_string(const std::string& s) {
  if (s == "valid") return EvalSplit::valid;
  if (s == "test") return EvalSplit::test;
  throw std::invalid_argument("unknown split: " + s);
}

EvalBatch make_eval_batch(const std::vector<InteractionSequence>& sequences,
                          const std::vector<int>& members, EvalSplit split,
                          int max_len) {
  if (members.empty()) {
    throw std::invalid_argument("make_eval_batch: empty member list");
  }
  if (max_len < 1) throw std::invalid_argument("make_eval_batch: max_len < 1");
  const int B = static_cast<int>(members.size());

  EvalBatch batch;
  batch.input_ids.setZero(B, max_len);
  batch.targets.resize(B);
  batch.sequence_index = members;
  for (int b = 0; b < B; ++b) {
    const auto& seq = sequences.at(members[b]);
    std::vector<int> history = seq.train_part();
    if (split == EvalSplit::valid) {
      batch.targets[b] = seq.valid_target();
    } else {
      history.push_back(seq.valid_target());
      batch.targets[b] = seq.test_target();
    }
    auto row = pad_truncate(history, max_len);
    for (int j = 0; j < max_len; ++j) batch.input_ids(b, j) = row[j];
  }
  return batch;
}

std::vector<SubgroupAssignment> bucket(
    const std::vector<InteractionSequence>& sequences,
    const BucketOptions& options) {
  std::unordered_map<int, int> freq;
  for (const auto& seq : sequences) {
    for (auto it = seq.items.begin(); it != seq.items.end() - 2; ++it) {
      ++freq[*it];
    }
    if (options.count_valid_in_frequency) ++freq[seq.valid_target()];
  }

  std::vector<SubgroupAssignment> out(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& seq = sequences[i];
    const int len = static_cast<int>(seq.items.size()) - 2;
    auto& a = out[i];
    a.length_bucket = len <= 10 ? 0 : len <= 20 ? 1 : len <= 30 ? 2 : 3;
    auto it = freq.find(seq.test_target());
    const int f = it == freq.end() ? 0 : it->second;
    a.frequency_bucket = f <= 20 ? 0 : f <= 40 ? 1 : f <= 60 ? 2 : 3;
  }
  return out;
}

std::string length_bucket_label(int b) {
  switch (b) {
    case 0: return "<=10";
    case 1: return "11-20";
    case 2: return "21-30";
    case 3: return ">30";
  }
  throw std::out_of_range("length bucket " + std::to_string(b));
}

std::string frequency_bucket_label(int b) {
  switch (b) {
    case 0: return "<=20";
    case 1: return "21-40";
    case 2: return "41-60";
    case 3: return ">60";
  }
  throw std::out_of_range("frequency bucket " + std::to_string(b));
}

void write_catalog(const std::string& path, const ItemCatalog& catalog) {
  auto out = open_for_write(path);
  out << kCorpusHeader << "\n";
  for (int i = 1; i <= catalog.item_count(); ++i) {
    const auto& key = catalog.index_to_key[i];
    if (key.find_first_of("\t\n") != std::string::npos) {
      throw std::runtime_error("item key contains tab or newline: " + key);
    }
    out << key << "\t" << i << "\n";
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

ItemCatalog read_catalog(const std::string& path) {
  auto in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line) || (strip_cr(line), line != kCorpusHeader)) {
    throw std::runtime_error(path + ": missing corpus header");
  }
  ItemCatalog catalog;
  catalog.index_to_key.push_back("");
  int line_no = 1;
  std::vector<std::pair<std::string, int>> entries;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (is_blank(line)) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 2) line_error(path, line_no, "expected key<TAB>index");
    int idx = 0;
    try {
      idx = std::stoi(fields[1]);
    } catch (const std::exception&) {
      line_error(path, line_no, "bad index '" + fields[1] + "'");
    }
    if (idx < 1) line_error(path, line_no, "index must be >= 1");
    entries.emplace_back(fields[0], idx);
  }
  catalog.index_to_key.resize(entries.size() + 1);
  for (const auto& [key, idx] : entries) {
    if (idx > static_cast<int>(entries.size())) {
      throw std::runtime_error(path + ": index " + std::to_string(idx) +
                               " exceeds entry count");
    }
    if (!catalog.index_to_key[idx].empty()) {
      throw std::runtime_error(path + ": duplicate index " +
                               std::to_string(idx));
    }
    if (!catalog.key_to_index.emplace(key, idx).second) {
      throw std::runtime_error(path + ": duplicate key " + key);
    }
    catalog.index_to_key[idx] = key;
  }
  for (int i = 1; i <= catalog.item_count(); ++i) {
    if (catalog.index_to_key[i].empty()) {
      throw std::runtime_error(path + ": missing index " + std::to_string(i));
    }
  }
  return catalog;
}

void write_sequences(const std::string& path,
                     const std::vector<InteractionSequence>& sequences) {
  auto out = open_for_write(path);
  out << kCorpusHeader << "\n";
  for (const auto& seq : sequences) {
    out << seq.user_index << "\t";
    for (std::size_t i = 0; i < seq.items.size(); ++i) {
      if (i) out << " ";
      out << seq.items[i];
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

std::vector<InteractionSequence> read_sequences(const std::string& path) {
  auto in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line) || (strip_cr(line), line != kCorpusHeader)) {
    throw std::runtime_error(path + ": missing corpus header");
  }
  std::vector<InteractionSequence> sequences;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (is_blank(line)) continue;
    auto fields = split(line, '\t');
    if (fields.size() != 2) {
      line_error(path, line_no, "expected user<TAB>items");
    }
    InteractionSequence seq;
    try {
      seq.user_index = std::stoi(fields[0]);
    } catch (const std::exception&) {
      line_error(path, line_no, "bad user index '" + fields[0] + "'");
    }
    std::istringstream items(fields[1]);
    int v = 0;
    while (items >> v) {
      if (v < 1) line_error(path, line_no, "item index must be >= 1");
      seq.items.push_back(v);
    }
    if (!items.eof()) line_error(path, line_no, "bad item index list");
    if (seq.items.size() < 3) {
      line_error(path, line_no, "sequence shorter than 3 items");
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

}  // namespace cddrec
