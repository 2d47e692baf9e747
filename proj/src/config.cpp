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

#include "cddrec/config.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace cddrec {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("invalid value for config key " + key + ": '" +
                              value + "'");
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value);
  } catch (const std::out_of_range&) {
    bad_value(key, value);
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size() || (!value.empty() && value[0] == '-')) {
      bad_value(key, value);
    }
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value);
  } catch (const std::out_of_range&) {
    bad_value(key, value);
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value);
  } catch (const std::out_of_range&) {
    bad_value(key, value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& values, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += fmt(values[i]);
  }
  return out;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "data_in",        "data_format",
      "workdir",        "run_name",
      "checkpoint",     "min_count",
      "learning_rate",  "batch_size",
      "dropout",        "d",
      "max_len",        "max_step",
      "beta_max",       "lambda",
      "tau",            "patience",
      "max_epochs",     "seed",
      "encoder",        "blocks",
      "heads",          "variant",
      "negative_scope", "posterior_variance_mode",
      "posterior_variance_floor",
      "noise_scale_mode",
      "diffuse_targets",
      "sample_predictions",
      "clip_norm",      "step_subsample",
      "crop_ratio",     "mask_ratio",
      "reorder_ratio",  "split",
      "tie_break",      "t_infer",
      "top_n",          "eval_batch_size",
      "with_per_step",  "with_subgroups",
      "count_valid_in_frequency",
      "sweep_steps",    "sweep_beta_max",
  };
  return keys;
}

void apply_config_key(RunConfig& config, const std::string& key,
                      const std::string& value) {
  TrainConfig& t = config.train;
  if (key == "data_in") {
    config.data_in = value;
  } else if (key == "data_format") {
    if (value == "tsv") {
      config.data_format = InteractionFormat::tsv;
    } else if (value == "csv") {
      config.data_format = InteractionFormat::csv;
    } else {
      bad_value(key, value);
    }
  } else if (key == "workdir") {
    config.workdir = value;
  } else if (key == "run_name") {
    config.run_name = value;
  } else if (key == "checkpoint") {
    config.checkpoint = value;
  } else if (key == "min_count") {
    config.min_count = int(parse_int(key, value));
  } else if (key == "learning_rate") {
    t.learning_rate = parse_double(key, value);
  } else if (key == "batch_size") {
    t.batch_size = int(parse_int(key, value));
  } else if (key == "dropout") {
    t.dropout = parse_double(key, value);
  } else if (key == "d") {
    t.d = int(parse_int(key, value));
  } else if (key == "max_len") {
    t.max_len = int(parse_int(key, value));
  } else if (key == "max_step") {
    t.max_step = int(parse_int(key, value));
  } else if (key == "beta_max") {
    t.beta_max = parse_double(key, value);
  } else if (key == "lambda") {
    t.lambda = parse_double(key, value);
  } else if (key == "tau") {
    t.tau = parse_double(key, value);
  } else if (key == "patience") {
    t.patience = int(parse_int(key, value));
  } else if (key == "max_epochs") {
    t.max_epochs = int(parse_int(key, value));
  } else if (key == "seed") {
    t.seed = parse_u64(key, value);
  } else if (key == "encoder") {
    t.encoder = encoder_kind_from_string(value);
  } else if (key == "blocks") {
    t.blocks = int(parse_int(key, value));
  } else if (key == "heads") {
    t.heads = int(parse_int(key, value));
  } else if (key == "variant") {
    t.variant = loss_variant_from_string(value);
  } else if (key == "negative_scope") {
    t.negative_scope = negative_scope_from_string(value);
  } else if (key == "posterior_variance_mode") {
    t.posterior_mode = posterior_mode_from_string(value);
  } else if (key == "posterior_variance_floor") {
    t.posterior_floor = parse_double(key, value);
  } else if (key == "noise_scale_mode") {
    t.noise_scale = noise_scale_mode_from_string(value);
  } else if (key == "diffuse_targets") {
    t.diffuse_targets_enabled = parse_bool(key, value);
  } else if (key == "sample_predictions") {
    t.sample_predictions = parse_bool(key, value);
  } else if (key == "clip_norm") {
    t.clip_norm = parse_double(key, value);
  } else if (key == "step_subsample") {
    t.step_subsample = int(parse_int(key, value));
  } else if (key == "crop_ratio") {
    t.augment.crop_ratio = parse_double(key, value);
  } else if (key == "mask_ratio") {
    t.augment.mask_ratio = parse_double(key, value);
  } else if (key == "reorder_ratio") {
    t.augment.reorder_ratio = parse_double(key, value);
  } else if (key == "split") {
    config.split = eval_split_from_string(value);
  } else if (key == "tie_break") {
    config.tie = tie_break_from_string(value);
  } else if (key == "t_infer") {
    config.t_infer = int(parse_int(key, value));
  } else if (key == "top_n") {
    config.top_n = int(parse_int(key, value));
  } else if (key == "eval_batch_size") {
    config.eval_batch_size = int(parse_int(key, value));
  } else if (key == "with_per_step") {
    config.with_per_step = parse_bool(key, value);
  } else if (key == "with_subgroups") {
    config.with_subgroups = parse_bool(key, value);
  } else if (key == "count_valid_in_frequency") {
    config.count_valid_in_frequency = parse_bool(key, value);
  } else if (key == "sweep_steps") {
    config.sweep_steps.clear();
    for (const auto& part : split_list(value)) {
      config.sweep_steps.push_back(int(parse_int(key, part)));
    }
  } else if (key == "sweep_beta_max") {
    config.sweep_beta_max.clear();
    for (const auto& part : split_list(value)) {
      config.sweep_beta_max.push_back(parse_double(key, part));
    }
  } else {
    throw std::invalid_argument("unknown config key: " + key);
  }
  config.keys_seen.insert(key);
}

RunConfig parse_run_config(std::istream& in) {
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("malformed config line " +
                                  std::to_string(line_no) + ": " + stripped);
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("malformed config line " +
                                  std::to_string(line_no) + ": " + stripped);
    }
    apply_config_key(config, key, value);
  }
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  return parse_run_config(in);
}

void require_training_keys(const RunConfig& config) {
  for (const char* key : {"lambda", "tau"}) {
    if (!config.has(key)) {
      throw std::invalid_argument(std::string("missing required config key: ") +
                                  key);
    }
  }
}

std::string serialize_run_config(const RunConfig& config) {
  const TrainConfig& t = config.train;
  std::ostringstream out;
  auto kv = [&](const char* key, const std::string& value) {
    out << key << " = " << value << "\n";
  };
  kv("data_in", config.data_in);
  kv("data_format",
     config.data_format == InteractionFormat::tsv ? "tsv" : "csv");
  kv("workdir", config.workdir);
  kv("run_name", config.run_name);
  kv("checkpoint", config.checkpoint);
  kv("min_count", std::to_string(config.min_count));
  kv("learning_rate", format_double(t.learning_rate));
  kv("batch_size", std::to_string(t.batch_size));
  kv("dropout", format_double(t.dropout));
  kv("d", std::to_string(t.d));
  kv("max_len", std::to_string(t.max_len));
  kv("max_step", std::to_string(t.max_step));
  kv("beta_max", format_double(t.beta_max));
  kv("lambda", format_double(t.lambda));
  kv("tau", format_double(t.tau));
  kv("patience", std::to_string(t.patience));
  kv("max_epochs", std::to_string(t.max_epochs));
  kv("seed", std::to_string(t.seed));
  kv("encoder", to_string(t.encoder));
  kv("blocks", std::to_string(t.blocks));
  kv("heads", std::to_string(t.heads));
  kv("variant", to_string(t.variant));
  kv("negative_scope", to_string(t.negative_scope));
  kv("posterior_variance_mode", to_string(t.posterior_mode));
  kv("posterior_variance_floor", format_double(t.posterior_floor));
  kv("noise_scale_mode", to_string(t.noise_scale));
  kv("diffuse_targets", t.diffuse_targets_enabled ? "true" : "false");
  kv("sample_predictions", t.sample_predictions ? "true" : "false");
  kv("clip_norm", format_double(t.clip_norm));
  kv("step_subsample", std::to_string(t.step_subsample));
  kv("crop_ratio", format_double(t.augment.crop_ratio));
  kv("mask_ratio", format_double(t.augment.mask_ratio));
  kv("reorder_ratio", format_double(t.augment.reorder_ratio));
  kv("split", to_string(config.split));
  kv("tie_break", to_string(config.tie));
  kv("t_infer", std::to_string(config.t_infer));
  kv("top_n", std::to_string(config.top_n));
  kv("eval_batch_size", std::to_string(config.eval_batch_size));
  kv("with_per_step", config.with_per_step ? "true" : "false");
  kv("with_subgroups", config.with_subgroups ? "true" : "false");
  kv("count_valid_in_frequency",
     config.count_valid_in_frequency ? "true" : "false");
  kv("sweep_steps",
     join(config.sweep_steps, [](int v) { return std::to_string(v); }));
  kv("sweep_beta_max", join(config.sweep_beta_max, format_double));
  return out.str();
}

EvalOptions eval_options(const RunConfig& config) {
  EvalOptions opt;
  opt.split = config.split;
  opt.tie = config.tie;
  opt.t_infer = config.t_infer;
  opt.batch_size = config.eval_batch_size;
  opt.top_n = config.top_n;
  opt.with_per_step = config.with_per_step;
  opt.with_subgroups = config.with_subgroups;
  opt.bucket_options.count_valid_in_frequency =
      config.count_valid_in_frequency;
  return opt;
}

}  // namespace cddrec
