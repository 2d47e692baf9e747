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

#include "cddrec/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cddrec {

namespace {

constexpr const char* kHeader = "cddrec-ckpt v1";

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

void append_bytes(std::string& buf, const void* data, std::size_t n) {
  buf.append(static_cast<const char*>(data), n);
}

void append_u64(std::string& buf, std::uint64_t v) {
  append_bytes(buf, &v, sizeof v);
}

void append_mat(std::string& buf, const Mat& m) {
  append_u64(buf, std::uint64_t(m.rows()));
  append_u64(buf, std::uint64_t(m.cols()));
  append_bytes(buf, m.data(), sizeof(double) * std::size_t(m.size()));
}

class Reader {
 public:
  Reader(const std::string& buf) : buf_(buf) {}

  std::uint64_t u64() {
    std::uint64_t v = 0;
    take(&v, sizeof v);
    return v;
  }

  void mat(Mat& m, const std::string& name) {
    const auto rows = u64();
    const auto cols = u64();
    if (rows != std::uint64_t(m.rows()) || cols != std::uint64_t(m.cols())) {
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    }
    take(m.data(), sizeof(double) * std::size_t(m.size()));
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void take(void* dest, std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw std::runtime_error("checkpoint payload truncated");
    }
    std::memcpy(dest, buf_.data() + pos_, n);
    pos_ += n;
  }

  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

DiffusionSchedule checkpoint_schedule(const Checkpoint& ck) {
  ScheduleOptions opt;
  opt.posterior_variance_mode = ck.posterior_mode;
  opt.posterior_variance_floor = ck.posterior_floor;
  return build_schedule(ck.state.config.max_step, ck.beta_max, ck.shape, opt);
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);

  const ModelConfig& mc = ck.state.config;
  out << kHeader << "\n";
  out << "d " << mc.d << "\n";
  out << "max_len " << mc.max_len << "\n";
  out << "max_step " << mc.max_step << "\n";
  out << "encoder " << to_string(mc.encoder) << "\n";
  out << "blocks " << mc.blocks << "\n";
  out << "heads " << mc.heads << "\n";
  out << "dropout " << format_double(mc.dropout) << "\n";
  out << "item_count " << ck.state.item_count << "\n";
  out << "beta_max " << format_double(ck.beta_max) << "\n";
  out << "shape " << to_string(ck.shape) << "\n";
  out << "posterior_mode " << to_string(ck.posterior_mode) << "\n";
  out << "posterior_floor " << format_double(ck.posterior_floor) << "\n";
  out << "epoch " << ck.epoch << "\n";
  out << "best_metric " << format_double(ck.best_metric) << "\n";
  out << "adam " << (ck.adam.has_value() ? 1 : 0) << "\n";
  out << "adam_steps " << (ck.adam ? ck.adam->steps : 0) << "\n";
  out << "payload\n";

  std::string buf;
  visit_params(ck.state,
               [&](const std::string&, const Mat& m) { append_mat(buf, m); });
  if (ck.adam) {
    visit_params(ck.adam->m,
                 [&](const std::string&, const Mat& m) { append_mat(buf, m); });
    visit_params(ck.adam->v,
                 [&](const std::string&, const Mat& m) { append_mat(buf, m); });
  }
  const std::uint64_t hash = fnv1a64(buf.data(), buf.size());
  out.write(buf.data(), std::streamsize(buf.size()));
  out.write(reinterpret_cast<const char*>(&hash), sizeof hash);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw std::runtime_error("not a " + std::string(kHeader) + " file: " +
                             path);
  }
  std::map<std::string, std::string> kv;
  while (std::getline(in, line) && line != "payload") {
    const auto space = line.find(' ');
    if (space == std::string::npos) {
      throw std::runtime_error("malformed checkpoint header line: " + line);
    }
    kv[line.substr(0, space)] = line.substr(space + 1);
  }
  if (line != "payload") {
    throw std::runtime_error("checkpoint payload marker missing");
  }
  auto field = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw std::runtime_error("checkpoint field missing: " +
                               std::string(key));
    }
    return it->second;
  };

  ModelConfig mc;
  mc.d = std::stoi(field("d"));
  mc.max_len = std::stoi(field("max_len"));
  mc.max_step = std::stoi(field("max_step"));
  mc.encoder = encoder_kind_from_string(field("encoder"));
  mc.blocks = std::stoi(field("blocks"));
  mc.heads = std::stoi(field("heads"));
  mc.dropout = std::stod(field("dropout"));
  const int item_count = std::stoi(field("item_count"));

  Checkpoint ck;
  ck.beta_max = std::stod(field("beta_max"));
  ck.shape = schedule_shape_from_string(field("shape"));
  ck.posterior_mode = posterior_mode_from_string(field("posterior_mode"));
  ck.posterior_floor = std::stod(field("posterior_floor"));
  ck.epoch = std::stoi(field("epoch"));
  ck.best_metric = std::stod(field("best_metric"));
  const bool has_adam = std::stoi(field("adam")) != 0;
  const long adam_steps = std::stol(field("adam_steps"));

  std::string payload((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  if (payload.size() < sizeof(std::uint64_t)) {
    throw std::runtime_error("checkpoint payload truncated");
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, payload.data() + payload.size() - sizeof stored,
              sizeof stored);
  payload.resize(payload.size() - sizeof stored);
  if (fnv1a64(payload.data(), payload.size()) != stored) {
    throw std::runtime_error("checkpoint hash mismatch: " + path);
  }

  // Allocate the parameter tables at their configured shapes, then overwrite
  // every entry from the payload.
  RngStream scratch(0, RngPurpose::init);
  ck.state = init_model(mc, item_count, scratch);

  Reader reader(payload);
  visit_params(ck.state, [&](const std::string& name, Mat& m) {
    reader.mat(m, name);
  });
  if (has_adam) {
    AdamState adam = make_adam_state(ck.state);
    adam.steps = adam_steps;
    visit_params(adam.m, [&](const std::string& name, Mat& m) {
      reader.mat(m, "adam.m." + name);
    });
    visit_params(adam.v, [&](const std::string& name, Mat& m) {
      reader.mat(m, "adam.v." + name);
    });
    ck.adam = std::move(adam);
  }
  if (!reader.done()) {
    throw std::runtime_error("checkpoint has trailing bytes");
  }
  return ck;
}

}  // namespace cddrec
