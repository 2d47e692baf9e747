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

#include "cddrec/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cddrec/checkpoint.hpp"
#include "cddrec/eval.hpp"
#include "cddrec/trainer.hpp"

namespace cddrec {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Hash of the prepared caches, recorded with each run so the exact corpus a
// checkpoint was trained on can be identified later.
std::string corpus_hash_line(const RunConfig& config) {
  std::uint64_t h = fnv1a64(file_bytes(catalog_cache_path(config)));
  const std::string seqs = file_bytes(sequences_cache_path(config));
  h = fnv1a64(seqs.data(), seqs.size(), h);
  std::ostringstream out;
  out << "corpus_hash = " << std::hex << std::setw(16) << std::setfill('0')
      << h << "\n";
  return out.str();
}

std::string trimmed_number(double v) {
  std::ostringstream out;
  out << std::setprecision(6) << v;
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  open_out(path) << text;
}

std::pair<std::vector<InteractionSequence>, ItemCatalog> load_corpus_caches(
    const RunConfig& config) {
  const std::string catalog_path = catalog_cache_path(config);
  const std::string sequences_path = sequences_cache_path(config);
  if (!fs::exists(catalog_path) || !fs::exists(sequences_path)) {
    throw std::runtime_error("prepared corpus not found under " +
                             config.workdir + ": run prepare first");
  }
  return {read_sequences(sequences_path), read_catalog(catalog_path)};
}

// Reads one value back out of a flat key-value metrics file.
double read_kv_metric(const fs::path& path, const std::string& key) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  const std::string prefix = key + " = ";
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) == 0) return std::stod(line.substr(prefix.size()));
  }
  throw std::runtime_error(key + " not found in " + path.string());
}

std::string sanitize_for_tsv(std::string text) {
  for (char& c : text) {
    if (c == '\t' || c == '\n') c = ' ';
  }
  return text;
}

}  // namespace

std::string catalog_cache_path(const RunConfig& config) {
  return (fs::path(config.workdir) / "catalog.tsv").string();
}

std::string sequences_cache_path(const RunConfig& config) {
  return (fs::path(config.workdir) / "sequences.tsv").string();
}

std::string run_directory(const RunConfig& config,
                          const std::string& fallback_name) {
  const std::string name =
      config.run_name.empty() ? fallback_name : config.run_name;
  return (fs::path(config.workdir) / name).string();
}

void cmd_prepare(const RunConfig& config, std::ostream& diag) {
  if (config.data_in.empty()) {
    throw std::invalid_argument("data_in is required for prepare");
  }
  const auto raw = load_interactions(config.data_in, config.data_format);
  auto [sequences, catalog] = build_sequences(raw, config.min_count);

  fs::create_directories(config.workdir);
  write_catalog(catalog_cache_path(config), catalog);
  write_sequences(sequences_cache_path(config), sequences);

  std::size_t interactions = 0;
  for (const auto& seq : sequences) interactions += seq.items.size();
  std::ostringstream stats;
  stats << "users=" << sequences.size() << " items=" << catalog.item_count()
        << " interactions=" << interactions << " avg_length=" << std::fixed
        << std::setprecision(2)
        << double(interactions) / double(sequences.size()) << "\n";
  write_text(fs::path(config.workdir) / "stats.txt", stats.str());
  write_text(fs::path(config.workdir) / "prepare.config",
             serialize_run_config(config));
  diag << stats.str();
}

void cmd_train(const RunConfig& config, std::ostream& diag) {
  require_training_keys(config);
  auto [sequences, catalog] = load_corpus_caches(config);

  const fs::path run_dir =
      run_directory(config, "train-seed" + std::to_string(config.train.seed));
  fs::create_directories(run_dir);
  write_text(run_dir / "config.txt", serialize_run_config(config));
  write_text(run_dir / "corpus.hash", corpus_hash_line(config));

  auto progress = open_out(run_dir / "progress.log");
  auto losses = open_out(run_dir / "losses.tsv");
  FitResult result =
      fit(sequences, catalog.item_count(), config.train, &progress, &losses);

  Checkpoint ck;
  ck.state = std::move(result.state);
  ck.beta_max = config.train.beta_max;
  ck.posterior_mode = config.train.posterior_mode;
  ck.posterior_floor = config.train.posterior_floor;
  ck.adam = std::move(result.adam);
  ck.epoch = result.report.best_epoch;
  ck.best_metric = result.report.best_valid_metric;
  save_checkpoint((run_dir / "checkpoint.bin").string(), ck);

  std::ostringstream report;
  report << "epochs_run = " << result.report.epochs_run << "\n"
         << "best_epoch = " << result.report.best_epoch << "\n"
         << "best_valid_mrr = " << std::setprecision(17)
         << result.report.best_valid_metric << "\n"
         << "wall_time_seconds = " << std::setprecision(6)
         << result.report.wall_time_seconds << "\n";
  write_text(run_dir / "report.txt", report.str());

  diag << "trained " << result.report.epochs_run << " epochs, best valid MRR "
       << trimmed_number(result.report.best_valid_metric) << " at epoch "
       << result.report.best_epoch << " -> " << run_dir.string() << "\n";
}

void cmd_evaluate(const RunConfig& config, std::ostream& diag) {
  const fs::path run_dir =
      run_directory(config, "train-seed" + std::to_string(config.train.seed));
  const std::string ckpt_path = config.checkpoint.empty()
                                    ? (run_dir / "checkpoint.bin").string()
                                    : config.checkpoint;
  Checkpoint ck = load_checkpoint(ckpt_path);
  auto [sequences, catalog] = load_corpus_caches(config);
  const DiffusionSchedule schedule = checkpoint_schedule(ck);

  MetricsReport report =
      evaluate_split(sequences, ck.state, schedule, eval_options(config));

  fs::create_directories(run_dir);
  const std::string tag = to_string(config.split);
  write_text(run_dir / ("config.evaluate." + tag + ".txt"),
             serialize_run_config(config));
  {
    auto out = open_out(run_dir / ("metrics." + tag + ".txt"));
    write_report_human(out, report);
  }
  {
    auto out = open_out(run_dir / ("metrics." + tag + ".kv"));
    write_report_kv(out, report);
  }
  if (config.with_per_step) {
    auto out = open_out(run_dir / ("per_step." + tag + ".tsv"));
    write_per_step_series(out, report.per_step_change);
  }
  if (config.with_subgroups) {
    auto length_out = open_out(run_dir / ("subgroup_length." + tag + ".tsv"));
    write_subgroup_series(length_out, report.subgroup.by_length);
    auto freq_out = open_out(run_dir / ("subgroup_frequency." + tag + ".tsv"));
    write_subgroup_series(freq_out, report.subgroup.by_frequency);
  }

  diag << tag << " split over " << report.users << " users: MRR "
       << trimmed_number(report.ranking.mrr) << ", Recall@10 "
       << trimmed_number(report.ranking.recall.at(10)) << " -> "
       << run_dir.string() << "\n";
}

void cmd_sweep(const RunConfig& config, std::ostream& diag) {
  if (config.sweep_steps.empty() || config.sweep_beta_max.empty()) {
    throw std::invalid_argument(
        "sweep grid is empty: set sweep_steps and sweep_beta_max");
  }
  require_training_keys(config);

  struct Cell {
    int max_step;
    double beta_max;
    double mrr = 0.0;
    bool ok = false;
    std::string error;
  };
  std::vector<Cell> cells;

  for (int steps : config.sweep_steps) {
    for (double beta : config.sweep_beta_max) {
      RunConfig cell_config = config;
      cell_config.train.max_step = steps;
      cell_config.train.beta_max = beta;
      cell_config.checkpoint.clear();
      std::ostringstream name;
      name << "sweep-T" << steps << "-beta" << std::setprecision(6) << beta;
      cell_config.run_name = name.str();

      Cell cell{steps, beta};
      try {
        cmd_train(cell_config, diag);
        cmd_evaluate(cell_config, diag);
        const fs::path run_dir = run_directory(cell_config, name.str());
        cell.mrr = read_kv_metric(
            run_dir / ("metrics." + to_string(config.split) + ".kv"),
            "metric.mrr");
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.error = e.what();
        diag << "sweep cell T=" << steps << " beta_max=" << beta
             << " failed: " << cell.error << "\n";
      }
      cells.push_back(std::move(cell));
    }
  }

  fs::create_directories(config.workdir);
  {
    auto out = open_out(fs::path(config.workdir) / "sweep_summary.tsv");
    for (const auto& cell : cells) {
      out << cell.max_step << "\t" << std::setprecision(17) << cell.beta_max
          << "\t" << cell.mrr << "\t"
          << (cell.ok ? std::string("ok") : sanitize_for_tsv(cell.error))
          << "\n";
    }
  }

  // Two-column plot data: the best MRR along the other grid axis.
  std::map<int, double> by_step;
  std::map<double, double> by_beta;
  for (const auto& cell : cells) {
    if (!cell.ok) continue;
    auto step_it = by_step.find(cell.max_step);
    if (step_it == by_step.end() || cell.mrr > step_it->second) {
      by_step[cell.max_step] = cell.mrr;
    }
    auto beta_it = by_beta.find(cell.beta_max);
    if (beta_it == by_beta.end() || cell.mrr > beta_it->second) {
      by_beta[cell.beta_max] = cell.mrr;
    }
  }
  {
    auto out = open_out(fs::path(config.workdir) / "mrr_vs_T.tsv");
    for (const auto& [steps, mrr] : by_step) {
      out << steps << "\t" << std::setprecision(17) << mrr << "\n";
    }
  }
  {
    auto out = open_out(fs::path(config.workdir) / "mrr_vs_beta.tsv");
    for (const auto& [beta, mrr] : by_beta) {
      out << std::setprecision(17) << beta << "\t" << mrr << "\n";
    }
  }

  int ok_count = 0;
  for (const auto& cell : cells) ok_count += cell.ok ? 1 : 0;
  diag << "sweep finished: " << ok_count << "/" << cells.size()
       << " cells succeeded\n";
}

}  // namespace cddrec
