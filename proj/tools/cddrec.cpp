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

// Command-line front end: prepare | train | evaluate | sweep.
//
// Each subcommand reads an optional `--config <file>` (flat key = value
// lines) and accepts one flag per config key as an override, applied on top
// of the file. CDDREC_WORKDIR, when set, overrides the workdir; it is the
// only environment input. Exit code 0 means the command completed; all
// diagnostics go to stderr and all data to files.

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "cddrec/commands.hpp"
#include "cddrec/config.hpp"

namespace {

struct SubcommandState {
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

cddrec::RunConfig assemble(const SubcommandState& sub) {
  cddrec::RunConfig config;
  if (!sub.config_path.empty()) {
    config = cddrec::load_run_config(sub.config_path);
  }
  for (const auto& key : cddrec::run_config_keys()) {
    if (sub.app->count("--" + key) > 0) {
      cddrec::apply_config_key(config, key, sub.overrides.at(key));
    }
  }
  if (const char* env = std::getenv("CDDREC_WORKDIR")) {
    if (*env != '\0') config.workdir = env;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional denoising diffusion recommender"};
  app.require_subcommand(1);

  std::map<std::string, SubcommandState> subs;
  const std::map<std::string, std::string> descriptions = {
      {"prepare", "filter raw interactions into corpus caches"},
      {"train", "fit on the prepared corpus and write the best checkpoint"},
      {"evaluate", "score a checkpoint on the valid or test split"},
      {"sweep", "train and evaluate a max_step x beta_max grid"},
  };
  for (const auto& [name, description] : descriptions) {
    SubcommandState& sub = subs[name];
    sub.app = app.add_subcommand(name, description);
    sub.app->add_option("--config", sub.config_path,
                        "config file with key = value lines");
    for (const auto& key : cddrec::run_config_keys()) {
      sub.app->add_option("--" + key, sub.overrides[key]);
    }
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (subs["prepare"].app->parsed()) {
      cddrec::cmd_prepare(assemble(subs["prepare"]), std::cerr);
    } else if (subs["train"].app->parsed()) {
      cddrec::cmd_train(assemble(subs["train"]), std::cerr);
    } else if (subs["evaluate"].app->parsed()) {
      cddrec::cmd_evaluate(assemble(subs["evaluate"]), std::cerr);
    } else {
      cddrec::cmd_sweep(assemble(subs["sweep"]), std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
