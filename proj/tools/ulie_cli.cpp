// Copyright 2026 The ulie Authors
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

// ulie: command-line front end for the experiments.
//
//   ulie <experiment> [--config FILE] [--out DIR] [--seed S] [--replicates R]
//                     [--profile desk|paper] [--workers W] [--svg]

#include <CLI11.hpp>
#include <iostream>
#include <thread>

#include "ulie/experiment.hpp"

namespace ex = ulie::experiment;

namespace {

int report_error(const std::string& type, const std::string& message, int code) {
  std::cerr << ex::error_record(type, message, code) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unitary operator learning experiments"};
  app.require_subcommand(1);

  ex::RunManifest manifest;
  std::string config_path;
  std::string profile = "desk";
  manifest.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const std::vector<std::pair<std::string, std::string>> commands{
      {"learn-unitary", "learn a random unitary with each parametrization"},
      {"restricted", "learn with 7n trainable parameters"},
      {"basis-sweep", "Lie parametrization under random changes of basis"},
      {"rnn-adding", "gated unitary recurrent network on the adding task"},
      {"rnn-memory", "gated unitary recurrent network on the memory task"},
      {"gradcheck", "finite-difference check of every analytic gradient"},
      {"bench", "time the outer-product basis conjugation against dense products"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config overriding the profile defaults")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", manifest.out_root, "output root; runs go to a fresh subdirectory")
        ->capture_default_str();
    sub->add_option("--seed", manifest.seed, "global seed")->capture_default_str();
    sub->add_option("--replicates", manifest.replicates, "independent replicates")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--profile", profile, "dataset sizes: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
    sub->add_option("--workers", manifest.workers, "worker threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_flag("--svg", manifest.svg, "also write SVG plots");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return report_error("usage", e.what(), ex::kExitConfig);
  }

  try {
    manifest.kind = ex::parse_kind(app.get_subcommands().front()->get_name());
    manifest.profile = ex::parse_profile(profile);
    if (!config_path.empty()) manifest.config_path = config_path;
    const ex::RunOutcome out = ex::run(manifest);
    std::cout << out.dir.string() << '\n';
    if (out.exit_code == ex::kExitDiverged) {
      return report_error("diverged", "one or more runs diverged; see " +
                                          (out.dir / "summary.json").string(),
                          out.exit_code);
    }
    if (out.exit_code == ex::kExitCheckFailed) {
      return report_error("check_failed",
                          "check failed; see " + (out.dir / "summary.json").string(),
                          out.exit_code);
    }
    return out.exit_code;
  } catch (const ex::ConfigError& e) {
    return report_error("config", e.what(), ex::kExitConfig);
  } catch (const ulie::PreconditionError& e) {
    return report_error("precondition", e.what(), ex::kExitConfig);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), ex::kExitFailure);
  }
}
