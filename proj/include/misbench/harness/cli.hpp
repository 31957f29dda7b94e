// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "misbench/harness/config.hpp"
#include "misbench/harness/stages.hpp"

namespace misbench::harness {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> out;
  std::optional<std::string> cor_mode;
  std::optional<int> top_k;
  std::optional<std::string> correlation_mode;
};

inline void apply(const Overrides& o, RunConfig& cfg) {
  if (o.seed) cfg.global_seed = *o.seed;
  if (o.jobs) cfg.jobs = *o.jobs;
  if (o.out) cfg.output_dir = fs::absolute(*o.out);
  if (o.top_k) cfg.top_k = *o.top_k;
  if (o.cor_mode) {
    if (*o.cor_mode == "union") cfg.cor_mode = CorMode::Union;
    else if (*o.cor_mode == "description") cfg.cor_mode = CorMode::DescriptionOnly;
    else throw std::invalid_argument("--cor-mode must be 'union' or 'description'");
  }
  if (o.correlation_mode) {
    if (*o.correlation_mode == "per_condition") cfg.correlation_mode = CorrelationMode::PerCondition;
    else if (*o.correlation_mode == "per_image") cfg.correlation_mode = CorrelationMode::PerImage;
    else throw std::invalid_argument("--mode must be 'per_condition' or 'per_image'");
  }
}

/// Entry point shared by the tool binary and the tests. Returns the process
/// exit code: 0 success, 1 usage or configuration error, 2 partial result.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"Benchmark for segmentation quality versus vision-language misalignment"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides ov;

  using StageFn = StageResult (*)(const RunConfig&, const Log&);
  struct Sub {
    const char* name;
    const char* help;
    StageFn fn;
  };
  const Sub subs[] = {
      {"corrupt", "Generate corrupted image variants", &cmd_corrupt},
      {"seg-score", "Score segmentation predictions against ground truth", &cmd_seg_score},
      {"eval-vlm", "Query or load VLM responses and parse them", &cmd_eval_vlm},
      {"metrics", "Compute misalignment metrics from parsed responses", &cmd_metrics},
      {"correlate", "Correlate segmentation quality with misalignment", &cmd_correlate},
      {"report", "Bundle outputs with checksums and provenance", &cmd_report},
  };

  StageFn selected = nullptr;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", ov.seed, "Override global_seed");
    sub->add_option("--jobs", ov.jobs, "Worker threads");
    sub->add_option("--out", ov.out, "Override output_dir");
    if (std::string(s.name) == "metrics") {
      sub->add_option("--cor-mode", ov.cor_mode, "COR combination: union or description");
    }
    if (std::string(s.name) == "eval-vlm") sub->add_option("--top-k", ov.top_k, "Top-K for contrastive models");
    if (std::string(s.name) == "correlate") sub->add_option("--mode", ov.correlation_mode, "per_condition or per_image");
    sub->callback([&selected, fn = s.fn] { selected = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream out;
    const int code = app.exit(e, out, out);
    err << out.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  Log log = [&err](const std::string& msg) { err << "misalign-bench: " << msg << "\n"; };
  RunConfig cfg;
  try {
    cfg = RunConfig::load(config_path);
    apply(ov, cfg);
    cfg.validate();
  } catch (const std::exception& e) {
    err << "misalign-bench: config error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    return selected(cfg, log).exit_code;
  } catch (const std::exception& e) {
    err << "misalign-bench: error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace misbench::harness
