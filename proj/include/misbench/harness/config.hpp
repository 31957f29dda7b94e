// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "misbench/client.hpp"
#include "misbench/corruption.hpp"
#include "misbench/dataset.hpp"
#include "misbench/detail/checksum.hpp"
#include "misbench/detail/files.hpp"
#include "misbench/misalign.hpp"
#include "misbench/parsing.hpp"
#include "misbench/prompting.hpp"

namespace misbench::harness {

namespace fs = std::filesystem;

enum class CorMode { Union, DescriptionOnly };
enum class CorrelationMode { PerCondition, PerImage };

struct SegModel {
  std::string model_id;
  fs::path predictions;  // <dir>/<condition>/<image_id>.png
};

struct CorrelationPair {
  std::string seg_model;
  std::string vlm_model;
};

/// Everything one run needs. Paths are kept as written in the config file
/// and resolved against `base_dir` on use, so the frozen snapshot is
/// independent of where the run happens.
struct RunConfig {
  fs::path base_dir;

  std::uint64_t global_seed = 0;
  fs::path manifest;
  fs::path output_dir = "out";
  int jobs = 1;
  corruption::Params corruption;

  std::optional<fs::path> taxonomy_file;
  std::optional<std::vector<std::string>> critical_classes;
  std::uint64_t min_pixels = 1;
  std::optional<fs::path> prompts_file;
  std::optional<fs::path> lexicon_file;
  std::optional<fs::path> uncertainty_file;

  std::vector<fs::path> recorded;
  std::vector<client::EndpointConfig> endpoints;
  CorMode cor_mode = CorMode::Union;
  int top_k = 5;
  double epsilon = misalign::kDefaultEpsilon;

  std::vector<SegModel> seg_models;

  std::vector<CorrelationPair> pairs;  // empty: every (seg, vlm) combination
  std::vector<std::string> q_metrics{"miou"};
  std::vector<std::string> l_metrics{"hr", "cor", "smr"};
  CorrelationMode correlation_mode = CorrelationMode::PerCondition;

  fs::path resolve(const fs::path& p) const { return detail::resolve(base_dir, p); }
  fs::path out() const { return resolve(output_dir); }

  static RunConfig from_json(const nlohmann::json& j, fs::path base_dir);
  static RunConfig load(const fs::path& path) {
    const auto text = detail::read_file(path);
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument(path.string() + ": invalid JSON");
    return from_json(j, path.parent_path());
  }

  /// Effective configuration, defaults included, in a fixed field order.
  nlohmann::ordered_json to_json() const;

  void validate() const;
};

namespace detail_cfg {

template <typename T, std::size_t N>
std::array<T, N> read_array(const nlohmann::json& j, const char* field, std::array<T, N> def) {
  if (!j.contains(field)) return def;
  const auto v = j.at(field).get<std::vector<T>>();
  if (v.size() != N) {
    throw std::invalid_argument(std::string("corruption.") + field + " needs " + std::to_string(N) +
                                " values (one per severity)");
  }
  std::array<T, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

inline std::string path_str(const fs::path& p) { return p.generic_string(); }

}  // namespace detail_cfg

inline RunConfig RunConfig::from_json(const nlohmann::json& j, fs::path base) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  RunConfig c;
  c.base_dir = std::move(base);
  c.global_seed = j.value("global_seed", c.global_seed);
  if (!j.contains("manifest")) throw std::invalid_argument("config: 'manifest' is required");
  c.manifest = j.at("manifest").get<std::string>();
  c.output_dir = j.value("output_dir", std::string("out"));
  c.jobs = j.value("jobs", c.jobs);

  if (j.contains("corruption")) {
    const auto& k = j["corruption"];
    c.corruption.blur_kernel = detail_cfg::read_array(k, "blur_kernel", c.corruption.blur_kernel);
    c.corruption.gamma = detail_cfg::read_array(k, "gamma", c.corruption.gamma);
    c.corruption.noise_sigma = detail_cfg::read_array(k, "noise_sigma", c.corruption.noise_sigma);
    c.corruption.occlusion_area =
        detail_cfg::read_array(k, "occlusion_area", c.corruption.occlusion_area);
    const auto mode = k.value("noise_mode", std::string("per_channel"));
    if (mode == "per_channel") {
      c.corruption.noise_mode = corruption::NoiseMode::PerChannel;
    } else if (mode == "shared") {
      c.corruption.noise_mode = corruption::NoiseMode::SharedAcrossChannels;
    } else {
      throw std::invalid_argument("corruption.noise_mode must be 'per_channel' or 'shared'");
    }
  }

  if (j.contains("taxonomy")) c.taxonomy_file = j["taxonomy"].get<std::string>();
  if (j.contains("critical_classes")) {
    c.critical_classes = j["critical_classes"].get<std::vector<std::string>>();
  }
  c.min_pixels = j.value("min_pixels", c.min_pixels);
  if (j.contains("prompts")) c.prompts_file = j["prompts"].get<std::string>();
  if (j.contains("lexicon")) c.lexicon_file = j["lexicon"].get<std::string>();
  if (j.contains("uncertainty_markers")) c.uncertainty_file = j["uncertainty_markers"].get<std::string>();

  if (j.contains("vlm")) {
    const auto& v = j["vlm"];
    for (const auto& p : v.value("recorded", std::vector<std::string>{})) c.recorded.emplace_back(p);
    if (v.contains("endpoints")) {
      for (const auto& e : v["endpoints"]) c.endpoints.push_back(client::EndpointConfig::from_json(e));
    }
    const auto mode = v.value("cor_mode", std::string("union"));
    if (mode == "union") {
      c.cor_mode = CorMode::Union;
    } else if (mode == "description_only") {
      c.cor_mode = CorMode::DescriptionOnly;
    } else {
      throw std::invalid_argument("vlm.cor_mode must be 'union' or 'description_only'");
    }
    c.top_k = v.value("top_k", c.top_k);
    c.epsilon = v.value("epsilon", c.epsilon);
  }

  if (j.contains("segmentation")) {
    for (const auto& m : j["segmentation"].value("models", nlohmann::json::array())) {
      c.seg_models.push_back({m.at("model_id").get<std::string>(), m.at("predictions").get<std::string>()});
    }
  }

  if (j.contains("correlate")) {
    const auto& k = j["correlate"];
    for (const auto& p : k.value("pairs", nlohmann::json::array())) {
      c.pairs.push_back({p.at("seg_model").get<std::string>(), p.at("vlm_model").get<std::string>()});
    }
    c.q_metrics = k.value("q_metrics", c.q_metrics);
    c.l_metrics = k.value("l_metrics", c.l_metrics);
    const auto mode = k.value("mode", std::string("per_condition"));
    if (mode == "per_condition") {
      c.correlation_mode = CorrelationMode::PerCondition;
    } else if (mode == "per_image") {
      c.correlation_mode = CorrelationMode::PerImage;
    } else {
      throw std::invalid_argument("correlate.mode must be 'per_condition' or 'per_image'");
    }
  }
  c.validate();
  return c;
}

inline void RunConfig::validate() const {
  corruption.validate();
  if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
  if (top_k < 1 || top_k > kNumClasses) {
    throw std::invalid_argument("config: vlm.top_k must be in [1, 19]");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("config: vlm.epsilon must be > 0");
  std::vector<fs::path> must_exist{manifest};
  for (const auto& opt : {taxonomy_file, prompts_file, lexicon_file, uncertainty_file})
    if (opt) must_exist.push_back(*opt);
  for (const auto& r : recorded) must_exist.push_back(r);
  for (const auto& m : seg_models) must_exist.push_back(m.predictions);
  for (const auto& p : must_exist) {
    if (!fs::exists(resolve(p))) {
      throw std::invalid_argument("config: path '" + resolve(p).string() + "' does not exist");
    }
  }
  for (const auto& q : q_metrics) {
    if (q != "miou" && q != "pixel_accuracy" && q != "delta_q") {
      throw std::invalid_argument("config: unknown Q metric '" + q + "'");
    }
  }
  for (const auto& l : l_metrics) {
    if (l != "hr" && l != "cor" && l != "smr" && l != "safety_parse_failure" && l != "delta_hr" &&
        l != "delta_cor" && l != "delta_smr") {
      throw std::invalid_argument("config: unknown L metric '" + l + "'");
    }
  }
}

inline nlohmann::ordered_json RunConfig::to_json() const {
  using detail_cfg::path_str;
  nlohmann::ordered_json j;
  j["global_seed"] = global_seed;
  j["manifest"] = path_str(manifest);
  j["output_dir"] = path_str(output_dir);
  j["jobs"] = jobs;
  nlohmann::ordered_json k;
  k["blur_kernel"] = corruption.blur_kernel;
  k["gamma"] = corruption.gamma;
  k["noise_sigma"] = corruption.noise_sigma;
  k["occlusion_area"] = corruption.occlusion_area;
  k["noise_mode"] =
      corruption.noise_mode == corruption::NoiseMode::PerChannel ? "per_channel" : "shared";
  j["corruption"] = k;
  j["taxonomy"] = taxonomy_file ? nlohmann::ordered_json(path_str(*taxonomy_file)) : nullptr;
  j["critical_classes"] = critical_classes ? nlohmann::ordered_json(*critical_classes) : nullptr;
  j["min_pixels"] = min_pixels;
  j["prompts"] = prompts_file ? nlohmann::ordered_json(path_str(*prompts_file)) : nullptr;
  j["lexicon"] = lexicon_file ? nlohmann::ordered_json(path_str(*lexicon_file)) : nullptr;
  j["uncertainty_markers"] =
      uncertainty_file ? nlohmann::ordered_json(path_str(*uncertainty_file)) : nullptr;

  nlohmann::ordered_json v;
  auto rec = nlohmann::ordered_json::array();
  for (const auto& r : recorded) rec.push_back(path_str(r));
  v["recorded"] = rec;
  auto eps = nlohmann::ordered_json::array();
  for (const auto& e : endpoints) {
    nlohmann::ordered_json ej;
    ej["base_url"] = e.base_url;
    ej["path"] = e.path;
    ej["model_id"] = e.model_id;
    ej["api_key_env"] = e.api_key_env;
    ej["timeout_s"] = e.timeout_s;
    ej["max_retries"] = e.max_retries;
    ej["rate_limit_rps"] = e.rate_limit_rps;
    ej["initial_backoff_ms"] = e.initial_backoff_ms;
    ej["backoff_factor"] = e.backoff_factor;
    ej["temperature"] = e.temperature ? nlohmann::ordered_json(*e.temperature) : nullptr;
    ej["max_tokens"] = e.max_tokens;
    ej["workers"] = e.workers;
    eps.push_back(ej);
  }
  v["endpoints"] = eps;
  v["cor_mode"] = cor_mode == CorMode::Union ? "union" : "description_only";
  v["top_k"] = top_k;
  v["epsilon"] = epsilon;
  j["vlm"] = v;

  auto models = nlohmann::ordered_json::array();
  for (const auto& m : seg_models) {
    models.push_back(nlohmann::ordered_json{{"model_id", m.model_id}, {"predictions", path_str(m.predictions)}});
  }
  j["segmentation"] = nlohmann::ordered_json{{"models", models}};

  nlohmann::ordered_json corr;
  auto pj = nlohmann::ordered_json::array();
  for (const auto& p : pairs) {
    pj.push_back(nlohmann::ordered_json{{"seg_model", p.seg_model}, {"vlm_model", p.vlm_model}});
  }
  corr["pairs"] = pj;
  corr["q_metrics"] = q_metrics;
  corr["l_metrics"] = l_metrics;
  corr["mode"] = correlation_mode == CorrelationMode::PerCondition ? "per_condition" : "per_image";
  j["correlate"] = corr;
  return j;
}

/// Taxonomy, prompt set, lexicon and uncertainty markers resolved from a
/// config, with checksums of their canonical serialisations.
struct LanguageAssets {
  dataset::ClassTaxonomy taxonomy;
  std::vector<prompting::PromptSpec> prompts;
  parsing::Lexicon lexicon;
  parsing::UncertaintyMarkers markers;

  /// name -> {source, version, sha256}
  nlohmann::ordered_json provenance;
};

inline nlohmann::json read_json_file(const fs::path& path) {
  const auto j = nlohmann::json::parse(detail::read_file(path), nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument(path.string() + ": invalid JSON");
  return j;
}

inline LanguageAssets load_language_assets(const RunConfig& cfg) {
  LanguageAssets a;
  auto entry = [](const std::string& source, const std::string& version, const std::string& sha) {
    return nlohmann::ordered_json{{"source", source}, {"version", version}, {"sha256", sha}};
  };

  if (cfg.taxonomy_file) {
    a.taxonomy = dataset::ClassTaxonomy::from_json(read_json_file(cfg.resolve(*cfg.taxonomy_file)));
  } else {
    a.taxonomy = dataset::ClassTaxonomy::cityscapes();
  }
  if (cfg.critical_classes) {
    a.taxonomy.critical = {};
    for (const auto& name : *cfg.critical_classes) {
      const auto id = a.taxonomy.id_of(name);
      if (!id) throw std::invalid_argument("config: critical class '" + name + "' not in taxonomy");
      a.taxonomy.critical.insert(*id);
    }
  }
  const auto tax_text = a.taxonomy.to_json().dump();
  a.provenance["taxonomy"] = entry(cfg.taxonomy_file ? detail_cfg::path_str(*cfg.taxonomy_file) : "builtin",
                                   "-", detail::sha256_hex(tax_text));

  if (cfg.prompts_file) {
    const auto path = cfg.resolve(*cfg.prompts_file);
    a.prompts = prompting::from_json(read_json_file(path), a.taxonomy);
    a.provenance["prompts"] = entry(detail_cfg::path_str(*cfg.prompts_file), "-", detail::sha256_file(path));
  } else {
    a.prompts = prompting::default_prompt_set(a.taxonomy);
    a.provenance["prompts"] =
        entry("builtin", "-", detail::sha256_hex(prompting::to_json(a.prompts, a.taxonomy).dump()));
  }

  if (cfg.lexicon_file) {
    const auto path = cfg.resolve(*cfg.lexicon_file);
    a.lexicon = parsing::Lexicon::from_json(read_json_file(path), a.taxonomy);
    a.provenance["lexicon"] =
        entry(detail_cfg::path_str(*cfg.lexicon_file), a.lexicon.version(), detail::sha256_file(path));
  } else {
    a.lexicon = parsing::default_lexicon();
    a.provenance["lexicon"] = entry("builtin", a.lexicon.version(),
                                    detail::sha256_hex(a.lexicon.to_json(a.taxonomy).dump()));
  }

  if (cfg.uncertainty_file) {
    const auto path = cfg.resolve(*cfg.uncertainty_file);
    a.markers = parsing::UncertaintyMarkers::from_json(read_json_file(path));
    a.provenance["uncertainty_markers"] = entry(detail_cfg::path_str(*cfg.uncertainty_file),
                                                a.markers.version(), detail::sha256_file(path));
  } else {
    a.markers = parsing::default_uncertainty_markers();
    a.provenance["uncertainty_markers"] =
        entry("builtin", a.markers.version(), detail::sha256_hex(a.markers.to_json().dump()));
  }
  return a;
}

}  // namespace misbench::harness
