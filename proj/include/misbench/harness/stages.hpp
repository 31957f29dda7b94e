// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

// Pipeline stages. Each stage reads its inputs from the configured paths or
// from the output directory and writes its results back there:
//
//   corrupt     <out>/<condition>/<image_id>.png, <out>/corruption_audit.csv
//   seg-score   <out>/seg/*.csv                      (never reads responses)
//   eval-vlm    <out>/vlm/parsed.jsonl, parse_coverage.csv, inputs.json
//   metrics     <out>/metrics/*.csv                  (never reads images)
//   correlate   <out>/correlate/*.csv
//   report      <out>/report/

#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "misbench/class_set.hpp"
#include "misbench/client.hpp"
#include "misbench/corruption.hpp"
#include "misbench/dataset.hpp"
#include "misbench/detail/checksum.hpp"
#include "misbench/detail/csv.hpp"
#include "misbench/detail/files.hpp"
#include "misbench/detail/format.hpp"
#include "misbench/detail/parallel.hpp"
#include "misbench/harness/config.hpp"
#include "misbench/label_png.hpp"
#include "misbench/misalign.hpp"
#include "misbench/parsing.hpp"
#include "misbench/png_io.hpp"
#include "misbench/prompting.hpp"
#include "misbench/segscore.hpp"
#include "misbench/stats.hpp"

namespace misbench::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartial = 2;

using Log = std::function<void(const std::string&)>;

struct StageResult {
  int exit_code = kExitOk;
  std::vector<std::string> warnings;

  void warn(const Log& log, const std::string& msg, bool partial = false) {
    warnings.push_back(msg);
    if (log) log("warning: " + msg);
    if (partial) exit_code = std::max(exit_code, kExitPartial);
  }
};

namespace paths {
inline fs::path condition_dir(const RunConfig& cfg, const std::string& cond) { return cfg.out() / cond; }
inline fs::path audit(const RunConfig& cfg) { return cfg.out() / "corruption_audit.csv"; }
inline fs::path seg(const RunConfig& cfg) { return cfg.out() / "seg"; }
inline fs::path vlm(const RunConfig& cfg) { return cfg.out() / "vlm"; }
inline fs::path metrics(const RunConfig& cfg) { return cfg.out() / "metrics"; }
inline fs::path correlate(const RunConfig& cfg) { return cfg.out() / "correlate"; }
inline fs::path report(const RunConfig& cfg) { return cfg.out() / "report"; }
inline fs::path config_snapshot(const RunConfig& cfg) { return cfg.out() / "config.json"; }
}  // namespace paths

inline void write_config_snapshot(const RunConfig& cfg) {
  detail::write_file(paths::config_snapshot(cfg), cfg.to_json().dump(2) + "\n");
}

inline std::string column_name(const std::string& class_name) {
  std::string s = class_name;
  for (auto& ch : s)
    if (ch == ' ') ch = '_';
  return s;
}

inline std::vector<std::string> condition_names() {
  std::vector<std::string> out;
  for (const auto& c : corruption::all_conditions()) out.push_back(c.name());
  return out;
}

inline std::string corruption_family(const corruption::Condition& c) {
  if (c.is_clean()) return "clean";
  switch (*c.kind) {
    case corruption::Kind::LowLight: return "low_light";
    case corruption::Kind::MotionBlur: return "motion_blur";
    case corruption::Kind::Occlusion: return "occlusion";
  }
  return "?";
}

// ---------------------------------------------------------------- corrupt

inline StageResult cmd_corrupt(const RunConfig& cfg, const Log& log = {}) {
  StageResult result;
  const auto entries = dataset::load_manifest(cfg.resolve(cfg.manifest));
  const auto degraded = corruption::degraded_conditions();
  write_config_snapshot(cfg);

  struct AuditRow {
    std::string condition;
    std::uint64_t seed = 0;
    std::optional<corruption::OcclusionRect> rect;
  };
  std::vector<std::vector<AuditRow>> audit(entries.size());

  detail::parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = entries[i];
    const auto img = png::read_image(e.image_path);
    png::write(paths::condition_dir(cfg, "clean") / (e.image_id + ".png"), img);
    for (const auto& cond : degraded) {
      corruption::CorruptionSpec spec{*cond.kind, cond.severity,
                                      corruption::derive_seed(cfg.global_seed, e.image_id,
                                                              *cond.kind, cond.severity)};
      AuditRow row{cond.name(), spec.seed, std::nullopt};
      Image out;
      if (spec.kind == corruption::Kind::Occlusion) {
        auto res = corruption::occlude(img, spec.severity, spec.seed, cfg.corruption);
        row.rect = res.rect;
        out = std::move(res.image);
      } else {
        out = corruption::corrupt(img, spec, cfg.corruption);
      }
      if (spec.kind == corruption::Kind::MotionBlur) row.seed = 0;
      png::write(paths::condition_dir(cfg, cond.name()) / (e.image_id + ".png"), out);
      audit[i].push_back(row);
    }
  });

  detail::CsvWriter csv({"image_id", "condition", "seed", "rect_x0", "rect_y0", "rect_w", "rect_h"});
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (const auto& r : audit[i]) {
      auto s = [](int v) { return std::to_string(v); };
      csv.row({entries[i].image_id, r.condition, std::to_string(r.seed),
               r.rect ? s(r.rect->x0) : "", r.rect ? s(r.rect->y0) : "",
               r.rect ? s(r.rect->w) : "", r.rect ? s(r.rect->h) : ""});
    }
  }
  detail::write_file(paths::audit(cfg), csv.str());
  if (log) {
    log("corrupt: wrote " + std::to_string(entries.size() * (degraded.size() + 1)) + " images for " +
        std::to_string(entries.size()) + " inputs");
  }
  return result;
}

// -------------------------------------------------------------- seg-score

inline dataset::ClassTaxonomy load_taxonomy(const RunConfig& cfg) {
  return load_language_assets(cfg).taxonomy;
}

struct SegRow {
  std::string model;
  std::string condition;
  segscore::SegQuality quality;
  std::optional<double> delta_q;
};

inline StageResult cmd_seg_score(const RunConfig& cfg, const Log& log = {}) {
  StageResult result;
  if (cfg.seg_models.empty()) {
    throw std::invalid_argument("seg-score: no segmentation models configured");
  }
  const auto entries = dataset::load_manifest(cfg.resolve(cfg.manifest));
  const auto taxonomy = load_taxonomy(cfg);
  const auto conditions = corruption::all_conditions();
  write_config_snapshot(cfg);

  for (const auto& m : cfg.seg_models) {
    for (const auto& c : conditions) {
      const auto dir = cfg.resolve(m.predictions) / c.name();
      if (!fs::is_directory(dir)) {
        throw std::runtime_error("seg-score: missing predictions for (" + m.model_id + ", " +
                                 c.name() + "): directory '" + dir.string() + "' not found");
      }
    }
  }

  std::vector<LabelMap> gts(entries.size());
  detail::parallel_for(entries.size(), cfg.jobs,
                       [&](std::size_t i) { gts[i] = png::read_label_map(entries[i].gt_path); });

  struct PerImage {
    std::optional<double> miou;
    std::optional<double> pa;
  };
  std::vector<SegRow> rows;
  detail::CsvWriter per_image_csv({"model", "condition", "image_id", "miou", "pixel_accuracy"});

  for (const auto& m : cfg.seg_models) {
    const auto root = cfg.resolve(m.predictions);
    // [image][condition]
    std::vector<std::vector<segscore::ConfusionMatrix>> cms(
        entries.size(), std::vector<segscore::ConfusionMatrix>(conditions.size()));
    detail::parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
      for (std::size_t c = 0; c < conditions.size(); ++c) {
        const auto pred_path = root / conditions[c].name() / (entries[i].image_id + ".png");
        if (!fs::exists(pred_path)) {
          throw std::runtime_error("seg-score: missing prediction '" + pred_path.string() +
                                   "' for (" + m.model_id + ", " + conditions[c].name() + ")");
        }
        const auto pred = png::read_label_map(pred_path);
        try {
          cms[i][c].accumulate(pred, gts[i]);
        } catch (const std::invalid_argument& e) {
          throw std::runtime_error(pred_path.string() + ": " + e.what());
        }
      }
    });

    std::optional<double> clean_miou;
    for (std::size_t c = 0; c < conditions.size(); ++c) {
      segscore::ConfusionMatrix total;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        total += cms[i][c];
        PerImage pi;
        const auto iou = segscore::per_class_iou(cms[i][c]);
        if (std::any_of(iou.begin(), iou.end(), [](const auto& v) { return v.has_value(); })) {
          pi.miou = segscore::miou(iou);
        }
        if (cms[i][c].total() > 0) pi.pa = segscore::pixel_accuracy(cms[i][c]);
        per_image_csv.row({m.model_id, conditions[c].name(), entries[i].image_id,
                           detail::full(pi.miou), detail::full(pi.pa)});
      }
      SegRow row{m.model_id, conditions[c].name(), {}, std::nullopt};
      try {
        row.quality = segscore::evaluate(total);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("seg-score: (" + m.model_id + ", " + row.condition + "): " + e.what());
      }
      if (conditions[c].is_clean()) clean_miou = row.quality.miou;
      if (clean_miou) row.delta_q = segscore::delta_q(*clean_miou, row.quality.miou);
      rows.push_back(std::move(row));
    }
  }

  std::vector<std::string> iou_cols;
  for (const auto& n : taxonomy.names) iou_cols.push_back("iou_" + column_name(n));

  std::vector<std::string> header{"model", "condition", "miou", "pixel_accuracy", "delta_q"};
  header.insert(header.end(), iou_cols.begin(), iou_cols.end());
  detail::CsvWriter quality(header);

  std::vector<std::string> t2_header{"model", "condition"};
  for (const auto& n : taxonomy.names) t2_header.push_back(column_name(n));
  t2_header.push_back("miou");
  detail::CsvWriter table2(t2_header);

  detail::CsvWriter fig2({"model", "corruption", "severity", "condition", "miou"});

  for (const auto& r : rows) {
    std::vector<std::string> q{r.model, r.condition, detail::full(r.quality.miou),
                               detail::full(r.quality.pixel_accuracy), detail::full(r.delta_q)};
    std::vector<std::string> t2{r.model, r.condition};
    for (const auto& v : r.quality.per_class_iou) {
      q.push_back(detail::full(v));
      t2.push_back(detail::percent(v));
    }
    t2.push_back(detail::percent(r.quality.miou));
    quality.row(q);
    table2.row(t2);
    const auto cond = corruption::Condition::parse(r.condition);
    fig2.row({r.model, corruption_family(cond), std::to_string(cond.severity), r.condition,
              detail::full(r.quality.miou)});
  }

  std::vector<std::string> t3_header{"condition"};
  for (const auto& m : cfg.seg_models) {
    t3_header.push_back(m.model_id);
    t3_header.push_back(m.model_id + "_delta_q");
  }
  detail::CsvWriter table3(t3_header);
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    std::vector<std::string> line{conditions[c].name()};
    for (std::size_t m = 0; m < cfg.seg_models.size(); ++m) {
      const auto& r = rows[m * conditions.size() + c];
      line.push_back(detail::two_dp(r.quality.miou));
      line.push_back(detail::two_dp(r.delta_q));
    }
    table3.row(line);
  }

  const auto dir = paths::seg(cfg);
  detail::write_file(dir / "seg_quality.csv", quality.str());
  detail::write_file(dir / "table2_classwise.csv", table2.str());
  detail::write_file(dir / "table3_miou.csv", table3.str());
  detail::write_file(dir / "fig2_degradation.csv", fig2.str());
  detail::write_file(dir / "per_image.csv", per_image_csv.str());
  if (log) log("seg-score: scored " + std::to_string(cfg.seg_models.size()) + " model(s)");
  return result;
}

// --------------------------------------------------------------- eval-vlm

struct ParsedEntry {
  std::string model_id;
  std::string image_id;
  std::string condition;
  parsing::ParsedResponse response;
};

inline std::string parsed_to_jsonl(const ParsedEntry& e, const dataset::ClassTaxonomy& taxonomy) {
  nlohmann::ordered_json j;
  j["model_id"] = e.model_id;
  j["image_id"] = e.image_id;
  j["condition"] = e.condition;
  j["prompt_id"] = e.response.prompt_id;
  j["kind"] = parsing::to_string(e.response.kind);
  switch (e.response.kind) {
    case parsing::ResponseKind::Description:
    case parsing::ResponseKind::TopK: {
      std::vector<std::string> names;
      for (int c : e.response.mentioned.members()) names.push_back(taxonomy.name(c));
      j["mentioned"] = names;
      break;
    }
    case parsing::ResponseKind::Presence:
      j["class"] = taxonomy.name(*e.response.class_id);
      j["outcome"] = parsing::to_string(e.response.outcome);
      break;
    case parsing::ResponseKind::Safety:
      j["outcome"] = parsing::to_string(e.response.outcome);
      break;
  }
  return j.dump();
}

inline ParsedEntry parsed_from_json(const nlohmann::json& j, const dataset::ClassTaxonomy& taxonomy,
                                    const std::string& where) {
  ParsedEntry e;
  try {
    e.model_id = j.at("model_id").get<std::string>();
    e.image_id = j.at("image_id").get<std::string>();
    e.condition = j.at("condition").get<std::string>();
    e.response.prompt_id = j.at("prompt_id").get<std::string>();
    e.response.kind = parsing::parse_response_kind(j.at("kind").get<std::string>());
    auto class_id = [&](const std::string& name) {
      const auto id = taxonomy.id_of(name);
      if (!id) throw std::invalid_argument("unknown class '" + name + "'");
      return *id;
    };
    switch (e.response.kind) {
      case parsing::ResponseKind::Description:
      case parsing::ResponseKind::TopK:
        for (const auto& n : j.at("mentioned")) e.response.mentioned.insert(class_id(n.get<std::string>()));
        break;
      case parsing::ResponseKind::Presence:
        e.response.class_id = class_id(j.at("class").get<std::string>());
        e.response.outcome = parsing::parse_outcome_name(j.at("outcome").get<std::string>());
        break;
      case parsing::ResponseKind::Safety:
        e.response.outcome = parsing::parse_outcome_name(j.at("outcome").get<std::string>());
        break;
    }
  } catch (const std::exception& ex) {
    throw std::runtime_error(where + ": " + ex.what());
  }
  return e;
}

inline std::vector<ParsedEntry> load_parsed(const fs::path& path, const dataset::ClassTaxonomy& taxonomy) {
  if (!fs::exists(path)) throw std::runtime_error("parsed store '" + path.string() + "' not found; run eval-vlm first");
  std::vector<ParsedEntry> out;
  std::istringstream in(detail::read_file(path));
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error(where + ": invalid JSON");
    out.push_back(parsed_from_json(j, taxonomy, where));
  }
  return out;
}

/// Parses one record against the prompt set. nullopt for an unknown prompt.
inline std::optional<parsing::ParsedResponse> parse_record(const client::VlmRecord& rec,
                                                           const LanguageAssets& assets, int top_k) {
  parsing::ParsedResponse r;
  r.prompt_id = rec.prompt_id;
  if (rec.is_contrastive()) {
    r.kind = parsing::ResponseKind::TopK;
    r.mentioned = parsing::topk_selection(*rec.scores, top_k);
    return r;
  }
  const auto* spec = prompting::find(assets.prompts, rec.prompt_id);
  if (!spec) return std::nullopt;
  switch (spec->category) {
    case prompting::Category::SceneDescription:
      r.kind = parsing::ResponseKind::Description;
      r.mentioned = parsing::parse_description(rec.raw_text, assets.lexicon);
      break;
    case prompting::Category::ObjectPresence:
      r.kind = parsing::ResponseKind::Presence;
      r.class_id = spec->class_slot;
      r.outcome = parsing::parse_binary(rec.raw_text);
      break;
    case prompting::Category::SafetyInterpretation:
      r.kind = parsing::ResponseKind::Safety;
      r.outcome = parsing::parse_safety(rec.raw_text, assets.markers);
      break;
  }
  return r;
}

inline StageResult cmd_eval_vlm(const RunConfig& cfg, const Log& log = {}) {
  StageResult result;
  const auto assets = load_language_assets(cfg);
  const auto entries = dataset::load_manifest(cfg.resolve(cfg.manifest));
  write_config_snapshot(cfg);
  std::set<std::string> known_ids;
  for (const auto& e : entries) known_ids.insert(e.image_id);

  client::ResponseStore store;
  for (const auto& r : cfg.recorded) store.merge(client::ResponseStore::load_recorded(cfg.resolve(r)));

  if (!cfg.endpoints.empty()) {
    std::vector<std::string> ids;
    for (const auto& e : entries) ids.push_back(e.image_id);
    std::vector<client::BatchPrompt> prompts;
    for (const auto& p : assets.prompts) prompts.push_back({p.prompt_id, prompting::render(p, assets.taxonomy)});
    for (const auto& ep : cfg.endpoints) {
      const auto store_path = paths::vlm(cfg) / ("live_" + ep.model_id + ".jsonl");
      const auto summary = client::run_batch(ep, ids, condition_names(), prompts, cfg.out(), store_path, log);
      if (!summary.complete()) {
        result.warn(log, std::to_string(summary.failed) + " live queries failed for " + ep.model_id, true);
      }
      store.merge(client::ResponseStore::load_appendable(store_path));
    }
  }

  std::vector<ParsedEntry> parsed;
  for (const auto& [key, rec] : store) {
    if (!rec.ok()) {
      result.warn(log, "skipping failed record (" + rec.image_id + ", " + rec.condition + ", " +
                           rec.prompt_id + ", " + rec.model_id + "): " + rec.error, true);
      continue;
    }
    try {
      corruption::Condition::parse(rec.condition);
    } catch (const std::invalid_argument&) {
      result.warn(log, "skipping record with unknown condition '" + rec.condition + "'");
      continue;
    }
    if (!known_ids.count(rec.image_id)) {
      result.warn(log, "record for image '" + rec.image_id + "' not in manifest");
    }
    auto r = parse_record(rec, assets, cfg.top_k);
    if (!r) {
      result.warn(log, "skipping record with unknown prompt_id '" + rec.prompt_id + "' (" + rec.model_id +
                           ", " + rec.image_id + ", " + rec.condition + ")");
      continue;
    }
    parsed.push_back({rec.model_id, rec.image_id, rec.condition, std::move(*r)});
  }

  std::string out;
  for (const auto& e : parsed) out += parsed_to_jsonl(e, assets.taxonomy) + "\n";
  detail::write_file(paths::vlm(cfg) / "parsed.jsonl", out);

  // (model, condition order, kind) -> {records, unparsable}
  std::map<std::tuple<std::string, int, int>, std::pair<std::size_t, std::size_t>> coverage;
  for (const auto& e : parsed) {
    auto& c = coverage[{e.model_id, corruption::Condition::parse(e.condition).order(),
                        static_cast<int>(e.response.kind)}];
    ++c.first;
    const bool binary = e.response.kind == parsing::ResponseKind::Presence ||
                        e.response.kind == parsing::ResponseKind::Safety;
    if (binary && e.response.outcome == parsing::BinaryOutcome::Unparsable) ++c.second;
  }
  const auto conds = corruption::all_conditions();
  detail::CsvWriter cov({"model", "condition", "kind", "records", "parsed", "unparsable"});
  for (const auto& [k, v] : coverage) {
    cov.row({std::get<0>(k), conds[std::get<1>(k)].name(),
             std::string(parsing::to_string(static_cast<parsing::ResponseKind>(std::get<2>(k)))),
             std::to_string(v.first), std::to_string(v.first - v.second), std::to_string(v.second)});
  }
  detail::write_file(paths::vlm(cfg) / "parse_coverage.csv", cov.str());
  detail::write_file(paths::vlm(cfg) / "inputs.json", assets.provenance.dump(2) + "\n");
  if (log) log("eval-vlm: parsed " + std::to_string(parsed.size()) + " of " + std::to_string(store.size()) + " records");
  return result;
}

// ---------------------------------------------------------------- metrics

struct ConditionMetrics {
  std::string model_id;
  std::string condition;
  std::size_t n = 0;
  std::size_t n_safety = 0;
  std::optional<double> hr, cor, smr, safety_parse_failure;
  std::optional<double> delta_hr, delta_cor, delta_smr;

  std::optional<double> safety_parse_success() const {
    if (!safety_parse_failure) return std::nullopt;
    return 1.0 - *safety_parse_failure;
  }
};

inline StageResult cmd_metrics(const RunConfig& cfg, const Log& log = {}) {
  StageResult result;
  const auto assets = load_language_assets(cfg);
  const auto& taxonomy = assets.taxonomy;
  const auto entries = dataset::load_manifest(cfg.resolve(cfg.manifest));
  const auto parsed = load_parsed(paths::vlm(cfg) / "parsed.jsonl", taxonomy);
  write_config_snapshot(cfg);

  std::vector<ClassSet> gt_sets(entries.size());
  detail::parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    gt_sets[i] = dataset::gt_class_set(png::read_label_map(entries[i].gt_path), cfg.min_pixels);
  });

  struct Responses {
    std::optional<ClassSet> description;
    std::optional<ClassSet> topk;
    std::map<int, parsing::BinaryOutcome> presence;
    std::optional<parsing::BinaryOutcome> safety;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Responses> by_sample;
  std::set<std::string> models, answers_safety, answers_scene;
  for (const auto& e : parsed) {
    models.insert(e.model_id);
    if (e.response.kind == parsing::ResponseKind::Safety) answers_safety.insert(e.model_id);
    if (e.response.kind == parsing::ResponseKind::Description || e.response.kind == parsing::ResponseKind::TopK) {
      answers_scene.insert(e.model_id);
    }
    auto& r = by_sample[{e.model_id, e.condition, e.image_id}];
    switch (e.response.kind) {
      case parsing::ResponseKind::Description: r.description = e.response.mentioned; break;
      case parsing::ResponseKind::TopK: r.topk = e.response.mentioned; break;
      case parsing::ResponseKind::Presence: r.presence[*e.response.class_id] = e.response.outcome; break;
      case parsing::ResponseKind::Safety: r.safety = e.response.outcome; break;
    }
  }

  std::vector<ConditionMetrics> rows;
  detail::CsvWriter per_sample({"model", "condition", "image_id", "hr_term", "cor_term", "smr_term",
                                "safety_unparsable"});
  detail::CsvWriter missing({"model", "condition", "image_id", "missing"});

  for (const auto& model : models) {
    // A model that never answers a prompt kind (score-only models have no
    // safety answers) is not missing data for that kind.
    const bool expects_safety = answers_safety.count(model) > 0;
    const bool expects_scene = answers_scene.count(model) > 0;
    std::optional<ConditionMetrics> clean;
    for (const auto& cond : condition_names()) {
      std::vector<misalign::SampleAlignment> lang, safety;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const auto it = by_sample.find({model, cond, e.image_id});
        const Responses none;
        const auto& r = it == by_sample.end() ? none : it->second;
        misalign::SampleAlignment s;
        s.image_id = e.image_id;
        s.condition = cond;
        s.c_gt = gt_sets[i];
        s.crit_present = dataset::critical_present(gt_sets[i], taxonomy);
        s.safety_label = e.safety_label;
        const auto desc = r.description ? r.description : r.topk;
        std::vector<std::string> line{model, cond, e.image_id, "", "", "", ""};
        if (desc) {
          s.c_vlm_hr = *desc;
          s.c_vlm_cor = cfg.cor_mode == CorMode::Union ? parsing::presence_union(*desc, r.presence) : *desc;
          lang.push_back(s);
          line[3] = detail::full(misalign::hallucination_term(s.c_vlm_hr, s.c_gt, cfg.epsilon));
          line[4] = detail::full(misalign::omission_term(s.crit_present, s.c_vlm_cor));
        } else if (expects_scene) {
          missing.row({model, cond, e.image_id, "description"});
        }
        if (r.safety) {
          s.safety_decision = *r.safety;
          safety.push_back(s);
          line[5] = detail::full(misalign::safety_term(s.safety_decision, s.safety_label));
          line[6] = s.safety_decision == parsing::BinaryOutcome::Unparsable ? "1" : "0";
        } else if (expects_safety) {
          missing.row({model, cond, e.image_id, "safety"});
        }
        if (desc || r.safety) per_sample.row(line);
      }
      const bool short_scene = expects_scene && lang.size() < entries.size();
      const bool short_safety = expects_safety && safety.size() < entries.size();
      if (short_scene || short_safety) {
        result.warn(log, model + "/" + cond + ": " + std::to_string(entries.size() - lang.size()) +
                             " samples without a description, " +
                             std::to_string(entries.size() - safety.size()) +
                             " without a safety answer (reduced n)", true);
      }
      if (lang.empty() && safety.empty()) {
        result.warn(log, model + "/" + cond + ": no usable samples, row omitted", true);
        continue;
      }
      ConditionMetrics m;
      m.model_id = model;
      m.condition = cond;
      m.n = lang.size();
      m.n_safety = safety.size();
      if (!lang.empty()) {
        m.hr = misalign::hallucination_rate(lang, cfg.epsilon);
        m.cor = misalign::critical_omission_rate(lang);
      }
      if (!safety.empty()) {
        m.smr = misalign::safety_misinterpretation_rate(safety);
        m.safety_parse_failure = misalign::safety_parse_failure_rate(safety);
      }
      if (cond == "clean") clean = m;
      if (clean) {
        auto delta = [](const std::optional<double>& c, const std::optional<double>& d) -> std::optional<double> {
          if (!c || !d) return std::nullopt;
          return misalign::delta_l(*c, *d);
        };
        m.delta_hr = delta(clean->hr, m.hr);
        m.delta_cor = delta(clean->cor, m.cor);
        m.delta_smr = delta(clean->smr, m.smr);
      }
      rows.push_back(m);
    }
  }

  detail::CsvWriter full({"model", "condition", "n", "n_safety", "hr", "cor", "smr", "safety_parse_failure",
                          "safety_parse_success", "delta_hr", "delta_cor", "delta_smr"});
  detail::CsvWriter table({"model", "condition", "hr", "cor", "smr", "safety_parse_failure",
                           "safety_parse_success"});
  for (const auto& m : rows) {
    full.row({m.model_id, m.condition, std::to_string(m.n), std::to_string(m.n_safety), detail::full(m.hr),
              detail::full(m.cor), detail::full(m.smr), detail::full(m.safety_parse_failure),
              detail::full(m.safety_parse_success()), detail::full(m.delta_hr), detail::full(m.delta_cor),
              detail::full(m.delta_smr)});
    table.row({m.model_id, m.condition, detail::two_dp(m.hr), detail::two_dp(m.cor), detail::two_dp(m.smr),
               detail::two_dp(m.safety_parse_failure), detail::two_dp(m.safety_parse_success())});
  }
  const auto dir = paths::metrics(cfg);
  detail::write_file(dir / "metrics.csv", full.str());
  detail::write_file(dir / "table_misalign.csv", table.str());
  detail::write_file(dir / "per_sample.csv", per_sample.str());
  detail::write_file(dir / "missing.csv", missing.str());
  if (log) log("metrics: " + std::to_string(rows.size()) + " rows for " + std::to_string(models.size()) + " model(s)");
  return result;
}

// -------------------------------------------------------------- correlate

inline detail::CsvTable read_csv_file(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("'" + path.string() + "' not found; run the producing stage first");
  return detail::parse_csv(detail::read_file(path), path.string());
}

/// (model, label) -> metric -> value, in file order of first appearance.
struct MetricIndex {
  std::vector<std::string> models;
  std::map<std::string, std::vector<stats::MetricRow>> rows;
};

inline MetricIndex index_metrics(const detail::CsvTable& t, const std::string& source,
                                 const std::vector<std::pair<std::string, std::string>>& columns,
                                 bool per_image) {
  MetricIndex idx;
  const int c_model = t.require_column("model", source);
  const int c_cond = t.require_column("condition", source);
  const int c_img = per_image ? t.require_column("image_id", source) : -1;
  std::vector<std::pair<int, std::string>> cols;
  for (const auto& [col, metric] : columns) cols.emplace_back(t.require_column(col, source), metric);
  for (const auto& row : t.rows) {
    const auto& model = row[c_model];
    if (!idx.rows.count(model)) idx.models.push_back(model);
    stats::MetricRow mr;
    mr.label = per_image ? row[c_cond] + "/" + row[c_img] : row[c_cond];
    for (const auto& [c, metric] : cols) {
      if (auto v = detail::parse_optional_double(row[c])) mr.values[metric] = *v;
    }
    idx.rows[model].push_back(std::move(mr));
  }
  return idx;
}

inline StageResult cmd_correlate(const RunConfig& cfg, const Log& log = {}) {
  StageResult result;
  write_config_snapshot(cfg);
  const bool per_image = cfg.correlation_mode == CorrelationMode::PerImage;
  MetricIndex seg, lang;
  if (per_image) {
    const auto sp = paths::seg(cfg) / "per_image.csv";
    const auto mp = paths::metrics(cfg) / "per_sample.csv";
    seg = index_metrics(read_csv_file(sp), sp.string(), {{"miou", "miou"}, {"pixel_accuracy", "pixel_accuracy"}}, true);
    lang = index_metrics(read_csv_file(mp), mp.string(),
                         {{"hr_term", "hr"}, {"cor_term", "cor"}, {"smr_term", "smr"},
                          {"safety_unparsable", "safety_parse_failure"}},
                         true);
  } else {
    const auto sp = paths::seg(cfg) / "seg_quality.csv";
    const auto mp = paths::metrics(cfg) / "metrics.csv";
    seg = index_metrics(read_csv_file(sp), sp.string(),
                        {{"miou", "miou"}, {"pixel_accuracy", "pixel_accuracy"}, {"delta_q", "delta_q"}}, false);
    lang = index_metrics(read_csv_file(mp), mp.string(),
                         {{"hr", "hr"}, {"cor", "cor"}, {"smr", "smr"},
                          {"safety_parse_failure", "safety_parse_failure"}, {"delta_hr", "delta_hr"},
                          {"delta_cor", "delta_cor"}, {"delta_smr", "delta_smr"}},
                         false);
  }

  auto pairs = cfg.pairs;
  if (pairs.empty()) {
    for (const auto& s : seg.models)
      for (const auto& l : lang.models) pairs.push_back({s, l});
  }
  if (pairs.empty()) throw std::invalid_argument("correlate: no (segmentation, VLM) model pairs available");

  const std::string mode = per_image ? "per_image" : "per_condition";
  detail::CsvWriter matrix({"seg_model", "vlm_model", "mode", "q_metric", "l_metric", "pearson", "spearman", "n", "note"});
  detail::CsvWriter scatter({"seg_model", "vlm_model", "q_metric", "l_metric", "condition", "q", "l"});
  for (const auto& p : pairs) {
    if (!seg.rows.count(p.seg_model)) throw std::invalid_argument("correlate: no segmentation rows for '" + p.seg_model + "'");
    if (!lang.rows.count(p.vlm_model)) throw std::invalid_argument("correlate: no metric rows for '" + p.vlm_model + "'");
    std::map<std::string, std::map<std::string, double>> joined;
    for (const auto& r : lang.rows[p.vlm_model]) joined[r.label] = r.values;
    std::vector<stats::MetricRow> table;
    for (const auto& r : seg.rows[p.seg_model]) {
      const auto it = joined.find(r.label);
      if (it == joined.end()) continue;
      stats::MetricRow row{r.label, r.values};
      row.values.insert(it->second.begin(), it->second.end());
      table.push_back(std::move(row));
    }
    // A metric the VLM never produces (SMR for a score-only model) is left
    // out of this pair rather than reported as missing data.
    std::vector<std::string> l_metrics;
    for (const auto& m : cfg.l_metrics) {
      const bool any = std::any_of(table.begin(), table.end(),
                                   [&](const stats::MetricRow& r) { return r.values.count(m) > 0; });
      if (any) {
        l_metrics.push_back(m);
      } else {
        result.warn(log, "correlate: " + p.vlm_model + " has no '" + m + "' values; skipped for this pair");
      }
    }
    if (l_metrics.empty()) continue;
    stats::CorrelationResult res;
    try {
      res = stats::correlate_conditions(table, cfg.q_metrics, l_metrics);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("correlate (" + p.seg_model + ", " + p.vlm_model + "): " + e.what());
    }
    for (const auto& c : res.cells) {
      if (!c.note.empty()) result.warn(log, p.seg_model + " x " + p.vlm_model + " " + c.q_metric + "/" + c.l_metric + ": " + c.note);
      matrix.row({p.seg_model, p.vlm_model, mode, c.q_metric, c.l_metric, detail::full(c.pearson),
                  detail::full(c.spearman), std::to_string(c.n), c.note});
    }
    for (const auto& s : res.scatter) {
      scatter.row({p.seg_model, p.vlm_model, s.q_metric, s.l_metric, s.label, detail::full(s.q), detail::full(s.l)});
    }
  }
  detail::write_file(paths::correlate(cfg) / "correlation.csv", matrix.str());
  detail::write_file(paths::correlate(cfg) / "scatter.csv", scatter.str());
  if (log) log("correlate: " + std::to_string(pairs.size()) + " model pair(s), mode " + mode);
  return result;
}

// ----------------------------------------------------------------- report

inline const std::vector<std::pair<std::string, std::string>>& report_artifacts() {
  // (path under <out>, name in bundle)
  static const std::vector<std::pair<std::string, std::string>> a{
      {"corruption_audit.csv", "corruption_audit.csv"},
      {"seg/seg_quality.csv", "seg_quality.csv"},
      {"seg/table2_classwise.csv", "table2_classwise.csv"},
      {"seg/table3_miou.csv", "table3_miou.csv"},
      {"seg/fig2_degradation.csv", "fig2_degradation.csv"},
      {"seg/per_image.csv", "seg_per_image.csv"},
      {"vlm/parse_coverage.csv", "parse_coverage.csv"},
      {"metrics/metrics.csv", "metrics.csv"},
      {"metrics/table_misalign.csv", "table_misalign.csv"},
      {"metrics/per_sample.csv", "metrics_per_sample.csv"},
      {"correlate/correlation.csv", "correlation.csv"},
      {"correlate/scatter.csv", "scatter.csv"},
  };
  return a;
}

inline StageResult cmd_report(const RunConfig& cfg, const Log& log = {}) {
  StageResult result;
  write_config_snapshot(cfg);
  const auto dir = paths::report(cfg);
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::vector<std::string> present, missing_outputs;
  for (const auto& [src, name] : report_artifacts()) {
    const auto from = cfg.out() / src;
    if (!fs::exists(from)) {
      missing_outputs.push_back(src);
      continue;
    }
    fs::copy_file(from, dir / name, fs::copy_options::overwrite_existing);
    present.push_back(name);
  }
  for (const auto& m : missing_outputs) result.warn(log, "report: missing stage output " + m, true);
  fs::copy_file(paths::config_snapshot(cfg), dir / "config.json", fs::copy_options::overwrite_existing);

  const auto assets = load_language_assets(cfg);
  nlohmann::ordered_json inputs;
  std::vector<std::string> tampered;
  const auto recorded_path = paths::vlm(cfg) / "inputs.json";
  nlohmann::json recorded;
  if (fs::exists(recorded_path)) recorded = read_json_file(recorded_path);
  for (const auto& [name, cur] : assets.provenance.items()) {
    auto entry = cur;
    if (recorded.contains(name)) {
      const auto then = recorded[name].value("sha256", std::string{});
      entry["sha256_at_eval"] = then;
      entry["match"] = then == cur["sha256"].get<std::string>();
      if (!entry["match"].get<bool>()) tampered.push_back(name);
    } else {
      entry["sha256_at_eval"] = nullptr;
      entry["match"] = nullptr;
    }
    inputs[name] = entry;
  }
  for (const auto& t : tampered) {
    result.warn(log, "report: checksum mismatch for " + t + " since eval-vlm ran", true);
  }
  detail::write_file(dir / "inputs.json", inputs.dump(2) + "\n");

  std::string summary = "misalign-bench report\n\n";
  summary += "artifacts:\n";
  for (const auto& name : present) {
    const auto text = detail::read_file(dir / name);
    const auto lines = std::count(text.begin(), text.end(), '\n');
    summary += "  " + name + " (" + std::to_string(lines > 0 ? lines - 1 : 0) + " rows)\n";
  }
  summary += "missing stage outputs:" + std::string(missing_outputs.empty() ? " none\n" : "\n");
  for (const auto& m : missing_outputs) summary += "  " + m + "\n";
  summary += "input files:\n";
  for (const auto& [name, e] : inputs.items()) {
    std::string status = e["match"].is_null() ? "not recorded" : (e["match"].get<bool>() ? "ok" : "CHECKSUM MISMATCH");
    summary += "  " + name + ": " + e["source"].get<std::string>() + " version " +
               e["version"].get<std::string>() + " sha256 " + e["sha256"].get<std::string>() + " [" + status + "]\n";
  }
  if (fs::exists(dir / "table_misalign.csv")) {
    summary += "\nmisalignment (2 dp):\n" + detail::read_file(dir / "table_misalign.csv");
  }
  if (fs::exists(dir / "table3_miou.csv")) {
    summary += "\nsegmentation mIoU (2 dp):\n" + detail::read_file(dir / "table3_miou.csv");
  }
  if (fs::exists(dir / "correlation.csv")) {
    summary += "\ncorrelation:\n" + detail::read_file(dir / "correlation.csv");
  }
  detail::write_file(dir / "summary.txt", summary);

  std::vector<std::string> names;
  for (const auto& f : fs::directory_iterator(dir)) {
    if (f.is_regular_file()) names.push_back(f.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  std::string sums;
  for (const auto& n : names) sums += detail::sha256_file(dir / n) + "  " + n + "\n";
  detail::write_file(dir / "checksums.txt", sums);
  if (log) log("report: bundle written to " + dir.string());
  return result;
}

}  // namespace misbench::harness
