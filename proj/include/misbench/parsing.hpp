// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

// Normalisation of free-form model output: keyword lookup for class
// mentions, canonical-marker scanning for yes/no and safe/unsafe answers,
// and Top-K selection over contrastive scores.
//
// Description parsing deliberately has no negation handling: "no cars"
// yields {car}.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "misbench/class_set.hpp"
#include "misbench/dataset.hpp"

namespace misbench::parsing {

/// Lowercased alphanumeric runs; every other byte separates tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string normalize_phrase(std::string_view phrase) {
  std::string out;
  for (const auto& t : tokenize(phrase)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

/// Finds contiguous token sequences from a phrase table. At each position
/// the longest phrase wins and its tokens are consumed.
template <typename Value>
class PhraseMatcher {
 public:
  void add(const std::string& normalized, Value v) {
    table_[normalized] = v;
    const auto n = static_cast<std::size_t>(std::count(normalized.begin(), normalized.end(), ' ') + 1);
    max_tokens_ = std::max(max_tokens_, n);
  }

  const std::map<std::string, Value>& table() const { return table_; }

  template <typename Fn>
  void scan(const std::vector<std::string>& tokens, Fn&& on_match) const {
    std::size_t i = 0;
    while (i < tokens.size()) {
      std::size_t consumed = 0;
      const auto longest = std::min(max_tokens_, tokens.size() - i);
      for (std::size_t len = longest; len >= 1 && consumed == 0; --len) {
        std::string key = tokens[i];
        for (std::size_t j = 1; j < len; ++j) key += " " + tokens[i + j];
        if (auto it = table_.find(key); it != table_.end()) {
          on_match(it->second, i, len);
          consumed = len;
        }
      }
      i += consumed ? consumed : 1;
    }
  }

 private:
  std::map<std::string, Value> table_;
  std::size_t max_tokens_ = 1;
};

/// Per-class keyword phrases. Every class has at least one phrase; no phrase
/// maps to two classes.
class Lexicon {
 public:
  Lexicon() = default;

  /// keywords[c] lists phrases for class c.
  Lexicon(std::string version, const std::vector<std::vector<std::string>>& keywords)
      : version_(std::move(version)) {
    if (keywords.size() != kNumClasses) {
      throw std::invalid_argument("lexicon must cover " + std::to_string(kNumClasses) +
                                  " classes, got " + std::to_string(keywords.size()));
    }
    keywords_.resize(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) {
      for (const auto& raw : keywords[c]) {
        const auto k = normalize_phrase(raw);
        if (k.empty()) throw std::invalid_argument("lexicon: empty keyword for class " + std::to_string(c));
        if (auto it = matcher_.table().find(k); it != matcher_.table().end()) {
          if (it->second == c) continue;
          throw std::invalid_argument("lexicon: keyword '" + k + "' maps to classes " +
                                      std::to_string(it->second) + " and " + std::to_string(c));
        }
        matcher_.add(k, c);
        keywords_[c].push_back(k);
      }
      if (keywords_[c].empty()) {
        throw std::invalid_argument("lexicon: class " + std::to_string(c) + " has no keywords");
      }
    }
  }

  const std::string& version() const { return version_; }
  const std::vector<std::string>& keywords(int c) const { return keywords_.at(c); }
  const PhraseMatcher<int>& matcher() const { return matcher_; }

  /// {"version": "...", "classes": {"<taxonomy name>": ["kw", ...], ...}}
  static Lexicon from_json(const nlohmann::json& j, const dataset::ClassTaxonomy& taxonomy) {
    std::vector<std::vector<std::string>> kws(kNumClasses);
    for (const auto& [name, list] : j.at("classes").items()) {
      const auto id = taxonomy.id_of(name);
      if (!id) throw std::invalid_argument("lexicon: unknown class '" + name + "'");
      kws[*id] = list.get<std::vector<std::string>>();
    }
    return Lexicon(j.value("version", std::string("unversioned")), kws);
  }

  nlohmann::ordered_json to_json(const dataset::ClassTaxonomy& taxonomy) const {
    nlohmann::ordered_json j;
    j["version"] = version_;
    nlohmann::ordered_json classes;
    for (int c = 0; c < kNumClasses; ++c) classes[taxonomy.name(c)] = keywords_[c];
    j["classes"] = classes;
    return j;
  }

 private:
  std::string version_;
  std::vector<std::vector<std::string>> keywords_;
  PhraseMatcher<int> matcher_;
};

/// Built-in lexicon for the Cityscapes taxonomy.
inline const Lexicon& default_lexicon() {
  static const Lexicon lex(
      "cityscapes-default-1",
      {
          {"road", "roads", "street", "streets", "roadway", "roadways", "lane", "lanes",
           "crosswalk", "crosswalks", "intersection", "intersections", "highway", "asphalt"},
          {"sidewalk", "sidewalks", "pavement", "footpath", "footpaths", "curb", "curbs", "kerb"},
          {"building", "buildings", "house", "houses", "skyscraper", "skyscrapers", "storefront",
           "storefronts", "apartment", "apartments"},
          {"wall", "walls"},
          {"fence", "fences", "railing", "railings", "guardrail", "guardrails", "barrier",
           "barriers"},
          {"pole", "poles", "lamppost", "lampposts", "signpost", "signposts", "utility pole"},
          {"traffic light", "traffic lights", "traffic signal", "traffic signals", "stoplight",
           "stoplights"},
          {"traffic sign", "traffic signs", "sign", "signs", "signage", "stop sign", "stop signs",
           "road sign", "road signs", "street sign", "street signs"},
          {"vegetation", "tree", "trees", "bush", "bushes", "shrub", "shrubs", "hedge", "hedges",
           "foliage", "greenery", "plants"},
          {"terrain", "grass", "lawn", "soil", "dirt", "gravel"},
          {"sky", "skies", "cloud", "clouds"},
          {"person", "persons", "people", "pedestrian", "pedestrians", "man", "men", "woman",
           "women", "child", "children", "walker", "walkers"},
          {"rider", "riders", "cyclist", "cyclists", "motorcyclist", "motorcyclists", "biker",
           "bikers"},
          {"car", "cars", "sedan", "sedans", "automobile", "automobiles", "suv", "suvs", "taxi",
           "taxis", "van", "vans"},
          {"truck", "trucks", "lorry", "lorries", "pickup"},
          {"bus", "buses", "busses"},
          {"train", "trains", "tram", "trams", "streetcar", "streetcars", "trolley"},
          {"motorcycle", "motorcycles", "motorbike", "motorbikes", "scooter", "scooters", "moped",
           "mopeds"},
          {"bicycle", "bicycles", "bike", "bikes"},
      });
  return lex;
}

/// Phrases that mark a non-committal answer.
class UncertaintyMarkers {
 public:
  UncertaintyMarkers() = default;
  UncertaintyMarkers(std::string version, const std::vector<std::string>& phrases)
      : version_(std::move(version)) {
    for (const auto& p : phrases) {
      auto n = normalize_phrase(p);
      if (n.empty()) throw std::invalid_argument("uncertainty marker is empty");
      matcher_.add(n, true);
      phrases_.push_back(std::move(n));
    }
  }

  bool present(const std::vector<std::string>& tokens) const {
    bool found = false;
    matcher_.scan(tokens, [&](bool, std::size_t, std::size_t) { found = true; });
    return found;
  }

  const std::string& version() const { return version_; }
  const std::vector<std::string>& phrases() const { return phrases_; }

  /// {"version": "...", "markers": ["..."]}
  static UncertaintyMarkers from_json(const nlohmann::json& j) {
    return {j.value("version", std::string("unversioned")),
            j.at("markers").get<std::vector<std::string>>()};
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version_;
    j["markers"] = phrases_;
    return j;
  }

 private:
  std::string version_;
  std::vector<std::string> phrases_;
  PhraseMatcher<bool> matcher_;
};

inline const UncertaintyMarkers& default_uncertainty_markers() {
  static const UncertaintyMarkers m("default-1", {"uncertain", "cannot determine", "unclear",
                                                  "not sure", "unable to determine",
                                                  "cannot be determined"});
  return m;
}

enum class BinaryOutcome { Positive, Negative, Unparsable };

inline std::string_view to_string(BinaryOutcome o) {
  switch (o) {
    case BinaryOutcome::Positive: return "positive";
    case BinaryOutcome::Negative: return "negative";
    case BinaryOutcome::Unparsable: return "unparsable";
  }
  return "?";
}

inline BinaryOutcome parse_outcome_name(std::string_view s) {
  if (s == "positive") return BinaryOutcome::Positive;
  if (s == "negative") return BinaryOutcome::Negative;
  if (s == "unparsable") return BinaryOutcome::Unparsable;
  throw std::invalid_argument("unknown outcome '" + std::string(s) + "'");
}

inline ClassSet parse_description(std::string_view text, const Lexicon& lex = default_lexicon()) {
  ClassSet out;
  lex.matcher().scan(tokenize(text), [&](int c, std::size_t, std::size_t) { out.insert(c); });
  return out;
}

namespace detail {

inline std::optional<BinaryOutcome> marker_polarity(std::string_view tok) {
  if (tok == "yes" || tok == "true" || tok == "safe") return BinaryOutcome::Positive;
  if (tok == "no" || tok == "false" || tok == "unsafe") return BinaryOutcome::Negative;
  return std::nullopt;
}

inline bool is_negator(std::string_view tok) {
  return tok == "not" || tok == "never" || tok == "t" || tok == "cannot" || tok == "nor";
}

/// Value of a "decision: <word>" field, if the text has one.
inline std::optional<std::string> decision_field(std::string_view text) {
  std::string lower;
  lower.reserve(text.size());
  for (char ch : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  const auto pos = lower.find("decision");
  if (pos == std::string::npos) return std::nullopt;
  std::size_t i = pos + 8;
  while (i < lower.size() && std::isspace(static_cast<unsigned char>(lower[i]))) ++i;
  if (i >= lower.size() || (lower[i] != ':' && lower[i] != '=')) return std::nullopt;
  ++i;
  while (i < lower.size() && !std::isalnum(static_cast<unsigned char>(lower[i])) &&
         lower[i] != ',' && lower[i] != '\n')
    ++i;
  std::string value;
  while (i < lower.size() && std::isalnum(static_cast<unsigned char>(lower[i]))) value.push_back(lower[i++]);
  return value;
}

}  // namespace detail

/// Canonical-marker scan.
///
/// 1. A "decision: <value>" field, when present, decides alone.
/// 2. Otherwise markers are yes/true/safe (positive) and no/false/unsafe
///    (negative); "safe" preceded within three tokens by a negator
///    (not, never, n't, cannot, nor) is negative.
/// 3. A marker in first position decides; otherwise all markers must
///    agree. No markers or disagreement gives Unparsable.
inline BinaryOutcome parse_binary(std::string_view text) {
  if (auto field = detail::decision_field(text)) {
    const auto p = detail::marker_polarity(*field);
    return p ? *p : BinaryOutcome::Unparsable;
  }
  const auto tokens = tokenize(text);
  std::optional<BinaryOutcome> first;
  bool pos = false;
  bool neg = false;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto p = detail::marker_polarity(tokens[i]);
    if (!p) continue;
    if (tokens[i] == "safe") {
      for (std::size_t back = 1; back <= 3 && back <= i; ++back) {
        if (detail::is_negator(tokens[i - back])) {
          p = BinaryOutcome::Negative;
          break;
        }
      }
    }
    if (i == 0) first = p;
    (*p == BinaryOutcome::Positive ? pos : neg) = true;
  }
  if (first) return *first;
  if (pos == neg) return BinaryOutcome::Unparsable;
  return pos ? BinaryOutcome::Positive : BinaryOutcome::Negative;
}

/// parse_binary with Positive meaning safe; any uncertainty marker makes the
/// answer Unparsable regardless of other markers.
inline BinaryOutcome parse_safety(std::string_view text,
                                  const UncertaintyMarkers& markers = default_uncertainty_markers()) {
  if (markers.present(tokenize(text))) return BinaryOutcome::Unparsable;
  return parse_binary(text);
}

/// The k highest-scoring classes; ties go to the lower class id.
inline ClassSet topk_selection(std::span<const double> scores, int k) {
  if (scores.size() != kNumClasses) {
    throw std::invalid_argument("topk_selection: expected " + std::to_string(kNumClasses) +
                                " scores, got " + std::to_string(scores.size()));
  }
  if (k < 1 || k > kNumClasses) {
    throw std::invalid_argument("topk_selection: k must be in [1, " + std::to_string(kNumClasses) +
                                "], got " + std::to_string(k));
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("topk_selection: non-finite score");
  }
  std::vector<int> order(kNumClasses);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  ClassSet out;
  for (int i = 0; i < k; ++i) out.insert(order[i]);
  return out;
}

/// description ∪ {c : answer(c) == Positive}.
inline ClassSet presence_union(ClassSet description, const std::map<int, BinaryOutcome>& answers) {
  for (const auto& [c, outcome] : answers)
    if (outcome == BinaryOutcome::Positive) description.insert(c);
  return description;
}

enum class ResponseKind { Description, Presence, Safety, TopK };

inline std::string_view to_string(ResponseKind k) {
  switch (k) {
    case ResponseKind::Description: return "description";
    case ResponseKind::Presence: return "presence";
    case ResponseKind::Safety: return "safety";
    case ResponseKind::TopK: return "topk";
  }
  return "?";
}

inline ResponseKind parse_response_kind(std::string_view s) {
  if (s == "description") return ResponseKind::Description;
  if (s == "presence") return ResponseKind::Presence;
  if (s == "safety") return ResponseKind::Safety;
  if (s == "topk") return ResponseKind::TopK;
  throw std::invalid_argument("unknown response kind '" + std::string(s) + "'");
}

/// Structured outcome of one response. `mentioned` is meaningful for
/// Description/TopK, `outcome` for Presence/Safety.
struct ParsedResponse {
  std::string prompt_id;
  ResponseKind kind = ResponseKind::Description;
  ClassSet mentioned;
  BinaryOutcome outcome = BinaryOutcome::Unparsable;
  std::optional<int> class_id;  // Presence only

  bool operator==(const ParsedResponse&) const = default;
};

}  // namespace misbench::parsing
