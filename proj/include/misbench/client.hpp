// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

// Obtains model responses for (image, prompt) pairs, live from a
// chat-completions endpoint or from recorded JSONL files.
//
// This header only ever sees raw RGB images and prompt text; segmentation
// label maps are not reachable from here.

#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "misbench/constants.hpp"
#include "misbench/detail/files.hpp"
#include "misbench/image.hpp"
#include "misbench/png_io.hpp"

namespace misbench::client {

namespace fs = std::filesystem;

/// Reserved prompt id under which contrastive score rows are stored.
inline constexpr const char* kTopKPromptId = "topk";

struct EndpointConfig {
  std::string base_url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model_id;
  std::string api_key_env;  // name of the variable holding the bearer token
  double timeout_s = 60.0;
  int max_retries = 3;
  double rate_limit_rps = 0.0;  // <= 0: unlimited
  int initial_backoff_ms = 500;
  double backoff_factor = 2.0;
  std::optional<double> temperature = 0.0;
  int max_tokens = 512;
  int workers = 1;

  void validate() const {
    if (base_url.empty()) throw std::invalid_argument("endpoint: base_url is empty");
    if (model_id.empty()) throw std::invalid_argument("endpoint: model_id is empty");
    if (!(timeout_s > 0.0)) throw std::invalid_argument("endpoint: timeout must be > 0");
    if (max_retries < 0) throw std::invalid_argument("endpoint: max_retries must be >= 0");
    if (initial_backoff_ms < 0) throw std::invalid_argument("endpoint: backoff must be >= 0");
    if (workers < 1) throw std::invalid_argument("endpoint: workers must be >= 1");
  }

  static EndpointConfig from_json(const nlohmann::json& j) {
    EndpointConfig c;
    c.base_url = j.at("base_url").get<std::string>();
    c.path = j.value("path", c.path);
    c.model_id = j.at("model_id").get<std::string>();
    c.api_key_env = j.value("api_key_env", std::string{});
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.rate_limit_rps = j.value("rate_limit_rps", c.rate_limit_rps);
    c.initial_backoff_ms = j.value("initial_backoff_ms", c.initial_backoff_ms);
    c.backoff_factor = j.value("backoff_factor", c.backoff_factor);
    if (j.contains("temperature")) {
      c.temperature = j["temperature"].is_null() ? std::nullopt
                                                 : std::optional(j["temperature"].get<double>());
    }
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.workers = j.value("workers", c.workers);
    c.validate();
    return c;
  }
};

inline std::string base64(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

/// Chat-completions body: one user message holding the prompt text and the
/// image as a base64 PNG data URL.
inline std::string build_request_body(const EndpointConfig& cfg, const std::string& prompt,
                                      const std::vector<std::uint8_t>& png) {
  nlohmann::ordered_json text_part{{"type", "text"}, {"text", prompt}};
  nlohmann::ordered_json image_part{
      {"type", "image_url"},
      {"image_url", {{"url", "data:image/png;base64," + base64(png)}}}};
  nlohmann::ordered_json msg{{"role", "user"},
                             {"content", nlohmann::ordered_json::array({text_part, image_part})}};
  nlohmann::ordered_json body;
  body["model"] = cfg.model_id;
  body["messages"] = nlohmann::ordered_json::array({msg});
  if (cfg.temperature) body["temperature"] = *cfg.temperature;
  body["max_tokens"] = cfg.max_tokens;
  return body.dump();
}

/// Assistant text of the first choice. Content may be a string or a list of
/// typed parts.
inline std::optional<std::string> extract_text(const std::string& body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) return std::nullopt;
  const auto& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message")) return std::nullopt;
  const auto& content = first["message"].value("content", nlohmann::json());
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string text;
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text" && part.contains("text") &&
          part["text"].is_string()) {
        text += part["text"].get<std::string>();
      }
    }
    return text;
  }
  return std::nullopt;
}

/// Spaces requests at least 1/rps seconds apart across all callers.
class RateLimiter {
 public:
  explicit RateLimiter(double rps) {
    if (rps > 0.0) {
      interval_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(1.0 / rps));
    }
  }

  void acquire() {
    if (interval_.count() == 0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_);
      next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  std::mutex mu_;
  std::chrono::steady_clock::duration interval_{0};
  std::chrono::steady_clock::time_point next_{};
};

enum class FailureKind { None, Auth, RateLimited, Server, Transport, Client, MalformedBody };

struct QueryResult {
  std::string text;
  bool ok = false;
  FailureKind failure = FailureKind::None;
  std::string error;
  int attempts = 0;
  int http_status = 0;
};

/// One chat request with bounded retries. Transport errors, timeouts, 429
/// and 5xx are retried with exponential backoff; auth failures and other
/// 4xx are not. A 200 with an unreadable body yields empty text and an
/// error flag. Never throws on network failure.
inline QueryResult query_png(const EndpointConfig& cfg, const std::vector<std::uint8_t>& png,
                             const std::string& prompt, RateLimiter* limiter = nullptr) {
  cfg.validate();
  const auto body = build_request_body(cfg, prompt, png);
  httplib::Headers headers;
  if (!cfg.api_key_env.empty()) {
    if (const char* token = std::getenv(cfg.api_key_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  QueryResult res;
  double backoff_ms = cfg.initial_backoff_ms;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff_ms));
      backoff_ms *= cfg.backoff_factor;
    }
    if (limiter) limiter->acquire();
    res.attempts = attempt + 1;

    httplib::Client http(cfg.base_url);
    const auto secs = static_cast<time_t>(cfg.timeout_s);
    const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
    http.set_connection_timeout(secs, usecs);
    http.set_read_timeout(secs, usecs);
    http.set_write_timeout(secs, usecs);

    auto r = http.Post(cfg.path, headers, body, "application/json");
    if (!r) {
      res.failure = FailureKind::Transport;
      res.error = "transport error: " + httplib::to_string(r.error());
      res.http_status = 0;
      continue;
    }
    res.http_status = r->status;
    if (r->status == 200) {
      if (auto text = extract_text(r->body)) {
        res.text = std::move(*text);
        res.ok = true;
        res.failure = FailureKind::None;
        res.error.clear();
      } else {
        res.text.clear();
        res.failure = FailureKind::MalformedBody;
        res.error = "malformed response body";
      }
      return res;
    }
    if (r->status == 401 || r->status == 403) {
      res.failure = FailureKind::Auth;
      res.error = "authentication failed (HTTP " + std::to_string(r->status) + ")";
      return res;
    }
    if (r->status == 429) {
      res.failure = FailureKind::RateLimited;
      res.error = "rate limited (HTTP 429)";
      continue;
    }
    if (r->status >= 500) {
      res.failure = FailureKind::Server;
      res.error = "server error (HTTP " + std::to_string(r->status) + ")";
      continue;
    }
    res.failure = FailureKind::Client;
    res.error = "request rejected (HTTP " + std::to_string(r->status) + ")";
    return res;
  }
  return res;
}

inline QueryResult query(const EndpointConfig& cfg, const Image& image, const std::string& prompt,
                         RateLimiter* limiter = nullptr) {
  return query_png(cfg, png::encode(image), prompt, limiter);
}

enum class Transport { Live, Recorded };

struct VlmRecord {
  std::string image_id;
  std::string condition;
  std::string prompt_id;  // kTopKPromptId for contrastive score rows
  std::string model_id;
  std::string raw_text;
  std::optional<std::vector<double>> scores;  // contrastive models
  std::string retrieved_at;
  Transport transport = Transport::Recorded;
  std::string error;  // non-empty marks a failed live query

  bool is_contrastive() const { return scores.has_value(); }
  bool ok() const { return error.empty(); }

  bool operator==(const VlmRecord&) const = default;
};

using RecordKey = std::tuple<std::string, std::string, std::string, std::string>;

inline RecordKey key_of(const VlmRecord& r) {
  return {r.image_id, r.condition, r.prompt_id, r.model_id};
}

/// Canonical single-line JSON for a record; field order is fixed.
inline std::string to_jsonl(const VlmRecord& r) {
  nlohmann::ordered_json j;
  j["image_id"] = r.image_id;
  j["condition"] = r.condition;
  if (!r.is_contrastive()) j["prompt_id"] = r.prompt_id;
  j["model_id"] = r.model_id;
  if (r.is_contrastive()) {
    j["scores"] = *r.scores;
  } else {
    j["raw_text"] = r.raw_text;
  }
  if (r.transport == Transport::Live) j["transport"] = "live";
  if (!r.retrieved_at.empty()) j["retrieved_at"] = r.retrieved_at;
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

/// Parses one JSONL row. `where` prefixes diagnostics (e.g. "file:12").
inline VlmRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw std::runtime_error(where + ": row is not a JSON object");
  auto req_string = [&](const char* field) {
    const auto it = j.find(field);
    if (it == j.end()) throw std::runtime_error(where + ": missing field '" + field + "'");
    if (!it->is_string()) throw std::runtime_error(where + ": field '" + field + "' must be a string");
    return it->get<std::string>();
  };
  VlmRecord r;
  r.image_id = req_string("image_id");
  r.condition = req_string("condition");
  r.model_id = req_string("model_id");
  if (j.contains("scores")) {
    const auto& s = j["scores"];
    if (!s.is_array()) throw std::runtime_error(where + ": 'scores' must be a list");
    if (s.size() != kNumClasses) {
      throw std::runtime_error(where + ": expected " + std::to_string(kNumClasses) +
                               " scores, got " + std::to_string(s.size()));
    }
    std::vector<double> v;
    for (const auto& x : s) {
      if (!x.is_number()) throw std::runtime_error(where + ": non-numeric score");
      v.push_back(x.get<double>());
      if (!std::isfinite(v.back())) throw std::runtime_error(where + ": non-finite score");
    }
    r.scores = std::move(v);
    r.prompt_id = j.contains("prompt_id") ? req_string("prompt_id") : kTopKPromptId;
    if (r.prompt_id != kTopKPromptId) {
      throw std::runtime_error(where + ": contrastive rows must not carry prompt_id '" +
                               r.prompt_id + "'");
    }
  } else {
    r.prompt_id = req_string("prompt_id");
    r.raw_text = req_string("raw_text");
  }
  if (r.image_id.empty() || r.condition.empty() || r.model_id.empty() || r.prompt_id.empty()) {
    throw std::runtime_error(where + ": key fields must be non-empty");
  }
  if (j.contains("transport")) {
    const auto t = req_string("transport");
    if (t == "live") {
      r.transport = Transport::Live;
    } else if (t != "recorded") {
      throw std::runtime_error(where + ": unknown transport '" + t + "'");
    }
  }
  if (j.contains("retrieved_at")) r.retrieved_at = req_string("retrieved_at");
  if (j.contains("error")) r.error = req_string("error");
  return r;
}

/// Records keyed by (image_id, condition, prompt_id, model_id).
class ResponseStore {
 public:
  /// Strict load: a repeated key is an error.
  static ResponseStore load_recorded(const fs::path& path) { return load(path, false); }

  /// Lenient load for append-only stores: a later row replaces an earlier
  /// one with the same key.
  static ResponseStore load_appendable(const fs::path& path) {
    if (!fs::exists(path)) return {};
    return load(path, true);
  }

  bool insert(VlmRecord r) {
    auto k = key_of(r);
    return records_.emplace(std::move(k), std::move(r)).second;
  }
  void upsert(VlmRecord r) {
    auto k = key_of(r);
    records_[std::move(k)] = std::move(r);
  }

  const VlmRecord* find(const RecordKey& k) const {
    const auto it = records_.find(k);
    return it == records_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return records_.size(); }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  void merge(const ResponseStore& other) {
    for (const auto& [k, r] : other.records_) {
      if (!records_.emplace(k, r).second) {
        throw std::runtime_error("duplicate record for (" + r.image_id + ", " + r.condition +
                                 ", " + r.prompt_id + ", " + r.model_id + ")");
      }
    }
  }

  /// Key-sorted canonical JSONL.
  std::string dump() const {
    std::string out;
    for (const auto& [k, r] : records_) {
      out += to_jsonl(r);
      out.push_back('\n');
    }
    return out;
  }

  void save(const fs::path& path) const { detail::write_file(path, dump()); }

 private:
  static ResponseStore load(const fs::path& path, bool later_wins) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open response file '" + path.string() + "'");
    ResponseStore store;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      const auto where = path.string() + ":" + std::to_string(line_no);
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) throw std::runtime_error(where + ": invalid JSON");
      auto rec = record_from_json(j, where);
      if (later_wins) {
        store.upsert(std::move(rec));
      } else if (!store.insert(rec)) {
        throw std::runtime_error(where + ": duplicate key (" + rec.image_id + ", " + rec.condition +
                                 ", " + rec.prompt_id + ", " + rec.model_id + ")");
      }
    }
    return store;
  }

  std::map<RecordKey, VlmRecord> records_;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct BatchPrompt {
  std::string prompt_id;
  std::string text;  // rendered, identical for every condition
};

struct BatchSummary {
  std::size_t total = 0;
  std::size_t skipped = 0;
  std::size_t fetched = 0;
  std::size_t failed = 0;

  bool complete() const { return failed == 0; }
};

/// Queries every (image x condition x prompt) whose record is missing or
/// failed in the store at `store_path`. Images are read from
/// `image_root/<condition>/<image_id>.png` and sent as stored. Rows are
/// appended as they arrive by a single writer, and the file is rewritten in
/// canonical order at the end.
inline BatchSummary run_batch(const EndpointConfig& cfg, const std::vector<std::string>& image_ids,
                              const std::vector<std::string>& conditions,
                              const std::vector<BatchPrompt>& prompts, const fs::path& image_root,
                              const fs::path& store_path,
                              std::function<void(const std::string&)> log = {}) {
  cfg.validate();
  auto store = ResponseStore::load_appendable(store_path);

  struct Job {
    const std::string* image_id;
    const std::string* condition;
    const BatchPrompt* prompt;
  };
  BatchSummary summary;
  std::vector<Job> jobs;
  for (const auto& id : image_ids) {
    for (const auto& cond : conditions) {
      for (const auto& p : prompts) {
        ++summary.total;
        const auto* existing = store.find({id, cond, p.prompt_id, cfg.model_id});
        if (existing && existing->ok()) {
          ++summary.skipped;
          continue;
        }
        jobs.push_back({&id, &cond, &p});
      }
    }
  }

  if (store_path.has_parent_path()) fs::create_directories(store_path.parent_path());
  std::ofstream append(store_path, std::ios::binary | std::ios::app);
  if (!append) throw std::runtime_error("cannot open '" + store_path.string() + "' for append");

  RateLimiter limiter(cfg.rate_limit_rps);
  std::mutex writer;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      VlmRecord rec;
      rec.image_id = *job.image_id;
      rec.condition = *job.condition;
      rec.prompt_id = job.prompt->prompt_id;
      rec.model_id = cfg.model_id;
      rec.transport = Transport::Live;
      const auto image_path = image_root / *job.condition / (*job.image_id + ".png");
      try {
        const auto png = detail::read_bytes(image_path);
        auto res = query_png(cfg, png, job.prompt->text, &limiter);
        rec.raw_text = std::move(res.text);
        if (!res.ok) rec.error = res.error.empty() ? "query failed" : res.error;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      rec.retrieved_at = utc_timestamp();
      std::lock_guard lock(writer);
      append << to_jsonl(rec) << '\n';
      append.flush();
      if (rec.ok()) {
        ++summary.fetched;
      } else {
        ++summary.failed;
        if (log) {
          log("query failed for (" + rec.image_id + ", " + rec.condition + ", " + rec.prompt_id +
              "): " + rec.error);
        }
      }
      store.upsert(std::move(rec));
    }
  };
  const int n_workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  append.close();

  store.save(store_path);
  if (log) {
    log("batch " + cfg.model_id + ": " + std::to_string(summary.fetched) + " fetched, " +
        std::to_string(summary.skipped) + " skipped, " + std::to_string(summary.failed) + " failed");
  }
  return summary;
}

}  // namespace misbench::client
