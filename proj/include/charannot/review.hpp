#pragma once

// Human review of sampled annotations: sampling, the append-only eval store,
// quality statistics with Beta credible intervals, and the local HTTP API.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "charannot/core_model.hpp"
#include "charannot/detail/random.hpp"
#include "charannot/errors.hpp"
#include "charannot/io.hpp"
#include "charannot/special_functions.hpp"

namespace charannot {

// Positions in corpus.flatten() drawn uniformly without replacement. Asking
// for more than the corpus holds returns every position in shuffled order.
inline std::vector<std::size_t> sample_annotations(const AnnotationCorpus& corpus, std::size_t sample_size,
                                                   std::uint64_t seed, Diagnostics* diag = nullptr) {
  const std::size_t total = corpus.total();
  if (total == 0) throw InvalidArgument("cannot sample from an empty annotation corpus");
  if (sample_size == 0) throw InvalidArgument("sample size must be positive");
  if (sample_size > total) {
    warn(diag, "sample size " + std::to_string(sample_size) + " exceeds the " + std::to_string(total) +
                   " available annotations; reviewing all of them");
    sample_size = total;
  }
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < sample_size; ++i) {
    std::size_t j = i + static_cast<std::size_t>(detail::uniform_below(rng, total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(sample_size);
  return idx;
}

struct CredibleInterval {
  double low = 0.0;
  double high = 1.0;
};

// Equal-tailed interval of the Beta(k + 1, n - k + 1) posterior.
inline CredibleInterval beta_credible_interval(std::size_t k, std::size_t n, double mass = 0.95) {
  if (n < 1) throw InvalidArgument("credible interval needs at least one trial");
  if (k > n) throw InvalidArgument("successes exceed trials");
  if (!(mass > 0.0 && mass < 1.0)) throw InvalidArgument("interval mass must lie strictly between 0 and 1");
  const double a = static_cast<double>(k) + 1.0;
  const double b = static_cast<double>(n - k) + 1.0;
  return {special::beta_quantile((1.0 - mass) / 2.0, a, b), special::beta_quantile((1.0 + mass) / 2.0, a, b)};
}

inline const std::vector<std::string>& default_review_labels() {
  static const std::vector<std::string> labels = {"Correct", "Questionable", "Incorrect"};
  return labels;
}

inline void validate_labels(const std::vector<std::string>& labels) {
  if (labels.empty()) throw InvalidArgument("label list must not be empty");
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) throw InvalidArgument("labels must not be empty strings");
    if (!seen.insert(l).second) throw InvalidArgument("duplicate label '" + l + "'");
  }
}

namespace detail {

inline std::optional<int> label_as_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

}  // namespace detail

struct LabelStats {
  std::string label;
  std::size_t count = 0;
  double proportion = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
};

struct QualityReport {
  std::size_t n = 0;
  double mass = 0.95;
  std::vector<LabelStats> labels;
  bool numeric_mode = false;
  std::optional<double> exact_match_rate;         // numeric mode only
  std::optional<double> mean_absolute_deviation;  // numeric mode only
};

// Per-label proportions with marginal Beta intervals (count vs. the rest).
// When every label is an integer, also compares labels with LLM ratings.
inline QualityReport quality_report(const std::vector<EvalRecord>& records, const std::vector<std::string>& labels,
                                    double mass = 0.95) {
  validate_labels(labels);
  if (records.empty()) throw InvalidArgument("no judgments to report on");
  QualityReport report;
  report.n = records.size();
  report.mass = mass;
  for (const auto& l : labels) report.labels.push_back(LabelStats{l});
  for (const auto& r : records) {
    auto it = std::find(labels.begin(), labels.end(), r.label);
    if (it == labels.end()) throw InvalidArgument("judgment label '" + r.label + "' is not among the session labels");
    ++report.labels[static_cast<std::size_t>(it - labels.begin())].count;
  }
  for (auto& s : report.labels) {
    s.proportion = static_cast<double>(s.count) / static_cast<double>(report.n);
    auto ci = beta_credible_interval(s.count, report.n, mass);
    s.ci_low = ci.low;
    s.ci_high = ci.high;
  }
  report.numeric_mode = std::all_of(labels.begin(), labels.end(), [](const auto& l) { return detail::label_as_int(l).has_value(); });
  if (report.numeric_mode) {
    std::size_t exact = 0;
    double abs_sum = 0.0;
    for (const auto& r : records) {
      int human = *detail::label_as_int(r.label);
      exact += human == r.llm_rating ? 1 : 0;
      abs_sum += std::abs(human - r.llm_rating);
    }
    report.exact_match_rate = static_cast<double>(exact) / static_cast<double>(report.n);
    report.mean_absolute_deviation = abs_sum / static_cast<double>(report.n);
  }
  return report;
}

inline ordered_json report_to_json(const QualityReport& report) {
  ordered_json doc;
  doc["n"] = report.n;
  doc["mass"] = report.mass;
  ordered_json rows = ordered_json::array();
  for (const auto& s : report.labels) {
    rows.push_back({{"label", s.label},
                    {"count", s.count},
                    {"proportion", s.proportion},
                    {"ci_low", s.ci_low},
                    {"ci_high", s.ci_high}});
  }
  doc["labels"] = std::move(rows);
  doc["numeric_mode"] = report.numeric_mode;
  if (report.numeric_mode) {
    doc["exact_match_rate"] = *report.exact_match_rate;
    doc["mean_absolute_deviation"] = *report.mean_absolute_deviation;
  }
  return doc;
}

// "95% [89%-98%]"
inline std::string format_percent_row(const LabelStats& s) {
  auto pct = [](double v) { return std::to_string(static_cast<long>(std::lround(v * 100.0))) + "%"; };
  return pct(s.proportion) + " [" + pct(s.ci_low) + "-" + pct(s.ci_high) + "]";
}

struct ReviewItem {
  int sampled_index = 0;  // 1-based
  std::size_t total = 0;
  Annotation annotation;
  std::string chunk_text;  // body of the annotated chunk
  std::string context;     // its overlap prefix
};

// One rater's pass over a seeded sample. Judgments go to an append-only JSONL
// store; reopening the store resumes where it stopped.
class ReviewSession {
 public:
  struct Options {
    std::vector<std::string> labels = default_review_labels();
    std::size_t sample_size = 100;
    std::uint64_t seed = 0;
    std::string rater = "default";
  };

  ReviewSession(AnnotationCorpus corpus, ChunkSet chunks, std::filesystem::path eval_path, Options options,
                Diagnostics* diag = nullptr)
      : corpus_(std::move(corpus)), chunks_(std::move(chunks)), eval_path_(std::move(eval_path)), options_(std::move(options)) {
    validate_labels(options_.labels);
    flat_ = corpus_.flatten();
    sample_ = sample_annotations(corpus_, options_.sample_size, options_.seed, diag);
    if (std::filesystem::exists(eval_path_)) {
      std::string contents = read_file(eval_path_);
      records_ = replay_eval_lines(contents);
      if (records_.size() > sample_.size()) {
        throw SchemaError("eval store '" + eval_path_.string() + "' holds more judgments than the sample");
      }
      for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        const Annotation& a = *flat_[sample_[i]];
        if (r.sampled_index != static_cast<int>(i + 1) || r.character != a.character || r.action != a.action ||
            r.trait != a.trait || r.chunk != a.chunk) {
          throw SchemaError("eval store '" + eval_path_.string() + "' does not match this sample at item " +
                            std::to_string(i + 1) + " (different annotations, sample size or seed?)");
        }
        if (std::find(options_.labels.begin(), options_.labels.end(), r.label) == options_.labels.end()) {
          throw SchemaError("eval store item " + std::to_string(i + 1) + " has label '" + r.label +
                            "', which is not among the session labels");
        }
      }
    }
  }

  const std::vector<std::string>& labels() const { return options_.labels; }
  std::size_t sample_size() const { return sample_.size(); }
  const std::vector<std::size_t>& sample() const { return sample_; }

  std::size_t progress() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  bool finished() const { return progress() == sample_.size(); }

  std::optional<ReviewItem> next() const {
    std::lock_guard lock(mu_);
    if (records_.size() >= sample_.size()) return std::nullopt;
    return item_at(records_.size());
  }

  // Records a judgment for the current item.
  EvalRecord label(const std::string& label) {
    std::lock_guard lock(mu_);
    if (std::find(options_.labels.begin(), options_.labels.end(), label) == options_.labels.end()) {
      throw InvalidArgument("unknown label '" + label + "'");
    }
    if (records_.size() >= sample_.size()) throw InvalidArgument("review is already complete");
    const Annotation& a = *flat_[sample_[records_.size()]];
    EvalRecord r{a.character, a.chunk, a.action, a.trait, a.rating, label, static_cast<int>(records_.size() + 1),
                 iso8601_now(), options_.rater};
    append_line(eval_path_, serialize_eval_line(r));
    records_.push_back(r);
    return r;
  }

  // Retracts the latest judgment with a tombstone line; false if none.
  bool undo() {
    std::lock_guard lock(mu_);
    if (records_.empty()) return false;
    append_line(eval_path_, serialize_eval_line(EvalTombstone{records_.back().sampled_index, iso8601_now()}));
    records_.pop_back();
    return true;
  }

  std::vector<EvalRecord> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  // Requires every sampled item to be judged.
  QualityReport report() const {
    std::lock_guard lock(mu_);
    if (records_.size() < sample_.size()) {
      throw InvalidArgument("review incomplete: " + std::to_string(records_.size()) + " of " +
                            std::to_string(sample_.size()) + " judged");
    }
    return quality_report(records_, options_.labels);
  }

 private:
  ReviewItem item_at(std::size_t pos) const {
    ReviewItem item;
    item.sampled_index = static_cast<int>(pos + 1);
    item.total = sample_.size();
    item.annotation = *flat_[sample_[pos]];
    if (chunks_.has(item.annotation.chunk)) {
      const Chunk& c = chunks_.at(item.annotation.chunk);
      item.chunk_text = std::string(c.body());
      item.context = std::string(c.context());
    }
    return item;
  }

  AnnotationCorpus corpus_;
  ChunkSet chunks_;
  std::filesystem::path eval_path_;
  Options options_;
  std::vector<const Annotation*> flat_;
  std::vector<std::size_t> sample_;
  mutable std::mutex mu_;
  std::vector<EvalRecord> records_;
};

namespace detail {

inline const char* kReviewStubPage =
    "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Annotation review</title></head>\n"
    "<body><p>The review UI assets are not installed. The API is available under /api/ "
    "(session, next, label, undo, report).</p></body></html>\n";

inline void json_reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(dump_json(body, -1), "application/json");
}

inline ordered_json error_body(const std::string& message) { return {{"error", message}}; }

}  // namespace detail

// HTTP front end for a ReviewSession.
//   GET  /api/session  labels, sample size, progress
//   GET  /api/next     current item (410 once everything is judged)
//   POST /api/label    {"label": "..."} (400 for unknown labels)
//   POST /api/undo     retract the latest judgment (409 if none)
//   GET  /api/report   quality report (409 until complete)
class ReviewServer {
 public:
  explicit ReviewServer(ReviewSession& session, std::optional<std::filesystem::path> ui_dir = std::nullopt)
      : session_(session) {
    routes(ui_dir);
  }

  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  ~ReviewServer() { stop(); }

  // Binds; port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw IoError("cannot bind review server to " + host + ":" + std::to_string(port));
    return port_;
  }

  // Serves until stop(); blocks.
  void run() { server_.listen_after_bind(); }

  void start() {
    thread_ = std::thread([this] { run(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  ordered_json progress_json() const {
    return {{"done", session_.progress()}, {"total", session_.sample_size()}};
  }

  void routes(const std::optional<std::filesystem::path>& ui_dir) {
    server_.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
      ordered_json body;
      body["labels"] = session_.labels();
      body["sample_size"] = session_.sample_size();
      body["progress"] = progress_json();
      body["finished"] = session_.finished();
      detail::json_reply(res, 200, body);
    });

    server_.Get("/api/next", [this](const httplib::Request&, httplib::Response& res) {
      auto item = session_.next();
      if (!item) return detail::json_reply(res, 410, detail::error_body("all sampled annotations have been judged"));
      ordered_json body;
      body["sampled_index"] = item->sampled_index;
      body["total"] = item->total;
      body["character"] = item->annotation.character;
      body["action"] = item->annotation.action;
      body["trait"] = item->annotation.trait;
      body["llm_rating"] = item->annotation.rating;
      body["chunk_index"] = item->annotation.chunk;
      body["chunk_text"] = item->chunk_text;
      body["context"] = item->context;
      detail::json_reply(res, 200, body);
    });

    server_.Post("/api/label", [this](const httplib::Request& req, httplib::Response& res) {
      auto doc = ordered_json::parse(req.body, nullptr, false);
      if (doc.is_discarded() || !doc.is_object() || !doc.contains("label") || !doc["label"].is_string()) {
        return detail::json_reply(res, 400, detail::error_body("body must be {\"label\": string}"));
      }
      std::string label = doc["label"].get<std::string>();
      const auto& labels = session_.labels();
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
        return detail::json_reply(res, 400, detail::error_body("unknown label '" + label + "'"));
      }
      if (session_.finished()) return detail::json_reply(res, 410, detail::error_body("review is already complete"));
      try {
        auto r = session_.label(label);
        detail::json_reply(res, 200, {{"recorded", r.sampled_index}, {"progress", progress_json()}});
      } catch (const InvalidArgument& e) {
        detail::json_reply(res, 410, detail::error_body(e.what()));
      } catch (const IoError& e) {
        detail::json_reply(res, 500, detail::error_body(e.what()));
      }
    });

    server_.Post("/api/undo", [this](const httplib::Request&, httplib::Response& res) {
      try {
        if (!session_.undo()) return detail::json_reply(res, 409, detail::error_body("nothing to undo"));
      } catch (const IoError& e) {
        return detail::json_reply(res, 500, detail::error_body(e.what()));
      }
      detail::json_reply(res, 200, {{"progress", progress_json()}});
    });

    server_.Get("/api/report", [this](const httplib::Request&, httplib::Response& res) {
      if (!session_.finished()) {
        return detail::json_reply(res, 409, {{"error", "review incomplete"}, {"progress", progress_json()}});
      }
      detail::json_reply(res, 200, report_to_json(session_.report()));
    });

    bool mounted = ui_dir && std::filesystem::is_directory(*ui_dir) && server_.set_mount_point("/", ui_dir->string());
    if (!mounted) {
      server_.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(detail::kReviewStubPage, "text/html; charset=utf-8");
      });
    }
  }

  ReviewSession& session_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace charannot
