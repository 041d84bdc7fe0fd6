#pragma once

// The charannot command line: one subcommand per pipeline stage, JSON or TOML
// config files, and a .manifest next to every output file.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>

#include <openssl/evp.h>

#include <CLI11.hpp>

#include "charannot/annotator.hpp"
#include "charannot/chunker.hpp"
#include "charannot/core_model.hpp"
#include "charannot/disambiguator.hpp"
#include "charannot/embeddings.hpp"
#include "charannot/errors.hpp"
#include "charannot/io.hpp"
#include "charannot/llm_backend.hpp"
#include "charannot/review.hpp"
#include "charannot/stats.hpp"
#include "charannot/tokenizer.hpp"

namespace charannot::cli {

inline constexpr std::string_view kVersion = "0.1.0";

inline std::string version_string() {
  return "charannot " + std::string(kVersion) + " (tokenizer " + std::string(kBpeTokenizerId) + ")";
}

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

inline std::filesystem::path chunk_meta_path(const std::filesystem::path& chunks) {
  return chunks.string() + ".meta.json";
}

inline std::filesystem::path proposal_path(const std::filesystem::path& out) { return out.string() + ".proposal.json"; }

inline std::filesystem::path manifest_path(const std::filesystem::path& file) { return file.string() + ".manifest"; }

// Reads configs whose first non-blank character is '{' as JSON, anything else
// as TOML. JSON objects nest like TOML tables: {"annotate": {"parallel": 2}}.
// Keys may use '_' for '-' (target_tokens or target-tokens).
class JsonOrTomlConfig : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
    auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') {
      std::istringstream again(text);
      auto items = CLI::ConfigTOML::from_config(again);
      for (auto& item : items) dashed(item.name);
      return items;
    }
    ordered_json doc;
    try {
      doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    collect(doc, {}, items);
    return items;
  }

 private:
  static void dashed(std::string& name) { std::replace(name.begin(), name.end(), '_', '-'); }

  static std::string scalar(const ordered_json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const ordered_json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      dashed(item.name);
      if (value.is_array()) {
        for (const auto& x : value) item.inputs.push_back(scalar(x));
      } else if (!value.is_null()) {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

// Bookkeeping for one subcommand run: what was read, and the manifest written
// beside each output.
class Run {
 public:
  Run(const CLI::App& sub, std::ostream& err) : subcommand_(sub.get_name()), err_(err) {
    config_ = ordered_json::object();
    for (const CLI::Option* opt : sub.get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string key = opt->get_lnames().front();
      if (key == "help") continue;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        if (res.size() == 1 && opt->get_items_expected_max() <= 1) {
          config_[key] = res.front();
        } else {
          config_[key] = res;
        }
      } else if (!opt->get_default_str().empty()) {
        config_[key] = opt->get_default_str();
      } else {
        config_[key] = nullptr;
      }
    }
  }

  std::string read_input(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    inputs_.push_back({{"path", path.string()}, {"sha256", sha256_hex(bytes)}});
    return bytes;
  }

  ChunkSet read_chunks(const std::filesystem::path& path) {
    std::string bytes = read_input(path);
    auto meta = chunk_meta_path(path);
    if (std::filesystem::exists(meta)) {
      std::string meta_bytes = read_input(meta);
      return parse_chunk_file(bytes, meta_bytes);
    }
    return parse_chunk_file(bytes);
  }

  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void tokenizer(std::string id) { tokenizer_ = std::move(id); }
  void backend(std::string id) { backend_ = std::move(id); }
  void note(const std::string& key, ordered_json value) { extra_[key] = std::move(value); }

  void output(const std::filesystem::path& path, std::string bytes) { outputs_.emplace_back(path, std::move(bytes)); }

  // Writes every output, then a manifest beside each.
  void commit() {
    ordered_json outs = ordered_json::array();
    for (const auto& [path, bytes] : outputs_) {
      write_file_atomic(path, bytes);
      outs.push_back({{"path", path.string()}, {"sha256", sha256_hex(bytes)}});
    }
    ordered_json m;
    m["subcommand"] = subcommand_;
    m["version"] = std::string(kVersion);
    m["config"] = config_;
    m["inputs"] = inputs_;
    m["outputs"] = outs;
    m["seeds"] = seeds_;
    m["tokenizer_id"] = tokenizer_ ? ordered_json(*tokenizer_) : ordered_json(nullptr);
    m["backend"] = backend_ ? ordered_json(*backend_) : ordered_json(nullptr);
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    m["timestamp"] = iso8601_now();
    const std::string text = detail::dump_json(m) + "\n";
    for (const auto& [path, bytes] : outputs_) write_file_atomic(manifest_path(path), text);
  }

  void report(const Diagnostics& diag) const {
    for (const auto& w : diag.warnings) err_ << "warning: " << w << "\n";
  }

 private:
  std::string subcommand_;
  std::ostream& err_;
  ordered_json config_;
  ordered_json inputs_ = ordered_json::array();
  ordered_json seeds_ = ordered_json::object();
  ordered_json extra_ = ordered_json::object();
  std::optional<std::string> tokenizer_;
  std::optional<std::string> backend_;
  std::vector<std::pair<std::filesystem::path, std::string>> outputs_;
};

struct BackendArgs {
  std::string kind = "http";
  std::optional<std::string> mock_script;
};

inline void add_backend_options(CLI::App* sub, BackendArgs& a) {
  sub->add_option("--backend", a.kind, "Completion backend")->check(CLI::IsMember({"mock", "http"}));
  sub->add_option("--mock-script", a.mock_script, "JSON script for the mock backend");
}

inline std::unique_ptr<CompletionBackend> make_backend(const BackendArgs& a, Run& run) {
  if (a.kind == "mock") {
    if (!a.mock_script) throw InvalidArgument("--backend mock needs --mock-script");
    auto mock = std::make_unique<ScriptedMock>(ScriptedMock::parse_script(run.read_input(*a.mock_script)));
    run.backend(mock->id());
    return mock;
  }
  if (a.mock_script) throw InvalidArgument("--mock-script only applies to --backend mock");
  auto http = std::make_unique<HttpChatBackend>(HttpChatBackend::options_from_env());
  run.backend(http->id());
  return http;
}

// ---------------------------------------------------------------------------
// Subcommands

struct ChunkArgs {
  std::string in;
  std::string out;
  int target_tokens = 500;
  std::optional<std::string> splitter;
  int context_sentences = 3;
  std::string tokenizer = std::string(kBpeTokenizerId);
};

inline void run_chunk(const ChunkArgs& a, Run& run, std::ostream& err) {
  ChunkerConfig cfg;
  cfg.target_tokens = a.target_tokens;
  cfg.context_sentences = a.context_sentences;
  cfg.custom_splitter = a.splitter;
  cfg.tokenizer_id = a.tokenizer;
  run.tokenizer(make_tokenizer(a.tokenizer)->id());
  std::string text = run.read_input(a.in);
  Diagnostics diag;
  ChunkSet set = chunk_text(text, cfg, &diag);
  run.report(diag);
  run.output(a.out, serialize_chunk_file(set));
  run.output(chunk_meta_path(a.out), serialize_chunk_meta(set));
  run.note("chunks", set.size());
  run.commit();
  err << "wrote " << set.size() << " chunks to " << a.out << "\n";
}

struct AnnotateArgs {
  std::string chunks;
  std::string out;
  std::optional<std::string> traits;
  std::optional<std::string> scale;
  std::optional<std::string> book_title;
  std::vector<std::string> targets;
  int parallel = 1;
  std::optional<std::string> checkpoint;
  BackendArgs backend;
};

inline void run_annotate(const AnnotateArgs& a, Run& run, std::ostream& err) {
  ChunkSet chunks = run.read_chunks(a.chunks);
  AnnotateOptions opts;
  if (a.traits) opts.traits = parse_traits(run.read_input(*a.traits));
  if (a.scale) opts.rating_scale = RatingScale::parse(*a.scale);
  opts.book_title = a.book_title;
  if (!a.targets.empty()) opts.target_characters = a.targets;
  opts.parallelism = a.parallel;
  opts.checkpoint_path = a.checkpoint ? std::filesystem::path(*a.checkpoint)
                                      : std::filesystem::path(a.out + ".checkpoint.json");
  if (!chunks.meta().tokenizer_id.empty()) run.tokenizer(chunks.meta().tokenizer_id);
  auto backend = make_backend(a.backend, run);
  Diagnostics diag;
  AnnotateReport rep = annotate(chunks, *backend, opts, &diag);
  run.report(diag);
  if (!rep.failed_chunks.empty()) {
    std::string list;
    for (int c : rep.failed_chunks) list += (list.empty() ? "" : ", ") + std::to_string(c);
    err << "warning: no usable output for chunk(s) " << list << "\n";
  }
  run.note("backend_calls", backend->call_count());
  run.note("failed_chunks", rep.failed_chunks);
  run.note("clamped_ratings", rep.clamped);
  run.output(a.out, serialize_corpus(rep.corpus));
  run.commit();
  err << "annotated " << chunks.size() << " chunks: " << rep.corpus.total() << " annotations for "
      << rep.corpus.character_count() << " characters\n";
}

struct DisambiguateArgs {
  std::string annotations;
  std::string out;
  std::string chunks;
  std::optional<std::string> merge_lists;
  int window = 3;
  bool all_pairs = false;
  std::size_t token_cap = 12000;
  BackendArgs backend;
  bool backend_given = false;
};

inline void run_disambiguate(const DisambiguateArgs& a, Run& run, std::ostream& err) {
  AnnotationCorpus corpus = parse_corpus(run.read_input(a.annotations));
  ChunkSet chunks = run.read_chunks(a.chunks);
  std::optional<std::vector<std::vector<std::string>>> user;
  if (a.merge_lists) user = parse_merge_lists(run.read_input(*a.merge_lists));
  DisambiguateOptions opts;
  opts.candidates.all_pairs = a.all_pairs;
  opts.evidence.window = a.window;
  opts.evidence.token_cap = a.token_cap;
  if (!chunks.meta().tokenizer_id.empty()) opts.evidence.tokenizer_id = chunks.meta().tokenizer_id;
  run.tokenizer(make_tokenizer(opts.evidence.tokenizer_id)->id());
  // With merge lists the model is never consulted, so only build a backend
  // when one was asked for explicitly.
  std::unique_ptr<CompletionBackend> backend;
  if (!user || a.backend_given) backend = make_backend(a.backend, run);
  Diagnostics diag;
  auto result = disambiguate(corpus, chunks, backend.get(), user, opts, &diag);
  run.report(diag);
  const std::size_t calls = backend ? backend->call_count() : 0;
  run.note("backend_calls", calls);
  run.output(a.out, serialize_corpus(result.corpus));
  run.output(proposal_path(a.out), serialize_proposal(result.proposal));
  run.commit();
  if (!user) err << format_proposal(result.proposal.merge_sets);
  err << "merged " << corpus.character_count() << " names into " << result.corpus.character_count()
      << " characters (backend calls: " << calls << ")\n";
}

struct ReviewArgs {
  std::string annotations;
  std::string chunks;
  std::string eval;
  std::vector<std::string> labels = default_review_labels();
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::string host = "127.0.0.1";
  int port = 8000;
  std::optional<std::string> ui_dir;
  std::string rater = "default";
};

inline void run_review(const ReviewArgs& a, Run& run, std::ostream& err) {
  AnnotationCorpus corpus = parse_corpus(run.read_input(a.annotations));
  ChunkSet chunks = run.read_chunks(a.chunks);
  ReviewSession::Options opts;
  opts.labels = a.labels;
  opts.sample_size = a.n;
  opts.seed = a.seed;
  opts.rater = a.rater;
  Diagnostics diag;
  ReviewSession session(std::move(corpus), std::move(chunks), a.eval, opts, &diag);
  run.report(diag);
  std::optional<std::filesystem::path> ui;
  if (a.ui_dir) ui = *a.ui_dir;

  // Block the shutdown signals in every thread, serve on a worker, and wait
  // for a signal here.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  ReviewServer server(session, ui);
  int port = server.bind(a.host, a.port);
  server.start();
  err << "review: http://" << a.host << ":" << port << "/ (" << session.progress() << "/" << session.sample().size()
      << " judged; Ctrl-C to stop)\n";
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  err << "review stopped at " << session.progress() << "/" << session.sample().size() << "\n";
}

struct StatsArgs {
  std::string annotations;
  std::string out;
  std::optional<std::string> plot;
  std::size_t top = 10;
  std::vector<std::string> traits;
  std::size_t reps = 10000;
  std::uint64_t seed = 0;
};

inline void run_stats(const StatsArgs& a, Run& run, std::ostream& err) {
  AnnotationCorpus corpus = parse_corpus(run.read_input(a.annotations));
  auto stats = character_counts(corpus);
  Diagnostics diag;
  if (!a.traits.empty()) {
    add_trait_scores(stats, corpus, a.traits, {a.reps, a.seed, 0.95}, &diag);
    run.seed("bootstrap", a.seed);
  }
  run.report(diag);
  run.output(a.out, serialize_stats(stats));
  if (a.plot) {
    if (a.traits.size() == 2) {
      run.output(*a.plot, scatter_svg(stats, a.traits[0], a.traits[1]));
    } else {
      run.output(*a.plot, bar_chart_svg(stats, a.top));
    }
  }
  run.commit();
  err << "wrote statistics for " << stats.size() << " characters to " << a.out << "\n";
}

// APA-style number: "-.742" for |x| < 1.
inline std::string apa(double x, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  std::string t = s.str();
  if (t.rfind("0.", 0) == 0) t.erase(0, 1);
  if (t.rfind("-0.", 0) == 0) t.erase(1, 1);
  return t;
}

struct CorrArgs {
  std::string stats;
  std::vector<std::string> traits;
  std::optional<std::string> out;
};

inline void run_corr(const CorrArgs& a, Run& run, std::ostream& out) {
  if (a.traits.size() != 2) throw InvalidArgument("--traits needs exactly two trait names");
  auto stats = parse_stats(run.read_input(a.stats));
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& s : stats) {
    auto x = s.scores.find(a.traits[0]);
    auto y = s.scores.find(a.traits[1]);
    if (x == s.scores.end() || y == s.scores.end()) continue;
    xs.push_back(x->second.mean);
    ys.push_back(y->second.mean);
  }
  auto res = pearson(xs, ys);
  out << "r(" << res.df << ") = " << apa(res.r, 3) << ", p = " << apa(res.p, 3) << "\n";
  if (a.out) {
    ordered_json j = {{"traits", a.traits}, {"n", xs.size()}, {"r", res.r}, {"df", res.df}, {"p", res.p}};
    run.output(*a.out, detail::dump_json(j) + "\n");
    run.commit();
  }
}

struct ChisqArgs {
  std::vector<std::string> evals;
  std::vector<std::string> labels = default_review_labels();
  std::optional<std::string> out;
};

inline void run_chisq(const ChisqArgs& a, Run& run, std::ostream& out, std::ostream& err) {
  if (a.evals.size() < 2) throw InvalidArgument("--evals needs at least two eval files");
  validate_labels(a.labels);
  std::vector<std::vector<double>> table;
  for (const auto& path : a.evals) {
    auto records = replay_eval_lines(run.read_input(path));
    std::vector<double> row(a.labels.size(), 0.0);
    for (const auto& r : records) {
      auto it = std::find(a.labels.begin(), a.labels.end(), r.label);
      if (it == a.labels.end()) throw SchemaError("'" + path + "' has label '" + r.label + "' outside --labels");
      row[static_cast<std::size_t>(it - a.labels.begin())] += 1.0;
    }
    table.push_back(std::move(row));
  }
  std::vector<std::string> used;
  std::vector<std::vector<double>> kept(table.size());
  for (std::size_t j = 0; j < a.labels.size(); ++j) {
    double col = 0.0;
    for (const auto& row : table) col += row[j];
    if (col == 0.0) {
      err << "warning: label '" << a.labels[j] << "' never used; column dropped\n";
      continue;
    }
    used.push_back(a.labels[j]);
    for (std::size_t i = 0; i < table.size(); ++i) kept[i].push_back(table[i][j]);
  }
  auto res = chi_square_independence(kept);
  double n = 0.0;
  for (const auto& row : kept) {
    for (double v : row) n += v;
  }
  std::ostringstream chi;
  chi << std::fixed << std::setprecision(2) << res.chi2;
  std::ostringstream p;
  p << std::fixed << std::setprecision(3) << res.p;
  out << "chi2(" << res.df << ", N = " << static_cast<long long>(n) << ") = " << chi.str() << ", p = " << p.str() << "\n";
  if (a.out) {
    ordered_json j = {{"labels", used}, {"table", kept}, {"chi2", res.chi2}, {"df", res.df}, {"p", res.p}};
    run.output(*a.out, detail::dump_json(j) + "\n");
    run.commit();
  }
}

struct EmbedArgs {
  std::string annotations;
  std::string out;
  std::string backend = "test";
  std::size_t dim = 64;
};

inline void run_embed(const EmbedArgs& a, Run& run, std::ostream& err) {
  AnnotationCorpus corpus = parse_corpus(run.read_input(a.annotations));
  std::unique_ptr<EmbeddingBackend> backend;
  if (a.backend == "test") {
    backend = std::make_unique<HashingEmbedding>(a.dim);
  } else {
    backend = std::make_unique<HttpEmbeddingBackend>(HttpEmbeddingBackend::from_env());
  }
  run.backend(backend->id());
  auto emb = embed_characters(corpus, *backend);
  run.output(a.out, serialize_embeddings(emb));
  run.commit();
  err << "embedded " << emb.size() << " characters\n";
}

// ---------------------------------------------------------------------------

// Exit codes: 0 success, 1 usage error, 2 runtime error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Character annotation pipeline for narrative text", "charannot"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", version_string());
  app.set_config("--config", "", "JSON or TOML file with option values; command-line flags take precedence");
  app.config_formatter(std::make_shared<JsonOrTomlConfig>());
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  ChunkArgs chunk;
  auto* c = app.add_subcommand("chunk", "Split a plain-text book into token-budgeted chunks");
  c->add_option("--in", chunk.in, "Input text file")->required();
  c->add_option("--out", chunk.out, "Output chunk file (JSON)")->required();
  c->add_option("--target-tokens", chunk.target_tokens, "Token budget per chunk")->check(CLI::PositiveNumber);
  c->add_option("--splitter", chunk.splitter, "Split on this marker instead of by tokens");
  c->add_option("--context-sentences", chunk.context_sentences, "Sentences of overlap from the previous chunk")
      ->check(CLI::NonNegativeNumber);
  c->add_option("--tokenizer", chunk.tokenizer, "Tokenizer id");

  AnnotateArgs ann;
  auto* an = app.add_subcommand("annotate", "Extract character behaviours and traits chunk by chunk");
  an->add_option("--chunks", ann.chunks, "Chunk file")->required();
  an->add_option("--out", ann.out, "Output annotation file")->required();
  an->add_option("--traits", ann.traits, "Trait specification file (JSON)");
  an->add_option("--scale", ann.scale, "Rating scale, e.g. --scale=-3,-2,-1,0,1,2,3");
  an->add_option("--book-title", ann.book_title, "Title mentioned in the prompt");
  an->add_option("--targets", ann.targets, "Only keep these characters")->delimiter(',');
  an->add_option("--parallel", ann.parallel, "Chunks per dispatch wave")->check(CLI::PositiveNumber);
  an->add_option("--checkpoint", ann.checkpoint, "Checkpoint file (default: <out>.checkpoint.json)");
  add_backend_options(an, ann.backend);

  DisambiguateArgs dis;
  auto* d = app.add_subcommand("disambiguate", "Find and merge names that denote the same character");
  d->add_option("--annotations", dis.annotations, "Annotation file")->required();
  d->add_option("--out", dis.out, "Output annotation file")->required();
  d->add_option("--chunks", dis.chunks, "Chunk file")->required();
  d->add_option("--merge-lists", dis.merge_lists, "JSON list of name lists to merge; skips the model");
  d->add_option("--window", dis.window, "Chunks per evidence section")->check(CLI::PositiveNumber);
  d->add_flag("--all-pairs", dis.all_pairs, "Ask about every pair of names");
  d->add_option("--token-cap", dis.token_cap, "Token budget for evidence text")->check(CLI::PositiveNumber);
  add_backend_options(d, dis.backend);

  ReviewArgs rev;
  auto* r = app.add_subcommand("review", "Serve the human review session");
  r->add_option("--annotations", rev.annotations, "Annotation file")->required();
  r->add_option("--chunks", rev.chunks, "Chunk file")->required();
  r->add_option("--eval", rev.eval, "Eval store (JSON lines), created or resumed")->required();
  r->add_option("--labels", rev.labels, "Label set, e.g. --labels=Correct,Questionable,Incorrect")->delimiter(',');
  r->add_option("--n", rev.n, "Sample size")->check(CLI::PositiveNumber);
  r->add_option("--seed", rev.seed, "Sampling seed");
  r->add_option("--host", rev.host, "Bind address");
  r->add_option("--port", rev.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  r->add_option("--ui-dir", rev.ui_dir, "Directory of built UI assets");
  r->add_option("--rater", rev.rater, "Rater id stored with each judgment");

  StatsArgs st;
  auto* s = app.add_subcommand("stats", "Per-character counts, trait scores and plots");
  s->add_option("--annotations", st.annotations, "Annotation file")->required();
  s->add_option("--out", st.out, "Output statistics file")->required();
  s->add_option("--plot", st.plot, "SVG plot: bar chart, or a scatter when --traits names two traits");
  s->add_option("--top", st.top, "Characters in the bar chart")->check(CLI::PositiveNumber);
  s->add_option("--traits", st.traits, "Traits to score with bootstrap intervals")->delimiter(',');
  s->add_option("--reps", st.reps, "Bootstrap replicates")->check(CLI::PositiveNumber);
  s->add_option("--seed", st.seed, "Bootstrap seed");

  auto* az = app.add_subcommand("analyze", "Inferential tests");
  az->require_subcommand(1);
  CorrArgs corr;
  auto* co = az->add_subcommand("corr", "Pearson correlation of two trait means across characters");
  co->add_option("--stats", corr.stats, "Statistics file from `stats --traits`")->required();
  co->add_option("--traits", corr.traits, "Two traits, t1,t2")->delimiter(',')->required();
  co->add_option("--out", corr.out, "Also write the result as JSON");
  ChisqArgs chi;
  auto* cs = az->add_subcommand("chisq", "Chi-square test of label counts across eval files");
  cs->add_option("--evals", chi.evals, "Two or more eval stores")->required()->expected(2, 1 << 20);
  cs->add_option("--labels", chi.labels, "Label columns")->delimiter(',');
  cs->add_option("--out", chi.out, "Also write the result as JSON");

  EmbedArgs emb;
  auto* e = app.add_subcommand("embed", "Embed a profile of every character");
  e->add_option("--annotations", emb.annotations, "Annotation file")->required();
  e->add_option("--out", emb.out, "Output embeddings file")->required();
  e->add_option("--backend", emb.backend, "Embedding backend")->check(CLI::IsMember({"test", "http"}));
  e->add_option("--dim", emb.dim, "Dimension of the test backend")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    int code = app.exit(ex, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c->parsed()) {
      Run run(*c, err);
      run_chunk(chunk, run, err);
    } else if (an->parsed()) {
      Run run(*an, err);
      run_annotate(ann, run, err);
    } else if (d->parsed()) {
      dis.backend_given = d->get_option("--backend")->count() > 0 || d->get_option("--mock-script")->count() > 0;
      Run run(*d, err);
      run_disambiguate(dis, run, err);
    } else if (r->parsed()) {
      Run run(*r, err);
      run_review(rev, run, err);
    } else if (s->parsed()) {
      Run run(*s, err);
      run_stats(st, run, err);
    } else if (co->parsed()) {
      Run run(*co, err);
      run_corr(corr, run, out);
    } else if (cs->parsed()) {
      Run run(*cs, err);
      run_chisq(chi, run, out, err);
    } else if (e->parsed()) {
      Run run(*e, err);
      run_embed(emb, run, err);
    }
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace charannot::cli
