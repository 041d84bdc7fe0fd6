#pragma once

// Per-chunk annotation loop: prompt construction, response extraction and
// aggregation into an AnnotationCorpus with a cross-chunk character roster.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <future>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "charannot/core_model.hpp"
#include "charannot/detail/fnv.hpp"
#include "charannot/errors.hpp"
#include "charannot/io.hpp"
#include "charannot/llm_backend.hpp"

namespace charannot {

// The completion held no usable JSON array.
class ParseFailure : public Error {
 public:
  using Error::Error;
};

// A backend error stopped the run. Completed chunks are in the checkpoint.
class AnnotationAborted : public BackendError {
 public:
  AnnotationAborted(const std::string& what, int last_completed_chunk)
      : BackendError(what), last_completed_chunk_(last_completed_chunk) {}

  int last_completed_chunk() const { return last_completed_chunk_; }

 private:
  int last_completed_chunk_;
};

struct AnnotateOptions {
  std::optional<std::vector<TraitSpec>> traits;  // unset: exploratory mode
  std::optional<RatingScale> rating_scale;       // required with traits
  std::optional<std::string> book_title;
  std::optional<std::vector<std::string>> target_characters;
  int parallelism = 1;
  std::optional<std::filesystem::path> checkpoint_path;

  RatingScale scale() const { return rating_scale.value_or(RatingScale{}); }
  bool exploratory() const { return !traits.has_value(); }
};

inline void validate_options(const AnnotateOptions& options) {
  if (options.parallelism < 1) throw InvalidArgument("parallelism must be at least 1");
  if (options.traits) {
    if (!options.rating_scale) throw InvalidArgument("a rating scale must be given when traits are specified");
    if (options.traits->empty()) throw InvalidArgument("trait list must not be empty");
    for (const auto& t : *options.traits) validate_trait(t, *options.rating_scale);
  }
  if (options.target_characters && options.target_characters->empty()) {
    throw InvalidArgument("target character list must not be empty");
  }
}

// Names in order of first appearance, with the chunk that introduced them.
class CharacterRoster {
 public:
  struct Member {
    std::string name;
    int first_chunk = 0;

    bool operator==(const Member&) const = default;
  };

  bool add(const std::string& name, int chunk) {
    if (!seen_.insert(name).second) return false;
    members_.push_back({name, chunk});
    return true;
  }

  bool contains(const std::string& name) const { return seen_.count(name) != 0; }
  const std::vector<Member>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }

 private:
  std::vector<Member> members_;
  std::unordered_set<std::string> seen_;
};

namespace detail {

inline std::string output_contract(const AnnotateOptions& options) {
  std::string s =
      "Output format: respond with a single JSON array and nothing else. Each element describes one behavior:\n"
      "{\"character\": \"<full name>\", \"action\": \"<what the character does, says, thinks or prominently omits>\", "
      "\"traits\": [{\"name\": \"<trait>\", \"rating\": <integer>}]}\n";
  if (options.exploratory()) {
    s += "The rating may be omitted; it defaults to 1 (trait present).\n";
  } else {
    s += "Use only the trait names defined above. Every rating must be one of: " + options.scale().to_string() + ".\n";
  }
  s += "If no character behavior appears in the text, respond with [].";
  return s;
}

}  // namespace detail

// Prompt sections, in order: instructions, book title, traits (or the
// exploratory labelling rule), target restriction, known characters, text,
// output contract. Overlap context before `prefix_bytes` is shown separately
// and marked as not to be annotated.
inline std::string build_prompt(std::string_view chunk_text, int chunk_index, const AnnotateOptions& options,
                                const CharacterRoster& roster, std::size_t prefix_bytes = 0) {
  std::string p;
  p += "You are annotating chunk " + std::to_string(chunk_index) +
       " of a narrative text. List the actions, statements, thoughts, and prominent omissions of the characters "
       "in the text below. Always refer to characters by their full names.\n\n";

  if (options.book_title) p += "Book title: " + *options.book_title + "\n\n";

  if (options.traits) {
    p += "Rate every behavior on each of the following traits. Rating scale: " + options.scale().to_string() + ".\n";
    for (const auto& t : *options.traits) {
      p += "\nTrait: " + t.name + "\n";
      p += "Explanation: " + t.trait_explanation + "\n";
      p += "Examples:\n";
      for (const auto& ex : t.examples) {
        p += "- Character: " + ex.name + "\n  Action: " + ex.action + "\n  Assessment: " + ex.assessment +
             "\n  Rating: " + std::to_string(ex.rating) + "\n";
      }
    }
    p += "\n";
  } else {
    p += "For each behavior, infer the personality traits it reveals. Invent concise trait labels of one or two "
         "lowercase words (for example \"impulsive\").\n\n";
  }

  if (options.target_characters) {
    p += "Only annotate these characters: ";
    for (std::size_t i = 0; i < options.target_characters->size(); ++i) {
      if (i) p += ", ";
      p += (*options.target_characters)[i];
    }
    p += ".\n\n";
  }

  p += "Known characters from earlier chunks (reuse these exact names when they appear):";
  if (roster.empty()) {
    p += " none yet.\n\n";
  } else {
    p += "\n";
    for (const auto& m : roster.members()) p += "- " + m.name + "\n";
    p += "\n";
  }

  prefix_bytes = std::min(prefix_bytes, chunk_text.size());
  if (prefix_bytes > 0) {
    p += "Context from the previous chunk (already annotated, do not annotate again):\n<<<\n";
    p.append(chunk_text.substr(0, prefix_bytes));
    p += "\n>>>\n\n";
  }
  p += "Text:\n<<<\n";
  p.append(chunk_text.substr(prefix_bytes));
  p += "\n>>>\n\n";

  p += detail::output_contract(options);
  return p;
}

inline std::string build_repair_prompt(const std::string& original_prompt, std::string_view bad_output,
                                       const AnnotateOptions& options) {
  std::string p = original_prompt;
  p += "\n\nYour previous answer could not be read as a JSON array:\n<<<\n";
  p.append(bad_output);
  p += "\n>>>\nAnswer again. ";
  p += detail::output_contract(options);
  return p;
}

namespace detail {

// End of the balanced bracket group opening at `open`, honouring JSON strings.
inline std::optional<std::size_t> matching_bracket(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[' || c == '{') {
      ++depth;
    } else if (c == ']' || c == '}') {
      if (--depth == 0) return i;
      if (depth < 0) return std::nullopt;
    }
  }
  return std::nullopt;
}

// First JSON array in `text` that is empty or holds only objects.
inline std::optional<ordered_json> first_record_array(std::string_view text) {
  for (std::size_t pos = text.find('['); pos != std::string_view::npos; pos = text.find('[', pos + 1)) {
    auto end = matching_bracket(text, pos);
    if (!end) continue;
    auto candidate = ordered_json::parse(text.substr(pos, *end - pos + 1), nullptr, false);
    if (candidate.is_discarded() || !candidate.is_array()) continue;
    bool all_objects = std::all_of(candidate.begin(), candidate.end(), [](const auto& e) { return e.is_object(); });
    if (all_objects) return candidate;
  }
  return std::nullopt;
}

inline std::string trim(std::string_view s) {
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_ws(s[b])) ++b;
  while (e > b && is_ws(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Collapses internal whitespace runs to one space.
inline std::string normalize_label(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : trim(s)) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += c;
  }
  return ascii_lower(out);
}

// Integer-valued ratings may arrive as numbers or numeric strings.
inline std::optional<double> rating_value(const ordered_json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    std::string s = trim(v.get<std::string>());
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    double d = std::strtod(s.c_str(), &end);
    if (end == s.c_str() + s.size() && std::isfinite(d)) return d;
  }
  return std::nullopt;
}

}  // namespace detail

struct ParsedResponse {
  std::vector<Annotation> annotations;
  std::size_t clamped = 0;  // raw ratings that were off the scale
};

// Extracts the first JSON array of records and expands each record into one
// Annotation per trait. With `traits`, trait names are matched
// case-insensitively to the specification and unknown ones are dropped;
// without, labels are lowercased and ratings default to 1.
inline ParsedResponse parse_annotation_response(std::string_view completion, int chunk_index, const RatingScale& scale,
                                                Diagnostics* diag = nullptr,
                                                const std::vector<TraitSpec>* traits = nullptr) {
  auto array = detail::first_record_array(completion);
  if (!array) throw ParseFailure("no JSON array of records found in the model output for chunk " + std::to_string(chunk_index));

  std::unordered_map<std::string, std::string> trait_names;
  if (traits) {
    for (const auto& t : *traits) trait_names.emplace(detail::normalize_label(t.name), t.name);
  }
  auto where = [&](std::size_t i) { return "chunk " + std::to_string(chunk_index) + ", element " + std::to_string(i); };

  ParsedResponse out;
  for (std::size_t i = 0; i < array->size(); ++i) {
    const auto& el = (*array)[i];
    auto character = el.find("character");
    auto action = el.find("action");
    if (character == el.end() || !character->is_string() || detail::trim(character->get<std::string>()).empty()) {
      warn(diag, where(i) + ": missing character; skipped");
      continue;
    }
    if (action == el.end() || !action->is_string() || detail::trim(action->get<std::string>()).empty()) {
      warn(diag, where(i) + ": missing action; skipped");
      continue;
    }
    std::string name = detail::trim(character->get<std::string>());
    std::string act = detail::trim(action->get<std::string>());
    auto list = el.find("traits");
    if (list == el.end() || !list->is_array() || list->empty()) {
      warn(diag, where(i) + ": no traits for '" + name + "'; skipped");
      continue;
    }
    for (const auto& t : *list) {
      std::optional<std::string> label;
      const ordered_json* rating = nullptr;
      if (t.is_string()) {
        label = t.get<std::string>();
      } else if (t.is_object() && t.contains("name") && t["name"].is_string()) {
        label = t["name"].get<std::string>();
        if (t.contains("rating") && !t["rating"].is_null()) rating = &t["rating"];
      }
      if (!label || detail::trim(*label).empty()) {
        warn(diag, where(i) + ": trait without a name; skipped");
        continue;
      }
      std::string trait = detail::normalize_label(*label);
      if (traits) {
        auto it = trait_names.find(trait);
        if (it == trait_names.end()) {
          warn(diag, where(i) + ": unknown trait '" + *label + "'; skipped");
          continue;
        }
        trait = it->second;
      }
      int value = 1;
      if (rating == nullptr) {
        if (traits) {
          warn(diag, where(i) + ": trait '" + trait + "' has no rating; skipped");
          continue;
        }
      } else {
        auto v = detail::rating_value(*rating);
        if (!v) {
          warn(diag, where(i) + ": non-numeric rating for '" + trait + "'; skipped");
          continue;
        }
        value = scale.clamp(*v);
        if (*v != static_cast<double>(value)) {
          ++out.clamped;
          warn(diag, where(i) + ": rating " + rating->dump() + " for '" + trait + "' clamped to " + std::to_string(value));
        }
      }
      out.annotations.push_back(Annotation{name, act, trait, value, chunk_index});
    }
  }
  return out;
}

struct AnnotateReport {
  AnnotationCorpus corpus;
  std::size_t clamped = 0;
  std::vector<int> failed_chunks;  // chunks whose output stayed unparseable after the repair retry
  int resumed_after = 0;           // last chunk already done by a previous run
};

namespace detail {

struct ChunkOutcome {
  std::vector<Annotation> annotations;
  std::size_t clamped = 0;
  bool failed = false;
  Diagnostics diag;
};

inline ChunkOutcome annotate_chunk(const Chunk& chunk, int index, CompletionBackend& backend,
                                   const AnnotateOptions& options, const CharacterRoster& roster) {
  ChunkOutcome out;
  const RatingScale scale = options.scale();
  const std::vector<TraitSpec>* traits = options.traits ? &*options.traits : nullptr;
  std::string prompt = build_prompt(chunk.text, index, options, roster, chunk.prefix_bytes);
  std::string reply = backend.complete(prompt);
  ParsedResponse parsed;
  try {
    parsed = parse_annotation_response(reply, index, scale, &out.diag, traits);
  } catch (const ParseFailure&) {
    out.diag.warn("chunk " + std::to_string(index) + ": unparseable output, retrying with a repair prompt");
    std::string second = backend.complete(build_repair_prompt(prompt, reply, options));
    try {
      parsed = parse_annotation_response(second, index, scale, &out.diag, traits);
    } catch (const ParseFailure&) {
      out.diag.warn("chunk " + std::to_string(index) + ": output still unparseable after repair; chunk skipped");
      out.failed = true;
      return out;
    }
  }
  out.annotations = std::move(parsed.annotations);
  out.clamped = parsed.clamped;
  return out;
}

inline std::string run_fingerprint(const ChunkSet& chunks, const AnnotateOptions& options) {
  std::uint64_t h = fnv1a64(serialize_chunk_file(chunks));
  h = fnv1a64(options.scale().to_string(), h);
  h = fnv1a64(options.book_title.value_or("\x01"), h);
  if (options.traits) {
    for (const auto& t : *options.traits) h = fnv1a64(t.name + "\x1f" + t.trait_explanation, h);
  }
  if (options.target_characters) {
    for (const auto& n : *options.target_characters) h = fnv1a64(n + "\x1f", h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Checkpoint {
  std::string fingerprint;
  int last_completed_chunk = 0;
  std::vector<int> failed_chunks;
  std::size_t clamped = 0;
  CharacterRoster roster;
  AnnotationCorpus corpus;
};

inline std::string serialize_checkpoint(const Checkpoint& cp) {
  ordered_json doc;
  doc["fingerprint"] = cp.fingerprint;
  doc["last_completed_chunk"] = cp.last_completed_chunk;
  doc["failed_chunks"] = cp.failed_chunks;
  doc["clamped"] = cp.clamped;
  ordered_json roster = ordered_json::array();
  for (const auto& m : cp.roster.members()) roster.push_back({{"name", m.name}, {"first_chunk", m.first_chunk}});
  doc["roster"] = std::move(roster);
  doc["annotations"] = parse_json(serialize_corpus(cp.corpus), "checkpoint");
  return dump_json(doc) + "\n";
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  auto doc = parse_json(bytes, "checkpoint");
  Checkpoint cp;
  try {
    cp.fingerprint = doc.at("fingerprint").get<std::string>();
    cp.last_completed_chunk = doc.at("last_completed_chunk").get<int>();
    cp.failed_chunks = doc.at("failed_chunks").get<std::vector<int>>();
    cp.clamped = doc.at("clamped").get<std::size_t>();
    for (const auto& m : doc.at("roster")) cp.roster.add(m.at("name").get<std::string>(), m.at("first_chunk").get<int>());
    cp.corpus = parse_corpus(dump_json(doc.at("annotations")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
  return cp;
}

}  // namespace detail

// Annotates chunks in index order. The roster in each prompt holds every name
// produced by earlier chunks; with parallelism N, chunks are dispatched in
// waves of N that share the roster as of the wave start. When a checkpoint
// path is set, progress is saved after each wave and picked up on the next
// run with the same inputs; it is removed after a successful run.
inline AnnotateReport annotate(const ChunkSet& chunks, CompletionBackend& backend, const AnnotateOptions& options,
                               Diagnostics* diag = nullptr) {
  validate_options(options);
  detail::Checkpoint state;
  state.fingerprint = detail::run_fingerprint(chunks, options);
  if (options.checkpoint_path && std::filesystem::exists(*options.checkpoint_path)) {
    auto saved = detail::parse_checkpoint(read_file(*options.checkpoint_path));
    if (saved.fingerprint != state.fingerprint) {
      throw InvalidArgument("checkpoint '" + options.checkpoint_path->string() +
                            "' belongs to a different input or configuration; delete it to start over");
    }
    state = std::move(saved);
    warn(diag, "resuming after chunk " + std::to_string(state.last_completed_chunk));
  }
  const int resumed_after = state.last_completed_chunk;

  std::optional<std::unordered_set<std::string>> targets;
  if (options.target_characters) targets.emplace(options.target_characters->begin(), options.target_characters->end());

  const int n = static_cast<int>(chunks.size());
  int next = state.last_completed_chunk + 1;
  while (next <= n) {
    const int wave_end = std::min(n, next + options.parallelism - 1);
    const CharacterRoster snapshot = state.roster;
    auto run = [&](int i) { return detail::annotate_chunk(chunks.at(i), i, backend, options, snapshot); };

    std::vector<std::future<detail::ChunkOutcome>> pending;
    if (wave_end > next) {
      for (int i = next; i <= wave_end; ++i) pending.push_back(std::async(std::launch::async, run, i));
    }
    std::optional<std::string> abort_reason;
    for (int index = next; index <= wave_end; ++index) {
      detail::ChunkOutcome outcome;
      try {
        outcome = pending.empty() ? run(index) : pending[static_cast<std::size_t>(index - next)].get();
      } catch (const BackendError& e) {
        if (!abort_reason) abort_reason = "chunk " + std::to_string(index) + ": " + e.what();
        continue;
      }
      if (abort_reason) continue;  // commits stay contiguous
      for (auto& w : outcome.diag.warnings) warn(diag, std::move(w));
      if (outcome.failed) state.failed_chunks.push_back(index);
      state.clamped += outcome.clamped;
      for (auto& a : outcome.annotations) {
        state.roster.add(a.character, index);
        if (targets && targets->count(a.character) == 0) continue;
        state.corpus.add(std::move(a));
      }
      state.last_completed_chunk = index;
    }
    if (options.checkpoint_path && (abort_reason || state.last_completed_chunk < n)) {
      write_file_atomic(*options.checkpoint_path, detail::serialize_checkpoint(state));
    }
    if (abort_reason) throw AnnotationAborted(*abort_reason, state.last_completed_chunk);
    next = state.last_completed_chunk + 1;
  }
  if (options.checkpoint_path) {
    std::error_code ec;
    std::filesystem::remove(*options.checkpoint_path, ec);
  }
  if (!state.failed_chunks.empty()) {
    std::string list;
    for (int c : state.failed_chunks) list += (list.empty() ? "" : ", ") + std::to_string(c);
    warn(diag, std::to_string(state.failed_chunks.size()) + " of " + std::to_string(n) +
                   " chunks produced no usable output: " + list);
  }
  return AnnotateReport{std::move(state.corpus), state.clamped, std::move(state.failed_chunks), resumed_after};
}

}  // namespace charannot
