#pragma once

// Shared value types and their on-disk JSON forms: the annotation file, the
// chunk file (plus its metadata sidecar) and the eval JSON-Lines store.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "charannot/errors.hpp"

namespace charannot {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline std::string dump_json(const ordered_json& value, int indent = 2) {
  return value.dump(indent, ' ', false, nlohmann::json::error_handler_t::strict);
}

inline ordered_json parse_json(std::string_view bytes, std::string_view what) {
  try {
    return ordered_json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports the 1-based count of bytes read; convert to an offset.
    std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    throw ParseError(std::string(what) + ": malformed JSON at byte " + std::to_string(offset) +
                         ": " + e.what(),
                     offset);
  }
}

inline bool is_integer(const ordered_json& v) {
  return v.is_number_integer() || v.is_number_unsigned();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rating scale

class RatingScale {
 public:
  // Presence-only scale used in exploratory mode.
  RatingScale() : values_{1} {}

  explicit RatingScale(std::vector<int> values) : values_(std::move(values)) {
    if (values_.empty()) throw InvalidArgument("rating scale must not be empty");
    for (std::size_t i = 1; i < values_.size(); ++i) {
      if (values_[i] <= values_[i - 1]) {
        throw InvalidArgument("rating scale must be strictly increasing");
      }
    }
  }

  // Parses "a,b,c".
  static RatingScale parse(std::string_view text) {
    std::vector<int> values;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t comma = text.find(',', pos);
      if (comma == std::string_view::npos) comma = text.size();
      std::string item(text.substr(pos, comma - pos));
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (item.empty()) throw InvalidArgument("empty value in rating scale '" + std::string(text) + "'");
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size()) throw InvalidArgument("non-integer value '" + item + "' in rating scale");
      values.push_back(v);
      pos = comma + 1;
    }
    return RatingScale(std::move(values));
  }

  const std::vector<int>& values() const { return values_; }
  bool contains(int rating) const { return std::binary_search(values_.begin(), values_.end(), rating); }
  bool is_presence_only() const { return values_.size() == 1 && values_[0] == 1; }

  // Nearest member of the scale; ties resolve toward the smaller value.
  int clamp(double rating) const {
    int best = values_.front();
    double best_dist = std::abs(rating - best);
    for (int v : values_) {
      double d = std::abs(rating - v);
      if (d < best_dist) {
        best = v;
        best_dist = d;
      }
    }
    return best;
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(values_[i]);
    }
    return out;
  }

  bool operator==(const RatingScale&) const = default;

 private:
  std::vector<int> values_;
};

// ---------------------------------------------------------------------------
// Trait specifications

struct TraitExample {
  std::string name;
  std::string action;
  std::string assessment;
  int rating = 0;

  bool operator==(const TraitExample&) const = default;
};

struct TraitSpec {
  std::string name;
  std::string trait_explanation;
  std::vector<TraitExample> examples;

  bool operator==(const TraitSpec&) const = default;
};

inline void validate_trait(const TraitSpec& trait, const RatingScale& scale) {
  if (trait.name.empty()) throw InvalidArgument("trait name must not be empty");
  if (trait.examples.empty()) {
    throw InvalidArgument("trait '" + trait.name + "' needs at least one example");
  }
  for (const auto& ex : trait.examples) {
    if (!scale.contains(ex.rating)) {
      throw InvalidArgument("trait '" + trait.name + "' example rating " + std::to_string(ex.rating) +
                            " is not on the rating scale [" + scale.to_string() + "]");
    }
  }
}

// Traits file: {"<trait>": {"trait_explanation": str, "examples": [{name, action, assessment, rating}]}}
inline std::vector<TraitSpec> parse_traits(std::string_view bytes) {
  ordered_json doc = detail::parse_json(bytes, "traits file");
  if (!doc.is_object()) throw SchemaError("traits file: top level must be an object");
  std::vector<TraitSpec> traits;
  for (const auto& [name, body] : doc.items()) {
    if (!body.is_object()) throw SchemaError("traits file: trait '" + name + "' must be an object");
    TraitSpec spec;
    spec.name = name;
    auto expl = body.find("trait_explanation");
    if (expl == body.end() || !expl->is_string()) {
      throw SchemaError("traits file: trait '" + name + "' lacks a string trait_explanation");
    }
    spec.trait_explanation = expl->get<std::string>();
    auto examples = body.find("examples");
    if (examples == body.end() || !examples->is_array()) {
      throw SchemaError("traits file: trait '" + name + "' lacks an examples array");
    }
    for (const auto& ex : *examples) {
      if (!ex.is_object() || !ex.contains("name") || !ex.contains("action") ||
          !ex.contains("assessment") || !ex.contains("rating") || !ex["name"].is_string() ||
          !ex["action"].is_string() || !ex["assessment"].is_string() || !detail::is_integer(ex["rating"])) {
        throw SchemaError("traits file: trait '" + name +
                          "' has an example without string name/action/assessment and integer rating");
      }
      spec.examples.push_back({ex["name"].get<std::string>(), ex["action"].get<std::string>(),
                               ex["assessment"].get<std::string>(), ex["rating"].get<int>()});
    }
    traits.push_back(std::move(spec));
  }
  return traits;
}

// ---------------------------------------------------------------------------
// Annotations

struct Annotation {
  std::string character;
  std::string action;
  std::string trait;
  int rating = 1;
  int chunk = 1;

  bool operator==(const Annotation&) const = default;
};

// Character name -> annotations, keyed in first-appearance order.
class AnnotationCorpus {
 public:
  struct Entry {
    std::string character;
    std::vector<Annotation> records;

    bool operator==(const Entry&) const = default;
  };

  // Appends under annotation.character, creating the entry if needed.
  void add(Annotation annotation) {
    if (annotation.character.empty()) throw InvalidArgument("annotation character must not be empty");
    entry_for(annotation.character).records.push_back(std::move(annotation));
  }

  // Ensures an (initially empty) entry exists.
  Entry& entry_for(const std::string& character) {
    auto it = index_.find(character);
    if (it != index_.end()) return entries_[it->second];
    index_.emplace(character, entries_.size());
    entries_.push_back(Entry{character, {}});
    return entries_.back();
  }

  const std::vector<Entry>& entries() const { return entries_; }

  const Entry* find(std::string_view character) const {
    auto it = index_.find(std::string(character));
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  bool contains(std::string_view character) const { return find(character) != nullptr; }

  std::size_t character_count() const { return entries_.size(); }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.records.size();
    return n;
  }

  bool empty() const { return entries_.empty(); }

  // Flattened view: character first-appearance order, then list order.
  std::vector<const Annotation*> flatten() const {
    std::vector<const Annotation*> out;
    out.reserve(total());
    for (const auto& e : entries_) {
      for (const auto& a : e.records) out.push_back(&a);
    }
    return out;
  }

  bool operator==(const AnnotationCorpus& other) const { return entries_ == other.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string serialize_corpus(const AnnotationCorpus& corpus) {
  ordered_json doc = ordered_json::object();
  for (const auto& entry : corpus.entries()) {
    ordered_json list = ordered_json::array();
    for (const auto& a : entry.records) {
      ordered_json item = ordered_json::object();
      item["Action"] = a.action;
      item[a.trait] = a.rating;
      item["Chunk"] = a.chunk;
      list.push_back(std::move(item));
    }
    doc[entry.character] = std::move(list);
  }
  return detail::dump_json(doc) + "\n";
}

inline AnnotationCorpus parse_corpus(std::string_view bytes) {
  ordered_json doc = detail::parse_json(bytes, "annotation file");
  if (!doc.is_object()) throw SchemaError("annotation file: top level must be an object keyed by character");
  AnnotationCorpus corpus;
  for (const auto& [character, list] : doc.items()) {
    if (character.empty()) throw SchemaError("annotation file: empty character name");
    if (!list.is_array()) {
      throw SchemaError("annotation file: key '" + character + "' must map to a list of annotations");
    }
    corpus.entry_for(character);
    std::size_t index = 0;
    for (const auto& item : list) {
      auto where = [&] { return "annotation file: character '" + character + "' entry " + std::to_string(index); };
      if (!item.is_object()) throw SchemaError(where() + " is not an object");
      Annotation a;
      a.character = character;
      bool have_action = false;
      bool have_chunk = false;
      int trait_keys = 0;
      for (const auto& [key, value] : item.items()) {
        if (key == "Action") {
          if (!value.is_string()) throw SchemaError(where() + ": \"Action\" must be a string");
          a.action = value.get<std::string>();
          have_action = true;
        } else if (key == "Chunk") {
          if (!detail::is_integer(value) || value.get<std::int64_t>() < 1) {
            throw SchemaError(where() + ": \"Chunk\" must be a positive integer");
          }
          a.chunk = value.get<int>();
          have_chunk = true;
        } else {
          ++trait_keys;
          if (!detail::is_integer(value)) {
            throw SchemaError(where() + ": rating for trait '" + key + "' must be an integer");
          }
          a.trait = key;
          a.rating = value.get<int>();
        }
      }
      if (!have_action) throw SchemaError(where() + ": missing \"Action\"");
      if (!have_chunk) throw SchemaError(where() + ": missing \"Chunk\"");
      if (trait_keys != 1) {
        throw SchemaError(where() + ": expected exactly one trait key, found " + std::to_string(trait_keys));
      }
      corpus.add(std::move(a));
      ++index;
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Chunks

struct Chunk {
  std::string text;             // stored text, overlap prefix included
  std::size_t prefix_bytes = 0; // length of the overlap prefix at the front

  std::string_view context() const { return std::string_view(text).substr(0, prefix_bytes); }
  std::string_view body() const { return std::string_view(text).substr(prefix_bytes); }

  bool operator==(const Chunk&) const = default;
};

struct ChunkMeta {
  int target_tokens = 500;
  std::string tokenizer_id;
  int context_sentences = 3;
  std::optional<std::string> custom_splitter;

  bool operator==(const ChunkMeta&) const = default;
};

// Chunks indexed 1..N.
class ChunkSet {
 public:
  ChunkSet() = default;
  ChunkSet(std::vector<Chunk> chunks, ChunkMeta meta) : chunks_(std::move(chunks)), meta_(std::move(meta)) {
    for (std::size_t i = 0; i < chunks_.size(); ++i) {
      if (chunks_[i].text.empty()) throw InvalidArgument("chunk " + std::to_string(i + 1) + " is empty");
      if (chunks_[i].prefix_bytes >= chunks_[i].text.size()) {
        throw InvalidArgument("chunk " + std::to_string(i + 1) + " has no body after its overlap prefix");
      }
    }
  }

  std::size_t size() const { return chunks_.size(); }
  bool empty() const { return chunks_.empty(); }
  bool has(int index) const { return index >= 1 && static_cast<std::size_t>(index) <= chunks_.size(); }

  const Chunk& at(int index) const {
    if (!has(index)) throw InvalidArgument("chunk index " + std::to_string(index) + " out of range");
    return chunks_[static_cast<std::size_t>(index - 1)];
  }

  const std::vector<Chunk>& chunks() const { return chunks_; }
  const ChunkMeta& meta() const { return meta_; }

  bool operator==(const ChunkSet&) const = default;

 private:
  std::vector<Chunk> chunks_;
  ChunkMeta meta_;
};

// {"1": text, "2": text, ...}
inline std::string serialize_chunk_file(const ChunkSet& set) {
  ordered_json doc = ordered_json::object();
  for (std::size_t i = 0; i < set.size(); ++i) doc[std::to_string(i + 1)] = set.chunks()[i].text;
  return detail::dump_json(doc) + "\n";
}

// Sidecar recording chunking parameters and overlap prefix lengths.
inline std::string serialize_chunk_meta(const ChunkSet& set) {
  ordered_json doc = ordered_json::object();
  const auto& m = set.meta();
  doc["target_tokens"] = m.target_tokens;
  doc["tokenizer_id"] = m.tokenizer_id;
  doc["context_sentences"] = m.context_sentences;
  doc["custom_splitter"] = m.custom_splitter ? ordered_json(*m.custom_splitter) : ordered_json(nullptr);
  ordered_json prefixes = ordered_json::array();
  for (const auto& c : set.chunks()) prefixes.push_back(c.prefix_bytes);
  doc["prefix_bytes"] = std::move(prefixes);
  return detail::dump_json(doc) + "\n";
}

namespace detail {

inline std::optional<long long> parse_chunk_key(std::string_view key) {
  std::size_t i = 0;
  while (i < key.size() && (key[i] == ' ' || key[i] == '\t')) ++i;
  if (i < key.size() && key[i] == '+') ++i;
  if (i == key.size()) return std::nullopt;
  long long v = 0;
  std::size_t digits = 0;
  for (; i < key.size() && key[i] >= '0' && key[i] <= '9'; ++i, ++digits) {
    v = v * 10 + (key[i] - '0');
    if (v > 1'000'000'000) return std::nullopt;
  }
  while (i < key.size() && (key[i] == ' ' || key[i] == '\t')) ++i;
  if (digits == 0 || i != key.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// Reads the chunk file. Keys are decimal integers (leading zeros, a '+' sign
// and surrounding blanks are tolerated) and must cover 1..N. When the meta
// sidecar is supplied, overlap prefix lengths and parameters are restored.
inline ChunkSet parse_chunk_file(std::string_view bytes, std::optional<std::string_view> meta_bytes = std::nullopt) {
  ordered_json doc = detail::parse_json(bytes, "chunk file");
  if (!doc.is_object()) throw SchemaError("chunk file: top level must be an object");
  std::vector<std::optional<std::string>> slots(doc.size());
  for (const auto& [key, value] : doc.items()) {
    auto idx = detail::parse_chunk_key(key);
    if (!idx || *idx < 1 || static_cast<std::size_t>(*idx) > slots.size()) {
      throw SchemaError("chunk file: key '" + key + "' is not an index in 1.." + std::to_string(slots.size()));
    }
    if (!value.is_string()) throw SchemaError("chunk file: chunk '" + key + "' must be a string");
    auto& slot = slots[static_cast<std::size_t>(*idx - 1)];
    if (slot) throw SchemaError("chunk file: duplicate chunk index " + std::to_string(*idx));
    slot = value.get<std::string>();
    if (slot->empty()) throw SchemaError("chunk file: chunk " + std::to_string(*idx) + " is empty");
  }
  std::vector<Chunk> chunks;
  chunks.reserve(slots.size());
  for (auto& s : slots) chunks.push_back(Chunk{std::move(*s), 0});

  ChunkMeta meta;
  if (meta_bytes) {
    ordered_json m = detail::parse_json(*meta_bytes, "chunk meta file");
    if (!m.is_object()) throw SchemaError("chunk meta file: top level must be an object");
    meta.target_tokens = m.value("target_tokens", meta.target_tokens);
    meta.tokenizer_id = m.value("tokenizer_id", std::string{});
    meta.context_sentences = m.value("context_sentences", meta.context_sentences);
    if (m.contains("custom_splitter") && m["custom_splitter"].is_string()) {
      meta.custom_splitter = m["custom_splitter"].get<std::string>();
    }
    if (m.contains("prefix_bytes")) {
      const auto& p = m["prefix_bytes"];
      if (!p.is_array() || p.size() != chunks.size()) {
        throw SchemaError("chunk meta file: prefix_bytes must list one length per chunk");
      }
      for (std::size_t i = 0; i < chunks.size(); ++i) {
        if (!p[i].is_number_unsigned() && !p[i].is_number_integer()) {
          throw SchemaError("chunk meta file: prefix_bytes entries must be integers");
        }
        auto len = p[i].get<std::int64_t>();
        if (len < 0 || static_cast<std::size_t>(len) >= chunks[i].text.size()) {
          throw SchemaError("chunk meta file: prefix length for chunk " + std::to_string(i + 1) + " out of range");
        }
        chunks[i].prefix_bytes = static_cast<std::size_t>(len);
      }
    }
  }
  return ChunkSet(std::move(chunks), std::move(meta));
}

// ---------------------------------------------------------------------------
// Merge sets

struct MergeSet {
  std::vector<std::string> names;  // >= 2 distinct names
  std::string canonical;           // member of names

  bool operator==(const MergeSet&) const = default;
};

// ---------------------------------------------------------------------------
// Eval store lines

struct EvalRecord {
  std::string character;
  int chunk = 1;
  std::string action;
  std::string trait;
  int llm_rating = 1;
  std::string label;
  int sampled_index = 0;  // 1-based position in the review sample
  std::string timestamp;  // ISO-8601, UTC
  std::string rater = "default";

  bool operator==(const EvalRecord&) const = default;
};

// Undo marker: retracts the most recent live record.
struct EvalTombstone {
  int sampled_index = 0;
  std::string timestamp;

  bool operator==(const EvalTombstone&) const = default;
};

using EvalLine = std::variant<EvalRecord, EvalTombstone>;

inline std::string serialize_eval_line(const EvalLine& line) {
  ordered_json doc = ordered_json::object();
  if (const auto* r = std::get_if<EvalRecord>(&line)) {
    doc["character"] = r->character;
    doc["chunk"] = r->chunk;
    doc["action"] = r->action;
    doc["trait"] = r->trait;
    doc["llm_rating"] = r->llm_rating;
    doc["label"] = r->label;
    doc["sampled_index"] = r->sampled_index;
    doc["timestamp"] = r->timestamp;
    doc["rater"] = r->rater;
  } else {
    const auto& t = std::get<EvalTombstone>(line);
    doc["tombstone"] = true;
    doc["sampled_index"] = t.sampled_index;
    doc["timestamp"] = t.timestamp;
  }
  return detail::dump_json(doc, -1);
}

inline EvalLine parse_eval_line(std::string_view line) {
  ordered_json doc = detail::parse_json(line, "eval line");
  if (!doc.is_object()) throw SchemaError("eval line: expected an object");
  auto get_string = [&](const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || !it->is_string()) throw SchemaError(std::string("eval line: missing string '") + key + "'");
    return it->get<std::string>();
  };
  auto get_int = [&](const char* key) {
    auto it = doc.find(key);
    if (it == doc.end() || !detail::is_integer(*it)) {
      throw SchemaError(std::string("eval line: missing integer '") + key + "'");
    }
    return it->get<int>();
  };
  if (doc.value("tombstone", false)) {
    return EvalTombstone{get_int("sampled_index"), get_string("timestamp")};
  }
  EvalRecord r;
  r.character = get_string("character");
  r.chunk = get_int("chunk");
  r.action = get_string("action");
  r.trait = get_string("trait");
  r.llm_rating = get_int("llm_rating");
  r.label = get_string("label");
  r.sampled_index = get_int("sampled_index");
  r.timestamp = get_string("timestamp");
  if (doc.contains("rater") && doc["rater"].is_string()) r.rater = doc["rater"].get<std::string>();
  return r;
}

// Replays a JSONL store: tombstones retract the latest live record.
inline std::vector<EvalRecord> replay_eval_lines(std::string_view contents) {
  std::vector<EvalRecord> live;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < contents.size()) {
    std::size_t nl = contents.find('\n', pos);
    if (nl == std::string_view::npos) nl = contents.size();
    std::string_view line = contents.substr(pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    EvalLine parsed;
    try {
      parsed = parse_eval_line(line);
    } catch (const Error& e) {
      throw SchemaError("eval store line " + std::to_string(line_no) + ": " + e.what());
    }
    if (std::holds_alternative<EvalTombstone>(parsed)) {
      if (live.empty()) throw SchemaError("eval store line " + std::to_string(line_no) + ": tombstone with nothing to undo");
      live.pop_back();
    } else {
      live.push_back(std::get<EvalRecord>(std::move(parsed)));
    }
  }
  return live;
}

}  // namespace charannot
