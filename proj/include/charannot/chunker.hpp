#pragma once

// Sentence segmentation and token-budgeted chunking.

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "charannot/core_model.hpp"
#include "charannot/errors.hpp"
#include "charannot/tokenizer.hpp"
#include "charannot/unicode.hpp"

namespace charannot {

struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const SentenceSpan&) const = default;
};

namespace detail {

inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

// Closing quote or bracket at `pos`; returns its byte length or 0.
inline std::size_t closer_length(std::string_view s, std::size_t pos) {
  char c = s[pos];
  if (c == '"' || c == '\'' || c == ')' || c == ']' || c == '}') return 1;
  auto d = unicode::decode(s, pos);
  switch (d.cp) {
    case U'”':  // ”
    case U'’':  // ’
    case U'»':  // »
    case U'›':  // ›
      return d.len;
    default:
      return 0;
  }
}

// Honorifics whose period does not end a sentence.
inline bool is_abbreviation(std::string_view s, std::size_t dot) {
  static constexpr std::array<std::string_view, 4> kAbbreviations = {"Mr", "Mrs", "Dr", "St"};
  std::size_t start = dot;
  while (start > 0 && ((s[start - 1] >= 'a' && s[start - 1] <= 'z') || (s[start - 1] >= 'A' && s[start - 1] <= 'Z'))) {
    --start;
  }
  if (start == dot) return false;
  if (start > 0) {
    // Reject when the word continues with a non-ASCII letter ("Schmr.").
    std::size_t prev = start - 1;
    while (prev > 0 && !unicode::is_boundary(s, prev)) --prev;
    if (unicode::is_letter(unicode::decode(s, prev).cp)) return false;
  }
  std::string_view word = s.substr(start, dot - start);
  for (auto abbr : kAbbreviations) {
    if (word == abbr) return true;
  }
  return false;
}

inline bool is_all_space(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    auto d = unicode::decode(s, i);
    if (!unicode::is_space(d.cp)) return false;
    i += d.len;
  }
  return true;
}

}  // namespace detail

// Splits text into contiguous spans covering it. A sentence ends after a run
// of '.', '!' or '?' (plus any closing quotes or brackets) that is followed by
// whitespace or the end of the text; the whitespace opens the next span.
// Trailing whitespace is folded into the final sentence.
inline std::vector<SentenceSpan> split_sentences(std::string_view text) {
  std::vector<SentenceSpan> spans;
  const std::size_t n = text.size();
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < n) {
    if (!detail::is_terminator(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && detail::is_terminator(text[j])) ++j;
    std::size_t k = j;
    while (k < n) {
      std::size_t len = detail::closer_length(text, k);
      if (len == 0) break;
      k += len;
    }
    bool at_break = k == n || unicode::is_space(unicode::decode(text, k).cp);
    if (at_break && !(j == i + 1 && text[i] == '.' && detail::is_abbreviation(text, i))) {
      spans.push_back({start, k});
      start = k;
    }
    i = k;
  }
  if (start < n) {
    if (!spans.empty() && detail::is_all_space(text.substr(start))) {
      spans.back().end = n;
    } else {
      spans.push_back({start, n});
    }
  }
  return spans;
}

struct ChunkerConfig {
  int target_tokens = 500;
  int context_sentences = 3;
  std::optional<std::string> custom_splitter;
  std::string tokenizer_id = std::string(kBpeTokenizerId);
};

namespace detail {

// Longest prefix of `unit` that fits the budget, cut at a token boundary that
// is also a code point boundary. Always returns at least one code point.
inline std::size_t hard_split_point(std::string_view unit, const Tokenizer& tok, std::size_t budget) {
  auto ends = tok.token_ends(unit);
  std::size_t idx = std::min(budget, ends.size());
  while (idx > 0) {
    std::size_t cut = ends[idx - 1];
    if (cut < unit.size() && unicode::is_boundary(unit, cut) && tok.count(unit.substr(0, cut)) <= budget) return cut;
    --idx;
  }
  return unicode::decode(unit, 0).len;
}

inline ChunkSet split_on_marker(std::string_view text, const ChunkerConfig& config, Diagnostics* diag) {
  const std::string& marker = *config.custom_splitter;
  std::vector<Chunk> chunks;
  std::size_t pos = 0;
  bool found = false;
  while (pos <= text.size()) {
    std::size_t hit = text.find(marker, pos);
    if (hit != std::string_view::npos) found = true;
    std::size_t end = hit == std::string_view::npos ? text.size() : hit;
    std::string_view segment = text.substr(pos, end - pos);
    if (!segment.empty() && !is_all_space(segment)) chunks.push_back(Chunk{std::string(segment), 0});
    if (hit == std::string_view::npos) break;
    pos = hit + marker.size();
  }
  if (!found) warn(diag, "splitter '" + marker + "' does not occur in the text; produced a single chunk");
  ChunkMeta meta{config.target_tokens, config.tokenizer_id, config.context_sentences, marker};
  return ChunkSet(std::move(chunks), std::move(meta));
}

}  // namespace detail

// Splits `text` into chunks. In budget mode every chunk body is the longest
// run of whole sentences whose token count fits `target_tokens`; a sentence
// that alone exceeds the budget is cut at a token boundary. Chunks after the
// first carry the previous body's last `context_sentences` sentences as a
// prefix, recorded in Chunk::prefix_bytes. Bodies concatenate to the input.
// With a custom splitter the text is cut at each marker instead.
inline ChunkSet chunk_text(std::string_view text, const ChunkerConfig& config, Diagnostics* diag = nullptr) {
  if (detail::is_all_space(text)) throw InvalidArgument("cannot chunk empty or whitespace-only text");
  if (config.custom_splitter) {
    if (config.custom_splitter->empty()) throw InvalidArgument("custom splitter must not be empty");
    return detail::split_on_marker(text, config, diag);
  }
  if (config.target_tokens < 1) throw InvalidArgument("target_tokens must be at least 1");
  if (config.context_sentences < 0) throw InvalidArgument("context_sentences must not be negative");

  auto tok = make_tokenizer(config.tokenizer_id);
  const auto budget = static_cast<std::size_t>(config.target_tokens);

  // Work queue of sentence spans; hard splits replace the head with its tail.
  std::vector<SentenceSpan> units = split_sentences(text);
  std::size_t next = 0;

  std::vector<Chunk> chunks;
  std::vector<SentenceSpan> previous_body;
  while (next < units.size()) {
    std::vector<SentenceSpan> body;
    const std::size_t body_begin = units[next].begin;
    while (next < units.size()) {
      std::string_view candidate = text.substr(body_begin, units[next].end - body_begin);
      if (tok->count(candidate) > budget) break;
      body.push_back(units[next++]);
    }
    if (body.empty()) {
      SentenceSpan& head = units[next];
      std::size_t cut = detail::hard_split_point(text.substr(head.begin, head.size()), *tok, budget);
      body.push_back({head.begin, head.begin + cut});
      head.begin += cut;
    }

    std::string stored;
    std::size_t prefix_bytes = 0;
    if (!previous_body.empty() && config.context_sentences > 0) {
      std::size_t keep = std::min(previous_body.size(), static_cast<std::size_t>(config.context_sentences));
      std::size_t from = previous_body[previous_body.size() - keep].begin;
      stored = std::string(text.substr(from, previous_body.back().end - from));
      prefix_bytes = stored.size();
    }
    stored.append(text.substr(body.front().begin, body.back().end - body.front().begin));
    chunks.push_back(Chunk{std::move(stored), prefix_bytes});
    previous_body = std::move(body);
  }

  ChunkMeta meta{config.target_tokens, tok->id(), config.context_sentences, std::nullopt};
  return ChunkSet(std::move(chunks), std::move(meta));
}

// Concatenated chunk bodies; equals the chunked text in budget mode.
inline std::string reconstruct(const ChunkSet& set) {
  std::string out;
  for (const auto& c : set.chunks()) out.append(c.body());
  return out;
}

}  // namespace charannot
