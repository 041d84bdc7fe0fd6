#pragma once

// Token counters used for chunk budgeting.
//
//   "cl100k_base-compatible"  byte-pair encoding over the cl100k_base ranks
//                             file, with the same pre-tokenization split.
//   "approx-bytes4"           ceil(bytes / 4); needs no vocabulary.

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "charannot/errors.hpp"
#include "charannot/io.hpp"
#include "charannot/unicode.hpp"

#ifndef CHARANNOT_DATA_DIR
#define CHARANNOT_DATA_DIR ""
#endif

namespace charannot {

inline constexpr std::string_view kBpeTokenizerId = "cl100k_base-compatible";
inline constexpr std::string_view kApproxTokenizerId = "approx-bytes4";

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string id() const = 0;
  virtual std::size_t count(std::string_view text) const = 0;
  // Byte offsets where each token ends, ascending; the last equals text.size().
  virtual std::vector<std::size_t> token_ends(std::string_view text) const = 0;
};

class ApproxTokenizer final : public Tokenizer {
 public:
  std::string id() const override { return std::string(kApproxTokenizerId); }

  std::size_t count(std::string_view text) const override { return (text.size() + 3) / 4; }

  std::vector<std::size_t> token_ends(std::string_view text) const override {
    std::vector<std::size_t> ends;
    for (std::size_t end = 4; end < text.size() + 4; end += 4) ends.push_back(std::min(end, text.size()));
    return ends;
  }
};

namespace detail {

inline int base64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

inline std::string base64_decode(std::string_view in) {
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    int v = base64_value(c);
    if (v < 0) throw SchemaError("invalid base64 character in vocabulary file");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

}  // namespace detail

// Splits text into the pieces that BPE merges operate on, following the
// cl100k_base pre-tokenization pattern:
//   's|'t|... contractions, optional non-letter + letters, 1-3 digits,
//   optional space + punctuation run + newlines, whitespace handling.
inline std::vector<std::string_view> pretokenize_cl100k(std::string_view text) {
  using namespace unicode;
  std::vector<char32_t> cps;
  std::vector<std::size_t> offs;
  cps.reserve(text.size());
  offs.reserve(text.size() + 1);
  for (std::size_t i = 0; i < text.size();) {
    auto d = decode(text, i);
    cps.push_back(d.cp);
    offs.push_back(i);
    i += d.len;
  }
  const std::size_t n = cps.size();
  offs.push_back(text.size());

  auto L = [&](std::size_t i) { return is_letter(cps[i]); };
  auto N = [&](std::size_t i) { return is_number(cps[i]); };
  auto S = [&](std::size_t i) { return is_space(cps[i]); };
  auto newline = [&](std::size_t i) { return cps[i] == U'\r' || cps[i] == U'\n'; };
  auto punct = [&](std::size_t i) { return !S(i) && !L(i) && !N(i); };
  auto lower = [](char32_t c) { return (c >= U'A' && c <= U'Z') ? c + 32 : c; };

  std::vector<std::string_view> pieces;
  std::size_t i = 0;
  while (i < n) {
    std::size_t end = i;
    // 's 't 'm 'd 'll 've 're (case-insensitive)
    if (cps[i] == U'\'' && i + 1 < n) {
      char32_t a = lower(cps[i + 1]);
      if (a == U's' || a == U'd' || a == U'm' || a == U't') {
        end = i + 2;
      } else if (i + 2 < n) {
        char32_t b = lower(cps[i + 2]);
        if ((a == U'l' && b == U'l') || (a == U'v' && b == U'e') || (a == U'r' && b == U'e')) end = i + 3;
      }
    }
    // [^\r\n\p{L}\p{N}]?\p{L}+
    if (end == i) {
      std::size_t j = i;
      if (!L(j) && !N(j) && !newline(j)) ++j;
      if (j < n && L(j)) {
        while (j < n && L(j)) ++j;
        end = j;
      }
    }
    // \p{N}{1,3}
    if (end == i && N(i)) {
      std::size_t j = i;
      while (j < n && j - i < 3 && N(j)) ++j;
      end = j;
    }
    //  ?[^\s\p{L}\p{N}]+[\r\n]*
    if (end == i) {
      std::size_t j = i;
      if (cps[j] == U' ' && j + 1 < n && punct(j + 1)) ++j;
      if (punct(j)) {
        while (j < n && punct(j)) ++j;
        while (j < n && newline(j)) ++j;
        end = j;
      }
    }
    if (end == i && S(i)) {
      std::size_t run = i;
      while (run < n && S(run)) ++run;
      if (run == n) {
        end = n;  // \s+$
      } else {
        std::size_t last_nl = n;
        for (std::size_t k = i; k < run; ++k) {
          if (newline(k)) last_nl = k;
        }
        if (last_nl != n) {
          end = last_nl + 1;  // \s*[\r\n]
        } else if (run - i >= 2) {
          end = run - 1;  // \s+(?!\S)
        } else {
          end = i + 1;  // \s
        }
      }
    }
    if (end == i) end = i + 1;
    pieces.push_back(text.substr(offs[i], offs[end] - offs[i]));
    i = end;
  }
  return pieces;
}

// Byte-pair encoder over a ranks file in the tiktoken text format
// ("<base64 token> <rank>" per line).
class BpeTokenizer final : public Tokenizer {
 public:
  explicit BpeTokenizer(const std::filesystem::path& ranks_file) {
    std::string data = read_file(ranks_file);
    std::size_t pos = 0;
    while (pos < data.size()) {
      std::size_t nl = data.find('\n', pos);
      if (nl == std::string::npos) nl = data.size();
      std::string_view line(data.data() + pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      std::size_t sp = line.find(' ');
      if (sp == std::string_view::npos) throw SchemaError("malformed line in vocabulary file '" + ranks_file.string() + "'");
      std::string token = detail::base64_decode(line.substr(0, sp));
      auto rank = static_cast<std::uint32_t>(std::strtoul(std::string(line.substr(sp + 1)).c_str(), nullptr, 10));
      ranks_.emplace(std::move(token), rank);
    }
    if (ranks_.size() < 256) throw SchemaError("vocabulary file '" + ranks_file.string() + "' is too small");
  }

  std::string id() const override { return std::string(kBpeTokenizerId); }

  std::size_t count(std::string_view text) const override {
    std::size_t total = 0;
    for (auto piece : pretokenize_cl100k(text)) total += piece_lengths(piece).size();
    return total;
  }

  std::vector<std::size_t> token_ends(std::string_view text) const override {
    std::vector<std::size_t> ends;
    std::size_t offset = 0;
    for (auto piece : pretokenize_cl100k(text)) {
      for (auto len : piece_lengths(piece)) {
        offset += len;
        ends.push_back(offset);
      }
    }
    return ends;
  }

  // Token ids for a text; exposed for golden comparisons.
  std::vector<std::uint32_t> encode(std::string_view text) const {
    std::vector<std::uint32_t> ids;
    for (auto piece : pretokenize_cl100k(text)) {
      std::size_t off = 0;
      for (auto len : piece_lengths(piece)) {
        ids.push_back(ranks_.at(std::string(piece.substr(off, len))));
        off += len;
      }
    }
    return ids;
  }

  std::size_t vocabulary_size() const { return ranks_.size(); }

 private:
  static constexpr std::uint32_t kNoRank = std::numeric_limits<std::uint32_t>::max();

  std::uint32_t rank_of(std::string_view bytes) const {
    auto it = ranks_.find(std::string(bytes));
    return it == ranks_.end() ? kNoRank : it->second;
  }

  // Lengths of the tokens a single piece merges into.
  std::vector<std::uint16_t> piece_lengths(std::string_view piece) const {
    {
      std::lock_guard lock(cache_mutex_);
      auto it = cache_.find(std::string(piece));
      if (it != cache_.end()) return it->second;
    }
    std::vector<std::uint16_t> lengths = merge(piece);
    std::lock_guard lock(cache_mutex_);
    if (cache_.size() > kMaxCacheEntries) cache_.clear();
    cache_.emplace(std::string(piece), lengths);
    return lengths;
  }

  std::vector<std::uint16_t> merge(std::string_view piece) const {
    if (piece.size() == 1 || rank_of(piece) != kNoRank) return {static_cast<std::uint16_t>(piece.size())};
    struct Part {
      std::size_t start;
      std::uint32_t rank;
    };
    std::vector<Part> parts;
    parts.reserve(piece.size() + 1);
    for (std::size_t i = 0; i + 1 < piece.size(); ++i) parts.push_back({i, rank_of(piece.substr(i, 2))});
    parts.push_back({piece.size() - 1, kNoRank});
    parts.push_back({piece.size(), kNoRank});

    // Rank of the merge that would join parts[i] with parts[i + 1] after
    // parts[i + 1] is absorbed (i.e. spanning up to parts[i + 3]).
    auto rank_after = [&](std::size_t i) {
      if (i + 3 < parts.size()) return rank_of(piece.substr(parts[i].start, parts[i + 3].start - parts[i].start));
      return kNoRank;
    };

    while (parts.size() > 1) {
      std::uint32_t best = kNoRank;
      std::size_t at = 0;
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (parts[i].rank < best) {
          best = parts[i].rank;
          at = i;
        }
      }
      if (best == kNoRank) break;
      parts[at].rank = rank_after(at);
      if (at > 0) parts[at - 1].rank = rank_after(at - 1);
      parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(at) + 1);
    }

    std::vector<std::uint16_t> lengths;
    lengths.reserve(parts.size() - 1);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      lengths.push_back(static_cast<std::uint16_t>(parts[i + 1].start - parts[i].start));
    }
    return lengths;
  }

  static constexpr std::size_t kMaxCacheEntries = 1 << 18;

  std::unordered_map<std::string, std::uint32_t> ranks_;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, std::vector<std::uint16_t>> cache_;
};

// Locates the cl100k_base ranks file: $CHARANNOT_CL100K_VOCAB, then the data
// directory baked in at build time.
inline std::filesystem::path default_bpe_vocabulary_path() {
  if (const char* env = std::getenv("CHARANNOT_CL100K_VOCAB"); env != nullptr && *env != '\0') return env;
  return std::filesystem::path(CHARANNOT_DATA_DIR) / "cl100k_base.tiktoken";
}

// Returns a shared tokenizer for a registered id. Loaded vocabularies are
// cached for the life of the process.
inline std::shared_ptr<const Tokenizer> make_tokenizer(std::string_view id) {
  static std::mutex mutex;
  static std::map<std::string, std::shared_ptr<const Tokenizer>, std::less<>> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(id); it != cache.end()) return it->second;

  std::shared_ptr<const Tokenizer> tok;
  if (id == kBpeTokenizerId || id == "cl100k_base") {
    auto path = default_bpe_vocabulary_path();
    if (!std::filesystem::exists(path)) {
      throw InvalidArgument("tokenizer '" + std::string(id) + "' needs the cl100k_base ranks file, not found at '" +
                            path.string() + "' (set CHARANNOT_CL100K_VOCAB)");
    }
    tok = std::make_shared<BpeTokenizer>(path);
  } else if (id == kApproxTokenizerId) {
    tok = std::make_shared<ApproxTokenizer>();
  } else {
    throw InvalidArgument("unknown tokenizer id '" + std::string(id) + "' (known: " + std::string(kBpeTokenizerId) +
                          ", " + std::string(kApproxTokenizerId) + ")");
  }
  cache.emplace(std::string(id), tok);
  return tok;
}

inline std::size_t count_tokens(std::string_view text, std::string_view tokenizer_id) {
  return make_tokenizer(tokenizer_id)->count(text);
}

}  // namespace charannot
