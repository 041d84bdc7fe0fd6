#pragma once

// Pseudonym detection and merging of character annotation lists.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "charannot/annotator.hpp"
#include "charannot/core_model.hpp"
#include "charannot/errors.hpp"
#include "charannot/llm_backend.hpp"
#include "charannot/tokenizer.hpp"
#include "charannot/unicode.hpp"

namespace charannot {

using NamePair = std::pair<std::string, std::string>;

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<int> rank_;
};

namespace detail {

inline std::u32string lower_codepoints(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    auto d = unicode::decode(s, i);
    char32_t c = d.cp;
    if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
    out.push_back(c);
    i += d.len;
  }
  return out;
}

inline std::size_t levenshtein(const std::u32string& a, const std::u32string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// Lowercased words made of letters and digits.
inline std::set<std::u32string> name_tokens(std::string_view name) {
  std::set<std::u32string> out;
  std::u32string cur;
  for (char32_t c : lower_codepoints(name)) {
    if (unicode::is_letter(c) || unicode::is_number(c)) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.insert(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.insert(cur);
  return out;
}

inline std::size_t common_prefix(const std::u32string& a, const std::u32string& b) {
  std::size_t n = 0;
  while (n < a.size() && n < b.size() && a[n] == b[n]) ++n;
  return n;
}

}  // namespace detail

struct CandidateRules {
  std::size_t min_prefix = 4;
  double max_edit_distance = 0.4;  // normalized by the longer name
  std::size_t rare_records = 3;
  bool all_pairs = false;
};

inline bool names_similar(std::string_view a, std::string_view b, const CandidateRules& rules = {}) {
  auto ta = detail::name_tokens(a);
  auto tb = detail::name_tokens(b);
  for (const auto& t : ta) {
    if (tb.count(t)) return true;
  }
  auto la = detail::lower_codepoints(a);
  auto lb = detail::lower_codepoints(b);
  if (detail::common_prefix(la, lb) >= rules.min_prefix) return true;
  std::size_t longest = std::max(la.size(), lb.size());
  if (longest == 0) return true;
  return static_cast<double>(detail::levenshtein(la, lb)) / static_cast<double>(longest) <= rules.max_edit_distance;
}

// Pairs worth asking the model about, ordered by descending combined record
// count; ties keep corpus order. Each pair lists its names in corpus order.
inline std::vector<NamePair> candidate_pairs(const AnnotationCorpus& corpus, const CandidateRules& rules = {}) {
  const auto& entries = corpus.entries();
  struct Scored {
    std::size_t i, j, combined;
  };
  std::vector<Scored> scored;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (std::size_t j = i + 1; j < entries.size(); ++j) {
      const auto& a = entries[i];
      const auto& b = entries[j];
      bool take = rules.all_pairs || a.records.size() <= rules.rare_records || b.records.size() <= rules.rare_records ||
                  names_similar(a.character, b.character, rules);
      if (take) scored.push_back({i, j, a.records.size() + b.records.size()});
    }
  }
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& x, const Scored& y) { return x.combined > y.combined; });
  std::vector<NamePair> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.emplace_back(entries[s.i].character, entries[s.j].character);
  return out;
}

struct EvidenceOptions {
  int window = 3;                  // consecutive chunks per section, centered on an annotated chunk
  std::size_t token_cap = 12000;   // budget for the concatenated evidence
  std::string tokenizer_id = std::string(kBpeTokenizerId);
};

struct Evidence {
  std::vector<int> chunks;  // ascending
  std::string text;
};

namespace detail {

inline std::pair<int, int> section_bounds(int center, int window, int n) {
  int lo = center - (window - 1) / 2;
  int hi = center + window / 2;
  return {std::max(1, lo), std::min(n, hi)};
}

inline std::string evidence_text(const ChunkSet& chunks, const std::vector<int>& indices) {
  std::string out;
  for (int i : indices) {
    if (!out.empty()) out += "\n\n";
    out += "[Chunk " + std::to_string(i) + "]\n";
    out.append(chunks.at(i).body());
  }
  return out;
}

inline std::vector<int> union_of_sections(const std::vector<std::pair<int, int>>& sections) {
  std::set<int> idx;
  for (auto [lo, hi] : sections) {
    for (int c = lo; c <= hi; ++c) idx.insert(c);
  }
  return {idx.begin(), idx.end()};
}

}  // namespace detail

// Chunks where either name is annotated, each widened to a centered section
// of `window` chunks, merged and emitted in order. Over the token cap, whole
// sections are dropped starting with the one whose center chunk has the
// fewest annotations for the pair (later chunk first on ties); at least one
// section is always kept.
inline Evidence gather_evidence(const NamePair& pair, const AnnotationCorpus& corpus, const ChunkSet& chunks,
                                const EvidenceOptions& options = {}, Diagnostics* diag = nullptr) {
  if (options.window < 1) throw InvalidArgument("evidence window must be at least 1");
  std::map<int, std::size_t> per_chunk;
  for (const auto& name : {pair.first, pair.second}) {
    const auto* entry = corpus.find(name);
    if (entry == nullptr) throw InvalidArgument("unknown character '" + name + "'");
    for (const auto& a : entry->records) {
      if (chunks.has(a.chunk)) ++per_chunk[a.chunk];
    }
  }
  if (per_chunk.empty()) return {};

  const int n = static_cast<int>(chunks.size());
  struct Section {
    int center;
    std::size_t priority;
    std::pair<int, int> bounds;
  };
  std::vector<Section> sections;
  for (auto [c, count] : per_chunk) sections.push_back({c, count, detail::section_bounds(c, options.window, n)});

  // Drop order: fewest annotations first, later chunk first among equals.
  std::vector<Section> drop_order = sections;
  std::stable_sort(drop_order.begin(), drop_order.end(), [](const Section& x, const Section& y) {
    if (x.priority != y.priority) return x.priority < y.priority;
    return x.center > y.center;
  });

  auto tok = make_tokenizer(options.tokenizer_id);
  std::set<int> kept_centers;
  for (const auto& s : sections) kept_centers.insert(s.center);
  auto assemble = [&] {
    std::vector<std::pair<int, int>> bounds;
    for (const auto& s : sections) {
      if (kept_centers.count(s.center)) bounds.push_back(s.bounds);
    }
    Evidence ev;
    ev.chunks = detail::union_of_sections(bounds);
    ev.text = detail::evidence_text(chunks, ev.chunks);
    return ev;
  };

  Evidence ev = assemble();
  std::size_t next_drop = 0;
  while (tok->count(ev.text) > options.token_cap && kept_centers.size() > 1) {
    kept_centers.erase(drop_order[next_drop++].center);
    ev = assemble();
  }
  if (tok->count(ev.text) > options.token_cap) {
    warn(diag, "evidence for '" + pair.first + "' / '" + pair.second + "' exceeds the token cap even with one section");
  }
  return ev;
}

struct Verdict {
  bool same = false;
  bool parsed = false;  // false: no YES/NO even after the repair retry
  std::string rationale;
};

namespace detail {

inline std::vector<std::string> distinct_actions(const AnnotationCorpus& corpus, const std::string& name, std::size_t cap) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  if (const auto* e = corpus.find(name)) {
    for (const auto& a : e->records) {
      if (out.size() >= cap) break;
      if (seen.insert(a.action).second) out.push_back("(chunk " + std::to_string(a.chunk) + ") " + a.action);
    }
  }
  return out;
}

// YES/NO from the first word, ignoring leading markup.
inline std::optional<bool> parse_verdict(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size() && !std::isalpha(static_cast<unsigned char>(reply[i]))) {
    char c = reply[i];
    if (!(c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '*' || c == '"' || c == '\'' || c == '`' ||
          c == '_' || c == '#' || c == '>')) {
      return std::nullopt;
    }
    ++i;
  }
  std::size_t j = i;
  while (j < reply.size() && std::isalpha(static_cast<unsigned char>(reply[j]))) ++j;
  std::string word = ascii_lower(reply.substr(i, j - i));
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

}  // namespace detail

inline std::string build_confirmation_prompt(const NamePair& pair, const AnnotationCorpus& corpus,
                                             const Evidence& evidence, const std::vector<MergeSet>& confirmed) {
  std::string p;
  p += "Decide whether two character names in a narrative text refer to the same character.\n";
  p += "Names: \"" + pair.first + "\" and \"" + pair.second + "\"\n\n";
  for (const auto& name : {pair.first, pair.second}) {
    p += "Behaviors attributed to " + name + ":\n";
    for (const auto& a : detail::distinct_actions(corpus, name, 25)) p += "- " + a + "\n";
    p += "\n";
  }
  if (!confirmed.empty()) {
    p += "Already established in this run as the same character:\n";
    for (const auto& s : confirmed) {
      p += "-";
      for (const auto& n : s.names) p += " \"" + n + "\"";
      p += "\n";
    }
    p += "\n";
  }
  p += "Passages where these names occur:\n<<<\n" + evidence.text + "\n>>>\n\n";
  p += "If the behaviors attributed to one name can consistently be attributed to the other, the names are the "
       "same character. Start your answer with YES or NO, followed by a one-sentence reason.";
  return p;
}

// Asks the model; an answer without a leading YES/NO gets one repair retry
// and otherwise counts as NO.
inline Verdict confirm_pseudonym(const NamePair& pair, const AnnotationCorpus& corpus, const Evidence& evidence,
                                 CompletionBackend& backend, const std::vector<MergeSet>& confirmed = {},
                                 Diagnostics* diag = nullptr) {
  if (evidence.text.empty()) throw InvalidArgument("no evidence for '" + pair.first + "' / '" + pair.second + "'");
  std::string prompt = build_confirmation_prompt(pair, corpus, evidence, confirmed);
  std::string reply = backend.complete(prompt);
  auto v = detail::parse_verdict(reply);
  if (!v) {
    std::string repair = prompt + "\n\nYour previous answer did not start with YES or NO:\n<<<\n" + reply +
                         "\n>>>\nAnswer again, starting with exactly YES or NO.";
    reply = backend.complete(repair);
    v = detail::parse_verdict(reply);
  }
  if (!v) {
    warn(diag, "no YES/NO verdict for '" + pair.first + "' / '" + pair.second + "'; treated as NO");
    return Verdict{false, false, detail::trim(reply)};
  }
  return Verdict{*v, true, detail::trim(reply)};
}

// Canonical member: most records, then longest name, then lexicographically first.
inline std::string canonical_name(const std::vector<std::string>& names, const AnnotationCorpus& corpus) {
  if (names.empty()) throw InvalidArgument("empty merge set");
  auto records = [&](const std::string& n) {
    const auto* e = corpus.find(n);
    return e ? e->records.size() : 0;
  };
  auto length = [](const std::string& n) { return detail::lower_codepoints(n).size(); };
  return *std::min_element(names.begin(), names.end(), [&](const std::string& x, const std::string& y) {
    if (records(x) != records(y)) return records(x) > records(y);
    if (length(x) != length(y)) return length(x) > length(y);
    return x < y;
  });
}

// Groups of names (each with >= 2 members present in the corpus, overlapping
// groups joined) as MergeSets in corpus order.
inline std::vector<MergeSet> normalize_merge_sets(const std::vector<std::vector<std::string>>& groups,
                                                  const AnnotationCorpus& corpus) {
  const auto& entries = corpus.entries();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < entries.size(); ++i) index.emplace(entries[i].character, i);
  UnionFind uf(entries.size());
  std::vector<bool> member(entries.size(), false);
  for (const auto& g : groups) {
    std::optional<std::size_t> first;
    for (const auto& name : g) {
      auto it = index.find(name);
      if (it == index.end()) continue;
      member[it->second] = true;
      if (first) {
        uf.unite(*first, it->second);
      } else {
        first = it->second;
      }
    }
  }
  std::map<std::size_t, std::vector<std::string>> by_root;
  std::vector<std::size_t> root_order;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!member[i]) continue;
    auto r = uf.find(i);
    if (!by_root.count(r)) root_order.push_back(r);
    by_root[r].push_back(entries[i].character);
  }
  std::vector<MergeSet> out;
  for (auto r : root_order) {
    auto& names = by_root[r];
    if (names.size() < 2) continue;
    out.push_back(MergeSet{names, canonical_name(names, corpus)});
  }
  return out;
}

// Merges every set under its canonical name. The merged entry takes the place
// of the earliest member; records are concatenated in corpus order and then
// stably ordered by chunk. Names absent from the corpus are ignored, so
// applying the same sets twice changes nothing.
inline AnnotationCorpus apply_merges(const AnnotationCorpus& corpus, const std::vector<std::vector<std::string>>& groups,
                                     Diagnostics* diag = nullptr) {
  for (const auto& g : groups) {
    for (const auto& name : g) {
      if (!corpus.contains(name)) warn(diag, "merge list name '" + name + "' is not in the corpus; ignored");
    }
  }
  auto sets = normalize_merge_sets(groups, corpus);
  std::unordered_map<std::string, const MergeSet*> owner;
  for (const auto& s : sets) {
    for (const auto& n : s.names) owner.emplace(n, &s);
  }
  AnnotationCorpus out;
  std::set<const MergeSet*> done;
  for (const auto& e : corpus.entries()) {
    auto it = owner.find(e.character);
    if (it == owner.end()) {
      out.entry_for(e.character);
      for (const auto& a : e.records) out.add(a);
      continue;
    }
    const MergeSet* s = it->second;
    if (!done.insert(s).second) continue;
    std::vector<Annotation> merged;
    for (const auto& n : s->names) {
      for (auto a : corpus.find(n)->records) {
        a.character = s->canonical;
        merged.push_back(std::move(a));
      }
    }
    std::stable_sort(merged.begin(), merged.end(), [](const Annotation& x, const Annotation& y) { return x.chunk < y.chunk; });
    out.entry_for(s->canonical);
    for (auto& a : merged) out.add(std::move(a));
  }
  return out;
}

// Merge-list file: [["Homer", "Homer Simpson"], ["Wiggum", "Police chief"]]
inline std::vector<std::vector<std::string>> parse_merge_lists(std::string_view bytes) {
  auto doc = detail::parse_json(bytes, "merge list file");
  if (!doc.is_array()) throw SchemaError("merge list file: top level must be a list of name lists");
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& g = doc[i];
    if (!g.is_array() || g.size() < 2) throw SchemaError("merge list " + std::to_string(i) + ": needs at least two names");
    std::vector<std::string> names;
    for (const auto& n : g) {
      if (!n.is_string() || n.get<std::string>().empty()) {
        throw SchemaError("merge list " + std::to_string(i) + ": names must be non-empty strings");
      }
      names.push_back(n.get<std::string>());
    }
    out.push_back(std::move(names));
  }
  return out;
}

struct PairDecision {
  NamePair pair;
  std::vector<int> evidence_chunks;
  Verdict verdict;
};

struct MergeProposal {
  std::vector<MergeSet> merge_sets;
  std::vector<PairDecision> decisions;  // empty when user merge lists were given
};

// Console form: one line per set, names quoted.
inline std::string format_proposal(const std::vector<MergeSet>& sets) {
  std::string out = "Initial pseudonym lists from AI:\n";
  for (const auto& s : sets) {
    for (std::size_t i = 0; i < s.names.size(); ++i) out += (i ? " \"" : "\"") + s.names[i] + "\"";
    out += "\n";
  }
  return out;
}

inline std::string serialize_proposal(const MergeProposal& proposal) {
  ordered_json doc;
  ordered_json sets = ordered_json::array();
  for (const auto& s : proposal.merge_sets) sets.push_back({{"canonical", s.canonical}, {"names", s.names}});
  doc["merge_sets"] = std::move(sets);
  ordered_json decisions = ordered_json::array();
  for (const auto& d : proposal.decisions) {
    decisions.push_back({{"names", {d.pair.first, d.pair.second}},
                         {"evidence_chunks", d.evidence_chunks},
                         {"same_character", d.verdict.same},
                         {"verdict_parsed", d.verdict.parsed},
                         {"rationale", d.verdict.rationale}});
  }
  doc["decisions"] = std::move(decisions);
  return detail::dump_json(doc) + "\n";
}

struct DisambiguateOptions {
  CandidateRules candidates;
  EvidenceOptions evidence;
};

struct DisambiguationResult {
  AnnotationCorpus corpus;
  MergeProposal proposal;
};

// With user merge lists, exactly those merges are applied and the backend is
// never called; every listed name must exist. Otherwise candidate pairs are
// confirmed one by one (pairs already joined are not asked again) and the
// confirmed graph's components become the merge sets.
inline DisambiguationResult disambiguate(const AnnotationCorpus& corpus, const ChunkSet& chunks,
                                         CompletionBackend* backend,
                                         const std::optional<std::vector<std::vector<std::string>>>& user_merge_sets,
                                         const DisambiguateOptions& options = {}, Diagnostics* diag = nullptr) {
  DisambiguationResult result;
  if (user_merge_sets) {
    std::vector<std::string> unknown;
    for (const auto& g : *user_merge_sets) {
      for (const auto& n : g) {
        if (!corpus.contains(n) && std::find(unknown.begin(), unknown.end(), n) == unknown.end()) unknown.push_back(n);
      }
    }
    if (!unknown.empty()) {
      std::string list;
      for (const auto& n : unknown) list += (list.empty() ? "'" : ", '") + n + "'";
      throw InvalidArgument("merge lists name characters not in the annotations: " + list);
    }
    result.proposal.merge_sets = normalize_merge_sets(*user_merge_sets, corpus);
    result.corpus = apply_merges(corpus, *user_merge_sets, diag);
    return result;
  }

  const auto& entries = corpus.entries();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < entries.size(); ++i) index.emplace(entries[i].character, i);
  UnionFind uf(entries.size());
  std::vector<std::vector<std::string>> confirmed_pairs;

  for (const auto& pair : candidate_pairs(corpus, options.candidates)) {
    if (uf.find(index[pair.first]) == uf.find(index[pair.second])) continue;
    if (backend == nullptr) throw InvalidArgument("a backend is required when no merge lists are given");
    Evidence ev = gather_evidence(pair, corpus, chunks, options.evidence, diag);
    if (ev.text.empty()) {
      warn(diag, "no chunk text for '" + pair.first + "' / '" + pair.second + "'; pair skipped");
      continue;
    }
    auto memory = normalize_merge_sets(confirmed_pairs, corpus);
    Verdict v = confirm_pseudonym(pair, corpus, ev, *backend, memory, diag);
    result.proposal.decisions.push_back({pair, ev.chunks, v});
    if (v.same) {
      uf.unite(index[pair.first], index[pair.second]);
      confirmed_pairs.push_back({pair.first, pair.second});
    }
  }
  result.proposal.merge_sets = normalize_merge_sets(confirmed_pairs, corpus);
  std::vector<std::vector<std::string>> groups;
  for (const auto& s : result.proposal.merge_sets) groups.push_back(s.names);
  result.corpus = apply_merges(corpus, groups, diag);
  return result;
}

}  // namespace charannot
