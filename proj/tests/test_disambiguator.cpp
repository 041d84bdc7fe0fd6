#include <catch_amalgamated.hpp>

#include <mutex>
#include <queue>
#include <random>
#include <set>

#include "charannot/disambiguator.hpp"
#include "support/generators.hpp"

using namespace charannot;

namespace {

void add_records(AnnotationCorpus& corpus, const std::string& name, int count, int chunk = 1) {
  for (int i = 0; i < count; ++i) corpus.add({name, name + " action " + std::to_string(i), "trait", 1, chunk});
}

ChunkSet plain_chunks(int n, std::size_t words_each = 5) {
  std::vector<Chunk> chunks;
  for (int i = 1; i <= n; ++i) {
    std::string text;
    for (std::size_t w = 0; w < words_each; ++w) text += "word" + std::to_string(i) + " ";
    chunks.push_back(Chunk{text, 0});
  }
  return ChunkSet(std::move(chunks), ChunkMeta{});
}

bool has_pair(const std::vector<NamePair>& pairs, const std::string& a, const std::string& b) {
  for (const auto& p : pairs) {
    if ((p.first == a && p.second == b) || (p.first == b && p.second == a)) return true;
  }
  return false;
}

// Answers YES exactly for pairs in `edges`, reading the names from the prompt.
class GraphOracle : public CompletionBackend {
 public:
  explicit GraphOracle(std::set<std::pair<std::string, std::string>> edges) : edges_(std::move(edges)) {}

  std::string complete(const std::string& prompt) override {
    std::lock_guard lock(mu_);
    ++calls_;
    auto line_start = prompt.find("Names: \"");
    auto a_begin = line_start + 8;
    auto a_end = prompt.find('"', a_begin);
    auto b_begin = prompt.find('"', a_end + 1) + 1;
    auto b_end = prompt.find('"', b_begin);
    std::string a = prompt.substr(a_begin, a_end - a_begin);
    std::string b = prompt.substr(b_begin, b_end - b_begin);
    bool yes = edges_.count({a, b}) || edges_.count({b, a});
    return yes ? "YES, consistent." : "NO, different people.";
  }
  std::string id() const override { return "graph-oracle"; }
  std::size_t call_count() const override { return calls_; }

 private:
  std::mutex mu_;
  std::set<std::pair<std::string, std::string>> edges_;
  std::size_t calls_ = 0;
};

// Connected components of size >= 2, by breadth-first search.
std::set<std::set<std::string>> bfs_components(const std::vector<std::string>& nodes,
                                               const std::set<std::pair<std::string, std::string>>& edges) {
  std::set<std::string> seen;
  std::set<std::set<std::string>> out;
  for (const auto& start : nodes) {
    if (seen.count(start)) continue;
    std::set<std::string> comp;
    std::queue<std::string> q;
    q.push(start);
    seen.insert(start);
    while (!q.empty()) {
      auto cur = q.front();
      q.pop();
      comp.insert(cur);
      for (const auto& [a, b] : edges) {
        std::string other;
        if (a == cur) other = b;
        if (b == cur) other = a;
        if (!other.empty() && !seen.count(other)) {
          seen.insert(other);
          q.push(other);
        }
      }
    }
    if (comp.size() >= 2) out.insert(comp);
  }
  return out;
}

std::set<std::set<std::string>> as_sets(const std::vector<MergeSet>& sets) {
  std::set<std::set<std::string>> out;
  for (const auto& s : sets) out.insert(std::set<std::string>(s.names.begin(), s.names.end()));
  return out;
}

}  // namespace

TEST_CASE("shared surname produces candidate pairs", "[candidates]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Homer", 5);
  add_records(corpus, "Homer Simpson", 6);
  add_records(corpus, "Marge Simpson", 7);
  auto pairs = candidate_pairs(corpus);
  CHECK(has_pair(pairs, "Homer", "Homer Simpson"));
  CHECK(has_pair(pairs, "Homer Simpson", "Marge Simpson"));
  CHECK_FALSE(has_pair(pairs, "Homer", "Marge Simpson"));
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == NamePair{"Homer Simpson", "Marge Simpson"});  // 13 records before 11
}

TEST_CASE("single character has no pairs", "[candidates]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Lisa Simpson", 2);
  CHECK(candidate_pairs(corpus).empty());
  CHECK(candidate_pairs(AnnotationCorpus{}).empty());
}

TEST_CASE("rare names pair with everyone", "[candidates]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Jane Bennet", 40);
  add_records(corpus, "Miss Bennet", 3);
  add_records(corpus, "Fitzwilliam Darcy", 30);
  add_records(corpus, "Charlotte Lucas", 10);
  auto pairs = candidate_pairs(corpus);
  CHECK(has_pair(pairs, "Jane Bennet", "Miss Bennet"));
  CHECK(has_pair(pairs, "Miss Bennet", "Fitzwilliam Darcy"));
  CHECK_FALSE(has_pair(pairs, "Jane Bennet", "Fitzwilliam Darcy"));
  CHECK_FALSE(has_pair(pairs, "Charlotte Lucas", "Fitzwilliam Darcy"));
  CandidateRules all;
  all.all_pairs = true;
  CHECK(candidate_pairs(corpus, all).size() == 6);
}

TEST_CASE("prefix and edit-distance similarity", "[candidates]") {
  CHECK(names_similar("Elizabeth", "Elizabeth Bennet"));
  CHECK(names_similar("Lizzy", "Lizzie"));    // distance 2 of 6
  CHECK(names_similar("Wickham", "Wickam"));  // prefix
  CHECK(names_similar("mr. darcy", "Mr Darcy"));
  CHECK_FALSE(names_similar("Wiggum", "Police chief"));
  CHECK_FALSE(names_similar("Itchy", "Scratchy"));  // 5 edits of 8
}

TEST_CASE("evidence sections are centered windows", "[evidence]") {
  auto chunks = plain_chunks(10);
  AnnotationCorpus corpus;
  add_records(corpus, "A", 1, 5);
  add_records(corpus, "B", 2, 5);
  EvidenceOptions opt;
  opt.tokenizer_id = "approx-bytes4";
  auto ev = gather_evidence({"A", "B"}, corpus, chunks, opt);
  CHECK(ev.chunks == std::vector<int>{4, 5, 6});
  CHECK_THAT(ev.text, Catch::Matchers::StartsWith("[Chunk 4]\n"));

  AnnotationCorpus edges;
  add_records(edges, "A", 1, 1);
  add_records(edges, "B", 1, 2);
  opt.window = 1;
  auto ev2 = gather_evidence({"A", "B"}, edges, chunks, opt);
  CHECK(ev2.chunks == std::vector<int>{1, 2});
  CHECK(ev2.text.find("[Chunk 2]") == ev2.text.rfind("[Chunk 2]"));

  opt.window = 4;  // even window leans forward: c-1 .. c+2
  auto ev3 = gather_evidence({"A", "B"}, corpus, chunks, opt);
  CHECK(ev3.chunks == std::vector<int>{4, 5, 6, 7});
  opt.window = 3;
  AnnotationCorpus last;
  add_records(last, "A", 1, 10);
  add_records(last, "B", 1, 10);
  CHECK(gather_evidence({"A", "B"}, last, chunks, opt).chunks == std::vector<int>{9, 10});
  CHECK_THROWS_AS(gather_evidence({"A", "Z"}, last, chunks, opt), InvalidArgument);
}

TEST_CASE("evidence cap drops the lowest-priority sections", "[evidence][property]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 3 + static_cast<int>(rng() % 20);
    auto chunks = plain_chunks(n, 1 + rng() % 6);
    AnnotationCorpus corpus;
    std::map<int, int> counts;
    int annotated = 1 + static_cast<int>(rng() % 6);
    for (int k = 0; k < annotated; ++k) {
      int c = 1 + static_cast<int>(rng() % static_cast<unsigned>(n));
      int recs = 1 + static_cast<int>(rng() % 4);
      add_records(corpus, k % 2 ? "A" : "B", recs, c);
      counts[c] += recs;
    }
    if (!corpus.contains("A")) add_records(corpus, "A", 1, 1), counts[1] += 1;
    if (!corpus.contains("B")) add_records(corpus, "B", 1, 1), counts[1] += 1;

    EvidenceOptions opt;
    opt.tokenizer_id = "approx-bytes4";
    opt.window = 1 + static_cast<int>(rng() % 4);
    opt.token_cap = 5 + rng() % 120;
    auto ev = gather_evidence({"A", "B"}, corpus, chunks, opt);

    // Oracle: rank centers by (count ascending, index descending), drop in
    // that order while over the cap, never the last one.
    std::vector<std::pair<int, int>> ranked;  // (count, center)
    for (auto [c, k] : counts) ranked.push_back({k, c});
    std::sort(ranked.begin(), ranked.end(), [](auto x, auto y) { return x.first != y.first ? x.first < y.first : x.second > y.second; });
    std::set<int> kept;
    for (auto [k, c] : ranked) kept.insert(c);
    auto expand = [&](const std::set<int>& centers) {
      std::set<int> out;
      for (int c : centers) {
        for (int i = std::max(1, c - (opt.window - 1) / 2); i <= std::min(n, c + opt.window / 2); ++i) out.insert(i);
      }
      return std::vector<int>(out.begin(), out.end());
    };
    auto tokens = [&](const std::vector<int>& idx) {
      std::size_t bytes = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (i) bytes += 2;
        bytes += ("[Chunk " + std::to_string(idx[i]) + "]\n").size() + chunks.at(idx[i]).text.size();
      }
      return (bytes + 3) / 4;
    };
    std::size_t next = 0;
    while (tokens(expand(kept)) > opt.token_cap && kept.size() > 1) kept.erase(ranked[next++].second);
    INFO("trial " << trial);
    REQUIRE(ev.chunks == expand(kept));
  }
}

TEST_CASE("verdict parsing", "[confirm]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Jane Bennet", 4, 1);
  add_records(corpus, "Miss Bennet", 3, 1);
  auto chunks = plain_chunks(2);
  Evidence ev = gather_evidence({"Jane Bennet", "Miss Bennet"}, corpus, chunks);

  SECTION("yes with rationale") {
    ScriptedMock mock(std::vector<ScriptedMock::Entry>{{std::nullopt, "YES, Miss Bennet's three actions all describe Jane."}});
    auto v = confirm_pseudonym({"Jane Bennet", "Miss Bennet"}, corpus, ev, mock);
    CHECK(v.same);
    CHECK(v.parsed);
    CHECK_THAT(v.rationale, Catch::Matchers::ContainsSubstring("all describe Jane"));
    CHECK(mock.call_count() == 1);
    auto prompt = mock.transcript()[0].first;
    CHECK_THAT(prompt, Catch::Matchers::ContainsSubstring("Names: \"Jane Bennet\" and \"Miss Bennet\""));
    CHECK_THAT(prompt, Catch::Matchers::ContainsSubstring("Miss Bennet action 2"));
    CHECK_THAT(prompt, Catch::Matchers::ContainsSubstring("word1"));
  }
  SECTION("plain no") {
    ScriptedMock mock(std::vector<ScriptedMock::Entry>{{std::nullopt, "NO"}});
    CHECK_FALSE(confirm_pseudonym({"Jane Bennet", "Miss Bennet"}, corpus, ev, mock).same);
  }
  SECTION("markdown and case") {
    ScriptedMock mock(std::vector<ScriptedMock::Entry>{{std::nullopt, "**Yes** they match"}, {std::nullopt, "  \"no.\""}});
    CHECK(confirm_pseudonym({"Jane Bennet", "Miss Bennet"}, corpus, ev, mock).same);
    CHECK_FALSE(confirm_pseudonym({"Jane Bennet", "Miss Bennet"}, corpus, ev, mock).same);
  }
  SECTION("gibberish twice is a logged NO") {
    ScriptedMock mock(std::vector<ScriptedMock::Entry>{{std::nullopt, "Perhaps?"}, {std::nullopt, "Yesterday, maybe."}});
    Diagnostics diag;
    auto v = confirm_pseudonym({"Jane Bennet", "Miss Bennet"}, corpus, ev, mock, {}, &diag);
    CHECK_FALSE(v.same);
    CHECK_FALSE(v.parsed);
    CHECK(mock.call_count() == 2);
    CHECK(diag.warnings.size() == 1);
  }
  SECTION("gibberish then yes") {
    ScriptedMock mock(std::vector<ScriptedMock::Entry>{{std::nullopt, "Hmm."}, {std::nullopt, "YES"}});
    CHECK(confirm_pseudonym({"Jane Bennet", "Miss Bennet"}, corpus, ev, mock).same);
    CHECK_THAT(mock.transcript()[1].first, Catch::Matchers::ContainsSubstring("did not start with YES or NO"));
  }
}

TEST_CASE("canonical name rule", "[merge]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Homer", 5);
  add_records(corpus, "Homer Simpson", 5);
  add_records(corpus, "Homer J", 7);
  add_records(corpus, "Abe", 2);
  add_records(corpus, "Bea", 2);
  CHECK(canonical_name({"Homer", "Homer Simpson"}, corpus) == "Homer Simpson");
  CHECK(canonical_name({"Homer", "Homer Simpson", "Homer J"}, corpus) == "Homer J");
  CHECK(canonical_name({"Bea", "Abe"}, corpus) == "Abe");
}

TEST_CASE("user merge lists skip the model entirely", "[disambiguate]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Homer", 2, 3);
  add_records(corpus, "Wiggum", 1, 1);
  add_records(corpus, "Homer Simpson", 5, 1);
  add_records(corpus, "Police chief", 2, 2);
  add_records(corpus, "Itchy", 2, 1);
  add_records(corpus, "Scratchy", 2, 1);
  auto chunks = plain_chunks(3);
  ScriptedMock mock(std::vector<ScriptedMock::Entry>{{std::string("*"), "YES"}});

  auto result = disambiguate(corpus, chunks, &mock,
                             std::vector<std::vector<std::string>>{{"Homer", "Homer Simpson"}, {"Wiggum", "Police chief"}});
  CHECK(mock.call_count() == 0);
  const auto& out = result.corpus;
  CHECK(out.total() == corpus.total());
  CHECK_FALSE(out.contains("Homer"));
  REQUIRE(out.contains("Homer Simpson"));
  CHECK(out.find("Homer Simpson")->records.size() == 7);
  CHECK(out.find("Police chief")->records.size() == 3);
  // Itchy and Scratchy stay apart when the user leaves them out.
  CHECK(out.find("Itchy")->records.size() == 2);
  CHECK(out.find("Scratchy")->records.size() == 2);

  // Merged entry sits where its earliest member was; records ordered by chunk.
  CHECK(out.entries()[0].character == "Homer Simpson");
  CHECK(out.entries()[1].character == "Police chief");
  std::vector<int> order;
  for (const auto& a : out.find("Homer Simpson")->records) order.push_back(a.chunk);
  CHECK(order == std::vector<int>{1, 1, 1, 1, 1, 3, 3});
  for (const auto& a : out.find("Homer Simpson")->records) CHECK(a.character == "Homer Simpson");
}

TEST_CASE("unknown names in user merge lists are errors", "[disambiguate]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Homer", 2);
  ScriptedMock mock;
  CHECK_THROWS_WITH(disambiguate(corpus, plain_chunks(1), &mock,
                                 std::vector<std::vector<std::string>>{{"Homer", "Homer Simpsn"}, {"Ned", "Homer"}}),
                    Catch::Matchers::ContainsSubstring("'Homer Simpsn', 'Ned'"));
  CHECK(mock.call_count() == 0);
}

TEST_CASE("no candidates leaves the corpus unchanged", "[disambiguate]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Itchy", 5);
  add_records(corpus, "Marge Simpson", 5);
  add_records(corpus, "Krusty", 4);
  ScriptedMock mock;
  auto result = disambiguate(corpus, plain_chunks(1), &mock, std::nullopt);
  CHECK(result.corpus == corpus);
  CHECK(serialize_corpus(result.corpus) == serialize_corpus(corpus));
  CHECK(result.proposal.merge_sets.empty());
  CHECK(mock.call_count() == 0);
}

TEST_CASE("confirmations close transitively", "[disambiguate]") {
  AnnotationCorpus corpus;
  add_records(corpus, "A Smith", 4, 1);
  add_records(corpus, "B Smith", 5, 2);
  add_records(corpus, "C Smith", 6, 3);
  GraphOracle oracle({{"A Smith", "B Smith"}, {"B Smith", "C Smith"}});
  auto result = disambiguate(corpus, plain_chunks(3), &oracle, std::nullopt);
  REQUIRE(result.proposal.merge_sets.size() == 1);
  CHECK(result.proposal.merge_sets[0].names == std::vector<std::string>{"A Smith", "B Smith", "C Smith"});
  CHECK(result.proposal.merge_sets[0].canonical == "C Smith");
  CHECK(result.corpus.character_count() == 1);
  // Asked in order (B,C), (A,C), (A,B); the NO for (A,C) is overridden by closure.
  CHECK(oracle.call_count() == 3);
  CHECK(format_proposal(result.proposal.merge_sets) == "Initial pseudonym lists from AI:\n\"A Smith\" \"B Smith\" \"C Smith\"\n");
}

TEST_CASE("merge sets equal confirmation-graph components", "[disambiguate][property]") {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 60; ++trial) {
    int k = 2 + static_cast<int>(rng() % 9);
    int n_chunks = 1 + static_cast<int>(rng() % 6);
    AnnotationCorpus corpus;
    std::vector<std::string> names;
    for (int i = 0; i < k; ++i) {
      names.push_back("Name" + std::to_string(i));
      add_records(corpus, names.back(), 1 + static_cast<int>(rng() % 6), 1 + static_cast<int>(rng() % static_cast<unsigned>(n_chunks)));
    }
    std::set<std::pair<std::string, std::string>> edges;
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) {
        if (rng() % 4 == 0) edges.insert({names[i], names[j]});
      }
    }
    DisambiguateOptions opt;
    opt.candidates.all_pairs = true;
    opt.evidence.tokenizer_id = "approx-bytes4";
    auto chunks = plain_chunks(n_chunks);
    GraphOracle oracle(edges);
    auto result = disambiguate(corpus, chunks, &oracle, std::nullopt, opt);
    INFO("trial " << trial);
    REQUIRE(as_sets(result.proposal.merge_sets) == bfs_components(names, edges));
    REQUIRE(result.corpus.total() == corpus.total());
    for (const auto& s : result.proposal.merge_sets) REQUIRE(s.canonical == canonical_name(s.names, corpus));

    // Idempotence: same decisions on the refined corpus change nothing.
    GraphOracle again(edges);
    auto second = disambiguate(result.corpus, chunks, &again, std::nullopt, opt);
    REQUIRE(second.corpus == result.corpus);
    REQUIRE(second.proposal.merge_sets.empty());
  }
}

TEST_CASE("apply_merges conserves records and is idempotent", "[merge][property]") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto corpus = testing::random_corpus(rng, 2 + static_cast<int>(rng() % 8), 6);
    std::vector<std::vector<std::string>> groups;
    const auto& e = corpus.entries();
    for (int g = 0; g < 3; ++g) {
      std::vector<std::string> names;
      for (int m = 0; m < 2 + static_cast<int>(rng() % 2); ++m) names.push_back(e[rng() % e.size()].character);
      groups.push_back(names);
    }
    groups.push_back({"Nobody", "Noone"});
    Diagnostics diag;
    auto once = apply_merges(corpus, groups, &diag);
    REQUIRE(once.total() == corpus.total());
    REQUIRE(apply_merges(once, groups) == once);
    REQUIRE(diag.warnings.size() >= 2);
    // Round-trips through the annotation file format.
    REQUIRE(parse_corpus(serialize_corpus(once)) == once);
  }
}

TEST_CASE("merge list file parsing", "[merge]") {
  auto lists = parse_merge_lists(R"([["Homer", "Homer Simpson"], ["Wiggum", "Police chief"]])");
  REQUIRE(lists.size() == 2);
  CHECK(lists[1] == std::vector<std::string>{"Wiggum", "Police chief"});
  CHECK_THROWS_AS(parse_merge_lists(R"([["Solo"]])"), SchemaError);
  CHECK_THROWS_AS(parse_merge_lists(R"({"a": 1})"), SchemaError);
  CHECK_THROWS_AS(parse_merge_lists(R"([["a", 3]])"), SchemaError);
  CHECK_THROWS_AS(parse_merge_lists("[[\"a\""), ParseError);
}

TEST_CASE("proposal file lists decisions", "[disambiguate]") {
  AnnotationCorpus corpus;
  add_records(corpus, "Itchy", 2, 1);
  add_records(corpus, "Scratchy", 2, 1);
  add_records(corpus, "Homer", 1, 2);
  add_records(corpus, "Homer Simpson", 4, 2);
  GraphOracle oracle({{"Homer", "Homer Simpson"}, {"Itchy", "Scratchy"}});
  auto result = disambiguate(corpus, plain_chunks(2), &oracle, std::nullopt);
  CHECK(format_proposal(result.proposal.merge_sets) ==
        "Initial pseudonym lists from AI:\n\"Itchy\" \"Scratchy\"\n\"Homer\" \"Homer Simpson\"\n");
  auto doc = nlohmann::json::parse(serialize_proposal(result.proposal));
  CHECK(doc["merge_sets"].size() == 2);
  CHECK(doc["merge_sets"][1]["canonical"] == "Homer Simpson");
  CHECK(doc["decisions"].size() == result.proposal.decisions.size());

  // The reviewer rejects Itchy/Scratchy by re-running with explicit lists.
  ScriptedMock mock;
  auto rerun = disambiguate(corpus, plain_chunks(2), &mock, std::vector<std::vector<std::string>>{{"Homer", "Homer Simpson"}});
  CHECK(mock.call_count() == 0);
  CHECK(rerun.corpus.contains("Itchy"));
  CHECK(rerun.corpus.contains("Scratchy"));
  CHECK_FALSE(rerun.corpus.contains("Homer"));
}
