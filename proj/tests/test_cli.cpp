#include <catch_amalgamated.hpp>

#include <json.hpp>

#include <sstream>

#include "charannot/cli.hpp"
#include "support/test_data.hpp"

using namespace charannot;
using Catch::Matchers::ContainsSubstring;
using json = nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "charannot");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string pipeline(const std::string& name) { return testing::data_path("pipeline/" + name).string(); }

json manifest(const std::filesystem::path& p) { return json::parse(read_file(cli::manifest_path(p))); }

// chunk -> annotate -> disambiguate -> stats under the scripted mock.
void run_pipeline(const testing::TempDir& dir) {
  const auto c = (dir / "chunks.json").string();
  const auto a = (dir / "ann.json").string();
  const auto d = (dir / "merged.json").string();
  const auto s = (dir / "stats.json").string();
  REQUIRE(invoke({"chunk", "--in", pipeline("story.txt"), "--out", c, "--target-tokens", "80", "--context-sentences", "1"}).code == 0);
  REQUIRE(invoke({"annotate", "--chunks", c, "--out", a, "--backend", "mock", "--mock-script", pipeline("mock_script.json")}).code == 0);
  REQUIRE(invoke({"disambiguate", "--annotations", a, "--chunks", c, "--out", d, "--backend", "mock", "--mock-script",
               pipeline("mock_script.json")})
              .code == 0);
  REQUIRE(invoke({"stats", "--annotations", d, "--out", s, "--plot", (dir / "plot.svg").string()}).code == 0);
}

}  // namespace

TEST_CASE("sha256 digests", "[manifest]") {
  CHECK(cli::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(cli::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("version and usage errors", "[usage]") {
  auto v = invoke({"--version"});
  CHECK(v.code == 0);
  CHECK_THAT(v.out, ContainsSubstring("0.1.0"));
  CHECK_THAT(v.out, ContainsSubstring("cl100k_base-compatible"));

  CHECK(invoke({}).code == 1);
  CHECK(invoke({"frobnicate"}).code == 1);
  CHECK(invoke({"chunk", "--in", "x.txt"}).code == 1);
  CHECK(invoke({"chunk", "--in", "x.txt", "--out", "y.json", "--bogus"}).code == 1);
  CHECK(invoke({"annotate", "--chunks", "c", "--out", "o", "--backend", "carrier-pigeon"}).code == 1);
  CHECK(invoke({"analyze"}).code == 1);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("runtime errors exit 2 and name the file", "[errors]") {
  testing::TempDir dir("cli_err");
  auto r = invoke({"annotate", "--chunks", (dir / "missing.json").string(), "--out", (dir / "a.json").string()});
  CHECK(r.code == 2);
  CHECK_THAT(r.err, ContainsSubstring("missing.json"));
  CHECK_FALSE(std::filesystem::exists(dir / "a.json"));

  auto m = invoke({"annotate", "--chunks", pipeline("story.txt"), "--out", (dir / "a.json").string(), "--backend", "mock"});
  CHECK(m.code == 2);
}

TEST_CASE("chunk writes outputs, meta sidecar and manifests", "[chunk]") {
  testing::TempDir dir("cli_chunk");
  const auto out = dir / "chunks.json";
  auto r = invoke({"chunk", "--in", pipeline("story.txt"), "--out", out.string(), "--target-tokens", "80"});
  REQUIRE(r.code == 0);
  CHECK(r.out.empty());
  REQUIRE(std::filesystem::exists(out));
  REQUIRE(std::filesystem::exists(cli::chunk_meta_path(out)));
  auto set = parse_chunk_file(read_file(out), read_file(cli::chunk_meta_path(out)));
  CHECK(reconstruct(set) == read_file(pipeline("story.txt")));

  auto m = manifest(out);
  CHECK(m["subcommand"] == "chunk");
  CHECK(m["tokenizer_id"] == "cl100k_base-compatible");
  CHECK(m["config"]["target-tokens"] == "80");
  CHECK(m["config"]["context-sentences"] == "3");
  REQUIRE(m["inputs"].size() == 1);
  CHECK(m["inputs"][0]["sha256"] == cli::sha256_hex(read_file(pipeline("story.txt"))));
  CHECK(m["outputs"][0]["sha256"] == cli::sha256_hex(read_file(out)));
  CHECK(m.contains("timestamp"));
  CHECK(manifest(cli::chunk_meta_path(out)) == m);
}

TEST_CASE("config files: JSON, TOML, flags win, unknown keys rejected", "[config]") {
  testing::TempDir dir("cli_config");
  const auto js = dir / "cfg.json";
  write_file_atomic(js, R"({"chunk": {"target_tokens": 50, "context-sentences": 0}})");
  const auto toml = dir / "cfg.toml";
  write_file_atomic(toml, "[chunk]\ntarget-tokens = 50\ncontext_sentences = 0\n");

  for (const auto& cfg : {js, toml}) {
    const auto out = dir / ("c_" + cfg.extension().string().substr(1) + ".json");
    REQUIRE(invoke({"--config", cfg.string(), "chunk", "--in", pipeline("story.txt"), "--out", out.string()}).code == 0);
    auto m = manifest(out);
    CHECK(m["config"]["target-tokens"] == "50");
    CHECK(m["config"]["context-sentences"] == "0");

    const auto over = dir / "override.json";
    REQUIRE(invoke({"--config", cfg.string(), "chunk", "--in", pipeline("story.txt"), "--out", over.string(),
                 "--target-tokens", "200"})
                .code == 0);
    CHECK(manifest(over)["config"]["target-tokens"] == "200");
  }

  const auto bad = dir / "bad.json";
  write_file_atomic(bad, R"({"chunk": {"target_tokenz": 50}})");
  CHECK(invoke({"--config", bad.string(), "chunk", "--in", pipeline("story.txt"), "--out", (dir / "x.json").string()}).code == 1);
  write_file_atomic(bad, "{not json");
  CHECK(invoke({"--config", bad.string(), "chunk", "--in", pipeline("story.txt"), "--out", (dir / "x.json").string()}).code == 1);
}

TEST_CASE("mock pipeline is byte-deterministic", "[pipeline]") {
  testing::TempDir one("cli_pipe1");
  testing::TempDir two("cli_pipe2");
  run_pipeline(one);
  run_pipeline(two);
  for (const char* f : {"chunks.json", "chunks.json.meta.json", "ann.json", "merged.json", "merged.json.proposal.json",
                        "stats.json", "plot.svg"}) {
    INFO(f);
    CHECK(read_file(one / f) == read_file(two / f));
  }
  auto merged = parse_corpus(read_file(one / "merged.json"));
  CHECK(merged.character_count() == 4);
  CHECK(merged.contains("Homer"));
  CHECK_FALSE(merged.contains("Homer Simpson"));
  auto m = manifest(one / "merged.json");
  CHECK(m["backend"] == "mock");
  CHECK(m["backend_calls"].get<int>() > 0);
  CHECK(m["inputs"].size() == 4);  // annotations, chunks, chunk meta, mock script
}

TEST_CASE("user merge lists skip the backend", "[pipeline]") {
  testing::TempDir dir("cli_merge");
  run_pipeline(dir);
  const auto out = dir / "user.json";
  auto r = invoke({"disambiguate", "--annotations", (dir / "ann.json").string(), "--chunks", (dir / "chunks.json").string(),
                "--out", out.string(), "--merge-lists", pipeline("merge_lists.json"), "--backend", "mock", "--mock-script",
                pipeline("mock_script.json")});
  REQUIRE(r.code == 0);
  CHECK_THAT(r.err, ContainsSubstring("backend calls: 0"));
  CHECK(manifest(out)["backend_calls"] == 0);
  CHECK(read_file(out) == read_file(dir / "merged.json"));

  // No backend at all is fine too.
  auto r2 = invoke({"disambiguate", "--annotations", (dir / "ann.json").string(), "--chunks", (dir / "chunks.json").string(),
                 "--out", (dir / "user2.json").string(), "--merge-lists", pipeline("merge_lists.json")});
  REQUIRE(r2.code == 0);
  CHECK(manifest(dir / "user2.json")["backend"].is_null());

  write_file_atomic(dir / "typo.json", R"([["Homer", "Homr"]])");
  auto r3 = invoke({"disambiguate", "--annotations", (dir / "ann.json").string(), "--chunks", (dir / "chunks.json").string(),
                 "--out", (dir / "user3.json").string(), "--merge-lists", (dir / "typo.json").string()});
  CHECK(r3.code == 2);
  CHECK_THAT(r3.err, ContainsSubstring("Homr"));
}

TEST_CASE("stats with trait scores, scatter plot and correlation", "[stats]") {
  testing::TempDir dir("cli_stats");
  AnnotationCorpus c;
  const std::vector<std::pair<std::string, std::vector<int>>> people{
      {"Ann", {3, 2, 3}}, {"Bob", {-1, 0, -2}}, {"Cy", {1, 1, 2}}, {"Dee", {-3, -2, -3}}};
  for (const auto& [who, rs] : people) {
    for (int r : rs) {
      c.add(Annotation{who, "helps", "agreeableness", r, 1});
      c.add(Annotation{who, "ranks people", "dominance", -r + (r % 2), 1});
    }
  }
  write_file_atomic(dir / "ann.json", serialize_corpus(c));
  const auto st = (dir / "stats.json").string();
  auto r = invoke({"stats", "--annotations", (dir / "ann.json").string(), "--out", st, "--traits", "agreeableness,dominance",
                "--reps", "500", "--seed", "9", "--plot", (dir / "scatter.svg").string()});
  REQUIRE(r.code == 0);
  auto stats = parse_stats(read_file(st));
  REQUIRE(stats.size() == 4);
  CHECK(stats[0].scores.count("agreeableness") == 1);
  CHECK_THAT(read_file(dir / "scatter.svg"), ContainsSubstring("class=\"point\""));
  CHECK(manifest(st)["seeds"]["bootstrap"] == 9);

  auto corr = invoke({"analyze", "corr", "--stats", st, "--traits", "agreeableness,dominance", "--out",
                   (dir / "corr.json").string()});
  REQUIRE(corr.code == 0);
  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& s : stats) {
    xs.push_back(s.scores.at("agreeableness").mean);
    ys.push_back(s.scores.at("dominance").mean);
  }
  auto expect = pearson(xs, ys);
  auto j = json::parse(read_file(dir / "corr.json"));
  CHECK(j["r"].get<double>() == expect.r);
  CHECK(j["df"] == 2);
  CHECK_THAT(corr.out, ContainsSubstring("r(2) = "));

  CHECK(invoke({"analyze", "corr", "--stats", st, "--traits", "agreeableness"}).code == 2);
}

TEST_CASE("analyze chisq over eval stores", "[stats]") {
  testing::TempDir dir("cli_chisq");
  const auto first = testing::data_path("eval_95_4_1.jsonl");
  auto records = replay_eval_lines(read_file(first));
  int moved = 0;
  std::string second;
  for (auto r : records) {
    if (r.label == "Correct" && moved < 10) {
      r.label = "Questionable";
      ++moved;
    }
    second += serialize_eval_line(r) + "\n";
  }
  write_file_atomic(dir / "second.jsonl", second);
  auto res = invoke({"analyze", "chisq", "--evals", first.string(), (dir / "second.jsonl").string(), "--out",
                  (dir / "chi.json").string()});
  REQUIRE(res.code == 0);
  auto expect = chi_square_independence({{95, 4, 1}, {85, 14, 1}});
  auto j = json::parse(read_file(dir / "chi.json"));
  CHECK(j["chi2"].get<double>() == expect.chi2);
  CHECK(j["p"].get<double>() == expect.p);
  CHECK_THAT(res.out, ContainsSubstring("chi2(2, N = 200) = "));

  CHECK(invoke({"analyze", "chisq", "--evals", first.string()}).code == 1);
}

TEST_CASE("embed with the test backend", "[embed]") {
  testing::TempDir dir("cli_embed");
  const auto out = dir / "emb.json";
  auto r = invoke({"embed", "--annotations", testing::data_path("simpsons_trait_counts.json").string(), "--out", out.string(),
                "--dim", "32"});
  REQUIRE(r.code == 0);
  auto emb = parse_embeddings(read_file(out));
  REQUIRE(emb.size() == 4);
  CHECK(emb[0].second.size() == 32);
  CHECK(manifest(out)["backend"] == "hash-bow-32");
}
