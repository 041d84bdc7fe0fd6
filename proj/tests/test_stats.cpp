#include <catch_amalgamated.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "charannot/stats.hpp"
#include "support/oracles.hpp"
#include "support/test_data.hpp"

using namespace charannot;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

const nlohmann::json& golden() {
  static const auto doc = nlohmann::json::parse(testing::read_data("special_golden.json"));
  return doc;
}

AnnotationCorpus simpsons() { return parse_corpus(testing::read_data("simpsons_trait_counts.json")); }

AnnotationCorpus rated(const std::string& who, const std::string& trait, const std::vector<int>& ratings) {
  AnnotationCorpus c;
  int i = 0;
  for (int r : ratings) c.add(Annotation{who, "act " + std::to_string(++i), trait, r, 1});
  return c;
}

// Second percentile bootstrap: resample counts per index (same draw contract:
// rejection below the largest multiple of n, then modulo), integer sums, and
// order statistics by nth_element with integer rank arithmetic.
std::pair<double, double> bootstrap_oracle(const std::vector<int>& xs, std::uint64_t seed, std::size_t reps) {
  std::mt19937_64 rng(seed);
  const std::uint64_t n = xs.size();
  const std::uint64_t bound = 0 - ((0 - n) % n);  // 2^64 - (2^64 mod n), wraps to 0 when n | 2^64
  std::vector<double> means;
  for (std::size_t r = 0; r < reps; ++r) {
    std::vector<long> counts(n, 0);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint64_t x = rng();
      while (bound != 0 && x >= bound) x = rng();
      ++counts[x % n];
    }
    long sum = 0;
    for (std::uint64_t i = 0; i < n; ++i) sum += counts[i] * xs[i];
    means.push_back(static_cast<double>(sum) / static_cast<double>(n));
  }
  const std::size_t lo_rank = (reps * 25 + 999) / 1000;
  const std::size_t hi_rank = (reps * 975 + 999) / 1000;
  auto lo = means;
  std::nth_element(lo.begin(), lo.begin() + (lo_rank - 1), lo.end());
  auto hi = means;
  std::nth_element(hi.begin(), hi.begin() + (hi_rank - 1), hi.end());
  return {lo[lo_rank - 1], hi[hi_rank - 1]};
}

}  // namespace

TEST_CASE("character counts on the Simpsons fixture", "[counts]") {
  auto corpus = simpsons();
  auto stats = character_counts(corpus);
  REQUIRE(stats.size() == 4);
  CHECK(stats[0].character == "Homer Simpson");
  CHECK(stats[0].total == 94);
  REQUIRE(stats[0].trait_counts.size() >= 2);
  CHECK(stats[0].trait_counts[0] == TraitCount{"humorous", 7});
  CHECK(stats[0].trait_counts[1] == TraitCount{"impulsive", 7});
  CHECK(stats[1].character == "Marge Simpson");
  CHECK(stats[1].total == 59);
  CHECK(stats[2].character == "Bart Simpson");
  CHECK(stats[2].total == 59);
  CHECK(stats[3].character == "Lisa Simpson");
  CHECK(stats[3].total == 49);

  std::size_t sum = 0;
  for (const auto& s : stats) {
    std::size_t inner = 0;
    for (const auto& t : s.trait_counts) {
      CHECK(t.count >= 1);
      inner += t.count;
    }
    CHECK(inner == s.total);
    sum += s.total;
    for (std::size_t i = 1; i < s.trait_counts.size(); ++i) {
      const auto& a = s.trait_counts[i - 1];
      const auto& b = s.trait_counts[i];
      CHECK((a.count > b.count || (a.count == b.count && a.trait < b.trait)));
    }
  }
  CHECK(sum == corpus.total());
}

TEST_CASE("character counts edge cases", "[counts]") {
  CHECK(character_counts(AnnotationCorpus{}).empty());
  AnnotationCorpus one;
  one.add(Annotation{"Itchy", "bites", "violent", 1, 1});
  auto stats = character_counts(one);
  REQUIRE(stats.size() == 1);
  CHECK(stats[0].total == 1);
}

TEST_CASE("mean trait score", "[bootstrap]") {
  SECTION("constant ratings") {
    auto s = mean_trait_score(rated("A", "kind", {2, 2, 2}), "A", "kind");
    CHECK(s.mean == 2.0);
    CHECK(s.ci_low == 2.0);
    CHECK(s.ci_high == 2.0);
  }
  SECTION("two points give endpoints on the resample support") {
    for (std::uint64_t seed : {1u, 7u, 99u}) {
      auto s = mean_trait_score(rated("A", "kind", {-3, 3}), "A", "kind", {10000, seed, 0.95});
      CHECK(s.mean == 0.0);
      for (double v : {s.ci_low, s.ci_high}) CHECK((v == -3.0 || v == 0.0 || v == 3.0));
      CHECK(s.ci_low == -3.0);
      CHECK(s.ci_high == 3.0);
    }
  }
  SECTION("single observation warns") {
    Diagnostics diag;
    auto s = mean_trait_score(rated("A", "kind", {1}), "A", "kind", {}, &diag);
    CHECK(s.mean == 1.0);
    CHECK(s.ci_low == 1.0);
    CHECK(s.ci_high == 1.0);
    REQUIRE(diag.warnings.size() == 1);
    CHECK_THAT(diag.warnings[0], ContainsSubstring("degenerate"));
  }
  SECTION("unknown character or trait") {
    auto c = rated("A", "kind", {1, 2});
    CHECK_THROWS_AS(mean_trait_score(c, "B", "kind"), InvalidArgument);
    CHECK_THROWS_AS(mean_trait_score(c, "A", "cruel"), InvalidArgument);
  }
}

TEST_CASE("bootstrap matches an independent implementation", "[bootstrap]") {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> xs;
    for (int i = 0; i < 30; ++i) xs.push_back(static_cast<int>(gen() % 7) - 3);
    const std::uint64_t seed = 1000 + trial;
    auto s = mean_trait_score(rated("A", "t", xs), "A", "t", {10000, seed, 0.95});
    auto [lo, hi] = bootstrap_oracle(xs, seed, 10000);
    CHECK(s.ci_low == lo);
    CHECK(s.ci_high == hi);
    CHECK(s.ci_low <= s.mean);
    CHECK(s.mean <= s.ci_high);
  }
}

TEST_CASE("bootstrap is deterministic in the seed", "[bootstrap]") {
  std::vector<double> xs{1, 5, 2, 2, 4, -1, 0, 3, 3, 1};
  auto a = bootstrap_mean(xs, {2000, 5, 0.9});
  auto b = bootstrap_mean(xs, {2000, 5, 0.9});
  CHECK(a.ci_low == b.ci_low);
  CHECK(a.ci_high == b.ci_high);
  CHECK_THROWS_AS(bootstrap_mean({}, {}), InvalidArgument);
  CHECK_THROWS_AS(bootstrap_mean(xs, {0, 1, 0.95}), InvalidArgument);
  CHECK_THROWS_AS(bootstrap_mean(xs, {10, 1, 1.0}), InvalidArgument);
}

TEST_CASE("pearson matches reference values", "[pearson]") {
  for (const auto& c : golden()["pearson"]) {
    auto xs = c["xs"].get<std::vector<double>>();
    auto ys = c["ys"].get<std::vector<double>>();
    auto res = pearson(xs, ys);
    CHECK_THAT(res.r, WithinAbs(c["r"].get<double>(), 1e-12));
    CHECK_THAT(res.p, WithinAbs(c["p"].get<double>(), 1e-6));
    CHECK(res.df == static_cast<int>(xs.size()) - 2);
    double t = res.r * std::sqrt(res.df / (1 - res.r * res.r));
    CHECK_THAT(res.p, WithinAbs(testing::t_two_tailed_quadrature(t, res.df), 1e-6));
  }
}

TEST_CASE("pearson published anchor", "[pearson]") {
  CHECK_THAT(pearson_p(-0.742, 10), WithinAbs(0.014, 0.001));
  double t = -0.742 * std::sqrt(8 / (1 - 0.742 * 0.742));
  CHECK_THAT(pearson_p(-0.742, 10), WithinAbs(testing::t_two_tailed_quadrature(t, 8), 1e-8));
}

TEST_CASE("pearson properties", "[pearson]") {
  std::vector<double> xs{1, 2, 3, 4, 5, 6};
  auto same = pearson(xs, xs);
  CHECK(same.r == 1.0);
  CHECK(same.p == 0.0);

  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::vector<double> a, b;
  for (int i = 0; i < 25; ++i) {
    a.push_back(nd(gen));
    b.push_back(0.3 * a.back() + nd(gen));
  }
  CHECK(pearson(a, b).r == pearson(b, a).r);
  std::vector<double> a2, b2;
  for (double v : a) a2.push_back(3.5 * v - 7.0);
  for (double v : b) b2.push_back(0.01 * v + 100.0);
  CHECK_THAT(pearson(a2, b).r, WithinAbs(pearson(a, b).r, 1e-12));
  CHECK_THAT(pearson(a, b2).r, WithinAbs(pearson(a, b).r, 1e-12));

  CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), InvalidArgument);
  CHECK_THROWS_AS(pearson({1, 2}, {1, 2}), InvalidArgument);
  CHECK_THROWS_AS(pearson({1, 2, 3}, {1, 2}), InvalidArgument);
}

TEST_CASE("chi-square independence", "[chisq]") {
  for (const auto& c : golden()["chisq"]) {
    auto table = c["table"].get<std::vector<std::vector<double>>>();
    auto res = chi_square_independence(table);
    CHECK_THAT(res.chi2, WithinAbs(c["chi2"].get<double>(), 1e-9));
    CHECK(res.df == c["df"].get<int>());
    CHECK_THAT(res.p, WithinAbs(c["p"].get<double>(), 1e-6));
    CHECK_THAT(res.p, WithinAbs(testing::chi_square_sf_closed(res.chi2, res.df), 1e-9));
  }
  auto flat = chi_square_independence({{10, 10}, {10, 10}});
  CHECK(flat.chi2 == 0.0);
  CHECK(flat.p == 1.0);

  CHECK_THAT(special::chi_square_sf(0.81, 2), WithinAbs(0.668, 0.002));

  CHECK_THROWS_AS(chi_square_independence({{0, 0}, {1, 2}}), InvalidArgument);
  CHECK_THROWS_AS(chi_square_independence({{0, 3}, {0, 2}}), InvalidArgument);
}

TEST_CASE("chi-square is invariant under permutation", "[chisq]") {
  std::vector<std::vector<double>> t{{12, 5, 9}, {4, 14, 7}};
  auto base = chi_square_independence(t);
  auto swapped_rows = chi_square_independence({t[1], t[0]});
  auto swapped_cols = chi_square_independence({{9, 12, 5}, {7, 4, 14}});
  CHECK_THAT(swapped_rows.chi2, WithinAbs(base.chi2, 1e-12));
  CHECK_THAT(swapped_cols.chi2, WithinAbs(base.chi2, 1e-12));
  CHECK_THAT(swapped_cols.p, WithinAbs(base.p, 1e-12));
}

TEST_CASE("stats JSON round trip", "[io]") {
  auto corpus = simpsons();
  auto stats = character_counts(corpus);
  auto bytes = serialize_stats(stats);
  auto back = parse_stats(bytes);
  REQUIRE(back.size() == stats.size());
  CHECK(serialize_stats(back) == bytes);
  CHECK_THROWS_AS(parse_stats("{}"), SchemaError);
}

TEST_CASE("bar chart", "[plot]") {
  auto stats = character_counts(simpsons());
  auto svg = bar_chart_svg(stats, 4);
  CHECK(svg == bar_chart_svg(stats, 4));
  CHECK_THAT(svg, ContainsSubstring("data-character=\"Homer Simpson\" data-total=\"94\""));
  CHECK_THAT(svg, ContainsSubstring("data-character=\"Marge Simpson\" data-total=\"59\""));
  CHECK_THAT(svg, ContainsSubstring("data-character=\"Bart Simpson\" data-total=\"59\""));
  CHECK_THAT(svg, ContainsSubstring("data-character=\"Lisa Simpson\" data-total=\"49\""));
  CHECK(svg.find("Homer") < svg.find("Marge"));
  CHECK(svg.find("Marge") < svg.find("Bart"));

  AnnotationCorpus one;
  one.add(Annotation{"Fox & <Hound>", "x", "sly", 1, 1});
  auto single = bar_chart_svg(character_counts(one));
  CHECK_THAT(single, ContainsSubstring("Fox &amp; &lt;Hound&gt;"));
  CHECK(std::count(single.begin(), single.end(), '\n') > 0);
  CHECK_THROWS_AS(bar_chart_svg({}), InvalidArgument);
}

TEST_CASE("scatter with whiskers", "[plot]") {
  AnnotationCorpus c;
  std::vector<std::pair<std::string, std::vector<int>>> people{{"A", {1, 2, 3}}, {"B", {-1, 0, 2}}, {"C", {2, 2, 3}}};
  for (const auto& [who, rs] : people) {
    for (int r : rs) {
      c.add(Annotation{who, "x", "warm", r, 1});
      c.add(Annotation{who, "y", "bold", -r, 1});
    }
  }
  auto stats = character_counts(c);
  add_trait_scores(stats, c, {"warm", "bold"}, {1000, 4, 0.95});
  auto svg = scatter_svg(stats, "warm", "bold");
  CHECK(svg == scatter_svg(stats, "warm", "bold"));
  CHECK(std::count(svg.begin(), svg.end(), '<') > 10);
  CHECK_THAT(svg, ContainsSubstring("class=\"point\" data-character=\"B\""));
  CHECK_THROWS_AS(scatter_svg(stats, "warm", "shy"), InvalidArgument);
}
