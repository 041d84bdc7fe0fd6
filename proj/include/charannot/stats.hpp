#pragma once

// Character-level counts, bootstrap intervals on mean trait scores, Pearson
// correlation, chi-square independence and SVG summary plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "charannot/core_model.hpp"
#include "charannot/detail/random.hpp"
#include "charannot/errors.hpp"
#include "charannot/special_functions.hpp"

namespace charannot {

struct TraitCount {
  std::string trait;
  std::size_t count = 0;

  bool operator==(const TraitCount&) const = default;
};

struct TraitScore {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
};

struct CharacterStats {
  std::string character;
  std::size_t total = 0;
  std::vector<TraitCount> trait_counts;  // count descending, then trait name
  std::map<std::string, TraitScore> scores;
};

// One entry per character with at least one record, by descending total;
// equal totals keep corpus order.
inline std::vector<CharacterStats> character_counts(const AnnotationCorpus& corpus) {
  std::vector<CharacterStats> out;
  for (const auto& e : corpus.entries()) {
    if (e.records.empty()) continue;
    CharacterStats s;
    s.character = e.character;
    s.total = e.records.size();
    std::map<std::string, std::size_t> counts;
    for (const auto& a : e.records) ++counts[a.trait];
    for (const auto& [trait, n] : counts) s.trait_counts.push_back({trait, n});
    std::stable_sort(s.trait_counts.begin(), s.trait_counts.end(),
                     [](const TraitCount& x, const TraitCount& y) { return x.count > y.count; });
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const CharacterStats& x, const CharacterStats& y) { return x.total > y.total; });
  return out;
}

struct BootstrapOptions {
  std::size_t reps = 10000;
  std::uint64_t seed = 0;
  double mass = 0.95;
};

namespace detail {

// 1-based nearest rank ceil(q * reps), guarded against q * reps landing a
// hair above an integer.
inline std::size_t nearest_rank(double q, std::size_t reps) {
  double r = std::ceil(q * static_cast<double>(reps) - 1e-9);
  return static_cast<std::size_t>(std::clamp(r, 1.0, static_cast<double>(reps)));
}

}  // namespace detail

// Mean with a seeded percentile-bootstrap interval: `reps` resamples of size
// n drawn with replacement, interval endpoints at nearest ranks of the sorted
// resample means.
inline TraitScore bootstrap_mean(const std::vector<double>& values, const BootstrapOptions& options = {},
                                 Diagnostics* diag = nullptr) {
  if (values.empty()) throw InvalidArgument("no values to average");
  if (options.reps < 1) throw InvalidArgument("bootstrap needs at least one replicate");
  if (!(options.mass > 0.0 && options.mass < 1.0)) throw InvalidArgument("interval mass must lie strictly between 0 and 1");
  TraitScore s;
  s.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n == 1) {
    warn(diag, "single observation; bootstrap interval is degenerate");
    s.ci_low = s.ci_high = s.mean;
    return s;
  }
  std::mt19937_64 rng(options.seed);
  std::vector<double> means(options.reps);
  for (auto& m : means) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) acc += values[detail::uniform_below(rng, s.n)];
    m = acc / static_cast<double>(s.n);
  }
  std::sort(means.begin(), means.end());
  s.ci_low = means[detail::nearest_rank((1.0 - options.mass) / 2.0, options.reps) - 1];
  s.ci_high = means[detail::nearest_rank((1.0 + options.mass) / 2.0, options.reps) - 1];
  return s;
}

inline std::vector<double> trait_ratings(const AnnotationCorpus& corpus, std::string_view character, std::string_view trait) {
  const auto* e = corpus.find(character);
  if (e == nullptr) throw InvalidArgument("unknown character '" + std::string(character) + "'");
  std::vector<double> out;
  for (const auto& a : e->records) {
    if (a.trait == trait) out.push_back(a.rating);
  }
  if (out.empty()) {
    throw InvalidArgument("character '" + std::string(character) + "' has no ratings for trait '" + std::string(trait) + "'");
  }
  return out;
}

inline TraitScore mean_trait_score(const AnnotationCorpus& corpus, std::string_view character, std::string_view trait,
                                   const BootstrapOptions& options = {}, Diagnostics* diag = nullptr) {
  return bootstrap_mean(trait_ratings(corpus, character, trait), options, diag);
}

// Adds bootstrap scores for `traits` to every character rated on them.
inline void add_trait_scores(std::vector<CharacterStats>& stats, const AnnotationCorpus& corpus,
                             const std::vector<std::string>& traits, const BootstrapOptions& options = {},
                             Diagnostics* diag = nullptr) {
  for (auto& s : stats) {
    for (const auto& t : traits) {
      const auto* e = corpus.find(s.character);
      bool rated = e && std::any_of(e->records.begin(), e->records.end(), [&](const Annotation& a) { return a.trait == t; });
      if (!rated) continue;
      Diagnostics local;
      s.scores[t] = mean_trait_score(corpus, s.character, t, options, &local);
      for (auto& w : local.warnings) warn(diag, s.character + " / " + t + ": " + w);
    }
  }
}

inline std::string serialize_stats(const std::vector<CharacterStats>& stats) {
  ordered_json doc = ordered_json::array();
  for (const auto& s : stats) {
    ordered_json item;
    item["character"] = s.character;
    item["total"] = s.total;
    ordered_json traits = ordered_json::array();
    for (const auto& t : s.trait_counts) traits.push_back({{"trait", t.trait}, {"count", t.count}});
    item["traits"] = std::move(traits);
    if (!s.scores.empty()) {
      ordered_json scores = ordered_json::object();
      for (const auto& [trait, sc] : s.scores) {
        scores[trait] = {{"mean", sc.mean}, {"ci_low", sc.ci_low}, {"ci_high", sc.ci_high}, {"n", sc.n},
                         {"interval", "bootstrap interval"}};
      }
      item["scores"] = std::move(scores);
    }
    doc.push_back(std::move(item));
  }
  return detail::dump_json(doc) + "\n";
}

inline std::vector<CharacterStats> parse_stats(std::string_view bytes) {
  auto doc = detail::parse_json(bytes, "stats file");
  if (!doc.is_array()) throw SchemaError("stats file: top level must be a list");
  std::vector<CharacterStats> out;
  try {
    for (const auto& item : doc) {
      CharacterStats s;
      s.character = item.at("character").get<std::string>();
      s.total = item.at("total").get<std::size_t>();
      for (const auto& t : item.at("traits")) s.trait_counts.push_back({t.at("trait").get<std::string>(), t.at("count").get<std::size_t>()});
      if (item.contains("scores")) {
        for (const auto& [trait, sc] : item["scores"].items()) {
          s.scores[trait] = TraitScore{sc.at("mean").get<double>(), sc.at("ci_low").get<double>(),
                                       sc.at("ci_high").get<double>(), sc.at("n").get<std::size_t>()};
        }
      }
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("stats file: ") + e.what());
  }
  return out;
}

struct PearsonResult {
  double r = 0.0;
  double p = 1.0;  // two-tailed
  int df = 0;
};

// Two-tailed p for a sample correlation r over n pairs.
inline double pearson_p(double r, std::size_t n) {
  if (n < 3) throw InvalidArgument("correlation needs at least 3 pairs");
  if (!(r >= -1.0 && r <= 1.0)) throw InvalidArgument("correlation must lie in [-1, 1]");
  const double df = static_cast<double>(n - 2);
  if (std::fabs(r) >= 1.0) return 0.0;
  const double t = r * std::sqrt(df / (1.0 - r * r));
  return special::student_t_two_tailed(t, df);
}

inline PearsonResult pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("correlation inputs differ in length");
  const std::size_t n = xs.size();
  if (n < 3) throw InvalidArgument("correlation needs at least 3 pairs");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("correlation is undefined when an input has zero variance");
  double r = sxy / std::sqrt(sxx * syy);
  r = std::clamp(r, -1.0, 1.0);
  return PearsonResult{r, pearson_p(r, n), static_cast<int>(n - 2)};
}

struct ChiSquareResult {
  double chi2 = 0.0;
  int df = 0;
  double p = 1.0;
};

// Pearson chi-square test of independence on an r x c table of counts.
inline ChiSquareResult chi_square_independence(const std::vector<std::vector<double>>& table) {
  if (table.size() < 2) throw InvalidArgument("contingency table needs at least two rows");
  const std::size_t cols = table[0].size();
  if (cols < 2) throw InvalidArgument("contingency table needs at least two columns");
  std::vector<double> row_sum(table.size(), 0.0);
  std::vector<double> col_sum(cols, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].size() != cols) throw InvalidArgument("contingency table rows differ in length");
    for (std::size_t j = 0; j < cols; ++j) {
      if (table[i][j] < 0.0) throw InvalidArgument("contingency table counts must be non-negative");
      row_sum[i] += table[i][j];
      col_sum[j] += table[i][j];
      total += table[i][j];
    }
  }
  for (std::size_t i = 0; i < row_sum.size(); ++i) {
    if (row_sum[i] == 0.0) throw InvalidArgument("contingency table row " + std::to_string(i + 1) + " sums to zero");
  }
  for (std::size_t j = 0; j < cols; ++j) {
    if (col_sum[j] == 0.0) throw InvalidArgument("contingency table column " + std::to_string(j + 1) + " sums to zero");
  }
  ChiSquareResult res;
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double expected = row_sum[i] * col_sum[j] / total;
      const double d = table[i][j] - expected;
      res.chi2 += d * d / expected;
    }
  }
  res.df = static_cast<int>((table.size() - 1) * (cols - 1));
  res.p = special::chi_square_sf(res.chi2, res.df);
  return res;
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace detail

// Horizontal bars for the `top_n` characters with the most annotations.
inline std::string bar_chart_svg(const std::vector<CharacterStats>& stats, std::size_t top_n = 10) {
  if (stats.empty()) throw InvalidArgument("no characters to plot");
  const std::size_t n = std::min(top_n, stats.size());
  std::size_t max_total = 1;
  for (std::size_t i = 0; i < n; ++i) max_total = std::max(max_total, stats[i].total);
  const double left = 180.0, bar_h = 24.0, gap = 8.0, top = 40.0, plot_w = 400.0;
  const double height = top + static_cast<double>(n) * (bar_h + gap) + 20.0;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"" + detail::num(height) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<text x=\"10\" y=\"24\" font-size=\"14\">Annotations per character</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = stats[i];
    const double y = top + static_cast<double>(i) * (bar_h + gap);
    const double w = plot_w * static_cast<double>(s.total) / static_cast<double>(max_total);
    svg += "<g class=\"bar\" data-character=\"" + detail::xml_escape(s.character) + "\" data-total=\"" +
           std::to_string(s.total) + "\">";
    svg += "<text x=\"" + detail::num(left - 6) + "\" y=\"" + detail::num(y + 16) + "\" text-anchor=\"end\">" +
           detail::xml_escape(s.character) + "</text>";
    svg += "<rect x=\"" + detail::num(left) + "\" y=\"" + detail::num(y) + "\" width=\"" + detail::num(w) +
           "\" height=\"" + detail::num(bar_h) + "\" fill=\"#4a78a8\"/>";
    svg += "<text x=\"" + detail::num(left + w + 6) + "\" y=\"" + detail::num(y + 16) + "\">" + std::to_string(s.total) +
           "</text></g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// Mean score on `trait_x` against `trait_y` per character, whiskers at the
// bootstrap interval endpoints. Characters lacking either score are left out.
inline std::string scatter_svg(const std::vector<CharacterStats>& stats, const std::string& trait_x,
                               const std::string& trait_y) {
  std::vector<const CharacterStats*> pts;
  for (const auto& s : stats) {
    if (s.scores.count(trait_x) && s.scores.count(trait_y)) pts.push_back(&s);
  }
  if (pts.empty()) throw InvalidArgument("no character has scores for both '" + trait_x + "' and '" + trait_y + "'");
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  for (const auto* s : pts) {
    const auto& x = s->scores.at(trait_x);
    const auto& y = s->scores.at(trait_y);
    if (first) {
      xmin = x.ci_low, xmax = x.ci_high, ymin = y.ci_low, ymax = y.ci_high;
      first = false;
    }
    xmin = std::min(xmin, x.ci_low), xmax = std::max(xmax, x.ci_high);
    ymin = std::min(ymin, y.ci_low), ymax = std::max(ymax, y.ci_high);
  }
  if (xmax - xmin < 1e-9) xmin -= 1, xmax += 1;
  if (ymax - ymin < 1e-9) ymin -= 1, ymax += 1;
  const double left = 60, top = 30, w = 520, h = 400;
  auto px = [&](double v) { return left + (v - xmin) / (xmax - xmin) * w; };
  auto py = [&](double v) { return top + h - (v - ymin) / (ymax - ymin) * h; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"500\" font-family=\"sans-serif\" "
                    "font-size=\"11\">\n";
  svg += "<rect x=\"" + detail::num(left) + "\" y=\"" + detail::num(top) + "\" width=\"" + detail::num(w) + "\" height=\"" +
         detail::num(h) + "\" fill=\"none\" stroke=\"#888\"/>\n";
  svg += "<text x=\"" + detail::num(left + w / 2) + "\" y=\"480\" text-anchor=\"middle\">" + detail::xml_escape(trait_x) +
         " (" + detail::num(xmin) + " to " + detail::num(xmax) + ")</text>\n";
  svg += "<text x=\"16\" y=\"" + detail::num(top + h / 2) + "\" transform=\"rotate(-90 16 " + detail::num(top + h / 2) +
         ")\" text-anchor=\"middle\">" + detail::xml_escape(trait_y) + " (" + detail::num(ymin) + " to " +
         detail::num(ymax) + ")</text>\n";
  for (const auto* s : pts) {
    const auto& x = s->scores.at(trait_x);
    const auto& y = s->scores.at(trait_y);
    svg += "<g class=\"point\" data-character=\"" + detail::xml_escape(s->character) + "\">";
    svg += "<line x1=\"" + detail::num(px(x.ci_low)) + "\" y1=\"" + detail::num(py(y.mean)) + "\" x2=\"" +
           detail::num(px(x.ci_high)) + "\" y2=\"" + detail::num(py(y.mean)) + "\" stroke=\"#999\"/>";
    svg += "<line x1=\"" + detail::num(px(x.mean)) + "\" y1=\"" + detail::num(py(y.ci_low)) + "\" x2=\"" +
           detail::num(px(x.mean)) + "\" y2=\"" + detail::num(py(y.ci_high)) + "\" stroke=\"#999\"/>";
    svg += "<circle cx=\"" + detail::num(px(x.mean)) + "\" cy=\"" + detail::num(py(y.mean)) + "\" r=\"4\" fill=\"#c0392b\"/>";
    svg += "<text x=\"" + detail::num(px(x.mean) + 6) + "\" y=\"" + detail::num(py(y.mean) - 6) + "\">" +
           detail::xml_escape(s->character) + "</text></g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace charannot
