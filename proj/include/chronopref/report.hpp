#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "chronopref/econometrics.hpp"
#include "chronopref/estimation.hpp"
#include "chronopref/storage.hpp"
#include "chronopref/util/csv.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref {

/// One point with a 95% interval, as drawn in the dot-whisker figures.
struct PlotPoint {
  std::string group;
  std::string series;  // sub-series inside a group, may be empty
  bool strong_ftr = false;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;
};

inline util::CsvTable plot_points_csv(const std::vector<PlotPoint>& pts, const std::string& value_name) {
  util::CsvTable t({"group", "series", "ftr_strong", value_name, "ci_lo", "ci_hi", "n"});
  for (const auto& p : pts)
    t.add_row({p.group, p.series, p.strong_ftr ? "1" : "0", util::exact(p.value), util::exact(p.lo),
               util::exact(p.hi), std::to_string(p.n)});
  return t;
}

namespace detail {

inline PlotPoint share_point(const std::string& group, const std::string& series, bool strong,
                             const std::vector<const AnalysisRow*>& rows) {
  std::vector<double> y;
  std::vector<std::string> cl;
  for (const auto* r : rows) {
    y.push_back(r->y_later ? 1.0 : 0.0);
    cl.push_back(r->cell_id());
  }
  const auto m = clustered_mean(y, cl);
  return {group, series, strong, m.mean, m.lo(), m.hi(), m.n};
}

}  // namespace detail

/// Share of later choices per language, strong-FTR languages first.
inline std::vector<PlotPoint> share_by_language(const std::vector<AnalysisRow>& rows) {
  std::map<std::pair<int, std::string>, std::vector<const AnalysisRow*>> groups;
  for (const auto& r : rows) groups[{r.strong_ftr ? 0 : 1, r.language}].push_back(&r);
  std::vector<PlotPoint> out;
  for (const auto& [key, members] : groups) out.push_back(detail::share_point(key.second, "", key.first == 0, members));
  return out;
}

/// Share of later choices per interest rate, for all languages and for each
/// FTR group.
inline std::vector<PlotPoint> share_by_interest(const std::vector<AnalysisRow>& rows) {
  std::map<double, std::map<std::string, std::vector<const AnalysisRow*>>> groups;
  std::map<double, std::string> label;
  for (const auto& r : rows) {
    if (r.interest.empty()) continue;
    const double rate = std::stod(r.interest);
    label[rate] = r.interest;
    groups[rate]["all"].push_back(&r);
    groups[rate][r.strong_ftr ? "strong" : "weak"].push_back(&r);
  }
  std::vector<PlotPoint> out;
  for (const auto& [rate, by_series] : groups)
    for (const char* s : {"all", "strong", "weak"})
      if (auto it = by_series.find(s); it != by_series.end())
        out.push_back(detail::share_point(label[rate], s, std::string(s) == "strong", it->second));
  return out;
}

inline std::vector<LabeledObservation> to_observations(const std::vector<AnalysisRow>& rows) {
  std::vector<LabeledObservation> out;
  for (const auto& r : rows) {
    if (r.same_period()) continue;
    ChoiceObservation o{{r.t1, r.r1}, {r.t2, r.r2}, !r.y_later};
    out.push_back({r.language, r.strong_ftr ? FtrClass::Strong : FtrClass::Weak, o});
  }
  return out;
}

/// Discount-factor estimates for each language, followed by the two pooled
/// FTR groups. Groups whose fit failed are reported with an error string.
struct DeltaEstimates {
  std::vector<GroupFit> per_language;
  std::vector<GroupFit> pooled;

  util::CsvTable to_csv() const {
    util::CsvTable t({"level", "group", "ftr_class", "delta", "delta_lo", "delta_hi", "se_delta", "mu", "mu_lo",
                      "mu_hi", "se_mu", "loglik", "n", "error"});
    auto add = [&](const std::string& level, const GroupFit& g) {
      if (!g.fit) {
        t.add_row({level, g.group, std::string(to_string(g.ftr_class)), "", "", "", "", "", "", "", "", "", "",
                   g.error});
        return;
      }
      const auto& f = *g.fit;
      t.add_row({level, g.group, std::string(to_string(g.ftr_class)), util::fixed(f.delta_hat, 6),
                 util::fixed(f.ci95_delta.lo, 6), util::fixed(f.ci95_delta.hi, 6), util::fixed(f.se_delta, 6),
                 util::fixed(f.mu_hat, 6), util::fixed(f.ci95_mu.lo, 6), util::fixed(f.ci95_mu.hi, 6),
                 util::fixed(f.se_mu, 6), util::fixed(f.loglik, 4), std::to_string(f.n_obs), ""});
    };
    for (const auto& g : per_language) add("language", g);
    for (const auto& g : pooled) add("pooled", g);
    return t;
  }

  std::vector<PlotPoint> plot_points() const {
    std::vector<PlotPoint> out;
    auto add = [&](const GroupFit& g, const std::string& name) {
      if (!g.fit) return;
      out.push_back({name, "", g.ftr_class == FtrClass::Strong, g.fit->delta_hat, g.fit->ci95_delta.lo,
                     g.fit->ci95_delta.hi, g.fit->n_obs});
    };
    for (const auto& g : pooled) add(g, "pooled " + g.group);
    for (const auto& g : per_language) add(g, g.group);
    // strong first, matching the other figures
    std::stable_sort(out.begin(), out.end(),
                     [](const PlotPoint& a, const PlotPoint& b) { return a.strong_ftr && !b.strong_ftr; });
    return out;
  }
};

inline DeltaEstimates estimate_deltas(const std::vector<AnalysisRow>& rows) {
  const auto obs = to_observations(rows);
  return {fit_by_group(obs, Grouping::PerLanguage), fit_by_group(obs, Grouping::FTRPooled)};
}

/// Horizontal dot-and-whisker chart, one row per point. Strong-FTR rows are
/// drawn in bold.
inline std::string render_dot_whisker_svg(const std::string& title, const std::string& x_label,
                                          const std::vector<PlotPoint>& pts) {
  const int row_h = 18, left = 190, right = 30, top = 40, width = 720;
  const int height = top + row_h * static_cast<int>(pts.size()) + 50;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& p : pts) {
    for (double v : {p.lo, p.hi, p.value}) {
      if (!std::isfinite(v)) continue;
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  }
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double plot_w = width - left - right;
  auto x = [&](double v) { return util::fixed(left + (v - lo) / (hi - lo) * plot_w, 2); };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '&') o += "&amp;";
      else if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else o += c;
    }
    return o;
  };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                    std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         esc(title) + "</text>\n";
  const int axis_y = top + row_h * static_cast<int>(pts.size()) + 5;
  svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(axis_y) + "\" x2=\"" +
         std::to_string(width - right) + "\" y2=\"" + std::to_string(axis_y) + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4.0;
    svg += "<text x=\"" + x(v) + "\" y=\"" + std::to_string(axis_y + 15) + "\" text-anchor=\"middle\">" +
           util::fixed(v, 3) + "</text>\n";
  }
  svg += "<text x=\"" + std::to_string(left + static_cast<int>(plot_w) / 2) + "\" y=\"" +
         std::to_string(axis_y + 35) + "\" text-anchor=\"middle\">" + esc(x_label) + "</text>\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    const int y = top + row_h * static_cast<int>(i) + row_h / 2;
    const std::string name = p.series.empty() ? p.group : p.group + " (" + p.series + ")";
    const std::string weight = p.strong_ftr ? " font-weight=\"bold\"" : "";
    const std::string color = p.strong_ftr ? "#b2182b" : "#2166ac";
    svg += "<text x=\"" + std::to_string(left - 8) + "\" y=\"" + std::to_string(y + 4) + "\" text-anchor=\"end\"" +
           weight + ">" + esc(name) + "</text>\n";
    if (std::isfinite(p.lo) && std::isfinite(p.hi))
      svg += "<line x1=\"" + x(p.lo) + "\" y1=\"" + std::to_string(y) + "\" x2=\"" + x(p.hi) + "\" y2=\"" +
             std::to_string(y) + "\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    svg += "<circle cx=\"" + x(p.value) + "\" cy=\"" + std::to_string(y) + "\" r=\"3.5\" fill=\"" + color + "\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace chronopref
