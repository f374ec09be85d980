#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "chronopref/storage.hpp"
#include "chronopref/util/csv.hpp"
#include "chronopref/util/text.hpp"

namespace chronopref {

class RegressionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RegressionSample {
  double y = 0.0;
  std::vector<double> x;  // regressors of interest
  std::string fe_key;      // one-way fixed-effect group
  std::string cluster_key;
};

struct OLSFit {
  std::vector<std::string> names;  // regressors, then "(Intercept)" when no FE is absorbed
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov_clustered;
  Eigen::VectorXd se;
  double r2 = 0.0;
  double adj_r2 = 0.0;
  double residual_se = 0.0;
  std::size_t n_obs = 0;
  std::size_t n_clusters = 0;
  std::size_t n_fe_levels = 0;
  std::size_t df_resid = 0;
  bool include_fe = false;
  std::string fe_label;  // human-readable FE description, empty when none

  double t_stat(std::size_t j) const { return coef(static_cast<Eigen::Index>(j)) / se(static_cast<Eigen::Index>(j)); }

  /// Two-sided p-value under the normal reference distribution.
  double p_value(std::size_t j) const { return std::erfc(std::abs(t_stat(j)) / std::sqrt(2.0)); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return j;
    throw std::out_of_range("no coefficient named " + name);
  }
};

namespace detail {

template <typename KeyFn>
std::vector<Eigen::Index> index_keys(const std::vector<RegressionSample>& samples, KeyFn key, std::size_t& levels) {
  std::unordered_map<std::string, Eigen::Index> ids;
  std::vector<Eigen::Index> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto [it, fresh] = ids.emplace(key(samples[i]), static_cast<Eigen::Index>(ids.size()));
    out[i] = it->second;
  }
  levels = ids.size();
  return out;
}

}  // namespace detail

/// OLS with optional one-way fixed effects (within transformation) and CR1
/// cluster-robust covariance:
///   V = (X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1 * G/(G-1) * (N-1)/(N-K),
/// K counting absorbed FE levels. R^2 is that of the full dummy model.
inline OLSFit ols_fe_cluster(const std::vector<RegressionSample>& samples, bool include_fe,
                             std::vector<std::string> names = {}) {
  if (samples.empty()) throw RegressionError("no observations");
  const std::size_t p = samples.front().x.size();
  for (const auto& s : samples)
    if (s.x.size() != p) throw RegressionError("regressor count differs between rows");
  if (names.empty())
    for (std::size_t j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  if (names.size() != p) throw RegressionError("names do not match regressor count");

  const auto N = static_cast<Eigen::Index>(samples.size());
  std::size_t n_fe = 0, n_cl = 0;
  const auto cluster = detail::index_keys(samples, [](const RegressionSample& s) { return s.cluster_key; }, n_cl);
  const auto k = static_cast<Eigen::Index>(include_fe ? p : p + 1);

  Eigen::MatrixXd X(N, k);
  Eigen::VectorXd y(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    y(i) = s.y;
    for (std::size_t j = 0; j < p; ++j) X(i, static_cast<Eigen::Index>(j)) = s.x[j];
    if (!include_fe) X(i, k - 1) = 1.0;
  }
  const double y_mean = y.mean();
  const double tss = (y.array() - y_mean).square().sum();

  std::size_t K = static_cast<std::size_t>(k);
  if (include_fe) {
    const auto fe = detail::index_keys(samples, [](const RegressionSample& s) { return s.fe_key; }, n_fe);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_fe), k + 1);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_fe));
    for (Eigen::Index i = 0; i < N; ++i) {
      sums.row(fe[i]).head(k) += X.row(i);
      sums(fe[i], k) += y(i);
      counts(fe[i]) += 1;
    }
    for (Eigen::Index g = 0; g < sums.rows(); ++g) sums.row(g) /= counts(g);
    for (Eigen::Index i = 0; i < N; ++i) {
      X.row(i) -= sums.row(fe[i]).head(k);
      y(i) -= sums(fe[i], k);
    }
    K += n_fe;
  } else {
    names.push_back("(Intercept)");
  }
  if (static_cast<std::size_t>(N) <= K) throw RegressionError("not enough observations for the model size");
  if (n_cl < 2) throw RegressionError("cluster-robust covariance needs at least two clusters");

  Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(k, k);
  if (k > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < k) throw RegressionError("regressors of interest are rank deficient");
    b = qr.solve(y);
    const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv =
        R.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::MatrixXd inner = Rinv * Rinv.transpose();
    const auto& P = qr.colsPermutation();
    bread = P * inner * P.transpose();
  }
  const Eigen::VectorXd e = y - X * b;
  const double rss = e.squaredNorm();

  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_cl), k);
  for (Eigen::Index i = 0; i < N; ++i) scores.row(cluster[static_cast<std::size_t>(i)]) += X.row(i) * e(i);
  const Eigen::MatrixXd meat = scores.transpose() * scores;
  const double G = static_cast<double>(n_cl);
  const double n = static_cast<double>(N);
  const double scale = G / (G - 1.0) * (n - 1.0) / (n - static_cast<double>(K));

  OLSFit fit;
  fit.names = std::move(names);
  fit.coef = b;
  fit.vcov_clustered = scale * bread * meat * bread;
  fit.vcov_clustered = 0.5 * (fit.vcov_clustered + fit.vcov_clustered.transpose());
  fit.se = fit.vcov_clustered.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.n_obs = samples.size();
  fit.n_clusters = n_cl;
  fit.n_fe_levels = n_fe;
  fit.include_fe = include_fe;
  fit.df_resid = static_cast<std::size_t>(N) - K;
  fit.r2 = tss > 0.0 ? 1.0 - rss / tss : 0.0;
  fit.adj_r2 = tss > 0.0 ? 1.0 - (1.0 - fit.r2) * (n - 1.0) / (n - static_cast<double>(K)) : 0.0;
  fit.residual_se = std::sqrt(rss / static_cast<double>(fit.df_resid));
  return fit;
}

struct ClusteredMean {
  double mean = 0.0;
  double se = 0.0;  // NaN when fewer than two clusters
  std::size_t n = 0;
  std::size_t clusters = 0;
  double lo(double z = 1.959963984540054) const { return std::isnan(se) ? mean : mean - z * se; }
  double hi(double z = 1.959963984540054) const { return std::isnan(se) ? mean : mean + z * se; }
};

/// Mean with a CR1 cluster-robust standard error (intercept-only regression).
inline ClusteredMean clustered_mean(const std::vector<double>& values, const std::vector<std::string>& clusters) {
  if (values.size() != clusters.size()) throw RegressionError("values and clusters differ in length");
  if (values.empty()) throw RegressionError("no observations");
  ClusteredMean out;
  out.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  std::vector<RegressionSample> samples;
  samples.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) samples.push_back({values[i], {}, "", clusters[i]});
  std::size_t levels = 0;
  detail::index_keys(samples, [](const RegressionSample& s) { return s.cluster_key; }, levels);
  out.clusters = levels;
  if (levels < 2 || values.size() < 2) {
    out.se = std::nan("");
    return out;
  }
  const auto fit = ols_fe_cluster(samples, false);
  out.mean = fit.coef(0);
  out.se = fit.se(0);
  return out;
}

inline std::string cross_cell_cluster(const AnalysisRow& r) { return r.cell_id(); }

/// Share of later choices on the strong-FTR dummy: no FE, delay FE,
/// delay-interest FE. Clusters are language x delay x interest cells.
inline std::vector<OLSFit> spec_ftr_share(const std::vector<AnalysisRow>& rows) {
  std::vector<OLSFit> fits;
  for (int variant = 0; variant < 3; ++variant) {
    std::vector<RegressionSample> samples;
    samples.reserve(rows.size());
    for (const auto& r : rows) {
      std::string fe;
      if (variant == 1) fe = std::to_string(r.d);
      if (variant == 2) fe = std::to_string(r.d) + "|" + r.interest;
      samples.push_back({r.y_later ? 1.0 : 0.0, {r.strong_ftr ? 1.0 : 0.0}, fe, cross_cell_cluster(r)});
    }
    auto fit = ols_fe_cluster(samples, variant > 0, {"Strong FTR"});
    fit.fe_label = variant == 0 ? "" : (variant == 1 ? "Delay FE" : "Delay-Interest FE");
    fits.push_back(std::move(fit));
  }
  return fits;
}

/// Choosing the larger reward on (r2 - r1)/1000: no FE, language FE,
/// language-delay FE. For same-period data the delay coordinate is t.
inline std::vector<OLSFit> spec_proper_test(const std::vector<AnalysisRow>& rows, bool same_period) {
  for (const auto& r : rows)
    if (r.same_period() != same_period)
      throw RegressionError(same_period ? "same-period test given cross-period rows"
                                        : "cross-period test given same-period rows");
  std::vector<OLSFit> fits;
  for (int variant = 0; variant < 3; ++variant) {
    std::vector<RegressionSample> samples;
    samples.reserve(rows.size());
    for (const auto& r : rows) {
      std::string fe;
      if (variant == 1) fe = r.language;
      if (variant == 2) fe = r.language + "|" + std::to_string(r.horizon());
      samples.push_back(
          {r.y_later ? 1.0 : 0.0, {static_cast<double>(r.r2 - r.r1) / 1000.0}, fe, cross_cell_cluster(r)});
    }
    auto fit = ols_fe_cluster(samples, variant > 0, {"Difference in rewards (in 1000 tokens)"});
    fit.fe_label = variant == 0 ? "" : (variant == 1 ? "Language FE" : "Language-Delay FE");
    fits.push_back(std::move(fit));
  }
  return fits;
}

/// Per-document normalized prevalence of each labeled topic joined to its
/// experimental condition.
struct TopicRow {
  std::string language;
  bool strong_ftr = false;
  int d = 0;
  std::string interest;
  std::string cell;
  std::vector<double> normalized;  // one per label
};

/// One regression per topic label: normalized prevalence on the strong-FTR
/// dummy with delay-interest FE, clustered by cell.
inline std::vector<OLSFit> spec_topic_ftr(const std::vector<TopicRow>& rows, std::size_t n_topics) {
  std::vector<OLSFit> fits;
  for (std::size_t t = 0; t < n_topics; ++t) {
    std::vector<RegressionSample> samples;
    samples.reserve(rows.size());
    for (const auto& r : rows)
      samples.push_back({r.normalized.at(t), {r.strong_ftr ? 1.0 : 0.0}, std::to_string(r.d) + "|" + r.interest, r.cell});
    auto fit = ols_fe_cluster(samples, true, {"Strong FTR"});
    fit.fe_label = "Delay-Interest FE";
    fits.push_back(std::move(fit));
  }
  return fits;
}

inline std::string significance_stars(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

/// Regression columns rendered as a plain-text table (coefficient, clustered
/// SE in parentheses, stars at 10/5/1%) and as CSV.
struct RegressionTable {
  std::string title;
  std::string dependent;
  std::vector<std::string> column_labels;  // empty = (1), (2), ...
  std::vector<OLSFit> fits;

  std::string render_text() const {
    std::vector<std::string> terms;
    for (const auto& f : fits)
      for (const auto& n : f.names)
        if (std::find(terms.begin(), terms.end(), n) == terms.end()) terms.push_back(n);
    std::vector<std::string> fe_labels;
    for (const auto& f : fits)
      if (!f.fe_label.empty() && std::find(fe_labels.begin(), fe_labels.end(), f.fe_label) == fe_labels.end())
        fe_labels.push_back(f.fe_label);

    std::vector<std::vector<std::string>> lines;
    auto header = std::vector<std::string>{""};
    for (std::size_t c = 0; c < fits.size(); ++c)
      header.push_back(column_labels.empty() ? "(" + std::to_string(c + 1) + ")" : column_labels[c]);
    lines.push_back(header);
    for (const auto& term : terms) {
      std::vector<std::string> coef_line{term == "(Intercept)" ? "Constant" : term};
      std::vector<std::string> se_line{""};
      for (const auto& f : fits) {
        const auto it = std::find(f.names.begin(), f.names.end(), term);
        if (it == f.names.end()) {
          coef_line.push_back("");
          se_line.push_back("");
          continue;
        }
        const auto j = static_cast<std::size_t>(it - f.names.begin());
        coef_line.push_back(util::fixed(f.coef(static_cast<Eigen::Index>(j)), 3) + significance_stars(f.p_value(j)));
        se_line.push_back("(" + util::fixed(f.se(static_cast<Eigen::Index>(j)), 3) + ")");
      }
      lines.push_back(coef_line);
      lines.push_back(se_line);
    }
    lines.push_back({"--"});
    for (const auto& fe : fe_labels) {
      std::vector<std::string> l{fe};
      for (const auto& f : fits) l.push_back(f.fe_label == fe ? "X" : "");
      lines.push_back(l);
    }
    auto stat_line = [&](const std::string& label, auto value) {
      std::vector<std::string> l{label};
      for (const auto& f : fits) l.push_back(value(f));
      lines.push_back(l);
    };
    stat_line("Observations", [](const OLSFit& f) { return std::to_string(f.n_obs); });
    stat_line("Clusters", [](const OLSFit& f) { return std::to_string(f.n_clusters); });
    stat_line("R2 (full dummy model)", [](const OLSFit& f) { return util::fixed(f.r2, 3); });
    stat_line("Adjusted R2", [](const OLSFit& f) { return util::fixed(f.adj_r2, 3); });
    stat_line("Residual Std. Error", [](const OLSFit& f) { return util::fixed(f.residual_se, 3); });
    stat_line("Residual df", [](const OLSFit& f) { return std::to_string(f.df_resid); });

    std::vector<std::size_t> width(fits.size() + 1, 0);
    for (const auto& l : lines)
      for (std::size_t c = 0; c < l.size() && c < width.size(); ++c) width[c] = std::max(width[c], l[c].size());
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    const std::string rule(total, '=');
    std::string out = title + "\n" + rule + "\nDependent variable: " + dependent + "\n" + rule + "\n";
    for (const auto& l : lines) {
      if (l.size() == 1 && l[0] == "--") {
        out += std::string(total, '-') + "\n";
        continue;
      }
      std::string row;
      for (std::size_t c = 0; c < width.size(); ++c) {
        const std::string cell = c < l.size() ? l[c] : "";
        if (c == 0)
          row += cell + std::string(width[c] - cell.size() + 2, ' ');
        else
          row += std::string(width[c] - cell.size() + 2, ' ') + cell;
      }
      out += std::string(util::trim(row).empty() ? "" : row) + "\n";
    }
    out += rule + "\nNote: *p<0.1; **p<0.05; ***p<0.01 (normal reference). CR1 standard errors clustered at the "
                  "experimental cell (language-delay-interest).\n";
    return out;
  }

  util::CsvTable to_csv() const {
    util::CsvTable t({"column", "term", "estimate", "se", "p_value", "stars", "fe", "n_obs", "n_clusters", "r2",
                      "adj_r2", "residual_se", "df_resid"});
    for (std::size_t c = 0; c < fits.size(); ++c) {
      const auto& f = fits[c];
      for (std::size_t j = 0; j < f.names.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        t.add_row({column_labels.empty() ? std::to_string(c + 1) : column_labels[c], f.names[j],
                   util::exact(f.coef(jj)), util::exact(f.se(jj)), util::exact(f.p_value(j)),
                   significance_stars(f.p_value(j)), f.fe_label.empty() ? "none" : f.fe_label,
                   std::to_string(f.n_obs), std::to_string(f.n_clusters), util::exact(f.r2), util::exact(f.adj_r2),
                   util::exact(f.residual_se), std::to_string(f.df_resid)});
      }
    }
    return t;
  }
};

}  // namespace chronopref
