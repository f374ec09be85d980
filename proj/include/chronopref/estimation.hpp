#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "chronopref/agents.hpp"
#include "chronopref/design.hpp"

namespace chronopref {

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NonConvergence : public EstimationError {
 public:
  using EstimationError::EstimationError;
};
class DegenerateData : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

struct ChoiceObservation {
  RewardOption sooner;
  RewardOption later;
  bool y_sooner = false;

  void validate() const {
    if (!(later.amount > sooner.amount)) throw std::invalid_argument("later reward must exceed sooner reward");
    if (!(later.delivery_months > sooner.delivery_months))
      throw std::invalid_argument("later option must be delivered after the sooner option");
  }
};

inline constexpr double kProbFloor = 1e-12;

/// Observations collapsed to distinct option pairs with choice counts. The
/// likelihood is a sum over observations, so this is exact and makes every
/// evaluation independent of the number and order of observations.
class ChoiceCounts {
 public:
  struct Cell {
    RewardOption sooner;
    RewardOption later;
    double n_sooner = 0;
    double n_total = 0;
  };

  ChoiceCounts() = default;
  explicit ChoiceCounts(const std::vector<ChoiceObservation>& data) {
    for (const auto& o : data) add(o);
  }

  void add(const ChoiceObservation& o) {
    o.validate();
    auto& c = cells_[std::make_tuple(o.sooner.delivery_months, o.sooner.amount, o.later.delivery_months, o.later.amount)];
    c.sooner = o.sooner;
    c.later = o.later;
    c.n_total += 1;
    if (o.y_sooner) c.n_sooner += 1;
    n_obs_ += 1;
    if (o.y_sooner) ++n_sooner_;
  }

  std::size_t n_obs() const { return n_obs_; }
  std::size_t n_sooner() const { return n_sooner_; }

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& [key, cell] : cells_) f(cell);
  }

 private:
  std::map<std::tuple<int, Tokens, int, Tokens>, Cell> cells_;
  std::size_t n_obs_ = 0;
  std::size_t n_sooner_ = 0;
};

/// sum_i y_i ln p_i + (1 - y_i) ln(1 - p_i) for the exponential model, with
/// p_i clamped to [1e-12, 1 - 1e-12].
inline double log_likelihood(double delta, double mu, const ChoiceCounts& counts) {
  if (!(delta > 0.0) || !(mu > 0.0)) throw std::invalid_argument("delta and mu must be > 0");
  if (counts.n_obs() == 0) throw std::invalid_argument("log_likelihood needs data");
  const double lo = std::log(kProbFloor);
  const double hi = std::log1p(-kProbFloor);
  const RUMAgent agent{DiscountSpec::exponential(delta), mu};
  double total = 0.0;
  counts.for_each([&](const ChoiceCounts::Cell& c) {
    const double z = choice_logit_sooner(agent, c.sooner, c.later);
    const double lp = std::clamp(log_logistic(z), lo, hi);
    const double lq = std::clamp(log_logistic(-z), lo, hi);
    total += c.n_sooner * lp + (c.n_total - c.n_sooner) * lq;
  });
  if (!std::isfinite(total)) throw EstimationError("log-likelihood is not finite");
  return total;
}

inline double log_likelihood(double delta, double mu, const std::vector<ChoiceObservation>& data) {
  return log_likelihood(delta, mu, ChoiceCounts(data));
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct MLEFit {
  double delta_hat = 0.0;
  double mu_hat = 0.0;
  double se_delta = std::numeric_limits<double>::quiet_NaN();
  double se_mu = std::numeric_limits<double>::quiet_NaN();
  Interval ci95_delta;
  Interval ci95_mu;
  double loglik = 0.0;
  std::size_t n_obs = 0;
  bool converged = false;
  int n_evals = 0;
};

struct MLEOptions {
  std::vector<std::array<double, 2>> starts;  // (delta0, mu0); empty = default grid
  double simplex_tolerance = 1e-8;            // in (log delta, log mu)
  int max_evals_per_start = 10'000;
  double initial_step = 0.5;

  std::vector<std::array<double, 2>> start_points() const {
    if (!starts.empty()) return starts;
    std::vector<std::array<double, 2>> pts;
    for (double d0 : {0.1, 0.5, 1.0, 2.0})
      for (double m0 : {0.1, 0.5}) pts.push_back({d0, m0});
    return pts;
  }
};

namespace detail {

using Vec2 = std::array<double, 2>;

struct SimplexResult {
  Vec2 x{};
  double f = 0.0;
  int evals = 0;
  bool converged = false;
};

/// Nelder-Mead minimization in two dimensions with the standard
/// reflection/expansion/contraction/shrink coefficients (1, 2, 1/2, 1/2).
inline SimplexResult nelder_mead(const std::function<double(const Vec2&)>& f, Vec2 x0, double step, double tol,
                                 int max_evals) {
  std::array<Vec2, 3> pts{x0, x0, x0};
  pts[1][0] += step;
  pts[2][1] += step;
  std::array<double, 3> fv{};
  int evals = 0;
  auto eval = [&](const Vec2& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  for (int i = 0; i < 3; ++i) fv[i] = eval(pts[i]);
  auto lerp = [](const Vec2& a, const Vec2& b, double t) { return Vec2{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])}; };

  while (evals < max_evals) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    const int best = idx[0], mid = idx[1], worst = idx[2];
    double size = 0.0;
    for (int i : {mid, worst})
      size = std::max(size, std::max(std::abs(pts[i][0] - pts[best][0]), std::abs(pts[i][1] - pts[best][1])));
    if (size < tol) return {pts[best], fv[best], evals, true};

    const Vec2 centroid{(pts[best][0] + pts[mid][0]) / 2, (pts[best][1] + pts[mid][1]) / 2};
    const Vec2 xr = lerp(centroid, pts[worst], -1.0);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const Vec2 xe = lerp(centroid, pts[worst], -2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        fv[worst] = fe;
      } else {
        pts[worst] = xr;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[mid]) {
      pts[worst] = xr;
      fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    const Vec2 xc = outside ? lerp(centroid, xr, 0.5) : lerp(centroid, pts[worst], 0.5);
    const double fc = eval(xc);
    if (fc < (outside ? fr : fv[worst])) {
      pts[worst] = xc;
      fv[worst] = fc;
      continue;
    }
    for (int i : {mid, worst}) {
      pts[i] = lerp(pts[best], pts[i], 0.5);
      fv[i] = eval(pts[i]);
    }
  }
  const int best = static_cast<int>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  return {pts[best], fv[best], evals, false};
}

/// Central-difference gradient and Hessian of f at x with per-coordinate step h.
inline void gradient_hessian(const std::function<double(const Vec2&)>& f, const Vec2& x, double h, Vec2& g,
                             std::array<Vec2, 2>& H, int& evals) {
  const double f0 = f(x);
  ++evals;
  for (int i = 0; i < 2; ++i) {
    Vec2 xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = f(xp), fm = f(xm);
    evals += 2;
    g[i] = (fp - fm) / (2 * h);
    H[i][i] = (fp - 2 * f0 + fm) / (h * h);
  }
  Vec2 pp{x[0] + h, x[1] + h}, pm{x[0] + h, x[1] - h}, mp{x[0] - h, x[1] + h}, mm{x[0] - h, x[1] - h};
  H[0][1] = H[1][0] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * h * h);
  evals += 4;
}

}  // namespace detail

/// Gradient of the log-likelihood in (delta, mu) by central differences. The
/// step scales with each coordinate and is refined once by Richardson
/// extrapolation.
inline std::array<double, 2> loglik_gradient(double delta, double mu, const ChoiceCounts& counts) {
  std::array<double, 2> x{delta, mu};
  std::array<double, 2> g{};
  for (int i = 0; i < 2; ++i) {
    const double h = 1e-4 * std::max(std::abs(x[i]), 1e-3);
    auto diff = [&](double step) {
      auto xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      return (log_likelihood(xp[0], xp[1], counts) - log_likelihood(xm[0], xm[1], counts)) / (2 * step);
    };
    const double d1 = diff(h), d2 = diff(h / 2);
    g[i] = (4 * d2 - d1) / 3;
  }
  return g;
}

/// Maximum likelihood for (delta, mu) in log-parameter space: multi-start
/// Nelder-Mead, a Newton polish on the best vertex, and Wald intervals from
/// the inverse negative Hessian mapped back by the delta method.
inline MLEFit fit_mle(const ChoiceCounts& counts, const MLEOptions& opts = {}) {
  if (counts.n_obs() == 0) throw DegenerateData("no observations");
  if (counts.n_sooner() == 0 || counts.n_sooner() == counts.n_obs())
    throw DegenerateData(counts.n_sooner() == 0 ? "every choice is the later option: likelihood increases without "
                                                  "bound as delta -> 0"
                                                : "every choice is the sooner option: likelihood increases without "
                                                  "bound as delta -> infinity");
  using detail::Vec2;
  const std::function<double(const Vec2&)> negll = [&](const Vec2& th) {
    if (std::abs(th[0]) > 30 || std::abs(th[1]) > 30) return std::numeric_limits<double>::infinity();
    return -log_likelihood(std::exp(th[0]), std::exp(th[1]), counts);
  };

  MLEFit fit;
  fit.n_obs = counts.n_obs();
  std::optional<detail::SimplexResult> best;
  int total_evals = 0;
  for (const auto& s : opts.start_points()) {
    if (!(s[0] > 0.0 && s[1] > 0.0)) throw std::invalid_argument("start values must be positive");
    auto r = detail::nelder_mead(negll, {std::log(s[0]), std::log(s[1])}, opts.initial_step, opts.simplex_tolerance,
                                 opts.max_evals_per_start);
    total_evals += r.evals;
    if (!r.converged) continue;
    if (!best || r.f < best->f) best = r;
  }
  if (!best) throw NonConvergence("no start converged within " + std::to_string(opts.max_evals_per_start) + " evaluations");

  // Newton polish: the simplex stops on vertex spread, which leaves a
  // gradient proportional to n_obs. A few guarded Newton steps remove it.
  Vec2 th = best->x;
  double fth = best->f;
  const double h = 1e-4;
  for (int it = 0; it < 25; ++it) {
    Vec2 g{};
    std::array<Vec2, 2> H{};
    detail::gradient_hessian(negll, th, h, g, H, total_evals);
    const double det = H[0][0] * H[1][1] - H[0][1] * H[1][0];
    if (!(H[0][0] > 0 && det > 0)) break;
    const Vec2 step{(H[1][1] * g[0] - H[0][1] * g[1]) / det, (H[0][0] * g[1] - H[1][0] * g[0]) / det};
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      const Vec2 cand{th[0] - t * step[0], th[1] - t * step[1]};
      const double fc = negll(cand);
      ++total_evals;
      if (fc <= fth) {
        moved = fc < fth;
        th = cand;
        fth = fc;
        break;
      }
    }
    if (!moved || std::max(std::abs(step[0]), std::abs(step[1])) < 1e-12) break;
  }

  fit.delta_hat = std::exp(th[0]);
  fit.mu_hat = std::exp(th[1]);
  fit.loglik = -fth;
  fit.converged = true;

  Vec2 g{};
  std::array<Vec2, 2> H{};
  detail::gradient_hessian(negll, th, h, g, H, total_evals);
  fit.n_evals = total_evals;
  const double det = H[0][0] * H[1][1] - H[0][1] * H[1][0];
  if (H[0][0] > 0 && det > 0) {
    const double var_ld = H[1][1] / det;
    const double var_lm = H[0][0] / det;
    fit.se_delta = fit.delta_hat * std::sqrt(var_ld);
    fit.se_mu = fit.mu_hat * std::sqrt(var_lm);
  }
  fit.ci95_delta = {fit.delta_hat - 1.96 * fit.se_delta, fit.delta_hat + 1.96 * fit.se_delta};
  fit.ci95_mu = {fit.mu_hat - 1.96 * fit.se_mu, fit.mu_hat + 1.96 * fit.se_mu};
  return fit;
}

inline MLEFit fit_mle(const std::vector<ChoiceObservation>& data, std::optional<std::array<double, 2>> init = {}) {
  MLEOptions opts;
  if (init) opts.starts = {*init};
  return fit_mle(ChoiceCounts(data), opts);
}

enum class Grouping { PerLanguage, FTRPooled };

struct LabeledObservation {
  std::string language;
  FtrClass ftr_class = FtrClass::Strong;
  ChoiceObservation obs;
};

struct GroupFit {
  std::string group;  // language code, or "strong"/"weak" when pooled
  FtrClass ftr_class = FtrClass::Strong;
  std::optional<MLEFit> fit;
  std::string error;
};

/// Independent fit per group, strong-FTR groups first, then by name. A
/// failing group records its error without affecting the others.
inline std::vector<GroupFit> fit_by_group(const std::vector<LabeledObservation>& data, Grouping grouping,
                                          const MLEOptions& opts = {}) {
  std::map<std::pair<int, std::string>, ChoiceCounts> groups;
  for (const auto& o : data) {
    const int rank = o.ftr_class == FtrClass::Strong ? 0 : 1;
    const std::string name =
        grouping == Grouping::PerLanguage ? o.language : std::string(to_string(o.ftr_class));
    groups[{rank, name}].add(o.obs);
  }
  std::vector<GroupFit> out;
  for (const auto& [key, counts] : groups) {
    GroupFit g;
    g.group = key.second;
    g.ftr_class = key.first == 0 ? FtrClass::Strong : FtrClass::Weak;
    try {
      g.fit = fit_mle(counts, opts);
    } catch (const std::exception& e) {
      g.error = e.what();
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace chronopref
