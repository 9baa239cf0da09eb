#pragma once

// Sample-quality metrics, a boxed evolution-strategy maximizer and profile
// likelihood scans.

#include "mtmcmc/target_model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

namespace mtmcmc {

// ---------------------------------------------------------------------------
// KL divergence of sample marginals against known marginal densities

/// One-dimensional target marginal. When `cdf` is set, bin averages are exact
/// (cdf difference over the bin width); otherwise the pdf at the bin center is
/// used.
struct MarginalDensity {
  std::function<double(double)> pdf;
  std::function<double(double)> cdf;

  double bin_average(double lo, double hi) const {
    if (cdf) return (cdf(hi) - cdf(lo)) / (hi - lo);
    return pdf(0.5 * (lo + hi));
  }
};

/// Normal N(mu, var) truncated to [lo, hi].
inline MarginalDensity truncated_normal_marginal(double mu, double var, double lo, double hi) {
  if (!(var > 0.0) || !(hi > lo)) throw DomainError("truncated_normal_marginal: invalid arguments");
  const double sd = std::sqrt(var);
  const auto phi_cdf = [mu, sd](double x) { return 0.5 * std::erfc(-(x - mu) / (sd * std::sqrt(2.0))); };
  const double mass = phi_cdf(hi) - phi_cdf(lo);
  if (!(mass > 0.0)) throw DomainError("truncated_normal_marginal: no mass inside the interval");
  MarginalDensity m;
  m.pdf = [=](double x) {
    if (x < lo || x > hi) return 0.0;
    const double z = (x - mu) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi) * mass);
  };
  m.cdf = [=](double x) {
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    return (phi_cdf(x) - phi_cdf(lo)) / mass;
  };
  return m;
}

struct KLEstimate {
  std::vector<double> marginals;
  double total = 0.0;
  std::size_t bins = 0;
};

/// Discrete KL sum over equal-width bins: sum_b p_b * width * log(p_b / q_b)
/// for histogram density p and target density q. Empty bins contribute 0; a
/// zero target where p > 0 gives +inf.
inline double kl_histogram(const std::vector<double>& p, const std::vector<double>& q, double width) {
  if (p.size() != q.size()) throw DimensionError("kl_histogram: length mismatch");
  double kl = 0.0;
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (p[b] <= 0.0) continue;
    if (!(q[b] > 0.0)) return kInf;
    kl += p[b] * width * std::log(p[b] / q[b]);
  }
  return std::max(kl, 0.0);
}

/// Per-marginal histogram KL(p_tilde || p) over `bins` equal-width bins on the
/// prior support. Samples are rows.
inline KLEstimate kl_divergence_marginals(const Eigen::Ref<const Matrix>& samples,
                                          const std::vector<MarginalDensity>& targets, const BoxPrior& support,
                                          std::size_t bins = 30) {
  const auto n = samples.rows();
  const auto d = samples.cols();
  if (n < 2) throw DimensionError("kl_divergence_marginals: need at least two samples");
  require_dims(targets.size(), static_cast<std::size_t>(d), "kl_divergence_marginals targets");
  require_dims(support.dim(), static_cast<std::size_t>(d), "kl_divergence_marginals support");
  if (bins < 1) throw DomainError("kl_divergence_marginals: need at least one bin");
  KLEstimate out;
  out.bins = bins;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double lo = support.lower()[j];
    const double hi = support.upper()[j];
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<double> counts(bins, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = samples(i, j);
      if (x < lo || x > hi) continue;
      auto b = static_cast<std::size_t>((x - lo) / width);
      counts[std::min(b, bins - 1)] += 1.0;
    }
    std::vector<double> p(bins), q(bins);
    for (std::size_t b = 0; b < bins; ++b) {
      p[b] = counts[b] / (static_cast<double>(n) * width);
      const double a = lo + static_cast<double>(b) * width;
      q[b] = targets[static_cast<std::size_t>(j)].bin_average(a, a + width);
    }
    const double kl = kl_histogram(p, q, width);
    out.marginals.push_back(kl);
    out.total += kl;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moment errors

struct MomentErrors {
  double e1 = 0.0;
  double e2 = 0.0;
  double total = 0.0;  ///< (e1 + e2) / 2
};

inline Vector sample_mean(const Eigen::Ref<const Matrix>& samples) { return samples.colwise().mean().transpose(); }

/// Unbiased sample covariance (N - 1 normalization). Zero for a single sample.
inline Matrix sample_covariance(const Eigen::Ref<const Matrix>& samples) {
  const Matrix centered = samples.rowwise() - samples.colwise().mean();
  if (samples.rows() < 2) return Matrix::Zero(samples.cols(), samples.cols());
  return centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
}

inline MomentErrors moment_errors_from(const Eigen::Ref<const Vector>& mean_hat, const Eigen::Ref<const Matrix>& cov_hat,
                                       const Eigen::Ref<const Vector>& mu, const Eigen::Ref<const Matrix>& sigma) {
  const auto d = static_cast<double>(mu.size());
  MomentErrors e;
  e.e1 = (mean_hat - mu).cwiseAbs().sum() / d;
  e.e2 = (cov_hat - sigma).cwiseAbs().sum() / (d * d);
  e.total = 0.5 * (e.e1 + e.e2);
  return e;
}

inline MomentErrors moment_errors(const Eigen::Ref<const Matrix>& samples, const Eigen::Ref<const Vector>& mu,
                                  const Eigen::Ref<const Matrix>& sigma) {
  require_dims(static_cast<std::size_t>(samples.cols()), static_cast<std::size_t>(mu.size()), "moment_errors mean");
  require_dims(static_cast<std::size_t>(sigma.rows()), static_cast<std::size_t>(mu.size()), "moment_errors cov");
  if (samples.rows() < 1) throw DimensionError("moment_errors: no samples");
  return moment_errors_from(sample_mean(samples), sample_covariance(samples), mu, sigma);
}

struct BimodalErrors {
  double total = kInf;  ///< average of the two per-mode errors; +inf when a mode is missed
  std::array<MomentErrors, 2> per_mode{};
  std::array<std::size_t, 2> counts{};
  bool mode_missed = true;
};

/// Assigns each sample to the nearest mean and averages the per-mode errors.
inline BimodalErrors bimodal_errors(const Eigen::Ref<const Matrix>& samples, const Eigen::Ref<const Vector>& mu1,
                                    const Eigen::Ref<const Vector>& mu2, const Eigen::Ref<const Matrix>& sigma1,
                                    const Eigen::Ref<const Matrix>& sigma2) {
  std::array<std::vector<Eigen::Index>, 2> members;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const double d1 = (samples.row(i).transpose() - mu1).squaredNorm();
    const double d2 = (samples.row(i).transpose() - mu2).squaredNorm();
    members[d1 <= d2 ? 0 : 1].push_back(i);
  }
  BimodalErrors out;
  out.counts = {members[0].size(), members[1].size()};
  out.mode_missed = members[0].empty() || members[1].empty();
  for (std::size_t m = 0; m < 2; ++m) {
    if (members[m].empty()) continue;
    Matrix part(static_cast<Eigen::Index>(members[m].size()), samples.cols());
    for (std::size_t r = 0; r < members[m].size(); ++r) part.row(static_cast<Eigen::Index>(r)) = samples.row(members[m][r]);
    out.per_mode[m] = m == 0 ? moment_errors(part, mu1, sigma1) : moment_errors(part, mu2, sigma2);
  }
  if (!out.mode_missed) out.total = 0.5 * (out.per_mode[0].total + out.per_mode[1].total);
  return out;
}

// ---------------------------------------------------------------------------
// Evolution strategy

using Objective = std::function<double(const Vector&)>;

struct EsConfig {
  std::size_t budget = 20000;       ///< maximum objective evaluations
  std::size_t population = 0;       ///< 0: 4 + floor(3 ln d)
  double sigma0 = 0.3;              ///< initial step in normalized box units
  double tol_x = 1e-11;             ///< stop when the normalized step falls below this
  double tol_f = 1e-12;             ///< stop when the generation's value range falls below this
  bool restarts = true;             ///< restart with doubled population while budget remains
  std::uint64_t seed = 1;
  std::optional<Vector> start;      ///< initial mean; box center when absent
};

struct EsResult {
  Vector theta;
  double value = kNegInf;
  std::size_t evaluations = 0;
  bool converged = false;  ///< at least one run ended on a tolerance rather than the budget
};

/// Maximizes `f` over the box with a (mu/mu_w, lambda) evolution strategy with
/// rank-based recombination and covariance adaptation. Search runs in [0,1]^d
/// box coordinates; offspring outside the box are resampled.
inline EsResult maximize_loglikelihood(const Objective& f, const BoxPrior& box, const EsConfig& cfg = {}) {
  const auto d = static_cast<Eigen::Index>(box.dim());
  const double dd = static_cast<double>(d);
  const Vector lo = box.lower();
  const Vector width = box.width();
  const auto to_theta = [&](const Vector& u) -> Vector { return lo + width.cwiseProduct(u); };

  std::size_t lambda0 = cfg.population > 0 ? cfg.population : 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(dd)));
  if (cfg.budget < lambda0) throw DomainError("maximize_loglikelihood: budget below the population size");

  Rng rng = make_stream(cfg.seed, 0, 0);
  EsResult best;
  Vector start_u = Vector::Constant(d, 0.5);
  if (cfg.start) {
    require_dims(static_cast<std::size_t>(cfg.start->size()), box.dim(), "maximize_loglikelihood start");
    start_u = (*cfg.start - lo).cwiseQuotient(width).cwiseMax(0.0).cwiseMin(1.0);
  }

  const auto evaluate = [&](const Vector& u) {
    const Vector th = to_theta(u);
    double v = f(th);
    if (std::isnan(v)) v = kNegInf;
    ++best.evaluations;
    if (v > best.value || best.theta.size() == 0) {
      best.value = v;
      best.theta = th;
    }
    return v;
  };

  std::size_t lambda = lambda0;
  bool first_run = true;
  while (best.evaluations + lambda <= cfg.budget) {
    const std::size_t mu = lambda / 2;
    Vector w(static_cast<Eigen::Index>(mu));
    for (std::size_t i = 0; i < mu; ++i) {
      w[static_cast<Eigen::Index>(i)] = std::log(static_cast<double>(mu) + 0.5) - std::log(static_cast<double>(i + 1));
    }
    w /= w.sum();
    const double mueff = 1.0 / w.squaredNorm();
    const double cs = (mueff + 2.0) / (dd + mueff + 5.0);
    const double ds = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (dd + 1.0)) - 1.0) + cs;
    const double cc = (4.0 + mueff / dd) / (dd + 4.0 + 2.0 * mueff / dd);
    const double c1 = 2.0 / ((dd + 1.3) * (dd + 1.3) + mueff);
    const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((dd + 2.0) * (dd + 2.0) + mueff));
    const double chi_n = std::sqrt(dd) * (1.0 - 1.0 / (4.0 * dd) + 1.0 / (21.0 * dd * dd));

    Vector mean = first_run ? start_u : Vector(Vector::NullaryExpr(d, [&](Eigen::Index) { return uniform01(rng); }));
    if (!first_run && best.theta.size() == d && uniform01(rng) < 0.5) mean = (best.theta - lo).cwiseQuotient(width);
    double sigma = cfg.sigma0;
    Matrix c = Matrix::Identity(d, d);
    Matrix b = Matrix::Identity(d, d);
    Vector diag = Vector::Ones(d);
    Vector pc = Vector::Zero(d), ps = Vector::Zero(d);
    std::size_t gen = 0;
    bool stopped = false;

    std::vector<Vector> ys(lambda), us(lambda);
    std::vector<double> vals(lambda);
    std::vector<std::size_t> order(lambda);
    while (best.evaluations + lambda <= cfg.budget) {
      for (std::size_t k = 0; k < lambda; ++k) {
        Vector y, u;
        for (int attempt = 0;; ++attempt) {
          y = b * diag.cwiseProduct(standard_normal(static_cast<std::size_t>(d), rng));
          u = mean + sigma * y;
          if (((u.array() >= 0.0) && (u.array() <= 1.0)).all()) break;
          if (attempt >= 100) {
            u = u.cwiseMax(0.0).cwiseMin(1.0);
            y = (u - mean) / sigma;
            break;
          }
        }
        ys[k] = y;
        us[k] = u;
        vals[k] = evaluate(u);
      }
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t bb) { return vals[a] > vals[bb]; });

      Vector yw = Vector::Zero(d);
      for (std::size_t i = 0; i < mu; ++i) yw += w[static_cast<Eigen::Index>(i)] * ys[order[i]];
      mean += sigma * yw;
      const Vector cinv_half_yw = b * diag.cwiseInverse().asDiagonal() * b.transpose() * yw;
      ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mueff) * cinv_half_yw;
      const double gen_d = static_cast<double>(gen + 1);
      const bool hsig = ps.norm() / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * gen_d)) < (1.4 + 2.0 / (dd + 1.0)) * chi_n;
      pc = (1.0 - cc) * pc + (hsig ? std::sqrt(cc * (2.0 - cc) * mueff) : 0.0) * yw;
      Matrix rank_mu = Matrix::Zero(d, d);
      for (std::size_t i = 0; i < mu; ++i) {
        rank_mu += w[static_cast<Eigen::Index>(i)] * ys[order[i]] * ys[order[i]].transpose();
      }
      const double delta_h = hsig ? 0.0 : cc * (2.0 - cc);
      c = (1.0 - c1 - cmu) * c + c1 * (pc * pc.transpose() + delta_h * c) + cmu * rank_mu;
      c = 0.5 * (c + c.transpose());
      sigma *= std::exp((cs / ds) * (ps.norm() / chi_n - 1.0));
      sigma = std::min(sigma, 1.0);

      Eigen::SelfAdjointEigenSolver<Matrix> es(c);
      b = es.eigenvectors();
      diag = es.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
      ++gen;

      const double range = vals[order.front()] - vals[order.back()];
      if (sigma * diag.maxCoeff() < cfg.tol_x || (std::isfinite(range) && range < cfg.tol_f && gen > 10) ||
          !es.eigenvalues().allFinite()) {
        stopped = true;
        break;
      }
    }
    if (stopped) best.converged = true;
    if (!cfg.restarts) break;
    first_run = false;
    lambda *= 2;
  }
  return best;
}

template <TargetModel M>
EsResult maximize_loglikelihood(const M& model, const EsConfig& cfg = {}) {
  const Objective f = [&](const Vector& th) { return evaluate_target(model, th, {DerivativeOrder::Value}).loglike; };
  return maximize_loglikelihood(f, model.prior(), cfg);
}

// ---------------------------------------------------------------------------
// Profile likelihood

struct ProfilePoint {
  double value = 0.0;        ///< pinned coordinate
  double profile = kNegInf;  ///< maximized log-likelihood
  Vector theta;              ///< full maximizer
  bool converged = false;
};

struct ProfileConfig {
  EsConfig es{.budget = 4000, .population = 0, .sigma0 = 0.2, .tol_x = 1e-10, .tol_f = 1e-10, .restarts = false, .seed = 1, .start = std::nullopt};
  double warm_sigma = 0.05;  ///< initial step when warm-started from a neighbor
  bool cold_start = true;    ///< also optimize from the box center with restarts and keep the better result
  std::size_t cold_budget = 30000;
};

/// PL over `grid` for coordinate `index`: each grid point maximizes over the
/// remaining coordinates, starting from the previous grid point's optimum.
inline std::vector<ProfilePoint> profile_loglikelihood(const Objective& f, const BoxPrior& box, std::size_t index,
                                                       const std::vector<double>& grid, const ProfileConfig& cfg = {},
                                                       std::optional<Vector> start = std::nullopt) {
  const auto d = static_cast<Eigen::Index>(box.dim());
  const auto idx = static_cast<Eigen::Index>(index);
  if (index >= box.dim()) throw DimensionError("profile_loglikelihood: index out of range");
  for (double g : grid) {
    if (!(g > box.lower()[idx] && g < box.upper()[idx])) {
      throw DomainError("profile_loglikelihood: grid value not inside the open box");
    }
  }
  Vector lo(d - 1), hi(d - 1);
  for (Eigen::Index j = 0, r = 0; j < d; ++j) {
    if (j == idx) continue;
    lo[r] = box.lower()[j];
    hi[r] = box.upper()[j];
    ++r;
  }
  const auto embed = [&](const Vector& rest, double pinned) {
    Vector th(d);
    for (Eigen::Index j = 0, r = 0; j < d; ++j) th[j] = j == idx ? pinned : rest[r++];
    return th;
  };
  const auto strip = [&](const Vector& th) {
    Vector rest(d - 1);
    for (Eigen::Index j = 0, r = 0; j < d; ++j) {
      if (j != idx) rest[r++] = th[j];
    }
    return rest;
  };
  std::vector<ProfilePoint> out;
  out.reserve(grid.size());
  if (d == 1) {
    for (double g : grid) out.push_back({g, f(Vector::Constant(1, g)), Vector::Constant(1, g), true});
    return out;
  }
  const BoxPrior sub(lo, hi);
  std::optional<Vector> warm;
  if (start) warm = strip(*start);
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    const double g = grid[gi];
    EsConfig es = cfg.es;
    es.seed = cfg.es.seed + gi;
    if (warm) {
      es.start = warm;
      if (gi > 0) es.sigma0 = cfg.warm_sigma;
    }
    const Objective fg = [&](const Vector& rest) { return f(embed(rest, g)); };
    EsResult r = maximize_loglikelihood(fg, sub, es);
    if (cfg.cold_start) {
      EsConfig cold = cfg.es;
      cold.seed = es.seed + 7919;
      cold.start.reset();
      cold.restarts = true;
      cold.budget = cfg.cold_budget;
      const EsResult c = maximize_loglikelihood(fg, sub, cold);
      if (c.value > r.value) r = c;
    }
    out.push_back({g, r.value, embed(r.theta, g), r.converged});
    warm = r.theta;
  }
  return out;
}

template <TargetModel M>
std::vector<ProfilePoint> profile_loglikelihood(const M& model, std::size_t index, const std::vector<double>& grid,
                                                const ProfileConfig& cfg = {},
                                                std::optional<Vector> start = std::nullopt) {
  const Objective f = [&](const Vector& th) { return evaluate_target(model, th, {DerivativeOrder::Value}).loglike; };
  return profile_loglikelihood(f, model.prior(), index, grid, cfg, std::move(start));
}

}  // namespace mtmcmc
