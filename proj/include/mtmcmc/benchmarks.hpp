#pragma once

// Experiment drivers shared by the command-line tool and the acceptance suite.

#include "mtmcmc/diagnostics.hpp"
#include "mtmcmc/models.hpp"
#include "mtmcmc/pharma_model.hpp"
#include "mtmcmc/tmcmc_engine.hpp"

#include <string>
#include <vector>

namespace mtmcmc {

inline KernelConfig random_walk_kernel() {
  KernelConfig k;
  k.spec = {KernelKind::RandomWalk, MetricKind::SampleCovariance};
  return k;
}

inline KernelConfig manifold_kernel(KernelKind kind, MetricKind metric, double rho = 0.2) {
  KernelConfig k;
  k.spec = {kind, metric};
  k.correction.rho = rho;
  return k;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("loglog_slope: need matching series of length >= 2");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("loglog_slope: values must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double mean_acceptance(const RunResult& r) {
  if (r.stages.empty()) return 0.0;
  double s = 0.0;
  for (const auto& st : r.stages) s += st.acceptance_rate;
  return s / static_cast<double>(r.stages.size());
}

// ---------------------------------------------------------------------------
// Truncated Gaussian on [0, 10]^4

struct TruncatedGaussianProblem {
  GaussianTarget target;
  std::vector<MarginalDensity> marginals;

  static TruncatedGaussianProblem make() {
    Vector mu(4), var(4);
    mu << 0, 5, 10, 9;
    var << 0.05, 0.5, 2, 5;
    BoxPrior box = BoxPrior::cube(4, 0.0, 10.0);
    std::vector<MarginalDensity> m;
    for (Eigen::Index i = 0; i < 4; ++i) m.push_back(truncated_normal_marginal(mu[i], var[i], 0.0, 10.0));
    return {GaussianTarget(mu, Matrix(var.asDiagonal()), box), std::move(m)};
  }
};

struct KlRun {
  double kl = 0.0;
  double acceptance = 0.0;
};

inline KlRun truncated_gaussian_run(const TruncatedGaussianProblem& p, const KernelConfig& kernel, const RunConfig& run,
                                    std::size_t bins = 30) {
  const RunResult r = run_tmcmc(p.target, kernel, run);
  return {kl_divergence_marginals(r.samples, p.marginals, p.target.prior(), bins).total, mean_acceptance(r)};
}

struct SweepRow {
  double parameter = 0.0;  ///< rho or sample size
  double mean = 0.0;       ///< mean KL or mean error
  double mean_acceptance = 0.0;
  std::size_t reps = 0;
};

/// Mean KL over replications for each rho. Replication r uses seed base + r.
inline std::vector<SweepRow> rho_sweep(const std::vector<double>& rhos, std::size_t reps, const KernelConfig& base_kernel,
                                       const RunConfig& base_run) {
  const TruncatedGaussianProblem p = TruncatedGaussianProblem::make();
  std::vector<SweepRow> rows;
  for (double rho : rhos) {
    KernelConfig k = base_kernel;
    k.correction.rho = rho;
    std::vector<double> kl, acc;
    for (std::size_t r = 0; r < reps; ++r) {
      RunConfig run = base_run;
      run.seed = base_run.seed + r;
      const KlRun out = truncated_gaussian_run(p, k, run);
      kl.push_back(out.kl);
      acc.push_back(out.acceptance);
    }
    rows.push_back({rho, mean_of(kl), mean_of(acc), reps});
  }
  return rows;
}

/// Mean KL over replications for each sample size.
inline std::vector<SweepRow> kl_size_sweep(const std::vector<std::size_t>& sizes, std::size_t reps,
                                           const KernelConfig& kernel, const RunConfig& base_run) {
  const TruncatedGaussianProblem p = TruncatedGaussianProblem::make();
  std::vector<SweepRow> rows;
  for (std::size_t n : sizes) {
    std::vector<double> kl, acc;
    for (std::size_t r = 0; r < reps; ++r) {
      RunConfig run = base_run;
      run.n_samples = n;
      run.seed = base_run.seed + r;
      const KlRun out = truncated_gaussian_run(p, kernel, run);
      kl.push_back(out.kl);
      acc.push_back(out.acceptance);
    }
    rows.push_back({static_cast<double>(n), mean_of(kl), mean_of(acc), reps});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Zero-mean Gaussian with random correlation on [-10, 10]^d

/// Target for replication `rep`: the correlation matrix depends only on
/// (seed, d, rep), so paired runs share it.
inline GaussianTarget gaussian_benchmark_target(std::size_t d, std::uint64_t seed, std::size_t rep) {
  Rng rng = make_stream(seed, 1000 + d, rep);
  const Matrix c = random_correlation_matrix(d, rng);
  return GaussianTarget(Vector::Zero(static_cast<Eigen::Index>(d)), c, BoxPrior::cube(d, -10.0, 10.0));
}

struct ErrorRun {
  MomentErrors errors;
  RunResult result;
};

inline ErrorRun gaussian_error_run(std::size_t d, std::size_t rep, const KernelConfig& kernel, const RunConfig& run,
                                   std::uint64_t problem_seed) {
  const GaussianTarget t = gaussian_benchmark_target(d, problem_seed, rep);
  RunResult r = run_tmcmc(t, kernel, run);
  const MomentErrors e = moment_errors(r.samples, t.mean(), t.covariance());
  return {e, std::move(r)};
}

/// Mean moment error over replications for each sample size.
inline std::vector<SweepRow> gaussian_size_sweep(std::size_t d, const std::vector<std::size_t>& sizes, std::size_t reps,
                                                 const KernelConfig& kernel, const RunConfig& base_run,
                                                 std::uint64_t problem_seed) {
  std::vector<SweepRow> rows;
  for (std::size_t n : sizes) {
    std::vector<double> err, acc;
    for (std::size_t r = 0; r < reps; ++r) {
      RunConfig run = base_run;
      run.n_samples = n;
      run.seed = base_run.seed + r;
      const ErrorRun out = gaussian_error_run(d, r, kernel, run, problem_seed);
      err.push_back(out.errors.total);
      acc.push_back(mean_acceptance(out.result));
    }
    rows.push_back({static_cast<double>(n), mean_of(err), mean_of(acc), reps});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Bimodal mixture with modes at -(5,...,5) and (5,...,5)

struct BimodalProblem {
  GaussianMixtureTarget target;
  Vector mu1, mu2;
  Matrix cov;

  static BimodalProblem make(std::size_t d, std::uint64_t seed, std::size_t rep) {
    Rng rng = make_stream(seed, 2000 + d, rep);
    const Matrix c = random_correlation_matrix(d, rng);
    const Vector m1 = Vector::Constant(static_cast<Eigen::Index>(d), -5.0);
    const Vector m2 = -m1;
    return {GaussianMixtureTarget({m1, m2}, {c, c}, BoxPrior::cube(d, -10.0, 10.0)), m1, m2, c};
  }
};

inline BimodalErrors bimodal_run(std::size_t d, std::size_t rep, const KernelConfig& kernel, const RunConfig& run,
                                 std::uint64_t problem_seed) {
  const BimodalProblem p = BimodalProblem::make(d, problem_seed, rep);
  const RunResult r = run_tmcmc(p.target, kernel, run);
  return bimodal_errors(r.samples, p.mu1, p.mu2, p.cov, p.cov);
}

// ---------------------------------------------------------------------------
// Evidence check: Gaussian likelihood on a 2D box against tensor quadrature

struct EvidenceProblem {
  GaussianTarget target;

  static EvidenceProblem make() {
    Vector mu(2);
    mu << 0.5, -1.0;
    Matrix cov(2, 2);
    cov << 1.0, 0.3, 0.3, 0.5;
    return {GaussianTarget(mu, cov, BoxPrior::cube(2, -5.0, 5.0))};
  }
};

/// log of the integral of likelihood times prior density over the box, by the
/// composite midpoint rule on an m x m grid.
template <TargetModel M>
double log_evidence_quadrature_2d(const M& model, std::size_t m) {
  if (model.dim() != 2) throw DimensionError("log_evidence_quadrature_2d: 2D targets only");
  const BoxPrior& box = model.prior();
  const Vector h = box.width() / static_cast<double>(m);
  Vector logs(static_cast<Eigen::Index>(m * m));
  Vector th(2);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      th[0] = box.lower()[0] + (static_cast<double>(i) + 0.5) * h[0];
      th[1] = box.lower()[1] + (static_cast<double>(j) + 0.5) * h[1];
      logs[static_cast<Eigen::Index>(i * m + j)] = model.evaluate(th, {DerivativeOrder::Value}).loglike;
    }
  }
  return log_sum_exp(logs) + std::log(h[0] * h[1]) + box.log_density();
}

// ---------------------------------------------------------------------------
// Pharmacodynamics comparison

struct PharmaSettings {
  RunConfig tmcmc;
  RunConfig smtmcmc;
  KernelConfig tmcmc_kernel = random_walk_kernel();
  KernelConfig smtmcmc_kernel = manifold_kernel(KernelKind::SimplifiedManifold, MetricKind::Fisher);
  EsConfig es;

  static PharmaSettings defaults() {
    PharmaSettings s;
    s.tmcmc.n_samples = 10000;
    s.tmcmc.epsilon = 0.04;
    s.smtmcmc.n_samples = 10000;
    s.smtmcmc.epsilon = 0.01;
    s.smtmcmc.adapt_epsilon = true;
    s.es.budget = 100000;
    return s;
  }
};

struct PharmaPair {
  RunResult tmcmc;
  RunResult smtmcmc;
};

/// One paired run: both samplers share `seed`.
inline PharmaPair pharma_paired_run(const PharmaTarget& target, const PharmaSettings& s, std::uint64_t seed) {
  RunConfig tm = s.tmcmc, sm = s.smtmcmc;
  tm.seed = sm.seed = seed;
  PharmaPair out;
  out.tmcmc = run_tmcmc(target, s.tmcmc_kernel, tm);
  out.smtmcmc = run_tmcmc(target, s.smtmcmc_kernel, sm);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark defaults

/// Truncated Gaussian: 500 samples, epsilon 1, 20 steps per chain.
inline RunConfig truncated_benchmark_run() {
  RunConfig r;
  r.n_samples = 500;
  r.epsilon = 1.0;
  r.chain_length = 20;
  return r;
}

inline KernelConfig truncated_benchmark_kernel(double rho = 0.2) {
  return manifold_kernel(KernelKind::SimplifiedManifold, MetricKind::Fisher, rho);
}

/// Gaussian and mixture benchmarks: epsilon 0.04 for the random walk, 1 for
/// the Langevin kernel.
inline RunConfig gaussian_benchmark_run(KernelKind kind, std::size_t n_samples = 1000) {
  RunConfig r;
  r.n_samples = n_samples;
  r.epsilon = kind == KernelKind::RandomWalk ? 0.04 : 1.0;
  return r;
}

/// Bimodal targets have no closed-form Fisher information, so the Langevin
/// kernel uses the Hessian.
inline KernelConfig bimodal_manifold_kernel() {
  return manifold_kernel(KernelKind::SimplifiedManifold, MetricKind::Hessian);
}

}  // namespace mtmcmc
