#pragma once

// Population annealing from the prior to the posterior (BASIS variant of
// transitional MCMC): adaptive tempering schedule, importance resampling,
// fixed-length Metropolis-Hastings chains per resampled member and the
// product-of-weight-means evidence estimator.

#include "mtmcmc/proposal_kernels.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

namespace mtmcmc {

inline constexpr double kRandomWalkTargetAcceptance = 0.234;
inline constexpr double kLangevinTargetAcceptance = 0.574;

struct RunConfig {
  std::size_t n_samples = 1000;
  double cov_threshold = 1.0;     ///< bound on the coefficient of variation of the stage weights
  std::size_t chain_length = 1;   ///< MH steps per resampled member
  std::size_t max_stages = 200;
  double epsilon = 0.04;          ///< proposal covariance multiplier
  bool adapt_epsilon = false;
  double target_acceptance = 0.0; ///< 0 selects 0.234 (random walk) or 0.574 (Langevin)
  double adaptation_gain = 1.0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const {
    if (n_samples < 2) throw DomainError("n_samples must be at least 2");
    if (!(cov_threshold > 0.0)) throw DomainError("cov_threshold must be positive");
    if (chain_length < 1) throw DomainError("chain_length must be at least 1");
    if (max_stages < 1) throw DomainError("max_stages must be at least 1");
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    if (!(target_acceptance >= 0.0 && target_acceptance < 1.0)) throw DomainError("target_acceptance must lie in [0, 1)");
    if (threads < 1) throw DomainError("threads must be at least 1");
  }

  double acceptance_target(KernelKind kind) const {
    if (target_acceptance > 0.0) return target_acceptance;
    return kind == KernelKind::RandomWalk ? kRandomWalkTargetAcceptance : kLangevinTargetAcceptance;
  }
};

/// Samples of one stage with their cached target evaluations.
struct Population {
  Matrix samples;  ///< N x d, one sample per row
  Vector loglikes;
  std::vector<TargetEvaluation> evals;
  std::size_t stage = 0;
  double zeta = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(samples.rows()); }
};

struct StageStats {
  std::size_t stage = 0;
  double zeta = 0.0;        ///< exponent the MH chains targeted
  double zeta_prev = 0.0;
  double log_s = 0.0;       ///< log of the mean unnormalized weight
  double weight_cov = 0.0;  ///< coefficient of variation of the weights at zeta
  Matrix sample_cov;
  double acceptance_rate = 0.0;
  double epsilon_used = 0.0;
  std::array<std::size_t, kCorrectionStatusCount> correction_counts{};
  std::size_t downgraded = 0;
  std::size_t proposals = 0;
  std::size_t model_evaluations = 0;
  std::size_t unique_resampled = 0;

  double corrected_fraction() const {
    const std::size_t total = correction_counts[0] + correction_counts[1] + correction_counts[2] + correction_counts[3];
    if (total == 0) return 0.0;
    return static_cast<double>(total - correction_counts[0]) / static_cast<double>(total);
  }
};

struct RunResult {
  Matrix samples;
  Vector loglikes;
  double log_evidence = 0.0;
  std::vector<StageStats> stages;
  ParamVector best_sample;
  double best_loglike = kNegInf;
  double final_zeta = 0.0;
  bool completed = false;  ///< false when max_stages was hit before zeta = 1
};

/// Coefficient of variation (population standard deviation over mean) of
/// w_k = exp(dz * loglike_k).
inline double weight_cov(const Eigen::Ref<const Vector>& loglikes, double dz) {
  const double m = loglikes.maxCoeff();
  const Eigen::Index n = loglikes.size();
  Vector w(n);
  for (Eigen::Index k = 0; k < n; ++k) w[k] = std::exp(dz * (loglikes[k] - m));
  const double mean = w.mean();
  if (!(mean > 0.0)) return kInf;
  const double var = (w.array() - mean).square().mean();
  return std::sqrt(var) / mean;
}

/// Largest next exponent in (zeta, 1] whose weight coefficient of variation
/// stays within `threshold`, found by bisection on the increment.
inline double next_zeta(const Eigen::Ref<const Vector>& loglikes, double zeta, double threshold) {
  if (loglikes.size() == 0) throw std::invalid_argument("next_zeta: empty population");
  if (!(loglikes.maxCoeff() > kNegInf)) throw std::runtime_error("next_zeta: every log-likelihood is -inf");
  if (!(zeta >= 0.0 && zeta < 1.0)) throw DomainError("next_zeta: zeta must lie in [0, 1)");
  const double full = 1.0 - zeta;
  if (weight_cov(loglikes, full) <= threshold) return 1.0;
  double lo = 0.0;
  double hi = full;
  for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (weight_cov(loglikes, mid) <= threshold) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  // A population whose CoV exceeds the bound for every positive increment
  // still has to advance.
  const double dz = lo > 0.0 ? lo : hi;
  return std::min(1.0, zeta + dz);
}

struct ImportanceWeights {
  Vector normalized;
  double log_s = 0.0;  ///< log mean of exp(dz * loglike)
};

inline ImportanceWeights importance_weights(const Eigen::Ref<const Vector>& loglikes, double dz) {
  if (!(dz > 0.0)) throw DomainError("importance_weights: increment must be positive");
  const Eigen::Index n = loglikes.size();
  const Vector scaled = dz * loglikes;
  const double lse = log_sum_exp(scaled);
  if (!(lse > kNegInf)) throw std::runtime_error("importance_weights: degenerate population");
  ImportanceWeights out;
  out.normalized = (scaled.array() - lse).exp();
  out.log_s = lse - std::log(static_cast<double>(n));
  return out;
}

/// N_out i.i.d. draws from the categorical distribution `weights`.
inline std::vector<std::size_t> multinomial_resample(const Eigen::Ref<const Vector>& weights, std::size_t n_out,
                                                     Rng& rng) {
  const Eigen::Index n = weights.size();
  std::vector<double> cdf(static_cast<std::size_t>(n));
  double acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    acc += weights[k];
    cdf[static_cast<std::size_t>(k)] = acc;
  }
  std::vector<std::size_t> out(n_out);
  for (auto& idx : out) {
    const double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t k = static_cast<std::size_t>(it - cdf.begin());
    if (k >= static_cast<std::size_t>(n)) k = static_cast<std::size_t>(n) - 1;
    // skip zero-weight entries that share the cumulative value
    while (weights[static_cast<Eigen::Index>(k)] <= 0.0 && k + 1 < static_cast<std::size_t>(n)) ++k;
    idx = k;
  }
  return out;
}

/// Weighted second central moment about the weighted mean (rows are samples).
inline Matrix weighted_sample_covariance(const Eigen::Ref<const Matrix>& samples, const Eigen::Ref<const Vector>& weights) {
  require_dims(static_cast<std::size_t>(weights.size()), static_cast<std::size_t>(samples.rows()),
               "weighted_sample_covariance");
  const Vector mean = samples.transpose() * weights;
  const Matrix centered = samples.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * weights.asDiagonal() * centered;
  return 0.5 * (cov + cov.transpose());
}

/// log of the evidence estimate: sum of the per-stage log S_j.
inline double log_evidence(const std::vector<double>& log_s) {
  if (log_s.empty()) throw std::invalid_argument("log_evidence: no completed stage");
  double total = 0.0;
  for (double v : log_s) total += v;
  return total;
}

/// log eps' = log eps + gain * (observed - target), clamped to [1e-6, 1e3].
inline double adapt_epsilon(double epsilon, double observed, double target, double gain = 1.0) {
  if (!(epsilon > 0.0)) throw DomainError("adapt_epsilon: epsilon must be positive");
  const double next = epsilon * std::exp(gain * (observed - target));
  return std::clamp(next, 1e-6, 1e3);
}

/// Chain state: a point inside the box and its cached evaluation.
struct ChainState {
  ParamVector theta;
  TargetEvaluation eval;
};

struct MhOutcome {
  bool accepted = false;
  bool evaluated = false;  ///< the model was invoked at the proposal
  bool downgraded = false;
  CorrectionStatus status = CorrectionStatus::Unchanged;
};

/// One Metropolis-Hastings step at exponent zeta. The state's log-likelihood is
/// cached and never recomputed for rejected moves.
template <TargetModel M>
MhOutcome mh_step(ChainState& state, const KernelConfig& kernel, double zeta, double epsilon, const M& model,
                  const Matrix& sample_cov, Rng& rng) {
  MhOutcome out;
  const BoxPrior& prior = model.prior();
  const ProposalInfo fwd = propose(kernel, state.theta, state.eval, zeta, epsilon, prior, sample_cov);
  out.status = fwd.status;
  out.downgraded = fwd.downgraded;
  const ParamVector cand = fwd.proposal.sample(rng);
  const double u = uniform01(rng);
  if (!prior.contains(cand)) return out;

  // full derivative data is kept so the next step can build its proposal
  TargetEvaluation cand_eval = model.evaluate(cand, kernel.spec.request());
  out.evaluated = true;
  if (!(cand_eval.loglike > kNegInf)) return out;

  double log_a;
  if (fwd.effective == KernelKind::RandomWalk) {
    log_a = log_acceptance_ratio(KernelKind::RandomWalk, cand, state.theta, cand_eval.loglike, state.eval.loglike,
                                 fwd.proposal, fwd.proposal, zeta, prior);
  } else {
    const ProposalInfo rev = propose(kernel, cand, cand_eval, zeta, epsilon, prior, sample_cov);
    if (rev.effective == KernelKind::RandomWalk) return out;  // reverse metric unusable
    log_a = log_acceptance_ratio(kernel.spec.kind, cand, state.theta, cand_eval.loglike, state.eval.loglike,
                                 fwd.proposal, rev.proposal, zeta, prior, kernel.strict_table_acceptance);
  }
  if (log_a >= 0.0 || std::log(u) < log_a) {
    state.theta = cand;
    state.eval = std::move(cand_eval);
    out.accepted = true;
  }
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers with a static
/// partition. Each index must touch only its own outputs.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([begin, end, &fn] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
}

/// Stream index reserved for the resampling draw of a stage.
inline constexpr std::uint64_t kResampleStream = 0xffffffffffffffffULL;

using StageCallback = std::function<void(const StageStats&, const Population&)>;

template <TargetModel M>
RunResult run_tmcmc(const M& model, const KernelConfig& kernel, const RunConfig& cfg,
                    const StageCallback& on_stage = {}) {
  cfg.validate();
  kernel.spec.validate();
  kernel.correction.validate();
  if (kernel.spec.uses_metric() && !model.supports(kernel.spec.metric)) {
    throw std::invalid_argument("target does not provide the requested metric");
  }
  if (kernel.spec.kind == KernelKind::PositionDependent && !model.supports_metric_derivatives()) {
    throw std::invalid_argument("target does not provide metric derivatives");
  }
  const std::size_t n = cfg.n_samples;
  const std::size_t d = model.dim();
  const EvalRequest req = kernel.spec.request();

  Population pop;
  pop.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  pop.loglikes.resize(static_cast<Eigen::Index>(n));
  pop.evals.resize(n);
  parallel_for(n, cfg.threads, [&](std::size_t k) {
    Rng rng = make_stream(cfg.seed, 0, k);
    const ParamVector theta = model.prior().sample(rng);
    pop.evals[k] = evaluate_target(model, theta, req);
    pop.samples.row(static_cast<Eigen::Index>(k)) = theta.transpose();
    pop.loglikes[static_cast<Eigen::Index>(k)] = pop.evals[k].loglike;
  });

  RunResult result;
  std::vector<double> log_s;
  double epsilon = cfg.epsilon;
  const double target_acc = cfg.acceptance_target(kernel.spec.kind);

  while (pop.zeta < 1.0 && pop.stage < cfg.max_stages) {
    StageStats st;
    st.stage = pop.stage + 1;
    st.zeta_prev = pop.zeta;
    const double zeta_next = next_zeta(pop.loglikes, pop.zeta, cfg.cov_threshold);
    const double dz = zeta_next - pop.zeta;
    const ImportanceWeights w = importance_weights(pop.loglikes, dz);
    st.zeta = zeta_next;
    st.log_s = w.log_s;
    st.weight_cov = weight_cov(pop.loglikes, dz);
    log_s.push_back(w.log_s);
    st.sample_cov = weighted_sample_covariance(pop.samples, w.normalized);
    st.epsilon_used = epsilon;

    Rng resample_rng = make_stream(cfg.seed, st.stage, kResampleStream);
    const std::vector<std::size_t> idx = multinomial_resample(w.normalized, n, resample_rng);
    {
      std::vector<std::size_t> sorted = idx;
      std::sort(sorted.begin(), sorted.end());
      st.unique_resampled = static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
    }

    Population next;
    next.samples.resize(pop.samples.rows(), pop.samples.cols());
    next.loglikes.resize(pop.loglikes.size());
    next.evals.resize(n);
    next.stage = st.stage;
    next.zeta = zeta_next;
    std::vector<std::array<std::size_t, kCorrectionStatusCount>> counts(n);
    std::vector<std::size_t> accepted(n, 0), evaluated(n, 0), downgraded(n, 0);
    parallel_for(n, cfg.threads, [&](std::size_t k) {
      Rng rng = make_stream(cfg.seed, st.stage, k);
      ChainState state{pop.samples.row(static_cast<Eigen::Index>(idx[k])).transpose(), pop.evals[idx[k]]};
      counts[k].fill(0);
      for (std::size_t l = 0; l < cfg.chain_length; ++l) {
        const MhOutcome o = mh_step(state, kernel, zeta_next, epsilon, model, st.sample_cov, rng);
        accepted[k] += o.accepted ? 1 : 0;
        evaluated[k] += o.evaluated ? 1 : 0;
        downgraded[k] += o.downgraded ? 1 : 0;
        if (kernel.spec.uses_metric() && !o.downgraded) ++counts[k][static_cast<std::size_t>(o.status)];
      }
      next.samples.row(static_cast<Eigen::Index>(k)) = state.theta.transpose();
      next.loglikes[static_cast<Eigen::Index>(k)] = state.eval.loglike;
      next.evals[k] = std::move(state.eval);
    });

    std::size_t acc_total = 0;
    for (std::size_t k = 0; k < n; ++k) {
      acc_total += accepted[k];
      st.model_evaluations += evaluated[k];
      st.downgraded += downgraded[k];
      for (std::size_t s = 0; s < kCorrectionStatusCount; ++s) st.correction_counts[s] += counts[k][s];
    }
    st.proposals = n * cfg.chain_length;
    st.acceptance_rate = static_cast<double>(acc_total) / static_cast<double>(st.proposals);
    if (cfg.adapt_epsilon) {
      epsilon = adapt_epsilon(epsilon, st.acceptance_rate, target_acc, cfg.adaptation_gain);
    }
    pop = std::move(next);
    if (on_stage) on_stage(st, pop);
    result.stages.push_back(std::move(st));
  }

  result.completed = pop.zeta >= 1.0;
  result.final_zeta = pop.zeta;
  result.log_evidence = log_s.empty() ? 0.0 : log_evidence(log_s);
  Eigen::Index best = 0;
  result.best_loglike = pop.loglikes.maxCoeff(&best);
  result.best_sample = pop.samples.row(best).transpose();
  result.samples = std::move(pop.samples);
  result.loglikes = std::move(pop.loglikes);
  return result;
}

}  // namespace mtmcmc
