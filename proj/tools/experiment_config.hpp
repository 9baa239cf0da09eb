#pragma once

#include "mtmcmc/benchmarks.hpp"
#include "mtmcmc/io.hpp"

#include <toml.hpp>

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mtmcmc::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::string name = "gaussian";
  std::size_t dim = 5;
  std::optional<std::vector<double>> mean;
  std::optional<Matrix> covariance;
  std::optional<std::vector<double>> variances;  // truncated-gaussian
  std::vector<double> lower, upper;               // empty: model default
  std::uint64_t structure_seed = 7;
  std::size_t structure_rep = 0;
  std::optional<std::vector<std::vector<double>>> means;  // gaussian-mixture
  double separation = 5.0;
  // ODE models
  std::string data;
  std::uint64_t noise_seed = 7;
  std::optional<std::vector<double>> truth;
  std::optional<std::vector<double>> times;
  std::optional<std::vector<double>> doses;
  double d1 = 40.0;
  double capacity = 100.0;
  double ode_tol = 1e-8;
};

struct ExperimentConfig {
  ModelConfig model;
  std::string kernel = "smtmcmc";
  std::string metric = "fisher";
  KernelConfig kernel_cfg = manifold_kernel(KernelKind::SimplifiedManifold, MetricKind::Fisher);
  RunConfig run;
  std::size_t reps = 1;
  std::string outdir = "out";
  std::size_t threads = 1;
  // pharma / profile
  std::size_t es_budget = 100000;
  std::size_t profile_index = 0;
  std::size_t profile_points = 20;
  std::optional<std::vector<double>> profile_grid;
};

namespace detail {

/// Reads keys of one table and rejects any key it was not asked about.
class Section {
 public:
  Section(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

  const toml::node* node(const std::string& key) {
    used_.insert(key);
    return t_ ? t_->get(key) : nullptr;
  }

  double number(const std::string& key, double fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (auto v = n->value<double>()) return *v;
    throw ConfigError(where(key) + ": expected a number");
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    auto v = n->value<std::int64_t>();
    if (!v || *v < 0) throw ConfigError(where(key) + ": expected a non-negative integer");
    return static_cast<std::size_t>(*v);
  }

  bool flag(const std::string& key, bool fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (auto v = n->value<bool>()) return *v;
    throw ConfigError(where(key) + ": expected true or false");
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (auto v = n->value<std::string>()) return *v;
    throw ConfigError(where(key) + ": expected a string");
  }

  std::optional<std::vector<double>> numbers(const std::string& key) {
    const toml::node* n = node(key);
    if (!n) return std::nullopt;
    return to_numbers(*n, where(key));
  }

  std::optional<std::vector<std::vector<double>>> rows(const std::string& key) {
    const toml::node* n = node(key);
    if (!n) return std::nullopt;
    const toml::array* a = n->as_array();
    if (!a) throw ConfigError(where(key) + ": expected an array of arrays");
    std::vector<std::vector<double>> out;
    for (const auto& row : *a) out.push_back(to_numbers(row, where(key)));
    return out;
  }

  /// Scalar broadcast to `dim` entries, or an array of length `dim`.
  std::vector<double> bound(const std::string& key, std::size_t dim) {
    const toml::node* n = node(key);
    if (!n) return {};
    if (auto v = n->value<double>()) return std::vector<double>(dim, *v);
    auto v = to_numbers(*n, where(key));
    if (v.size() != dim) throw ConfigError(where(key) + ": expected " + std::to_string(dim) + " entries");
    return v;
  }

  const toml::table* table(const std::string& key) {
    const toml::node* n = node(key);
    if (!n) return nullptr;
    if (const toml::table* t = n->as_table()) return t;
    throw ConfigError(where(key) + ": expected a table");
  }

  void finish() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_) {
      if (!used_.count(std::string(k.str()))) throw ConfigError(where(std::string(k.str())) + ": unknown key");
    }
  }

 private:
  std::string where(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  static std::vector<double> to_numbers(const toml::node& n, const std::string& where) {
    const toml::array* a = n.as_array();
    if (!a) throw ConfigError(where + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *a) {
      auto v = e.value<double>();
      if (!v) throw ConfigError(where + ": expected an array of numbers");
      out.push_back(*v);
    }
    return out;
  }

  const toml::table* t_;
  std::string name_;
  std::set<std::string> used_;
};

inline KernelKind parse_kernel(const std::string& s) {
  if (s == "tmcmc") return KernelKind::RandomWalk;
  if (s == "smtmcmc") return KernelKind::SimplifiedManifold;
  if (s == "ptmcmc") return KernelKind::PositionDependent;
  throw ConfigError("kernel must be tmcmc, smtmcmc or ptmcmc (got '" + s + "')");
}

inline MetricKind parse_metric(const std::string& s) {
  if (s == "hessian") return MetricKind::Hessian;
  if (s == "fisher") return MetricKind::Fisher;
  throw ConfigError("metric must be hessian or fisher (got '" + s + "')");
}

}  // namespace detail

inline void finalize_kernel(ExperimentConfig& c) {
  const KernelKind kind = detail::parse_kernel(c.kernel);
  c.kernel_cfg.spec.kind = kind;
  c.kernel_cfg.spec.metric =
      kind == KernelKind::RandomWalk ? MetricKind::SampleCovariance : detail::parse_metric(c.metric);
  try {
    c.kernel_cfg.spec.validate();
    c.kernel_cfg.correction.validate();
    c.run.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline ExperimentConfig parse_config(const toml::table& root) {
  ExperimentConfig c;
  detail::Section top(&root, "");
  c.run.seed = top.count("seed", c.run.seed);
  c.reps = top.count("reps", c.reps);
  c.outdir = top.text("outdir", c.outdir);
  c.threads = top.count("threads", c.threads);

  detail::Section m(top.table("model"), "model");
  ModelConfig& mc = c.model;
  mc.name = m.text("name", mc.name);
  mc.dim = m.count("dim", mc.dim);
  mc.mean = m.numbers("mean");
  if (auto rows = m.rows("covariance")) {
    Matrix cov(static_cast<Eigen::Index>(rows->size()), static_cast<Eigen::Index>(rows->size()));
    for (std::size_t i = 0; i < rows->size(); ++i) {
      if ((*rows)[i].size() != rows->size()) throw ConfigError("model.covariance: expected a square matrix");
      for (std::size_t j = 0; j < rows->size(); ++j) {
        cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*rows)[i][j];
      }
    }
    mc.covariance = cov;
  }
  mc.variances = m.numbers("variances");
  mc.structure_seed = m.count("structure_seed", mc.structure_seed);
  mc.structure_rep = m.count("structure_rep", mc.structure_rep);
  mc.means = m.rows("means");
  mc.separation = m.number("separation", mc.separation);
  mc.data = m.text("data", mc.data);
  mc.noise_seed = m.count("noise_seed", mc.noise_seed);
  mc.truth = m.numbers("truth");
  mc.times = m.numbers("times");
  mc.doses = m.numbers("doses");
  mc.d1 = m.number("d1", mc.d1);
  mc.capacity = m.number("capacity", mc.capacity);
  mc.ode_tol = m.number("ode_tol", mc.ode_tol);
  if (mc.name == "truncated-gaussian" && !m.node("dim")) mc.dim = 4;
  mc.lower = m.bound("lower", mc.dim);
  mc.upper = m.bound("upper", mc.dim);
  m.finish();

  detail::Section k(top.table("kernel"), "kernel");
  c.kernel = k.text("kernel", c.kernel);
  c.metric = k.text("metric", c.metric);
  CorrectionConfig& cc = c.kernel_cfg.correction;
  cc.eta = k.number("eta", cc.eta);
  cc.rho = k.number("rho", cc.rho);
  cc.eig_tol = k.number("eig_tol", cc.eig_tol);
  c.kernel_cfg.strict_table_acceptance = k.flag("strict_table_acceptance", c.kernel_cfg.strict_table_acceptance);
  c.kernel_cfg.boundary_scaling = k.flag("boundary_scaling", c.kernel_cfg.boundary_scaling);
  k.finish();

  detail::Section r(top.table("run"), "run");
  RunConfig& rc = c.run;
  rc.n_samples = r.count("n_samples", rc.n_samples);
  rc.cov_threshold = r.number("cov_threshold", rc.cov_threshold);
  rc.chain_length = r.count("chain_length", rc.chain_length);
  rc.max_stages = r.count("max_stages", rc.max_stages);
  rc.epsilon = r.number("epsilon", rc.epsilon);
  rc.adapt_epsilon = r.flag("adapt_epsilon", rc.adapt_epsilon);
  rc.target_acceptance = r.number("target_acceptance", rc.target_acceptance);
  rc.adaptation_gain = r.number("adaptation_gain", rc.adaptation_gain);
  r.finish();

  detail::Section p(top.table("profile"), "profile");
  c.es_budget = p.count("es_budget", c.es_budget);
  c.profile_index = p.count("index", c.profile_index);
  c.profile_points = p.count("points", c.profile_points);
  c.profile_grid = p.numbers("grid");
  p.finish();

  top.finish();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  try {
    return parse_config(toml::parse_file(path));
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path << ':' << e.source().begin.line << ':' << e.source().begin.column << ": " << e.description();
    throw ConfigError(os.str());
  }
}

/// Everything that influences results; thread count and output directory are
/// left out so that they do not change the hash.
inline Json effective_config(const ExperimentConfig& c) {
  const ModelConfig& m = c.model;
  Json model{{"name", m.name}, {"dim", m.dim}};
  if (m.mean) model["mean"] = *m.mean;
  if (m.covariance) model["covariance"] = matrix_json(*m.covariance);
  if (m.variances) model["variances"] = *m.variances;
  if (!m.lower.empty()) model["lower"] = m.lower;
  if (!m.upper.empty()) model["upper"] = m.upper;
  model["structure_seed"] = m.structure_seed;
  model["structure_rep"] = m.structure_rep;
  if (m.means) model["means"] = *m.means;
  model["separation"] = m.separation;
  if (!m.data.empty()) model["data"] = m.data;
  model["noise_seed"] = m.noise_seed;
  if (m.truth) model["truth"] = *m.truth;
  if (m.times) model["times"] = *m.times;
  if (m.doses) model["doses"] = *m.doses;
  model["d1"] = m.d1;
  model["capacity"] = m.capacity;
  model["ode_tol"] = m.ode_tol;

  const CorrectionConfig& cc = c.kernel_cfg.correction;
  Json kernel{{"kernel", c.kernel},
              {"metric", c.metric},
              {"eta", cc.eta},
              {"rho", cc.rho},
              {"eig_tol", cc.eig_tol},
              {"strict_table_acceptance", c.kernel_cfg.strict_table_acceptance},
              {"boundary_scaling", c.kernel_cfg.boundary_scaling}};
  const RunConfig& r = c.run;
  Json run{{"n_samples", r.n_samples},           {"cov_threshold", r.cov_threshold},
           {"chain_length", r.chain_length},     {"max_stages", r.max_stages},
           {"epsilon", r.epsilon},               {"adapt_epsilon", r.adapt_epsilon},
           {"target_acceptance", r.target_acceptance}, {"adaptation_gain", r.adaptation_gain}};
  Json profile{{"es_budget", c.es_budget}, {"index", c.profile_index}, {"points", c.profile_points}};
  if (c.profile_grid) profile["grid"] = *c.profile_grid;
  return Json{{"seed", r.seed}, {"reps", c.reps}, {"model", model}, {"kernel", kernel}, {"run", run},
              {"profile", profile}};
}

// ---------------------------------------------------------------------------
// Model construction

using ExpDecayTarget = DataLikelihoodTarget<ExponentialDecayObservable>;
using AnyTarget = std::variant<GaussianTarget, GaussianMixtureTarget, PharmaTarget, ExpDecayTarget>;

struct BuiltModel {
  AnyTarget target;
  std::optional<DataSet> data;                   // ODE models
  std::vector<MarginalDensity> marginals;        // truncated-gaussian
};

namespace detail {

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline BoxPrior box_for(const ModelConfig& m, double lo, double hi) {
  Vector l = m.lower.empty() ? Vector::Constant(static_cast<Eigen::Index>(m.dim), lo) : to_vector(m.lower);
  Vector u = m.upper.empty() ? Vector::Constant(static_cast<Eigen::Index>(m.dim), hi) : to_vector(m.upper);
  return BoxPrior(l, u);
}

inline Vector mean_for(const ModelConfig& m, const Vector& fallback) {
  if (!m.mean) return fallback;
  if (m.mean->size() != m.dim) throw ConfigError("model.mean: expected " + std::to_string(m.dim) + " entries");
  return to_vector(*m.mean);
}

inline std::vector<double> times_or(const std::optional<std::vector<double>>& t, std::vector<double> fallback) {
  return t ? *t : std::move(fallback);
}

}  // namespace detail

inline PharmaScenario pharma_scenario(const ModelConfig& m) {
  PharmaScenario sc = PharmaScenario::reference();
  if (m.truth) {
    if (m.truth->size() != kPharmaParams + 1) throw ConfigError("model.truth: expected 8 entries for pharma");
    sc.truth = detail::to_vector(*m.truth);
  }
  sc.times = detail::times_or(m.times, sc.times);
  sc.dose_times = detail::times_or(m.doses, sc.dose_times);
  sc.d1 = m.d1;
  sc.capacity = m.capacity;
  return sc;
}

inline BuiltModel build_model(const ModelConfig& m) {
  using detail::box_for;
  using detail::mean_for;
  const auto d = static_cast<Eigen::Index>(m.dim);
  if (m.name == "gaussian") {
    if (m.dim == 0) throw ConfigError("model.dim must be positive");
    Matrix cov;
    if (m.covariance) {
      cov = *m.covariance;
    } else {
      Rng rng = make_stream(m.structure_seed, 1000 + m.dim, m.structure_rep);
      cov = random_correlation_matrix(m.dim, rng);
    }
    if (cov.rows() != d) throw ConfigError("model.covariance: size does not match model.dim");
    return {GaussianTarget(mean_for(m, Vector::Zero(d)), cov, box_for(m, -10.0, 10.0)), std::nullopt, {}};
  }
  if (m.name == "truncated-gaussian") {
    Vector mu = mean_for(m, TruncatedGaussianProblem::make().target.mean());
    Vector var = TruncatedGaussianProblem::make().target.covariance().diagonal();
    if (m.variances) var = detail::to_vector(*m.variances);
    if (mu.size() != d || var.size() != d) throw ConfigError("truncated-gaussian: mean/variances must match model.dim");
    const BoxPrior box = box_for(m, 0.0, 10.0);
    std::vector<MarginalDensity> marg;
    for (Eigen::Index i = 0; i < d; ++i) {
      marg.push_back(truncated_normal_marginal(mu[i], var[i], box.lower()[i], box.upper()[i]));
    }
    return {GaussianTarget(mu, Matrix(var.asDiagonal()), box), std::nullopt, std::move(marg)};
  }
  if (m.name == "gaussian-mixture") {
    std::vector<Vector> means;
    if (m.means) {
      for (const auto& v : *m.means) {
        if (v.size() != m.dim) throw ConfigError("model.means: each mean needs model.dim entries");
        means.push_back(detail::to_vector(v));
      }
    } else {
      means = {Vector::Constant(d, -m.separation), Vector::Constant(d, m.separation)};
    }
    Matrix cov;
    if (m.covariance) {
      cov = *m.covariance;
    } else {
      Rng rng = make_stream(m.structure_seed, 2000 + m.dim, m.structure_rep);
      cov = random_correlation_matrix(m.dim, rng);
    }
    std::vector<Matrix> covs(means.size(), cov);
    return {GaussianMixtureTarget(means, covs, box_for(m, -10.0, 10.0)), std::nullopt, {}};
  }
  if (m.name == "pharma") {
    const PharmaScenario sc = pharma_scenario(m);
    DataSet data = m.data.empty() ? generate_pharma_data(sc, m.noise_seed) : read_data_csv(m.data);
    PharmaTarget t = make_pharma_target(sc, data, m.ode_tol);
    return {std::move(t), std::move(data), {}};
  }
  if (m.name == "custom-ode") {
    // Exponential decay y' = -k y, y(0) = y0; theta = (k, y0, sigma).
    Vector truth(3);
    truth << 0.5, 10.0, 0.2;
    if (m.truth) {
      if (m.truth->size() != 3) throw ConfigError("model.truth: expected 3 entries (k, y0, sigma) for custom-ode");
      truth = detail::to_vector(*m.truth);
    }
    std::vector<double> times = detail::times_or(m.times, {0.5, 1, 1.5, 2, 3, 4, 5, 6});
    ExponentialDecayObservable obs{times, m.ode_tol};
    DataSet data = [&] {
      if (!m.data.empty()) return read_data_csv(m.data);
      const ModelEvaluation ev = obs.evaluate(truth.head(2), 0);
      Rng rng = make_stream(m.noise_seed, 0, 0);
      Vector y = ev.f + truth[2] * standard_normal(times.size(), rng);
      return DataSet(detail::to_vector(times), y);
    }();
    std::vector<double> dt(data.inputs().data(), data.inputs().data() + data.inputs().size());
    Vector lo(3), hi(3);
    lo << 1e-3, 1e-3, 1e-3;
    hi << 5.0, 50.0, 5.0;
    ExponentialDecayObservable fit{std::move(dt), m.ode_tol};
    return {ExpDecayTarget(std::move(fit), data, BoxPrior(lo, hi)), std::move(data), {}};
  }
  throw ConfigError("model.name must be gaussian, gaussian-mixture, truncated-gaussian, pharma or custom-ode (got '" +
                    m.name + "')");
}

/// Default values of every key, as TOML.
inline std::string config_reference() {
  return R"(# Experiment configuration reference. Every key is optional.

seed = 1                 # master seed
reps = 1                 # replications (benchmark, evidence-check)
outdir = "out"           # overridden by MTMCMC_OUTDIR, then by --outdir
threads = 1              # overridden by MTMCMC_THREADS, then by --threads

[model]
name = "gaussian"        # gaussian | gaussian-mixture | truncated-gaussian | pharma | custom-ode
dim = 5                  # 4 for truncated-gaussian; fixed by the model for ODE models
# mean = [...]           # gaussian: zeros; truncated-gaussian: [0, 5, 10, 9]
# covariance = [[...]]   # gaussian, gaussian-mixture: random correlation matrix
# variances = [...]      # truncated-gaussian: [0.05, 0.5, 2, 5]
# lower, upper           # scalar or per-coordinate; [-10, 10] (gaussians), [0, 10] (truncated)
structure_seed = 7       # seed of the random correlation matrix
structure_rep = 0        # replicate index of the random correlation matrix
# means = [[...], ...]   # gaussian-mixture component means
separation = 5.0         # gaussian-mixture: modes at -separation and +separation
# data = "data.csv"      # ODE models: t,d CSV; synthetic data when absent
noise_seed = 7           # seed of the synthetic observation noise
# truth = [...]          # pharma: 0.24, 0.729, 0.0295, 0.121, 0.0031, 0.00867, 0.9, 1.0
                         # custom-ode: 0.5, 10, 0.2  (k, y0, sigma)
# times = [...]          # pharma: 0, 3, ..., 72; custom-ode: 0.5, 1, 1.5, 2, 3, 4, 5, 6
# doses = [...]          # pharma: 12, 13.5, 15, 16.5, 18, 19.5
d1 = 40.0                # pharma: initial mean tumor diameter
capacity = 100.0         # pharma: carrying capacity K
ode_tol = 1e-8           # ODE absolute and relative tolerance

[kernel]
kernel = "smtmcmc"       # tmcmc | smtmcmc | ptmcmc
metric = "fisher"        # hessian | fisher (ptmcmc requires fisher)
eta = 0.3                # mass outside the proposal ellipsoid
rho = 0.2                # box extension as a fraction of each side
eig_tol = 1e-10          # relative eigenvalue threshold for singular metrics
strict_table_acceptance = true
boundary_scaling = true

[run]
n_samples = 1000
cov_threshold = 1.0      # bound on the coefficient of variation of the weights
chain_length = 1         # MH steps per resampled member
max_stages = 200
epsilon = 0.04           # proposal scale
adapt_epsilon = false
target_acceptance = 0.0  # 0: 0.234 for tmcmc, 0.574 for the Langevin kernels
adaptation_gain = 1.0

[profile]
es_budget = 100000       # evolution-strategy evaluations for the ML estimate
index = 0                # profiled coordinate
points = 20              # grid points across the prior range
# grid = [...]           # explicit grid
)";
}

}  // namespace mtmcmc::cli
