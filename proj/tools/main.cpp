#include "experiment_config.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace mtmcmc;
using namespace mtmcmc::cli;

namespace {

struct CommonOptions {
  std::string config;
  std::string outdir;
  std::optional<std::size_t> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::optional<std::size_t> samples;
};

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (auto v = env("MTMCMC_OUTDIR")) c.outdir = *v;
  if (auto v = env("MTMCMC_THREADS")) {
    try {
      c.threads = static_cast<std::size_t>(std::stoul(*v));
    } catch (const std::exception&) {
      throw ConfigError("MTMCMC_THREADS: expected a positive integer");
    }
  }
  if (!o.outdir.empty()) c.outdir = o.outdir;
  if (o.threads) c.threads = *o.threads;
  if (o.seed) c.run.seed = *o.seed;
  if (o.reps) c.reps = *o.reps;
  if (o.samples) c.run.n_samples = *o.samples;
  if (c.threads < 1) throw ConfigError("threads must be at least 1");
  if (c.reps < 1) throw ConfigError("reps must be at least 1");
  c.run.threads = c.threads;
  finalize_kernel(c);
  return c;
}

class Output {
 public:
  explicit Output(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }

  std::ofstream open(const std::string& name) const {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir_ / name).string());
    f.exceptions(std::ios::badbit | std::ios::failbit);
    return f;
  }

  void json(const std::string& name, const Json& j) const { open(name) << j.dump(2) << '\n'; }

  void manifest(const std::string& command, const Json& effective, std::uint64_t seed) const {
    json("manifest.json", Json{{"version", MTMCMC_VERSION},
                               {"command", command},
                               {"config_hash", fnv1a_hex(effective.dump())},
                               {"seed", seed},
                               {"config", effective}});
  }

 private:
  fs::path dir_;
};

Json run_summary(const RunResult& r) {
  Json j{{"completed", r.completed},
         {"stages", r.stages.size()},
         {"final_zeta", r.final_zeta},
         {"log_evidence", r.log_evidence},
         {"best_loglike", r.best_loglike},
         {"best_sample", vector_json(r.best_sample)},
         {"mean_acceptance", mean_acceptance(r)}};
  if (r.samples.rows() >= 2) {
    j["mean"] = vector_json(sample_mean(r.samples));
    j["covariance"] = matrix_json(sample_covariance(r.samples));
  }
  return j;
}

void write_run(const Output& out, const RunResult& r, const std::string& suffix) {
  {
    auto f = out.open("samples" + suffix + ".csv");
    write_samples_csv(f, r.samples, r.loglikes);
  }
  auto f = out.open("stages" + suffix + ".jsonl");
  write_stages_jsonl(f, r.stages);
}

std::vector<std::size_t> default_sizes(std::initializer_list<std::size_t> s) { return s; }

// ---------------------------------------------------------------------------

int cmd_sample(const CommonOptions& o) {
  const ExperimentConfig c = resolve(o);
  const BuiltModel m = build_model(c.model);
  const Output out(c.outdir);
  std::cerr << "sample: model " << c.model.name << ", kernel " << c.kernel << ", " << c.run.n_samples << " samples\n";
  const RunResult r = std::visit(
      [&](const auto& t) {
        return run_tmcmc(t, c.kernel_cfg, c.run, [](const StageStats& s, const Population&) {
          std::cerr << "  stage " << s.stage << " zeta " << s.zeta << " acceptance " << s.acceptance_rate << '\n';
        });
      },
      m.target);
  write_run(out, r, "");
  Json summary{{"model", c.model.name}, {"kernel", c.kernel}, {"result", run_summary(r)}};
  Json diag = Json::object();
  if (!m.marginals.empty()) {
    const BoxPrior& box = std::get<GaussianTarget>(m.target).prior();
    const KLEstimate kl = kl_divergence_marginals(r.samples, m.marginals, box);
    diag["kl_total"] = kl.total;
    diag["kl_per_dimension"] = kl.marginals;
  } else if (const auto* g = std::get_if<GaussianTarget>(&m.target)) {
    const MomentErrors e = moment_errors(r.samples, g->mean(), g->covariance());
    diag["error_mean"] = e.e1;
    diag["error_covariance"] = e.e2;
    diag["error_total"] = e.total;
  } else if (const auto* mix = std::get_if<GaussianMixtureTarget>(&m.target); mix && mix->means().size() == 2) {
    const BimodalErrors e = bimodal_errors(r.samples, mix->means()[0], mix->means()[1], mix->covariances()[0],
                                           mix->covariances()[1]);
    diag["mode_missed"] = e.mode_missed;
    diag["mode_counts"] = e.counts;
    if (!e.mode_missed) diag["error_total"] = e.total;
  }
  summary["diagnostics"] = diag;
  out.json("summary.json", summary);
  out.manifest("sample", effective_config(c), c.run.seed);
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchmarkOptions {
  std::string name;
  std::vector<double> rhos;
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> dims;
};

Json sweep_json(const std::vector<SweepRow>& rows, const char* param) {
  Json a = Json::array();
  for (const auto& r : rows) a.push_back({{param, r.parameter}, {"mean", r.mean}, {"mean_acceptance", r.mean_acceptance}});
  return a;
}

std::vector<double> params_of(const std::vector<SweepRow>& rows) {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.parameter);
  return v;
}

std::vector<double> means_of(const std::vector<SweepRow>& rows) {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.mean);
  return v;
}

int cmd_benchmark(const CommonOptions& o, BenchmarkOptions b) {
  CommonOptions co = o;
  const bool reps_given = o.reps.has_value();
  const ExperimentConfig c = resolve(co);
  const std::uint64_t seed = c.run.seed;
  const std::size_t reps = reps_given || !o.config.empty() ? c.reps : 20;
  const Output out(c.outdir);
  Json params{{"benchmark", b.name}, {"seed", seed}, {"reps", reps}};
  Json summary{{"benchmark", b.name}, {"reps", reps}};
  auto table = out.open("table.csv");
  auto with_run = [&](RunConfig r) {
    r.seed = seed;
    r.threads = c.threads;
    if (o.samples) r.n_samples = *o.samples;
    return r;
  };

  if (b.name == "truncated-gaussian") {
    if (b.rhos.empty()) b.rhos = {0.0, 0.1, 0.2, 0.3, 0.5, 1.0};
    const RunConfig run = with_run(truncated_benchmark_run());
    params["rho"] = b.rhos;
    params["n_samples"] = run.n_samples;
    const auto rows = rho_sweep(b.rhos, reps, truncated_benchmark_kernel(), run);
    table << "rho,mean_kl,mean_acceptance\n";
    for (const auto& r : rows) table << format_double(r.parameter) << ',' << format_double(r.mean) << ',' << format_double(r.mean_acceptance) << '\n';
    summary["rows"] = sweep_json(rows, "rho");
  } else if (b.name == "kl-scaling") {
    if (b.rhos.empty()) b.rhos = {0.2, 0.0};
    if (b.sizes.empty()) b.sizes = default_sizes({250, 500, 1000, 2000});
    const RunConfig run = with_run(truncated_benchmark_run());
    params["rho"] = b.rhos;
    params["sizes"] = b.sizes;
    table << "rho,n_samples,mean_kl\n";
    Json slopes = Json::array();
    for (double rho : b.rhos) {
      const auto rows = kl_size_sweep(b.sizes, reps, truncated_benchmark_kernel(rho), run);
      for (const auto& r : rows) table << format_double(rho) << ',' << r.parameter << ',' << format_double(r.mean) << '\n';
      slopes.push_back({{"rho", rho}, {"slope", loglog_slope(params_of(rows), means_of(rows))}, {"rows", sweep_json(rows, "n_samples")}});
    }
    summary["series"] = slopes;
  } else if (b.name == "gaussian-scaling") {
    if (b.sizes.empty()) b.sizes = default_sizes({250, 500, 1000, 2000, 4000});
    const std::size_t d = b.dims.empty() ? 5 : b.dims.front();
    params["sizes"] = b.sizes;
    params["dim"] = d;
    table << "method,n_samples,mean_error\n";
    Json series = Json::array();
    for (KernelKind kind : {KernelKind::RandomWalk, KernelKind::SimplifiedManifold}) {
      const KernelConfig k = kind == KernelKind::RandomWalk ? random_walk_kernel() : manifold_kernel(kind, MetricKind::Fisher);
      const auto rows = gaussian_size_sweep(d, b.sizes, reps, k, with_run(gaussian_benchmark_run(kind)), seed);
      const std::string name = kind == KernelKind::RandomWalk ? "tmcmc" : "smtmcmc";
      for (const auto& r : rows) table << name << ',' << r.parameter << ',' << format_double(r.mean) << '\n';
      series.push_back({{"method", name}, {"slope", loglog_slope(params_of(rows), means_of(rows))}, {"rows", sweep_json(rows, "n_samples")}});
    }
    summary["series"] = series;
  } else if (b.name == "gaussian-dims") {
    if (b.dims.empty()) b.dims = {2, 5, 10};
    params["dims"] = b.dims;
    table << "dim,mean_error_tmcmc,mean_error_smtmcmc\n";
    Json rows = Json::array();
    for (std::size_t d : b.dims) {
      std::vector<double> tm, sm;
      for (std::size_t r = 0; r < reps; ++r) {
        RunConfig rt = with_run(gaussian_benchmark_run(KernelKind::RandomWalk));
        RunConfig rs = with_run(gaussian_benchmark_run(KernelKind::SimplifiedManifold));
        rt.seed = rs.seed = seed + r;
        tm.push_back(gaussian_error_run(d, r, random_walk_kernel(), rt, seed).errors.total);
        sm.push_back(gaussian_error_run(d, r, manifold_kernel(KernelKind::SimplifiedManifold, MetricKind::Fisher), rs, seed).errors.total);
      }
      table << d << ',' << format_double(mean_of(tm)) << ',' << format_double(mean_of(sm)) << '\n';
      rows.push_back({{"dim", d}, {"tmcmc", mean_of(tm)}, {"smtmcmc", mean_of(sm)}});
    }
    summary["rows"] = rows;
  } else if (b.name == "bimodal") {
    if (b.dims.empty()) b.dims = {6, 8, 10};
    params["dims"] = b.dims;
    table << "dim,found_tmcmc,found_smtmcmc,runs\n";
    Json rows = Json::array();
    for (std::size_t d : b.dims) {
      std::size_t found_tm = 0, found_sm = 0;
      for (std::size_t r = 0; r < reps; ++r) {
        RunConfig rt = with_run(gaussian_benchmark_run(KernelKind::RandomWalk, 5000));
        RunConfig rs = with_run(gaussian_benchmark_run(KernelKind::SimplifiedManifold, 5000));
        rt.seed = rs.seed = seed + r;
        found_tm += !bimodal_run(d, r, random_walk_kernel(), rt, seed).mode_missed;
        found_sm += !bimodal_run(d, r, bimodal_manifold_kernel(), rs, seed).mode_missed;
      }
      table << d << ',' << found_tm << ',' << found_sm << ',' << reps << '\n';
      rows.push_back({{"dim", d}, {"found_tmcmc", found_tm}, {"found_smtmcmc", found_sm}});
    }
    summary["rows"] = rows;
  } else if (b.name == "correction-rate") {
    const std::size_t d = b.dims.empty() ? 5 : b.dims.front();
    params["dim"] = d;
    RunConfig run = with_run(gaussian_benchmark_run(KernelKind::SimplifiedManifold));
    const ErrorRun er = gaussian_error_run(d, 0, manifold_kernel(KernelKind::SimplifiedManifold, MetricKind::Fisher), run, seed);
    table << "stage,zeta,corrected_fraction\n";
    for (const auto& s : er.result.stages) table << s.stage << ',' << format_double(s.zeta) << ',' << format_double(s.corrected_fraction()) << '\n';
    summary["first"] = er.result.stages.front().corrected_fraction();
    summary["last"] = er.result.stages.back().corrected_fraction();
  } else {
    throw ConfigError("unknown benchmark '" + b.name + "'");
  }
  out.json("summary.json", summary);
  out.manifest("benchmark", params, seed);
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_pharma(const CommonOptions& o, const std::string& data_path, std::size_t runs) {
  ExperimentConfig c = resolve(o);
  c.model.name = "pharma";
  if (!data_path.empty()) c.model.data = data_path;
  const PharmaScenario sc = pharma_scenario(c.model);
  const DataSet data = c.model.data.empty() ? generate_pharma_data(sc, c.model.noise_seed) : read_data_csv(c.model.data);
  const PharmaTarget target = make_pharma_target(sc, data, c.model.ode_tol);
  PharmaSettings s = PharmaSettings::defaults();
  if (o.samples) s.tmcmc.n_samples = s.smtmcmc.n_samples = *o.samples;
  s.tmcmc.threads = s.smtmcmc.threads = c.threads;
  s.es.budget = c.es_budget;
  s.es.seed = c.run.seed;
  const Output out(c.outdir);
  {
    auto f = out.open("data.csv");
    write_data_csv(f, data);
  }
  std::cerr << "pharma: maximizing the likelihood\n";
  const EsResult ml = maximize_loglikelihood(target, s.es);
  Json pairs = Json::array();
  std::size_t sm_wins = 0;
  for (std::size_t r = 0; r < runs; ++r) {
    std::cerr << "pharma: paired run " << r + 1 << "/" << runs << '\n';
    const PharmaPair p = pharma_paired_run(target, s, c.run.seed + r);
    if (r == 0) {
      write_run(out, p.tmcmc, "_tmcmc");
      write_run(out, p.smtmcmc, "_smtmcmc");
    }
    sm_wins += p.smtmcmc.best_loglike >= p.tmcmc.best_loglike;
    pairs.push_back({{"seed", c.run.seed + r},
                     {"best_tmcmc", p.tmcmc.best_loglike},
                     {"best_smtmcmc", p.smtmcmc.best_loglike},
                     {"tmcmc", run_summary(p.tmcmc)},
                     {"smtmcmc", run_summary(p.smtmcmc)}});
  }
  out.json("summary.json", Json{{"ml", ml.value},
                                {"ml_theta", vector_json(ml.theta)},
                                {"ml_evaluations", ml.evaluations},
                                {"ml_converged", ml.converged},
                                {"loglike_at_truth", target.evaluate(sc.truth, {}).loglike},
                                {"n_samples", s.smtmcmc.n_samples},
                                {"smtmcmc_not_worse", sm_wins},
                                {"runs", pairs}});
  Json eff = effective_config(c);
  eff["pharma_runs"] = runs;
  out.manifest("pharma", eff, c.run.seed);
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_profile(const CommonOptions& o, std::optional<std::size_t> index, std::optional<std::size_t> points) {
  ExperimentConfig c = resolve(o);
  if (o.config.empty()) c.model.name = "pharma";
  if (index) c.profile_index = *index;
  if (points) c.profile_points = *points;
  const BuiltModel m = build_model(c.model);
  const Output out(c.outdir);
  Json summary;
  std::visit(
      [&](const auto& t) {
        const BoxPrior& box = t.prior();
        if (c.profile_index >= box.dim()) throw ConfigError("profile.index out of range");
        std::vector<double> grid;
        if (c.profile_grid) {
          grid = *c.profile_grid;
        } else {
          if (c.profile_points < 2) throw ConfigError("profile.points must be at least 2");
          const auto i = static_cast<Eigen::Index>(c.profile_index);
          // cell midpoints: the box is open
          for (std::size_t k = 0; k < c.profile_points; ++k) {
            grid.push_back(box.lower()[i] + (box.upper()[i] - box.lower()[i]) * (static_cast<double>(k) + 0.5) /
                                                static_cast<double>(c.profile_points));
          }
        }
        EsConfig es;
        es.budget = c.es_budget;
        es.seed = c.run.seed;
        const EsResult ml = maximize_loglikelihood(t, es);
        ProfileConfig pc;
        pc.es.seed = c.run.seed;
        const auto pts = profile_loglikelihood(t, c.profile_index, grid, pc, ml.theta);
        auto f = out.open("profile.csv");
        write_profile_csv(f, pts);
        Json rows = Json::array();
        for (const auto& p : pts) rows.push_back({{"value", p.value}, {"profile", p.profile}, {"theta", vector_json(p.theta)}});
        summary = Json{{"index", c.profile_index}, {"ml", ml.value}, {"ml_theta", vector_json(ml.theta)}, {"points", rows}};
      },
      m.target);
  if (m.data) {
    auto f = out.open("data.csv");
    write_data_csv(f, *m.data);
  }
  out.json("summary.json", summary);
  out.manifest("profile", effective_config(c), c.run.seed);
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_evidence(const CommonOptions& o) {
  ExperimentConfig c = resolve(o);
  const std::size_t reps = o.reps || !o.config.empty() ? c.reps : 20;
  const EvidenceProblem p = EvidenceProblem::make();
  const double reference = log_evidence_quadrature_2d(p.target, 400);
  const Output out(c.outdir);
  auto f = out.open("evidence.csv");
  f << "seed,log_evidence,abs_error\n";
  std::vector<double> errs;
  for (std::size_t r = 0; r < reps; ++r) {
    RunConfig run = c.run;
    run.seed = c.run.seed + r;
    const RunResult res = run_tmcmc(p.target, c.kernel_cfg, run);
    errs.push_back(std::abs(res.log_evidence - reference));
    f << run.seed << ',' << format_double(res.log_evidence) << ',' << format_double(errs.back()) << '\n';
  }
  out.json("summary.json", Json{{"log_evidence_quadrature", reference}, {"grid", 400}, {"reps", reps},
                                {"mean_abs_error", mean_of(errs)}});
  Json eff = effective_config(c);
  eff["reps"] = reps;
  out.manifest("evidence-check", eff, c.run.seed);
  return 0;
}

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "Experiment configuration (TOML)")->check(CLI::ExistingFile);
  app->add_option("-o,--outdir", o.outdir, "Output directory (env MTMCMC_OUTDIR)");
  app->add_option("-t,--threads", o.threads, "Worker threads (env MTMCMC_THREADS); results do not depend on it")
      ->check(CLI::PositiveNumber);
  app->add_option("-s,--seed", o.seed, "Master seed");
  app->add_option("--reps", o.reps, "Replications")->check(CLI::PositiveNumber);
  app->add_option("-n,--samples", o.samples, "Samples per run")->check(CLI::Range(2, 100000000));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Population-based Bayesian sampling with manifold Langevin kernels"};
  app.require_subcommand(0, 1);
  bool reference = false;
  app.add_flag("--config-reference", reference, "Print every configuration key with its default and exit");

  CommonOptions sample_o, bench_o, pharma_o, profile_o, evidence_o;
  auto* sample = app.add_subcommand("sample", "Sample the posterior of the configured model");
  add_common(sample, sample_o);

  BenchmarkOptions bo;
  auto* bench = app.add_subcommand("benchmark", "Run a benchmark and write a summary table");
  add_common(bench, bench_o);
  bench->add_option("name", bo.name,
                    "truncated-gaussian | kl-scaling | gaussian-scaling | gaussian-dims | bimodal | correction-rate")
      ->required();
  bench->add_option("--rho", bo.rhos, "Box extension values")->delimiter(',');
  bench->add_option("--sizes", bo.sizes, "Sample sizes")->delimiter(',');
  bench->add_option("--dims", bo.dims, "Dimensions")->delimiter(',');

  std::string data_path;
  std::size_t runs = 1;
  bool synthetic = false;
  auto* pharma = app.add_subcommand("pharma", "Pharmacodynamics model: ML estimate and paired sampler runs");
  add_common(pharma, pharma_o);
  auto* synth = pharma->add_flag("--synthetic", synthetic, "Generate synthetic data from the model (default)");
  pharma->add_option("--data", data_path, "Observed data as a t,d CSV")->check(CLI::ExistingFile)->excludes(synth);
  pharma->add_option("--runs", runs, "Paired sampler runs")->check(CLI::PositiveNumber);

  std::optional<std::size_t> pl_index, pl_points;
  auto* profile = app.add_subcommand("profile", "Profile likelihood of one coordinate (pharma model by default)");
  add_common(profile, profile_o);
  profile->add_option("--index", pl_index, "Profiled coordinate");
  profile->add_option("--points", pl_points, "Grid points");

  auto* evidence = app.add_subcommand("evidence-check", "Compare the evidence estimate with 2D quadrature");
  add_common(evidence, evidence_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (reference) {
      std::cout << config_reference();
      return 0;
    }
    if (*sample) return cmd_sample(sample_o);
    if (*bench) return cmd_benchmark(bench_o, bo);
    if (*pharma) return cmd_pharma(pharma_o, data_path, runs);
    if (*profile) return cmd_profile(profile_o, pl_index, pl_points);
    if (*evidence) return cmd_evidence(evidence_o);
    std::cout << app.help();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
