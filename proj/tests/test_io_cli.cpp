#include "experiment_config.hpp"
#include "mtmcmc/io.hpp"
#include "test_util.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace mtmcmc;
using namespace mtmcmc::cli;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  ExperimentConfig c = parse_config(toml::parse(text));
  finalize_kernel(c);
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtmcmc_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MTMCMC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Csv, SamplesRoundTripExactly) {
  Rng rng(1);
  Matrix s(7, 3);
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) = standard_normal(3, rng).transpose() * 1e3;
  s(0, 0) = 1.0 / 3.0;
  s(1, 1) = -1e-300;
  Vector ll = standard_normal(7, rng);
  ll[2] = kNegInf;
  std::stringstream ss;
  write_samples_csv(ss, s, ll);
  const auto [s2, ll2] = read_samples_csv(ss);
  EXPECT_EQ(s, s2);
  EXPECT_EQ(ll, ll2);
}

TEST(Csv, DataRoundTripAndErrors) {
  const DataSet d(Eigen::Vector3d(0, 3, 6), Eigen::Vector3d(40, 41.5, 0.1));
  std::stringstream ss;
  write_data_csv(ss, d);
  const DataSet back = read_data_csv(ss);
  EXPECT_EQ(back.inputs(), d.inputs());
  EXPECT_EQ(back.observations(), d.observations());

  std::stringstream bad_header("x,y\n1,2\n");
  EXPECT_THROW(read_data_csv(bad_header), IoError);
  std::stringstream bad_value("t,d\n1,abc\n");
  EXPECT_THROW(read_data_csv(bad_value), IoError);
  std::stringstream bad_cols("t,d\n1,2,3\n");
  EXPECT_THROW(read_data_csv(bad_cols), IoError);
}

TEST(Hash, KnownFnvValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Config, DefaultsWhenEmpty) {
  const auto c = parse("");
  EXPECT_EQ(c.model.name, "gaussian");
  EXPECT_EQ(c.run.n_samples, 1000u);
  EXPECT_EQ(c.kernel_cfg.spec.kind, KernelKind::SimplifiedManifold);
  EXPECT_EQ(c.threads, 1u);
}

TEST(Config, ParsesSections) {
  const auto c = parse(R"(
seed = 5
[model]
name = "gaussian"
dim = 2
mean = [1.0, 2.0]
covariance = [[1.0, 0.5], [0.5, 2.0]]
lower = -4.0
upper = [4.0, 6.0]
[kernel]
kernel = "ptmcmc"
rho = 0.3
[run]
n_samples = 64
epsilon = 0.5
adapt_epsilon = true
)");
  EXPECT_EQ(c.run.seed, 5u);
  EXPECT_EQ(c.run.n_samples, 64u);
  EXPECT_TRUE(c.run.adapt_epsilon);
  EXPECT_EQ(c.kernel_cfg.spec.kind, KernelKind::PositionDependent);
  EXPECT_DOUBLE_EQ(c.kernel_cfg.correction.rho, 0.3);
  ASSERT_TRUE(c.model.covariance);
  EXPECT_DOUBLE_EQ((*c.model.covariance)(1, 0), 0.5);
  EXPECT_EQ(c.model.lower, (std::vector<double>{-4.0, -4.0}));
  EXPECT_EQ(c.model.upper, (std::vector<double>{4.0, 6.0}));
  const auto built = build_model(c.model);
  EXPECT_TRUE(std::holds_alternative<GaussianTarget>(built.target));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse("bogus = 1"), ConfigError);
  EXPECT_THROW(parse("[run]\nn_sample = 10"), ConfigError);
  EXPECT_THROW(parse("[kernel]\nkernel = \"hmc\""), ConfigError);
  EXPECT_THROW(parse("[kernel]\nkernel = \"ptmcmc\"\nmetric = \"hessian\""), ConfigError);
  EXPECT_THROW(parse("[kernel]\nrho = 1.5"), ConfigError);
  EXPECT_THROW(parse("[run]\nn_samples = \"ten\""), ConfigError);
}

TEST(Config, HashIgnoresThreadsAndOutdir) {
  const auto a = parse("threads = 1\noutdir = \"a\"");
  const auto b = parse("threads = 4\noutdir = \"b\"");
  const auto c = parse("seed = 9");
  EXPECT_EQ(effective_config(a).dump(), effective_config(b).dump());
  EXPECT_NE(effective_config(a).dump(), effective_config(c).dump());
}

TEST(Config, ReferenceParses) {
  EXPECT_NO_THROW(parse(config_reference()));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("exit");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  {
    std::ofstream(dir / "bad.toml") << "[run]\nunknown_key = 1\n";
  }
  EXPECT_EQ(run_cli("sample -c " + (dir / "bad.toml").string() + " -o " + (dir / "o").string()), 2);
  EXPECT_EQ(run_cli("sample --threads 0 -o " + (dir / "o").string()), 2);
  EXPECT_EQ(run_cli("sample -c " + (dir / "missing.toml").string()), 2);
}

TEST(Cli, SampleOutputsIndependentOfThreads) {
  const fs::path dir = scratch_dir("threads");
  {
    std::ofstream(dir / "c.toml") << "seed = 3\n[model]\nname = \"gaussian\"\ndim = 2\n[run]\nn_samples = 200\n"
                                     "epsilon = 1.0\n";
  }
  const std::string base = "sample -c " + (dir / "c.toml").string();
  ASSERT_EQ(run_cli(base + " -t 1 -o " + (dir / "t1").string()), 0);
  ASSERT_EQ(run_cli(base + " -t 3 -o " + (dir / "t3").string()), 0);
  for (const char* f : {"samples.csv", "stages.jsonl", "summary.json", "manifest.json"}) {
    ASSERT_TRUE(fs::exists(dir / "t1" / f)) << f;
    EXPECT_EQ(slurp(dir / "t1" / f), slurp(dir / "t3" / f)) << f;
  }
  std::ifstream samples(dir / "t1" / "samples.csv");
  const auto [s, ll] = read_samples_csv(samples);
  EXPECT_EQ(s.rows(), 200);
  EXPECT_EQ(s.cols(), 2);
}
