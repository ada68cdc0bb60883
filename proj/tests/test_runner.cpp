#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "polymc/config.hpp"
#include "polymc/csv.hpp"
#include "polymc/runner.hpp"

using namespace polymc;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("config parse, round trip, overrides") {
  const std::string text =
      "# polymer lab config\n"
      "walk.kind = nn3d\n"
      "field.kind = iid_gaussian\n"
      "field.sigma = 1.5\n"
      "scan.betas = 0,0.5,1\n"
      "seed = 42\n";
  auto cfg = config::Config::parse(text);
  CHECK(cfg.get_string("walk.kind", "") == "nn3d");
  CHECK(cfg.get_double("field.sigma", 0) == 1.5);
  CHECK(cfg.get_doubles("scan.betas") == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(cfg.get_u64("seed", 0) == 42);

  const auto again = config::Config::parse(cfg.emit());
  CHECK(again.entries() == cfg.entries());
  CHECK(again.hash() == cfg.hash());

  cfg.set("field.sigma", "2.0");
  CHECK(cfg.get_double("field.sigma", 0) == 2.0);

  CHECK_THROWS_AS(config::Config::parse("novalue\n"), ConfigError);
  CHECK_THROWS_AS(cfg.get_double("walk.kind", 0), ConfigError); // not numeric
}

TEST_CASE("custom walk from config") {
  const std::string text =
      "walk.kind = custom\n"
      "walk.d = 3\n"
      "walk.step = offset=1,0,0 prob=0.5\n"
      "walk.step = offset=-1,0,0 prob=0.5\n";
  const auto cfg = config::Config::parse(text);
  const auto w = config::walk_from_config(cfg);
  CHECK(w.steps.size() == 2);
  CHECK(w.p_min == 0.5);
}

TEST_CASE("validate reports every violated constraint without running") {
  const auto bad = config::Config::parse(
      "walk.kind = custom\n"
      "walk.d = 2\n"
      "walk.step = offset=1,0 prob=0.45\n"
      "walk.step = offset=-1,0 prob=0.45\n"
      "field.kind = iid_bernoulli\n"
      "field.p = 1.5\n"
      "scan.betas = -1\n"
      "bogus.key = 3\n");
  const auto problems = config::validate_config(bad);
  auto contains = [&](const std::string& needle) {
    for (const auto& p : problems)
      if (p.find(needle) != std::string::npos) return true;
    return false;
  };
  CHECK(contains("transience required"));
  CHECK(contains("sum"));        // probabilities sum to 0.9
  CHECK(contains("field.p"));
  CHECK(contains("beta"));
  CHECK(contains("unknown key: bogus.key"));

  const auto good = config::Config::parse("walk.kind = nn3d\nfield.kind = iid_gaussian\n");
  CHECK(config::validate_config(good).empty());

  const auto outcome = runner::run("validate", bad, "/tmp/unused");
  CHECK(outcome.exit_code == 2);
  CHECK(!outcome.report.empty());
  CHECK(runner::run("validate", good, "/tmp/unused").exit_code == 0);
}

TEST_CASE("csv formatting is shortest round-trip") {
  CHECK(csv::fmt(0.5) == "0.5");
  CHECK(csv::fmt(0.1) == "0.1");
  CHECK(csv::fmt(1.0) == "1");
  CHECK(csv::fmt(-0.0078125) == "-0.0078125");
  CHECK(csv::fmt(std::int64_t{42}) == "42");
  CHECK(csv::fmt(true) == "1");
}

TEST_CASE("free-energy run: header, analytic lambda, manifest") {
  TempDir dir("polymc_runner_fe");
  const auto cfg = config::Config::parse(
      "walk.kind = nn3d\n"
      "field.kind = iid_gaussian\n"
      "field.sigma = 1\n"
      "scan.betas = 0,1\n"
      "scan.Ns = 4\n"
      "mc.n_disorder = 50\n"
      "seed = 7\n");
  const auto outcome = runner::run("free-energy", cfg, dir.path.string());
  REQUIRE(outcome.exit_code == 0);

  const std::string csv_text = slurp(dir.path / "free_energy.csv");
  CHECK(csv_text.rfind("beta,N,rho_hat,rho_se,lambda_hat,lambda_se,lambda_prime,Lambda_hat,gap,"
                       "gap_se,n_disorder,seed\n", 0) == 0);
  // beta=1 row reports lambda_hat = 0.5 exactly (analytic mode for iid)
  CHECK(csv_text.find("\n1,4,") != std::string::npos);
  std::istringstream lines(csv_text);
  std::string line;
  bool found = false;
  while (std::getline(lines, line)) {
    if (line.rfind("1,4,", 0) == 0) {
      std::vector<std::string> fields;
      std::string f;
      std::istringstream ls(line);
      while (std::getline(ls, f, ',')) fields.push_back(f);
      REQUIRE(fields.size() == 12);
      CHECK(fields[4] == "0.5"); // lambda_hat
      CHECK(fields[6] == "1");   // lambda_prime = beta sigma^2
      found = true;
    }
  }
  CHECK(found);

  const std::string manifest = slurp(dir.path / "manifest.txt");
  CHECK(manifest.find("config_hash = ") != std::string::npos);
  CHECK(manifest.find("rows_free_energy.csv = 2") != std::string::npos);
}

TEST_CASE("reruns and worker counts produce byte-identical CSVs") {
  const auto cfg1 = config::Config::parse(
      "walk.kind = nn3d\n"
      "field.kind = ar_time\n"
      "field.a = 0.5\n"
      "field.sigma = 1\n"
      "scan.betas = 0.5,1\n"
      "scan.Ns = 4,6\n"
      "mc.n_disorder = 40\n"
      "annealed.mode = mc\n"
      "seed = 99\n"
      "workers = 1\n");
  auto cfg8 = cfg1;
  cfg8.set("workers", "8");

  TempDir d1("polymc_det_1"), d2("polymc_det_2"), d8("polymc_det_8");
  REQUIRE(runner::run("free-energy", cfg1, d1.path.string()).exit_code == 0);
  REQUIRE(runner::run("free-energy", cfg1, d2.path.string()).exit_code == 0);
  REQUIRE(runner::run("free-energy", cfg8, d8.path.string()).exit_code == 0);
  const auto a = slurp(d1.path / "free_energy.csv");
  CHECK(a == slurp(d2.path / "free_energy.csv"));
  CHECK(a == slurp(d8.path / "free_energy.csv"));

  // a different seed changes the estimates
  auto cfg_seed = cfg1;
  cfg_seed.set("seed", "100");
  TempDir d3("polymc_det_3");
  REQUIRE(runner::run("free-energy", cfg_seed, d3.path.string()).exit_code == 0);
  CHECK(a != slurp(d3.path / "free_energy.csv"));
}

TEST_CASE("tau and lln subcommands emit the documented schemas") {
  TempDir dir("polymc_runner_misc");
  const auto cfg = config::Config::parse(
      "walk.kind = nn3d\n"
      "field.kind = iid_gaussian\n"
      "tau.Ls = 1,2\n"
      "tau.samples = 500\n"
      "scan.Ns = 8,16\n"
      "mc.n_paths = 5\n"
      "seed = 3\n");
  REQUIRE(runner::run("tau", cfg, dir.path.string()).exit_code == 0);
  CHECK(slurp(dir.path / "tau.csv").rfind("L,p,moment_est,moment_se,censored_frac,n_samples\n", 0) == 0);

  REQUIRE(runner::run("lln", cfg, dir.path.string()).exit_code == 0);
  const auto lln = slurp(dir.path / "lln.csv");
  CHECK(lln.rfind("replica,N,running_avg\n", 0) == 0);
  CHECK(std::count(lln.begin(), lln.end(), '\n') == 1 + 5 * 2); // header + 5 replicas x 2 checkpoints
}

TEST_CASE("phase-scan emits the documented schema") {
  TempDir dir("polymc_runner_ps");
  const auto cfg = config::Config::parse(
      "walk.kind = nn3d\n"
      "field.kind = iid_gaussian\n"
      "scan.betas = 0\n"
      "scan.Ns = 4,8\n"
      "mc.n_disorder = 30\n"
      "seed = 5\n");
  REQUIRE(runner::run("phase-scan", cfg, dir.path.string()).exit_code == 0);
  const auto text = slurp(dir.path / "phase_scan.csv");
  CHECK(text.rfind("beta,gap,gap_lo,gap_hi,monotone_ok,bracket_lo,bracket_hi\n", 0) == 0);
  CHECK(text.find("\n0,0,0,0,1,nan,nan") != std::string::npos); // gap(0) = 0 exactly
}

TEST_CASE("partition, concentration and martingale subcommands run") {
  TempDir dir("polymc_runner_more");
  const auto cfg = config::Config::parse(
      "walk.kind = nn3d\n"
      "field.kind = ar_time\n"
      "field.a = 0.5\n"
      "field.sigma = 0.5\n"
      "scan.betas = 0.2\n"
      "scan.Ns = 6\n"
      "mc.n_disorder = 1000\n"
      "conc.epsilon = 0.5\n"
      "reg.L = 1\n"
      "reg.l = 1\n"
      "reg.blocks = 3\n"
      "reg.inner = 32\n"
      "reg.n_replicas = 20\n"
      "seed = 11\n");
  REQUIRE(runner::run("partition", cfg, dir.path.string()).exit_code == 0);
  CHECK(slurp(dir.path / "partition.csv")
            .rfind("beta,N,log_z,method,n_endpoint_sites,max_layer_log,min_layer_log\n", 0) == 0);

  REQUIRE(runner::run("concentration", cfg, dir.path.string()).exit_code == 0);
  CHECK(slurp(dir.path / "concentration.csv")
            .rfind("beta,N,epsilon,empirical_tail,bound,binomial_se,pass\n", 0) == 0);

  REQUIRE(runner::run("martingale", cfg, dir.path.string()).exit_code == 0);
  const auto mart = slurp(dir.path / "martingale.csv");
  CHECK(mart.rfind("beta,n,h_mean,h_se,h_second,l_mean,l_se,mean_abs_delta,n_replicas,n_failed,"
                   "psi_log\n", 0) == 0);
  CHECK(std::count(mart.begin(), mart.end(), '\n') == 1 + 3); // header + blocks rows
}

TEST_CASE("error paths map to exit codes") {
  const auto cfg = config::Config::parse("walk.kind = nn3d\nfield.kind = iid_gaussian\n");
  CHECK(runner::run("no-such-subcommand", cfg, "/tmp/unused").exit_code == 2);

  const auto bad = config::Config::parse("walk.kind = martian\nfield.kind = iid_gaussian\n");
  CHECK(runner::run("free-energy", bad, "/tmp/unused").exit_code == 2);

  // green subcommand on a non-gff field is a config error
  CHECK(runner::run("green", cfg, "/tmp/unused").exit_code == 2);
}

TEST_CASE("green subcommand writes a loadable cache") {
  TempDir dir("polymc_runner_green");
  const auto cfg = config::Config::parse(
      "walk.kind = nn3d\n"
      "field.kind = gff_gaussian\n"
      "field.box = 0,2,1\n"
      "field.margin = 2\n"
      "seed = 1\n");
  REQUIRE(runner::run("green", cfg, dir.path.string()).exit_code == 0);
  const auto name = field::green_cache_name(3, field::BoxSpec{0, 2, 1}, 2);
  const auto table = field::load_green((dir.path / name).string());
  CHECK(table.sites.size() == 3 * 27);
  CHECK(slurp(dir.path / "green.csv").rfind("d,t_lo,t_hi,space_radius,margin,sites,", 0) == 0);
}

TEST_CASE("criteria subcommand reproduces the closed-form threshold region") {
  TempDir dir("polymc_runner_crit");
  const auto cfg = config::Config::parse(
      "walk.kind = nn3d\n"
      "field.kind = iid_gaussian\n"
      "field.sigma = 1\n"
      "scan.betas = 1.8,2.0\n"
      "scan.Ns = 4\n"
      "seed = 2\n");
  REQUIRE(runner::run("criteria", cfg, dir.path.string()).exit_code == 0);
  const auto text = slurp(dir.path / "criteria.csv");
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line); // header
  std::getline(lines, line);
  CHECK(line.rfind("1.8,", 0) == 0);
  CHECK(line.find(",0,") != std::string::npos); // not satisfied below threshold
  std::getline(lines, line);
  CHECK(line.rfind("2,", 0) == 0);
  CHECK(line.find(",1,") != std::string::npos); // satisfied above
}
