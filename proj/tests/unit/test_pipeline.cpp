#include "doctest.h"

#include "nioc/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace nioc;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nioc_test_pipeline_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

nlohmann::json load(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig small_linear(const std::filesystem::path& out) {
  ExperimentConfig c;
  c.system = "linear";
  c.M = 64;
  c.trials = 3;
  c.seed = 11;
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("config defaults and validation") {
  const ExperimentConfig lin = ExperimentConfig{}.resolved();
  CHECK(lin.N == 10);
  CHECK(lin.d_psi == 2);
  CHECK(lin.d_V == 2);
  CHECK(lin.alpha == 0.9);
  CHECK(lin.obs_noise_std == 0.05);
  CHECK(lin.lambda == 1e-4);

  ExperimentConfig t;
  t.system = "temperature";
  const ExperimentConfig tr = t.resolved();
  CHECK(tr.N == 4);
  CHECK(tr.d_psi == 6);

  ExperimentConfig bad;
  bad.system = "pendulum";
  CHECK_THROWS_AS((void)bad.resolved(), std::invalid_argument);
  bad = ExperimentConfig{};
  bad.d_psi = 2;
  bad.d_V = 4;
  CHECK_THROWS_AS((void)bad.resolved(), std::invalid_argument);
  bad = ExperimentConfig{};
  bad.M = 1;
  CHECK_THROWS_AS((void)bad.resolved(), std::invalid_argument);
  bad = ExperimentConfig{};
  bad.sweep_degrees = {{2, 3}};
  CHECK_THROWS_AS((void)bad.resolved(), std::invalid_argument);
}

TEST_CASE("trial seeds and cost sampling") {
  CHECK(trial_seed(1, 0) != trial_seed(1, 1));
  CHECK(trial_seed(1, 0) != trial_seed(2, 0));
  CHECK(trial_seed(5, 3) == trial_seed(5, 3));
  const SystemModel m = make_linear_system();
  Rng a(4), b(4);
  const Vec ta = sample_cost(m, a), tb = sample_cost(m, b);
  CHECK(ta == tb);
  CHECK(ta.norm() == doctest::Approx(1.0));
  CHECK(ta.minCoeff() >= 0.0);
  std::string name;
  (void)make_expert(m, ta, &name);
  CHECK(name == "lqr");
  (void)make_expert(make_temperature_system(), Vec::Ones(2), &name);
  CHECK(name == "mpc");
}

TEST_CASE("simulate writes the dataset deterministically") {
  const auto dir = scratch_dir("simulate");
  ExperimentConfig c = small_linear(dir / "a");
  c.M = 2;
  c.N = 1;
  const auto path = cmd_simulate(c);
  CHECK(path.filename() == "dataset.csv");
  const ObservedDataset ds = load_dataset(path);
  REQUIRE(ds.observations.size() == 2);
  CHECK(ds.observations[0].rows() == 2);
  CHECK(ds.observations[0].cols() == 3);
  CHECK(ds.meta.policy == "lqr");
  CHECK(ds.meta.theta_ell.size() == 3);
  c.output_dir = dir / "b";
  c.threads = 3;
  const auto again = cmd_simulate(c);
  CHECK(slurp(path) == slurp(again));
}

TEST_CASE("estimate and solve from files") {
  const auto dir = scratch_dir("chain");
  ExperimentConfig c = small_linear(dir);
  c.M = 256;
  c.theta = {0.3, 0.6, 0.74};
  const auto data = cmd_simulate(c);

  SUBCASE("noisy data") {
    c.lambda = 3e-4;
    c.oracle = true;
    c.oracle_M = 500;
    const auto mom = cmd_estimate(data, c);
    const nlohmann::json m = load(mom);
    CHECK(m["basis"]["order"] == "grlex-rightmost");
    CHECK(m["basis"]["dim"] == 3);
    CHECK(m["values"].size() == 10);
    CHECK(m["values"][0].get<double>() == 1.0);
    CHECK(m["lambda"].get<double>() == 3e-4);
    CHECK(m["lemma41"]["holds"] == true);
    CHECK(m.contains("theta_true"));

    const auto sol_path = cmd_solve(mom, c);
    const nlohmann::json s = load(sol_path);
    CHECK(s["status"] == "optimal");
    for (const char* key : {"objective", "theta_ell", "theta_ell_normalized", "theta_V", "bounds_active", "solver"})
      CHECK(s.contains(key));
    CHECK(s["solver"]["iterations"].get<int>() > 0);
    CHECK(s["trial"]["error_2norm"].get<double>() < 0.2);

    ExperimentConfig tiny = c;
    tiny.beta_ell = 1e-6;
    tiny.beta_V = 1e-6;
    tiny.output_dir = dir / "tiny";
    const nlohmann::json inf = load(cmd_solve(mom, tiny));
    CHECK(inf["status"] == "infeasible");
    CHECK(inf["infeasible_constraints"].size() >= 1);
  }
  SUBCASE("noise-free data") {
    ExperimentConfig z = c;
    z.obs_noise_std = 0.0;
    z.output_dir = dir / "clean";
    const auto clean = cmd_simulate(z);
    const ObservedDataset ds = load_dataset(clean);
    const nlohmann::json m = load(cmd_estimate(clean, z));
    // without noise the static block is the plain discounted average
    const SystemModel model = make_linear_system();
    const SampleMoments s = sample_moment_vectors(ds, MultiIndexSet(3, 2), MultiIndexSet(2, 2));
    const Vec avg = s.obs.colwise().mean().transpose();
    const std::vector<double> got = m["values"].get<std::vector<double>>();
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - avg[static_cast<Eigen::Index>(i)]));
    // the dynamics block pulls the estimate by the process noise only
    CHECK(worst <= 0.01);
    CHECK(m["obs_noise_std"].get<double>() == 0.0);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS(cmd_estimate(dir / "missing.csv", c));
    std::ofstream(dir / "junk.json") << "{\"values\": [1]}";
    CHECK_THROWS(cmd_solve(dir / "junk.json", c));
  }
}

TEST_CASE("experiment summary is reproducible and thread independent") {
  const auto dir = scratch_dir("experiment");
  ExperimentConfig c = small_linear(dir / "one");
  c.sweep_M = {32, 64};
  const auto path = cmd_experiment(c);
  CHECK(path.filename() == "summary.json");
  ExperimentConfig d = c;
  d.output_dir = dir / "two";
  d.threads = 3;
  cmd_experiment(d);
  CHECK(slurp(dir / "one" / "sweep.csv") == slurp(dir / "two" / "sweep.csv"));
  CHECK(slurp(dir / "one" / "errors.csv") == slurp(dir / "two" / "errors.csv"));
  const nlohmann::json a = load(dir / "one" / "summary.json"), b = load(dir / "two" / "summary.json");
  CHECK(a["points"] == b["points"]);

  REQUIRE(a["points"].size() == 2);
  CHECK(a["points"][0]["M"] == 32);
  CHECK(a["points"][1]["M"] == 64);
  CHECK(a["points"][1]["n_ok"] == 3);
  CHECK(a["points"][1]["coefficients"].size() == 3);
  CHECK(std::filesystem::exists(dir / "one" / "errors_32.csv"));
  const std::string sweep = slurp(dir / "one" / "sweep.csv");
  CHECK(sweep.rfind("M,mean_error,std_error,n_ok\n", 0) == 0);
  const std::string errors = slurp(dir / "one" / "errors.csv");
  CHECK(errors.rfind("trial,coeff,signed_error\n", 0) == 0);
  CHECK(std::count(errors.begin(), errors.end(), '\n') == 1 + 3 * 3);

  // degree sweeps label rows by degree
  ExperimentConfig e = small_linear(dir / "deg");
  e.trials = 1;
  e.sweep_degrees = {{2, 1}, {2, 2}};
  cmd_experiment(e);
  CHECK(slurp(dir / "deg" / "sweep.csv").rfind("degree,mean_error,std_error,n_ok\n2-1,", 0) == 0);
}

TEST_CASE("summaries do not depend on trial order") {
  std::vector<TrialResult> rs;
  for (int t = 0; t < 5; ++t) {
    TrialResult r;
    r.trial = t;
    r.status = t == 2 ? IocStatus::numerical_failure : IocStatus::optimal;
    r.error_per_coeff = Vec::Constant(2, 0.01 * t - 0.02);
    r.error_2norm = r.error_per_coeff.norm();
    rs.push_back(r);
  }
  const SweepPoint p{64, 2, 2};
  const PointSummary a = summarize(p, rs);
  std::reverse(rs.begin(), rs.end());
  const PointSummary b = summarize(p, rs);
  CHECK(a.n_ok == 4);
  CHECK(a.n_failed == 1);
  CHECK(a.mean_error == doctest::Approx(b.mean_error));
  CHECK(a.std_error == doctest::Approx(b.std_error));
  CHECK((a.mean_signed - b.mean_signed).norm() <= 1e-15);
  // signed errors -0.02, -0.01, 0.01, 0.02
  CHECK(a.mean_signed[0] == doctest::Approx(0.0).scale(1.0));
  CHECK(a.std_signed[0] == doctest::Approx(std::sqrt(0.001 / 3.0)));

  const nlohmann::json h = histogram({1.0, 2.0, 3.0, 4.0}, 3);
  CHECK(h["counts"].size() == 3);
  CHECK(h["edges"].size() == 4);
  CHECK(histogram({}, 4)["counts"].empty());
}
