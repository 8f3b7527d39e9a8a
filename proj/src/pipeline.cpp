#include "nioc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace nioc {

namespace {

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

IocSettings ioc_settings(const ExperimentConfig& cfg) {
  IocSettings s;
  s.beta_ell = cfg.beta_ell;
  s.beta_V = cfg.beta_V;
  s.mode = cfg.mode;
  s.grid_points = cfg.grid_points;
  return s;
}

int misspec_points(std::size_t dims) {
  return std::max(11, static_cast<int>(std::pow(1e4, 1.0 / static_cast<double>(dims))));
}

Vec cost_or_sample(const ExperimentConfig& cfg, const SystemModel& model, Rng& rng) {
  if (cfg.theta.empty()) return sample_cost(model, rng);
  if (cfg.theta.size() != model.n_ell())
    throw std::invalid_argument("theta has " + std::to_string(cfg.theta.size()) + " entries, system '" +
                                model.name + "' has " + std::to_string(model.n_ell()) + " features");
  return CostParams(to_vec(cfg.theta)).normalized();
}

}  // namespace

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  const bool linear = c.system == "linear";
  if (!linear && c.system != "temperature")
    throw std::invalid_argument("unknown system '" + c.system + "' (expected linear or temperature)");
  if (c.N == 0) c.N = linear ? 10 : 4;
  if (c.d_psi == 0) c.d_psi = linear ? 2 : 6;
  if (c.d_V == 0) c.d_V = 2;
  if (c.trials < 1 || c.M < 2 || c.N < 1 || c.d_psi < 1 || c.d_V < 1)
    throw std::invalid_argument("config: trials >= 1, M >= 2, N >= 1, d_psi >= 1 and d_V >= 1 required");
  if (c.d_V > c.d_psi) throw std::invalid_argument("config: d_V must not exceed d_psi");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw std::invalid_argument("config: alpha must lie in (0,1)");
  if (!(c.obs_noise_std >= 0.0)) throw std::invalid_argument("config: obs_noise_std must be >= 0");
  if (!(c.lambda > 0.0)) throw std::invalid_argument("config: lambda must be > 0");
  if (c.threads < 1) c.threads = 1;
  for (int m : c.sweep_M)
    if (m < 2) throw std::invalid_argument("config: sweep M values must be >= 2");
  for (auto [p, v] : c.sweep_degrees)
    if (p < 1 || v < 1 || v > p) throw std::invalid_argument("config: sweep degrees need 1 <= d_V <= d_psi");
  return c;
}

SystemModel make_configured_system(const ExperimentConfig& cfg) {
  SystemModel m = make_system(cfg.system);
  m.discount = cfg.alpha;
  m.validate();
  return m;
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(trial)));
}

Vec sample_cost(const SystemModel& model, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec theta(static_cast<Eigen::Index>(model.n_ell()));
  do {
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = u(rng);
  } while (theta.norm() == 0.0);
  return theta / theta.norm();
}

Policy make_expert(const SystemModel& model, const Vec& theta, std::string* name) {
  if (model.name == "linear") {
    if (name) *name = "lqr";
    return lqr_expert(model, solve_discounted_riccati(model, CostParams(theta)));
  }
  if (name) *name = "mpc";
  MpcPolicy mpc;
  mpc.discount = model.discount;
  mpc.cost = CostParams(theta);
  return mpc_expert(model, mpc);
}

Estimate estimate_moments(const SystemModel& model, const SampleMoments& samples, int d_psi,
                          int d_V, double obs_noise_std, double lambda) {
  MultiIndexSet psi(model.n_eta(), d_psi);
  MultiIndexSet r(model.n_x, d_V);
  PolyBasis basis = joint_lagrange_basis(model, d_psi);
  ApproxMatrices approx = build_approx_matrices(model, basis, d_V);
  const NoiseModel noise = NoiseModel::isotropic_gaussian(model.n_eta(), obs_noise_std, d_psi);
  DeconvMatrix phi_nu = build_deconv_matrix(psi, noise);
  DeconvMatrix phi_nux = build_deconv_matrix(r, noise.marginal(model.n_x));
  const GmmProblem prob = stack_gmm_problem(samples, phi_nu, phi_nux, approx.G2_mono(), lambda);
  GmmSolution gmm = solve_gmm(prob, psi);
  return {std::move(basis), std::move(approx), std::move(phi_nu), std::move(phi_nux), std::move(gmm)};
}

Estimate estimate_moments(const SystemModel& model, const ObservedDataset& ds, int d_psi, int d_V,
                          double obs_noise_std, double lambda, int threads) {
  if (ds.dimension() != model.n_eta())
    throw std::invalid_argument("dataset has " + std::to_string(ds.dimension()) +
                                " columns, system expects " + std::to_string(model.n_eta()));
  const SampleMoments s =
      sample_moment_vectors(ds, MultiIndexSet(model.n_eta(), d_psi), MultiIndexSet(model.n_x, d_V), threads);
  return estimate_moments(model, s, d_psi, d_V, obs_noise_std, lambda);
}

std::vector<TrialResult> run_trial(const ExperimentConfig& config, int trial,
                                   const std::vector<SweepPoint>& points) {
  const ExperimentConfig cfg = config.resolved();
  if (points.empty()) throw std::invalid_argument("run_trial: no sweep points");
  const SystemModel model = make_configured_system(cfg);
  const std::uint64_t seed = trial_seed(cfg.seed, static_cast<std::size_t>(trial));
  Rng rng(seed);
  const Vec theta = cost_or_sample(cfg, model, rng);
  const Policy expert = make_expert(model, theta);

  int max_M = 0, max_deg = 0;
  for (const auto& p : points) {
    max_M = std::max(max_M, p.M);
    max_deg = std::max(max_deg, p.d_psi);
  }
  const NoiseModel obs = NoiseModel::isotropic_gaussian(model.n_eta(), cfg.obs_noise_std, max_deg);
  const GeneratedData data = generate_dataset(model, expert, obs, cfg.N, max_M, seed);

  std::map<std::pair<int, int>, SampleMoments> samples;
  std::map<std::pair<int, int>, OracleMoments> oracles;
  std::vector<TrialResult> out;
  for (const auto& p : points) {
    const auto t0 = std::chrono::steady_clock::now();
    TrialResult res;
    res.trial = trial;
    res.M = p.M;
    res.d_psi = p.d_psi;
    res.d_V = p.d_V;
    res.true_theta = theta;
    try {
      const auto key = std::make_pair(p.d_psi, p.d_V);
      const MultiIndexSet psi(model.n_eta(), p.d_psi), r(model.n_x, p.d_V);
      if (!samples.count(key)) samples.emplace(key, sample_moment_vectors(data.dataset, psi, r));
      const Estimate est = estimate_moments(model, head(samples.at(key), static_cast<std::size_t>(p.M)),
                                            p.d_psi, p.d_V, cfg.obs_noise_std, cfg.lambda);
      const IocProgram program = assemble_program(est.approx, est.gmm.m_hat, model.discount, ioc_settings(cfg));
      const IocSolution sol = solve_ioc(program);
      res.status = sol.status;
      res.objective = sol.objective;
      res.message = sol.solver_status;
      if (sol.status == IocStatus::optimal) {
        res.est_theta = sol.theta_ell_normalized;
        res.error_per_coeff = res.est_theta - res.true_theta;
        res.error_2norm = res.error_per_coeff.norm();
      }
      if (cfg.oracle) {
        if (!oracles.count(key))
          oracles.emplace(key, oracle_moments(model, expert, cfg.N, cfg.oracle_M,
                                              trial_seed(seed, 0x6f7261636c65ull), psi, r));
        const OracleMoments& orc = oracles.at(key);
        const double sup = dynamics_misspecification(model, est.basis, r, est.approx.G2,
                                                     misspec_points(model.n_eta()));
        res.lemma41 = lemma41_diagnostic(orc, est.phi_nu, est.phi_nux, est.approx.G2_mono(), est.gmm.W, sup);
        if (sol.status == IocStatus::optimal) {
          const IocProgram oracle_program =
              assemble_program(est.approx, orc.m, model.discount, ioc_settings(cfg));
          const IocSolution star = solve_ioc(oracle_program);
          if (star.status == IocStatus::optimal)
            res.lemma42 = lemma42_check(program, star, sol, oracle_program.m_hat, program.m_hat);
        }
      }
    } catch (const std::exception& e) {
      res.status = IocStatus::numerical_failure;
      res.message = e.what();
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(res));
  }
  return out;
}

PointSummary summarize(const SweepPoint& point, const std::vector<TrialResult>& results) {
  PointSummary s;
  s.point = point;
  std::vector<const TrialResult*> ok;
  for (const auto& r : results) (r.ok() ? ok.push_back(&r) : void(++s.n_failed));
  s.n_ok = static_cast<int>(ok.size());
  if (ok.empty()) return s;
  const auto n = static_cast<double>(ok.size());
  const Eigen::Index k = ok.front()->error_per_coeff.size();
  s.mean_signed = Vec::Zero(k);
  s.std_signed = Vec::Zero(k);
  for (const auto* r : ok) {
    s.mean_error += r->error_2norm / n;
    s.mean_signed += r->error_per_coeff / n;
  }
  if (ok.size() > 1) {
    for (const auto* r : ok) {
      s.std_error += std::pow(r->error_2norm - s.mean_error, 2);
      s.std_signed += (r->error_per_coeff - s.mean_signed).cwiseAbs2();
    }
    s.std_error = std::sqrt(s.std_error / (n - 1.0));
    s.std_signed = (s.std_signed / (n - 1.0)).cwiseSqrt();
  }
  return s;
}

nlohmann::json histogram(std::vector<double> values, int bins) {
  if (values.empty() || bins < 1) return {{"edges", nlohmann::json::array()}, {"counts", nlohmann::json::array()}};
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto i = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(i);
    return i + 1 < values.size() ? (1.0 - f) * values[i] + f * values[i + 1] : values[i];
  };
  double lo = quantile(0.01), hi = quantile(0.99);
  if (hi <= lo) hi = lo + 1e-12;
  std::vector<double> edges;
  for (int b = 0; b <= bins; ++b) edges.push_back(lo + (hi - lo) * b / bins);
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  int excluded = 0;
  for (double v : values) {
    if (v < lo || v > hi) {
      ++excluded;
      continue;
    }
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins));
    ++counts[static_cast<std::size_t>(b)];
  }
  return {{"edges", edges}, {"counts", counts}, {"excluded", excluded}};
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const ExperimentConfig cfg = config.resolved();
  ExperimentResult res;
  const std::vector<int> Ms = cfg.sweep_M.empty() ? std::vector<int>{cfg.M} : cfg.sweep_M;
  const auto degs = cfg.sweep_degrees.empty() ? std::vector<std::pair<int, int>>{{cfg.d_psi, cfg.d_V}}
                                              : cfg.sweep_degrees;
  for (auto [p, v] : degs)
    for (int m : Ms) res.points.push_back({m, p, v});
  std::vector<std::vector<TrialResult>> by_trial(static_cast<std::size_t>(cfg.trials));
  parallel_indices(by_trial.size(), cfg.threads, [&](std::size_t t) {
    by_trial[t] = run_trial(cfg, static_cast<int>(t), res.points);
  });
  res.results.assign(res.points.size(), {});
  for (std::size_t k = 0; k < res.points.size(); ++k) {
    for (const auto& tr : by_trial) res.results[k].push_back(tr[k]);
    res.summaries.push_back(summarize(res.points[k], res.results[k]));
  }
  return res;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json sweep_deg = nlohmann::json::array();
  for (auto [p, v] : c.sweep_degrees) sweep_deg.push_back({p, v});
  return {{"system", c.system},
          {"trials", c.trials},
          {"M", c.M},
          {"N", c.N},
          {"alpha", c.alpha},
          {"obs_noise_std", c.obs_noise_std},
          {"d_psi", c.d_psi},
          {"d_V", c.d_V},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"grid_points", c.grid_points},
          {"beta_ell", c.beta_ell},
          {"beta_V", c.beta_V},
          {"theta", c.theta},
          {"sweep_M", c.sweep_M},
          {"sweep_degrees", sweep_deg},
          {"oracle", c.oracle},
          {"oracle_M", c.oracle_M}};
}

nlohmann::json to_json(const TrialResult& r) {
  nlohmann::json j = {{"trial", r.trial},
                      {"M", r.M},
                      {"d_psi", r.d_psi},
                      {"d_V", r.d_V},
                      {"status", to_string(r.status)},
                      {"message", r.message},
                      {"true_theta", to_std(r.true_theta)}};
  if (r.ok()) {
    j["est_theta"] = to_std(r.est_theta);
    j["error_2norm"] = r.error_2norm;
    j["error_per_coeff"] = to_std(r.error_per_coeff);
    j["objective"] = r.objective;
  }
  if (r.lemma41) j["lemma41"] = to_json(*r.lemma41);
  if (r.lemma42) j["lemma42"] = to_json(*r.lemma42);
  return j;
}

std::filesystem::path cmd_simulate(const ExperimentConfig& config) {
  const ExperimentConfig cfg = config.resolved();
  const SystemModel model = make_configured_system(cfg);
  const std::uint64_t seed = trial_seed(cfg.seed, 0);
  Rng rng(seed);
  const Vec theta = cost_or_sample(cfg, model, rng);
  std::string policy_name;
  const Policy expert = make_expert(model, theta, &policy_name);
  const NoiseModel obs = NoiseModel::isotropic_gaussian(model.n_eta(), cfg.obs_noise_std, cfg.d_psi);
  GeneratedData data = generate_dataset(model, expert, obs, cfg.N, cfg.M, seed, cfg.threads);
  data.dataset.meta.policy = policy_name;
  data.dataset.meta.theta_ell = to_std(theta);
  std::size_t clipped = 0;
  for (const auto& t : data.trajectories) clipped += t.clipped_steps;
  std::fprintf(stderr, "simulate: %d trajectories, %zu of %d steps clipped\n", cfg.M, clipped, cfg.M * cfg.N);
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / "dataset.csv";
  save_dataset(data.dataset, path);
  return path;
}

std::filesystem::path cmd_estimate(const std::filesystem::path& dataset, const ExperimentConfig& config) {
  const ObservedDataset ds = load_dataset(dataset);
  ExperimentConfig c = config;
  c.system = ds.meta.system;
  c.alpha = ds.meta.alpha;
  const ExperimentConfig cfg = c.resolved();
  const SystemModel model = make_configured_system(cfg);
  const Estimate est =
      estimate_moments(model, ds, cfg.d_psi, cfg.d_V, ds.meta.obs_noise_std, cfg.lambda, cfg.threads);
  const MultiIndexSet r(model.n_x, cfg.d_V);
  nlohmann::json j = to_json(est.gmm.m_hat);
  j["system"] = model.name;
  j["alpha"] = model.discount;
  j["d_V"] = cfg.d_V;
  j["lambda"] = cfg.lambda;
  j["M"] = ds.meta.M;
  j["N"] = ds.meta.N;
  j["obs_noise_std"] = ds.meta.obs_noise_std;
  j["gmm_objective"] = est.gmm.objective;
  j["diagnostics"] = to_json(est.gmm.diagnostics);
  j["dynamics_misspecification"] =
      dynamics_misspecification(model, est.basis, r, est.approx.G2, misspec_points(model.n_eta()));
  if (!ds.meta.theta_ell.empty()) j["theta_true"] = ds.meta.theta_ell;
  if (cfg.oracle) {
    if (ds.meta.theta_ell.empty())
      throw std::invalid_argument("--oracle needs the true cost (theta_ell) in the dataset meta");
    const Policy expert = make_expert(model, to_vec(ds.meta.theta_ell));
    const OracleMoments orc = oracle_moments(model, expert, ds.meta.N, cfg.oracle_M, cfg.seed,
                                             est.gmm.m_hat.basis, r, cfg.threads);
    j["lemma41"] = to_json(lemma41_diagnostic(orc, est.phi_nu, est.phi_nux, est.approx.G2_mono(),
                                              est.gmm.W, j["dynamics_misspecification"].get<double>()));
  }
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / "moments.json";
  write_json(path, j);
  return path;
}

std::filesystem::path cmd_solve(const std::filesystem::path& moments, const ExperimentConfig& config) {
  const nlohmann::json j = read_json(moments);
  const MomentVector m = moment_vector_from_json(j);
  ExperimentConfig c = config;
  try {
    c.system = j.at("system").get<std::string>();
    c.alpha = j.at("alpha").get<double>();
    c.d_psi = m.basis.max_degree();
    c.d_V = j.at("d_V").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(moments.string() + ": " + e.what());
  }
  const ExperimentConfig cfg = c.resolved();
  const SystemModel model = make_configured_system(cfg);
  if (m.basis.dimension() != model.n_eta())
    throw std::invalid_argument("moment basis dimension does not match system '" + model.name + "'");
  const ApproxMatrices approx = build_approx_matrices(model, joint_lagrange_basis(model, cfg.d_psi), cfg.d_V);
  const IocProgram program = assemble_program(approx, m, model.discount, ioc_settings(cfg));
  const IocSolution sol = solve_ioc(program);
  if (sol.ell_bound_active || sol.V_bound_active)
    std::fprintf(stderr, "warning: an l1 bound is within 1%% of active at the optimum\n");
  nlohmann::json out = to_json(sol);
  if (j.contains("theta_true") && sol.status == IocStatus::optimal) {
    const Vec truth = CostParams(to_vec(j["theta_true"].get<std::vector<double>>())).normalized();
    if (truth.size() == sol.theta_ell_normalized.size()) {
      const Vec err = sol.theta_ell_normalized - truth;
      out["trial"] = {{"true_theta", to_std(truth)},
                      {"est_theta", to_std(sol.theta_ell_normalized)},
                      {"error_2norm", err.norm()},
                      {"error_per_coeff", to_std(err)}};
    }
  }
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / "solution.json";
  write_json(path, out);
  return path;
}

std::filesystem::path cmd_experiment(const ExperimentConfig& config) {
  const ExperimentConfig cfg = config.resolved();
  const ExperimentResult res = run_experiment(cfg);
  std::filesystem::create_directories(cfg.output_dir);

  const bool by_degree = !cfg.sweep_degrees.empty() && cfg.sweep_M.empty();
  auto label = [&](const SweepPoint& p) {
    return by_degree ? std::to_string(p.d_psi) + "-" + std::to_string(p.d_V) : std::to_string(p.M);
  };
  auto write_errors = [&](const std::filesystem::path& path, const std::vector<TrialResult>& rs) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << "trial,coeff,signed_error\n";
    for (const auto& r : rs)
      if (r.ok())
        for (Eigen::Index k = 0; k < r.error_per_coeff.size(); ++k)
          out << r.trial << ',' << k << ',' << fmt17(r.error_per_coeff[k]) << '\n';
  };

  nlohmann::json points = nlohmann::json::array();
  nlohmann::json failures = nlohmann::json::array();
  {
    std::ofstream sweep(cfg.output_dir / "sweep.csv");
    if (!sweep) throw std::runtime_error("cannot write sweep.csv");
    sweep << (by_degree ? "degree" : "M") << ",mean_error,std_error,n_ok\n";
    for (std::size_t k = 0; k < res.points.size(); ++k) {
      const auto& s = res.summaries[k];
      const auto& rs = res.results[k];
      sweep << label(s.point) << ',' << fmt17(s.mean_error) << ',' << fmt17(s.std_error) << ',' << s.n_ok << '\n';
      if (res.points.size() > 1) write_errors(cfg.output_dir / ("errors_" + label(s.point) + ".csv"), rs);
      nlohmann::json coeffs = nlohmann::json::array();
      for (Eigen::Index c = 0; c < s.mean_signed.size(); ++c) {
        std::vector<double> vals;
        for (const auto& r : rs)
          if (r.ok()) vals.push_back(r.error_per_coeff[c]);
        coeffs.push_back({{"index", c},
                          {"mean_signed_error", s.mean_signed[c]},
                          {"std_signed_error", s.std_signed[c]},
                          {"histogram", histogram(vals)}});
      }
      nlohmann::json pj = {{"M", s.point.M},
                           {"d_psi", s.point.d_psi},
                           {"d_V", s.point.d_V},
                           {"n_ok", s.n_ok},
                           {"n_failed", s.n_failed},
                           {"mean_error", s.mean_error},
                           {"std_error", s.std_error},
                           {"coefficients", coeffs}};
      if (cfg.oracle) {
        int n41 = 0, h41 = 0, n42 = 0, h42 = 0;
        for (const auto& r : rs) {
          if (r.lemma41) ++n41, h41 += r.lemma41->holds;
          if (r.lemma42) ++n42, h42 += r.lemma42->holds;
        }
        pj["lemma41"] = {{"checked", n41}, {"holds", h41}};
        pj["lemma42"] = {{"checked", n42}, {"holds", h42}};
      }
      points.push_back(pj);
      for (const auto& r : rs)
        if (!r.ok())
          failures.push_back({{"trial", r.trial}, {"point", label(s.point)},
                              {"status", to_string(r.status)}, {"message", r.message}});
    }
  }
  write_errors(cfg.output_dir / "errors.csv", res.results.back());
  const auto path = cfg.output_dir / "summary.json";
  write_json(path, {{"config", to_json(cfg)}, {"points", points}, {"failures", failures}});
  return path;
}

std::filesystem::path cmd_oracle(const ExperimentConfig& config) {
  const ExperimentConfig cfg = config.resolved();
  const SystemModel model = make_configured_system(cfg);
  Rng rng(trial_seed(cfg.seed, 0));
  const Vec theta = cost_or_sample(cfg, model, rng);
  const CostParams cost(theta);
  ValueIterationOptions opts;
  opts.tol = cfg.vi_tol;
  opts.threads = cfg.threads;
  const ValueGrids grids = ValueGrids::uniform(model, cfg.vi_state_points, cfg.vi_action_points);
  GridValueFunction V = value_iteration(model, cost, grids, opts);
  const int iterations = V.iterations;
  const double residual = V.residual;
  const Policy greedy = greedy_expert(model, cost, std::move(V), opts);
  const MultiIndexSet psi(model.n_eta(), cfg.d_psi), r(model.n_x, cfg.d_V);
  const OracleMoments orc = oracle_moments(model, greedy, cfg.N, cfg.oracle_M, cfg.seed, psi, r, cfg.threads);
  nlohmann::json j = to_json(orc.m);
  j["system"] = model.name;
  j["alpha"] = model.discount;
  j["d_V"] = cfg.d_V;
  j["m_xplus"] = to_std(orc.m_xplus);
  j["trajectories"] = orc.trajectories;
  j["N"] = cfg.N;
  j["theta_true"] = to_std(theta);
  j["value_iteration"] = {{"iterations", iterations},
                          {"residual", residual},
                          {"state_points", cfg.vi_state_points},
                          {"action_points", cfg.vi_action_points}};
  std::filesystem::create_directories(cfg.output_dir);
  const auto path = cfg.output_dir / "oracle.json";
  write_json(path, j);
  return path;
}

}  // namespace nioc
