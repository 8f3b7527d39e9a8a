#include "nioc/simulate.hpp"

#include "json.hpp"

#include <atomic>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nioc {

void parallel_indices(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            next = n;
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

Trajectory rollout(const SystemModel& model, const Policy& policy, const TruncatedGaussian& init,
                   int N, Rng& rng) {
  if (N < 1) throw std::invalid_argument("rollout: N must be >= 1");
  if (init.dimension() != model.n_x)
    throw std::invalid_argument("rollout: initial distribution dimension mismatch");
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(N + 1));
  traj.actions.reserve(static_cast<std::size_t>(N + 1));
  Vec x = model.state_space.clip(sample_truncated_gaussian(init, rng));
  for (int t = 0; t <= N; ++t) {
    Vec a = policy(x);
    if (static_cast<std::size_t>(a.size()) != model.n_a)
      throw std::runtime_error("rollout: policy returned an action of the wrong size");
    traj.states.push_back(x);
    traj.actions.push_back(a);
    if (t < N) {
      bool clipped = false;
      x = step(model, x, a, rng, &clipped);
      if (clipped) ++traj.clipped_steps;
    }
  }
  return traj;
}

Mat clean_pairs(const Trajectory& traj) {
  if (traj.states.empty()) return {};
  const auto nx = traj.states.front().size();
  const auto na = traj.actions.front().size();
  Mat out(static_cast<Eigen::Index>(traj.length()), nx + na);
  for (std::size_t t = 0; t < traj.length(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    out.row(r).head(nx) = traj.states[t].transpose();
    out.row(r).tail(na) = traj.actions[t].transpose();
  }
  return out;
}

Mat corrupt(const Trajectory& traj, const NoiseModel& obs_noise, Rng& rng) {
  Mat y = clean_pairs(traj);
  if (static_cast<std::size_t>(y.cols()) != obs_noise.dimension())
    throw std::invalid_argument("corrupt: noise dimension must equal n_x + n_a");
  for (Eigen::Index t = 0; t < y.rows(); ++t) y.row(t) += obs_noise.sample(rng).transpose();
  return y;
}

void ObservedDataset::validate() const {
  if (meta.M < 1 || meta.N < 1) throw std::invalid_argument("dataset: M and N must be >= 1");
  if (observations.size() != static_cast<std::size_t>(meta.M))
    throw std::invalid_argument("dataset: meta M=" + std::to_string(meta.M) + " but " +
                                std::to_string(observations.size()) + " trajectories present");
  const auto dim = observations.front().cols();
  if (dim < 1) throw std::invalid_argument("dataset: empty observation vectors");
  for (const auto& obs : observations) {
    if (obs.rows() != meta.N + 1)
      throw std::invalid_argument("dataset: meta N=" + std::to_string(meta.N) +
                                  " disagrees with a trajectory of " +
                                  std::to_string(obs.rows()) + " rows");
    if (obs.cols() != dim) throw std::invalid_argument("dataset: ragged observation width");
  }
  if (!(meta.alpha > 0.0 && meta.alpha < 1.0))
    throw std::invalid_argument("dataset: alpha must lie in (0, 1)");
}

GeneratedData generate_dataset(const SystemModel& model, const Policy& policy,
                               const NoiseModel& obs_noise, int N, int M, std::uint64_t seed,
                               int threads) {
  if (M < 1) throw std::invalid_argument("generate_dataset: M must be >= 1");
  GeneratedData out;
  out.trajectories.resize(static_cast<std::size_t>(M));
  out.dataset.observations.resize(static_cast<std::size_t>(M));
  parallel_indices(static_cast<std::size_t>(M), threads, [&](std::size_t i) {
    Rng rng(trajectory_seed(seed, i));
    out.trajectories[i] = rollout(model, policy, model.initial_state, N, rng);
    out.dataset.observations[i] = corrupt(out.trajectories[i], obs_noise, rng);
  });
  auto& meta = out.dataset.meta;
  meta.system = model.name;
  meta.alpha = model.discount;
  meta.N = N;
  meta.M = M;
  meta.seed = seed;
  meta.obs_noise_std = obs_noise.std().size() ? obs_noise.std().maxCoeff() : 0.0;
  meta.proc_noise_std = model.process_noise.std.size() ? model.process_noise.std.maxCoeff() : 0.0;
  return out;
}

std::filesystem::path meta_path_for(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".meta.json");
  return p;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw std::runtime_error("dataset line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

long parse_int(const std::string& s, std::size_t line) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size())
    throw std::runtime_error("dataset line " + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void save_dataset(const ObservedDataset& ds, const std::filesystem::path& csv) {
  ds.validate();
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot open " + csv.string() + " for writing");
  const std::size_t dim = ds.dimension();
  out << "traj,t";
  for (std::size_t j = 0; j < dim; ++j) out << ",y_" << j;
  out << '\n';
  for (std::size_t i = 0; i < ds.observations.size(); ++i) {
    const Mat& obs = ds.observations[i];
    for (Eigen::Index t = 0; t < obs.rows(); ++t) {
      out << i << ',' << t;
      for (Eigen::Index j = 0; j < obs.cols(); ++j) out << ',' << fmt17(obs(t, j));
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for " + csv.string());

  nlohmann::json meta = {{"system", ds.meta.system},
                         {"alpha", ds.meta.alpha},
                         {"N", ds.meta.N},
                         {"M", ds.meta.M},
                         {"seed", ds.meta.seed},
                         {"obs_noise_std", ds.meta.obs_noise_std},
                         {"proc_noise_std", ds.meta.proc_noise_std},
                         {"policy", ds.meta.policy}};
  if (!ds.meta.theta_ell.empty()) meta["theta_ell"] = ds.meta.theta_ell;
  std::ofstream mo(meta_path_for(csv));
  if (!mo) throw std::runtime_error("cannot open " + meta_path_for(csv).string() + " for writing");
  mo << meta.dump(2) << '\n';
}

ObservedDataset load_dataset(const std::filesystem::path& csv) {
  ObservedDataset ds;
  {
    std::ifstream mi(meta_path_for(csv));
    if (!mi) throw std::runtime_error("missing dataset meta file " + meta_path_for(csv).string());
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(mi);
      ds.meta.system = meta.at("system").get<std::string>();
      ds.meta.alpha = meta.at("alpha").get<double>();
      ds.meta.N = meta.at("N").get<int>();
      ds.meta.M = meta.at("M").get<int>();
      ds.meta.seed = meta.at("seed").get<std::uint64_t>();
      ds.meta.obs_noise_std = meta.at("obs_noise_std").get<double>();
      ds.meta.proc_noise_std = meta.at("proc_noise_std").get<double>();
      ds.meta.policy = meta.at("policy").get<std::string>();
      if (meta.contains("theta_ell")) ds.meta.theta_ell = meta["theta_ell"].get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("malformed dataset meta: " + std::string(e.what()));
    }
  }
  if (ds.meta.M < 1 || ds.meta.N < 1) throw std::invalid_argument("dataset: M and N must be >= 1");

  std::ifstream in(csv);
  if (!in) throw std::runtime_error("cannot open dataset " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset: empty file");
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "traj" || header[1] != "t")
    throw std::runtime_error("dataset: header must start with traj,t,y_0");
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j)
    if (header[j + 2] != "y_" + std::to_string(j))
      throw std::runtime_error("dataset: unexpected column '" + header[j + 2] + "'");

  const auto rows = static_cast<Eigen::Index>(ds.meta.N + 1);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != dim + 2)
      throw std::runtime_error("dataset line " + std::to_string(line_no) + ": expected " +
                               std::to_string(dim + 2) + " fields");
    const long i = parse_int(fields[0], line_no);
    const long t = parse_int(fields[1], line_no);
    if (t == 0 && i == static_cast<long>(ds.observations.size()))
      ds.observations.emplace_back(Mat::Constant(rows, static_cast<Eigen::Index>(dim),
                                                 std::numeric_limits<double>::quiet_NaN()));
    if (ds.observations.empty() || i != static_cast<long>(ds.observations.size()) - 1 || t < 0 ||
        t >= rows)
      throw std::invalid_argument("dataset line " + std::to_string(line_no) +
                                  ": rows out of order or inconsistent with meta N");
    for (std::size_t j = 0; j < dim; ++j)
      ds.observations.back()(t, static_cast<Eigen::Index>(j)) = parse_double(fields[j + 2], line_no);
  }
  for (const auto& obs : ds.observations)
    if (!obs.allFinite())
      throw std::invalid_argument("dataset: trajectory with missing rows (truncated file or N mismatch)");
  ds.validate();
  return ds;
}

}  // namespace nioc
