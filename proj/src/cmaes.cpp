#include "nps/cmaes.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace nps::cmaes {

Parameters Parameters::defaults(std::size_t dimension, std::size_t population_size) {
  if (dimension == 0) throw InvalidArgument("CMA-ES dimension must be positive");
  Parameters p;
  const double n = static_cast<double>(dimension);
  p.dimension = dimension;
  p.population_size =
      population_size != 0 ? population_size
                           : 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(n)));
  if (p.population_size < 2) throw InvalidArgument("CMA-ES population must be at least 2");
  p.parents = p.population_size / 2;

  const double lambda = static_cast<double>(p.population_size);
  p.weights.resize(p.parents);
  for (std::size_t i = 0; i < p.parents; ++i) {
    p.weights[i] = std::log((lambda + 1.0) / 2.0) - std::log(static_cast<double>(i + 1));
  }
  const double sum = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  double sum_sq = 0;
  for (auto& w : p.weights) {
    w /= sum;
    sum_sq += w * w;
  }
  p.mu_eff = 1.0 / sum_sq;

  p.c_sigma = (p.mu_eff + 2.0) / (n + p.mu_eff + 5.0);
  p.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((p.mu_eff - 1.0) / (n + 1.0)) - 1.0) + p.c_sigma;
  p.c_c = (4.0 + p.mu_eff / n) / (n + 4.0 + 2.0 * p.mu_eff / n);
  p.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + p.mu_eff);
  p.c_mu = std::min(1.0 - p.c_1,
                    2.0 * (p.mu_eff - 2.0 + 1.0 / p.mu_eff) / ((n + 2.0) * (n + 2.0) + p.mu_eff));
  p.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  return p;
}

Optimizer::Optimizer(std::span<const double> initial_mean, double initial_sigma,
                     std::uint64_t seed, Options options)
    : params_(Parameters::defaults(initial_mean.size(), options.population_size)),
      options_(options) {
  if (!(initial_sigma > 0) || !std::isfinite(initial_sigma)) {
    throw InvalidArgument("CMA-ES initial sigma must be positive and finite");
  }
  const auto n = static_cast<Eigen::Index>(initial_mean.size());
  state_.mean = Eigen::Map<const Eigen::VectorXd>(initial_mean.data(), n);
  if (!state_.mean.allFinite()) throw InvalidArgument("CMA-ES initial mean must be finite");
  state_.sigma = initial_sigma;
  state_.covariance = Eigen::MatrixXd::Identity(n, n);
  state_.p_sigma = Eigen::VectorXd::Zero(n);
  state_.p_c = Eigen::VectorXd::Zero(n);
  state_.population_size = params_.population_size;
  state_.rng_seed = seed;
  decompose();
}

std::vector<std::vector<double>> Optimizer::ask() const {
  const auto n = static_cast<Eigen::Index>(params_.dimension);
  std::seed_seq seq{static_cast<std::uint32_t>(state_.rng_seed),
                    static_cast<std::uint32_t>(state_.rng_seed >> 32),
                    static_cast<std::uint32_t>(state_.generation),
                    static_cast<std::uint32_t>(state_.generation >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal;

  const Eigen::MatrixXd transform = basis_ * eigenvalues_.cwiseSqrt().asDiagonal();
  std::vector<std::vector<double>> out(params_.population_size, std::vector<double>(params_.dimension));
  Eigen::VectorXd z(n);
  for (auto& candidate : out) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
    const Eigen::VectorXd x = state_.mean + state_.sigma * (transform * z);
    std::copy(x.data(), x.data() + n, candidate.begin());
  }
  return out;
}

void Optimizer::observe(std::span<const double> x, double fitness) {
  if (!std::isfinite(fitness)) throw InvalidArgument("CMA-ES fitness must be finite");
  if (!has_best_ || better(fitness, best_fitness_)) {
    best_.assign(x.begin(), x.end());
    best_fitness_ = fitness;
    has_best_ = true;
  }
}

void Optimizer::tell(const std::vector<std::vector<double>>& candidates,
                     std::span<const double> fitness) {
  const std::size_t lambda = params_.population_size;
  const auto n = static_cast<Eigen::Index>(params_.dimension);
  if (candidates.size() != lambda || fitness.size() != lambda) {
    throw InvalidArgument("tell expects " + std::to_string(lambda) + " candidates and fitnesses, got " +
                          std::to_string(candidates.size()) + " and " +
                          std::to_string(fitness.size()));
  }
  for (std::size_t i = 0; i < lambda; ++i) {
    if (candidates[i].size() != params_.dimension) {
      throw InvalidArgument("candidate dimension mismatch");
    }
    if (!std::isfinite(fitness[i])) throw InvalidArgument("CMA-ES fitness must be finite");
  }
  for (std::size_t i = 0; i < lambda; ++i) observe(candidates[i], fitness[i]);

  const bool flat = std::all_of(fitness.begin(), fitness.end(),
                                [&](double f) { return f == fitness[0]; });
  if (flat) {
    // No ranking information: keep the distribution, widen the step.
    state_.sigma *= std::exp(0.2 + params_.c_sigma / params_.d_sigma);
    ++state_.generation;
    return;
  }

  std::vector<std::size_t> rank(lambda);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return better(fitness[a], fitness[b]); });

  const Eigen::VectorXd old_mean = state_.mean;
  Eigen::MatrixXd steps(n, static_cast<Eigen::Index>(params_.parents));
  Eigen::VectorXd y_w = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < params_.parents; ++k) {
    const auto& x = candidates[rank[k]];
    const Eigen::VectorXd y =
        (Eigen::Map<const Eigen::VectorXd>(x.data(), n) - old_mean) / state_.sigma;
    steps.col(static_cast<Eigen::Index>(k)) = y;
    y_w += params_.weights[k] * y;
  }
  state_.mean = old_mean + state_.sigma * y_w;

  const double cs = params_.c_sigma;
  const double cc = params_.c_c;
  state_.p_sigma = (1.0 - cs) * state_.p_sigma +
                   std::sqrt(cs * (2.0 - cs) * params_.mu_eff) * (inv_sqrt_cov_ * y_w);
  const double ps_norm = state_.p_sigma.norm();
  const double decay = 1.0 - std::pow(1.0 - cs, 2.0 * static_cast<double>(state_.generation + 1));
  const bool h_sigma = ps_norm / std::sqrt(decay) <
                       (1.4 + 2.0 / (static_cast<double>(n) + 1.0)) * params_.chi_n;
  state_.p_c = (1.0 - cc) * state_.p_c +
               (h_sigma ? std::sqrt(cc * (2.0 - cc) * params_.mu_eff) : 0.0) * y_w;

  const double delta_h = h_sigma ? 0.0 : cc * (2.0 - cc);
  Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < params_.parents; ++k) {
    const auto col = steps.col(static_cast<Eigen::Index>(k));
    rank_mu.noalias() += params_.weights[k] * col * col.transpose();
  }
  state_.covariance = (1.0 + params_.c_1 * delta_h - params_.c_1 - params_.c_mu) * state_.covariance +
                      params_.c_1 * state_.p_c * state_.p_c.transpose() + params_.c_mu * rank_mu;

  state_.sigma *= std::exp((cs / params_.d_sigma) * (ps_norm / params_.chi_n - 1.0));
  ++state_.generation;
  decompose();
}

void Optimizer::decompose() {
  if (!(state_.sigma > 0) || !std::isfinite(state_.sigma)) {
    throw NumericError("CMA-ES step size degenerated\n" + dump());
  }
  if (!state_.covariance.allFinite()) {
    throw NumericError("CMA-ES covariance has non-finite entries\n" + dump());
  }
  state_.covariance = (0.5 * (state_.covariance + state_.covariance.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(state_.covariance);
  if (solver.info() != Eigen::Success) {
    throw NumericError("CMA-ES covariance decomposition failed\n" + dump());
  }
  double lo = solver.eigenvalues().minCoeff();
  const double hi = solver.eigenvalues().maxCoeff();
  if (!(hi > 0)) {
    throw NumericError("CMA-ES covariance is not positive definite\n" + dump());
  }
  if (lo <= 0 || hi > options_.condition_limit * lo) {
    // Lift the spectrum so that hi / lo equals the condition limit.
    const double limit = options_.condition_limit;
    const double shift = (hi - limit * lo) / (limit - 1.0);
    state_.covariance.diagonal().array() += shift;
    solver.compute(state_.covariance);
    if (solver.info() != Eigen::Success || !(solver.eigenvalues().minCoeff() > 0)) {
      throw NumericError("CMA-ES covariance reconditioning failed\n" + dump());
    }
    lo = solver.eigenvalues().minCoeff();
  }
  basis_ = solver.eigenvectors();
  eigenvalues_ = solver.eigenvalues();
  inv_sqrt_cov_ = basis_ * eigenvalues_.cwiseSqrt().cwiseInverse().asDiagonal() * basis_.transpose();
}

std::string Optimizer::dump() const {
  std::ostringstream os;
  os.precision(17);
  os << "generation=" << state_.generation << " sigma=" << state_.sigma << "\nmean=["
     << state_.mean.transpose() << "]\np_sigma=[" << state_.p_sigma.transpose() << "]\np_c=["
     << state_.p_c.transpose() << "]\nC=\n"
     << state_.covariance;
  return os.str();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Evaluates every candidate, fanning out over `workers` threads. Results
/// land in candidate order; the first failure (by index) is rethrown.
std::vector<Evaluation> evaluate_all(const Objective& objective,
                                     const std::vector<std::vector<double>>& candidates,
                                     std::size_t workers) {
  const auto count = static_cast<std::ptrdiff_t>(candidates.size());
  std::vector<Evaluation> results(candidates.size());
  std::vector<std::exception_ptr> errors(candidates.size());
#pragma omp parallel for num_threads(static_cast<int>(workers)) schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      results[i] = objective(candidates[i], static_cast<std::size_t>(omp_get_thread_num()));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

GenerationRecord summarize(std::size_t generation, const std::vector<Evaluation>& evals,
                           double wall_seconds, const Optimizer& opt) {
  GenerationRecord rec;
  rec.generation = generation;
  rec.best_fitness = opt.best_fitness();
  rec.sigma = opt.state().sigma;
  rec.evaluations = evals.size();
  double fitness_sum = 0, prune = 0, validate = 0;
  for (const auto& e : evals) {
    fitness_sum += e.fitness;
    prune += e.prune_seconds;
    validate += e.validate_seconds;
  }
  rec.mean_fitness = fitness_sum / static_cast<double>(evals.size());
  // Worker time is split in proportion to the summed per-candidate phase
  // times so that the two phases add up to the generation's wall time.
  const double busy = prune + validate;
  const double prune_share = busy > 0 ? prune / busy : 0.0;
  rec.elapsed_prune_s = wall_seconds * prune_share;
  rec.elapsed_validate_s = wall_seconds * (1.0 - prune_share);
  return rec;
}

}  // namespace

SearchResult run(const Objective& objective, std::span<const double> init_mean,
                 const RunOptions& options) {
  if (options.workers == 0) throw InvalidArgument("workers must be at least 1");
  const auto start = Clock::now();
  Optimizer opt(init_mean, options.init_sigma, options.seed,
                Options{options.population_size, options.maximize});
  SearchHistory history;

  const auto abort = [&](std::exception_ptr cause) {
    std::string what = "objective failed";
    try {
      std::rethrow_exception(cause);
    } catch (const std::exception& e) {
      what += ": ";
      what += e.what();
    } catch (...) {
    }
    history.total_seconds = seconds_since(start);
    return SearchAborted(what, history, cause);
  };

  {
    const auto t0 = Clock::now();
    std::vector<Evaluation> evals;
    try {
      evals = evaluate_all(objective, {std::vector<double>(init_mean.begin(), init_mean.end())}, 1);
      opt.observe(init_mean, evals[0].fitness);
    } catch (...) {
      throw abort(std::current_exception());
    }
    history.generations.push_back(summarize(0, evals, seconds_since(t0), opt));
    history.evaluations += 1;
  }

  std::size_t stagnant = 0;
  for (std::size_t g = 1; g <= options.budget.max_generations; ++g) {
    const auto t0 = Clock::now();
    const double best_before = opt.best_fitness();
    const auto candidates = opt.ask();
    std::vector<Evaluation> evals;
    try {
      evals = evaluate_all(objective, candidates, options.workers);
      std::vector<double> fitness(evals.size());
      for (std::size_t i = 0; i < evals.size(); ++i) fitness[i] = evals[i].fitness;
      opt.tell(candidates, fitness);
    } catch (...) {
      throw abort(std::current_exception());
    }
    history.generations.push_back(summarize(g, evals, seconds_since(t0), opt));
    history.evaluations += evals.size();

    const bool improved = options.maximize ? opt.best_fitness() > best_before
                                           : opt.best_fitness() < best_before;
    stagnant = improved ? 0 : stagnant + 1;
    if (options.budget.target_stagnation != 0 && stagnant >= options.budget.target_stagnation) {
      history.stopped_early = g < options.budget.max_generations;
      break;
    }
  }
  history.total_seconds = seconds_since(start);
  return SearchResult{opt.best(), opt.best_fitness(), std::move(history)};
}

SearchResult run(const std::function<double(std::span<const double>)>& objective,
                 std::span<const double> init_mean, const RunOptions& options) {
  return run(
      Objective([&](std::span<const double> x, std::size_t) {
        const auto t0 = Clock::now();
        Evaluation e;
        e.fitness = objective(x);
        e.validate_seconds = seconds_since(t0);
        return e;
      }),
      init_mean, options);
}

}  // namespace nps::cmaes
