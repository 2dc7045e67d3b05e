#pragma once

// CMA-ES with an ask/tell interface and a budgeted driver.
//
// The update follows the standard (μ/μ_w, λ)-CMA-ES: log-rank recombination
// weights, cumulative step-size adaptation, and rank-one plus rank-μ
// covariance updates. The optimizer minimizes internally; maximization
// negates fitness at the boundary.

#include <Eigen/Dense>

#include <cstdint>
#include <exception>
#include <functional>
#include <span>
#include <vector>

#include "nps/error.hpp"

namespace nps::cmaes {

struct Parameters {
  std::size_t dimension = 0;
  std::size_t population_size = 0;  ///< λ_pop
  std::size_t parents = 0;          ///< μ
  std::vector<double> weights;      ///< μ positive recombination weights, Σ = 1
  double mu_eff = 0;
  double c_sigma = 0;
  double d_sigma = 0;
  double c_c = 0;
  double c_1 = 0;
  double c_mu = 0;
  double chi_n = 0;  ///< E‖N(0, I)‖

  /// Standard defaults; population_size == 0 selects 4 + ⌊3 ln n⌋.
  static Parameters defaults(std::size_t dimension, std::size_t population_size = 0);
};

struct Options {
  std::size_t population_size = 0;
  bool maximize = false;
  double condition_limit = 1e14;
};

struct CmaState {
  Eigen::VectorXd mean;
  double sigma = 0;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd p_sigma;
  Eigen::VectorXd p_c;
  std::size_t population_size = 0;
  std::size_t generation = 0;
  std::uint64_t rng_seed = 0;
};

class Optimizer {
 public:
  Optimizer(std::span<const double> initial_mean, double initial_sigma, std::uint64_t seed,
            Options options = {});

  /// λ_pop samples from N(mean, σ²C). Deterministic in (seed, generation);
  /// calling ask twice in one generation returns the same set.
  std::vector<std::vector<double>> ask() const;

  /// Consumes the fitnesses of the candidates returned by ask() for the
  /// current generation. Throws InvalidArgument on count/dimension mismatch
  /// or non-finite fitness; NumericError if the covariance breaks down.
  void tell(const std::vector<std::vector<double>>& candidates, std::span<const double> fitness);

  /// Offers an externally evaluated point to the best-so-far record.
  void observe(std::span<const double> x, double fitness);

  const CmaState& state() const noexcept { return state_; }
  const Parameters& parameters() const noexcept { return params_; }
  const Options& options() const noexcept { return options_; }

  bool has_best() const noexcept { return has_best_; }
  const std::vector<double>& best() const noexcept { return best_; }
  /// In the caller's sign convention.
  double best_fitness() const noexcept { return best_fitness_; }

  double min_eigenvalue() const noexcept { return eigenvalues_.minCoeff(); }

 private:
  void decompose();
  std::string dump() const;
  bool better(double a, double b) const noexcept { return options_.maximize ? a > b : a < b; }

  Parameters params_;
  Options options_;
  CmaState state_;
  Eigen::MatrixXd basis_;         // eigenvectors of C
  Eigen::VectorXd eigenvalues_;   // eigenvalues of C
  Eigen::MatrixXd inv_sqrt_cov_;  // C^{-1/2}
  std::vector<double> best_;
  double best_fitness_ = 0;
  bool has_best_ = false;
};

struct SearchBudget {
  std::size_t max_generations = 30;
  /// Stop after this many consecutive generations without a strict
  /// best-so-far improvement; 0 disables early stopping.
  std::size_t target_stagnation = 10;
};

/// One objective call. The time split feeds the
/// T_total = generations × (T_pruning + T_validate) report.
struct Evaluation {
  double fitness = 0;
  double prune_seconds = 0;
  double validate_seconds = 0;
};

/// Called concurrently for distinct candidates; `worker` is in [0, workers)
/// and identifies per-worker scratch state.
using Objective = std::function<Evaluation(std::span<const double> x, std::size_t worker)>;

struct GenerationRecord {
  std::size_t generation = 0;  ///< 0 is the evaluation of the initial mean
  double best_fitness = 0;     ///< best-so-far after this generation
  double mean_fitness = 0;     ///< mean over this generation's candidates
  double sigma = 0;
  double elapsed_prune_s = 0;
  double elapsed_validate_s = 0;
  std::size_t evaluations = 0;
};

struct SearchHistory {
  std::vector<GenerationRecord> generations;
  std::size_t evaluations = 0;
  double total_seconds = 0;
  bool stopped_early = false;
};

struct RunOptions {
  double init_sigma = 0.3;
  SearchBudget budget;
  std::uint64_t seed = 0;
  bool maximize = false;
  std::size_t workers = 1;
  std::size_t population_size = 0;
};

struct SearchResult {
  std::vector<double> best;
  double best_fitness = 0;
  SearchHistory history;
};

/// Thrown when the objective fails mid-search; carries what was recorded up
/// to the failing generation and the original exception.
class SearchAborted : public Error {
 public:
  SearchAborted(const std::string& message, SearchHistory history, std::exception_ptr cause)
      : Error(message), history_(std::move(history)), cause_(std::move(cause)) {}

  const SearchHistory& history() const noexcept { return history_; }
  std::exception_ptr cause() const noexcept { return cause_; }

 private:
  SearchHistory history_;
  std::exception_ptr cause_;
};

/// Evaluates the initial mean, then runs ask/tell generations until the
/// budget is exhausted or the search stagnates. The initial mean always
/// competes for best-so-far.
SearchResult run(const Objective& objective, std::span<const double> init_mean,
                 const RunOptions& options);

SearchResult run(const std::function<double(std::span<const double>)>& objective,
                 std::span<const double> init_mean, const RunOptions& options);

}  // namespace nps::cmaes
