#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nps/cmaes.hpp"
#include "nps/error.hpp"

using namespace nps;
using namespace nps::cmaes;

namespace {

double sphere(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v * v;
  return s;
}

double rosenbrock(std::span<const double> x) {
  double s = 0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    s += 100 * std::pow(x[i + 1] - x[i] * x[i], 2) + std::pow(1 - x[i], 2);
  }
  return s;
}

bool monotone(const SearchHistory& h, bool maximize) {
  for (std::size_t g = 1; g < h.generations.size(); ++g) {
    const double prev = h.generations[g - 1].best_fitness, cur = h.generations[g].best_fitness;
    if (maximize ? cur < prev : cur > prev) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("default parameters") {
  const auto p = Parameters::defaults(8);
  CHECK(p.population_size == 4 + static_cast<std::size_t>(std::floor(3 * std::log(8.0))));
  CHECK(p.parents == p.population_size / 2);
  CHECK(std::accumulate(p.weights.begin(), p.weights.end(), 0.0) == doctest::Approx(1.0));
  for (std::size_t i = 1; i < p.weights.size(); ++i) CHECK(p.weights[i] < p.weights[i - 1]);
  CHECK(Parameters::defaults(3, 20).population_size == 20);
}

TEST_CASE("ask is deterministic and collapses to the mean as sigma vanishes") {
  const std::vector<double> mean = {0.5, -1.0};
  Optimizer a(mean, 0.3, 11), b(mean, 0.3, 11);
  CHECK(a.ask() == b.ask());
  CHECK(a.ask() == a.ask());
  Optimizer c(mean, 0.3, 12);
  CHECK(a.ask() != c.ask());

  Optimizer tiny(mean, 1e-12, 1);
  for (const auto& x : tiny.ask()) {
    CHECK(std::fabs(x[0] - mean[0]) < 1e-9);
    CHECK(std::fabs(x[1] - mean[1]) < 1e-9);
  }
}

TEST_CASE("sampler mean matches the distribution mean (Monte Carlo)") {
  const std::size_t n = 8;
  const double sigma = 0.5;
  const std::vector<double> mean = {1, -2, 3, 0, 0.5, -0.5, 10, -10};
  Optimizer opt(mean, sigma, 3, Options{10000});
  const auto samples = opt.ask();
  REQUIRE(samples.size() == 10000);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (const auto& x : samples) s += x[i];
    // With C = I the per-coordinate standard deviation is sigma.
    CHECK(std::fabs(s / 10000.0 - mean[i]) < 3 * sigma / std::sqrt(10000.0) * 1.5);
  }
}

TEST_CASE("flat fitness leaves the mean in place") {
  const std::vector<double> mean = {0.2, 0.4, -0.6};
  double max_shift = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Optimizer opt(mean, 0.3, seed);
    const auto cands = opt.ask();
    std::vector<double> fit(cands.size(), 1.0);
    opt.tell(cands, fit);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      max_shift = std::max(max_shift, std::fabs(opt.state().mean[static_cast<Eigen::Index>(i)] - mean[i]));
    }
    CHECK(opt.state().generation == 1);
  }
  CHECK(max_shift < 1e-9);
}

TEST_CASE("tell validates its inputs") {
  Optimizer opt(std::vector<double>{0, 0}, 0.3, 1);
  auto cands = opt.ask();
  std::vector<double> fit(cands.size(), 0.0);
  CHECK_THROWS_AS(opt.tell(cands, std::span(fit).first(fit.size() - 1)), InvalidArgument);
  fit[0] = std::nan("");
  CHECK_THROWS_AS(opt.tell(cands, fit), InvalidArgument);
  fit[0] = 0;
  cands[1].push_back(1.0);
  CHECK_THROWS_AS(opt.tell(cands, fit), InvalidArgument);
  CHECK_THROWS_AS(Optimizer(std::vector<double>{0}, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(Optimizer(std::vector<double>{}, 0.3, 1), InvalidArgument);
}

TEST_CASE("elitism and positive-definite covariance across generations") {
  Optimizer opt(std::vector<double>(5, 1.0), 0.5, 7);
  double best = std::numeric_limits<double>::infinity();
  for (int g = 0; g < 60; ++g) {
    const auto cands = opt.ask();
    std::vector<double> fit;
    for (const auto& x : cands) fit.push_back(rosenbrock(x));
    opt.tell(cands, fit);
    CHECK(opt.best_fitness() <= best);
    best = opt.best_fitness();
    CHECK(opt.min_eigenvalue() > 0);
    CHECK(opt.state().sigma > 0);
    const auto& c = opt.state().covariance;
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("observe offers external points to the best-so-far record") {
  Optimizer opt(std::vector<double>{0, 0}, 0.3, 1, Options{0, true});
  opt.observe(std::vector<double>{1, 2}, 5.0);
  CHECK(opt.best_fitness() == 5.0);
  opt.observe(std::vector<double>{3, 4}, 4.0);
  CHECK(opt.best() == std::vector<double>{1, 2});
}

TEST_CASE("run: zero generations evaluates only the initial mean") {
  RunOptions o;
  o.budget.max_generations = 0;
  const std::vector<double> x0 = {1, 2, 3};
  const auto r = run(sphere, x0, o);
  CHECK(r.best == x0);
  CHECK(r.best_fitness == 14.0);
  CHECK(r.history.generations.size() == 1);
  CHECK(r.history.evaluations == 1);
}

TEST_CASE("run: sphere and Rosenbrock converge") {
  RunOptions o;
  o.init_sigma = 0.5;
  o.budget = {1000, 0};
  o.seed = 1;
  {
    const std::vector<double> x0(8, 1.0);
    std::size_t evals = 0;
    double best_at_budget = std::numeric_limits<double>::infinity();
    const auto r = run(
        [&](std::span<const double> x) {
          const double f = sphere(x);
          if (++evals <= 2000) best_at_budget = std::min(best_at_budget, f);
          return f;
        },
        x0, o);
    CHECK(best_at_budget < 1e-10);
    CHECK(monotone(r.history, false));
  }
  {
    const std::vector<double> x0(4, 0.0);
    std::size_t evals = 0;
    double best_at_budget = std::numeric_limits<double>::infinity();
    const auto r = run(
        [&](std::span<const double> x) {
          const double f = rosenbrock(x);
          if (++evals <= 10000) best_at_budget = std::min(best_at_budget, f);
          return f;
        },
        x0, o);
    CHECK(best_at_budget < 1e-6);
    CHECK(monotone(r.history, false));
  }
}

TEST_CASE("run: maximizing a concave quadratic finds its centre") {
  const std::vector<double> c = {0.3, -1.2, 2.0};
  RunOptions o;
  o.maximize = true;
  o.budget = {200, 0};
  o.seed = 5;
  const auto r = run(
      [&](std::span<const double> x) {
        double s = 0;
        for (std::size_t i = 0; i < 3; ++i) s -= (x[i] - c[i]) * (x[i] - c[i]);
        return s;
      },
      std::vector<double>(3, 0.0), o);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(r.best[i] - c[i]) < 1e-3);
  CHECK(monotone(r.history, true));
}

TEST_CASE("run is deterministic and independent of the worker count") {
  RunOptions o;
  o.budget = {25, 0};
  o.seed = 9;
  const std::vector<double> x0(6, 0.5);
  const Objective obj = [](std::span<const double> x, std::size_t) { return Evaluation{rosenbrock(x), 0, 0}; };
  const auto a = run(obj, x0, o);
  o.workers = 4;
  const auto b = run(obj, x0, o);
  CHECK(a.best == b.best);
  CHECK(a.best_fitness == b.best_fitness);
  REQUIRE(a.history.generations.size() == b.history.generations.size());
  for (std::size_t g = 0; g < a.history.generations.size(); ++g) {
    CHECK(a.history.generations[g].best_fitness == b.history.generations[g].best_fitness);
    CHECK(a.history.generations[g].mean_fitness == b.history.generations[g].mean_fitness);
    CHECK(a.history.generations[g].sigma == b.history.generations[g].sigma);
  }
}

TEST_CASE("run stops after the stagnation window") {
  RunOptions o;
  o.budget = {100, 5};
  const auto r = run([](std::span<const double>) { return 1.0; }, std::vector<double>{0, 0}, o);
  CHECK(r.history.generations.size() == 6);  // generation 0 plus five without gain
  CHECK(r.history.stopped_early);
}

TEST_CASE("objective failures abort with the partial history") {
  RunOptions o;
  o.budget = {10, 0};
  std::size_t calls = 0;
  try {
    run(
        [&](std::span<const double> x) {
          if (++calls > 12) throw std::runtime_error("evaluator broke");
          return sphere(x);
        },
        std::vector<double>(3, 1.0), o);
    FAIL("expected SearchAborted");
  } catch (const SearchAborted& e) {
    CHECK(e.history().generations.size() >= 1);
    CHECK(std::string(e.what()).find("evaluator broke") != std::string::npos);
    CHECK(e.cause() != nullptr);
  }
}
