// nps: command-line front end for diff / prune / search / merge / compress /
// reconstruct / eval / storage-report / bench.
//
// Exit codes: 0 ok, 2 bad flags, 3 file or parse error, 4 structural
// mismatch, 5 numeric or optimizer failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nps/applications.hpp"
#include "nps/baselines.hpp"
#include "nps/bench.hpp"
#include "nps/binary_io.hpp"
#include "nps/error.hpp"
#include "nps/harness.hpp"
#include "nps/prune.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nps;

namespace {

using Clock = std::chrono::steady_clock;

enum ExitCode { kOk = 0, kBadFlags = 2, kFileError = 3, kMismatch = 4, kNumeric = 5 };

struct Common {
  std::string out;
  std::string manifest = "run_manifest.json";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string activation = "relu";
};

struct Manifest {
  std::string command;
  std::vector<std::string> args;
  json config = json::object();
  json seeds = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::size_t generations = 0;
  double prune_s = 0;
  double validate_s = 0;
  std::optional<double> search_s;

  void add_search(const cmaes::SearchHistory& h) {
    generations += h.generations.size();
    for (const auto& g : h.generations) {
      prune_s += g.elapsed_prune_s;
      validate_s += g.elapsed_validate_s;
    }
    search_s = search_s.value_or(0) + h.total_seconds;
  }

  json to_json(double wall_s) const {
    const double g = static_cast<double>(generations);
    json timing = {{"generations", generations},
                   {"T_pruning", generations ? prune_s / g : 0.0},
                   {"T_validate", generations ? validate_s / g : 0.0},
                   {"T_total", search_s.value_or(wall_s)},
                   {"wall_seconds", wall_s}};
    return {{"command", command}, {"args", args},     {"config", config},  {"seeds", seeds},
            {"inputs", inputs},   {"outputs", outputs}, {"timing", timing}};
  }
};

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

harness::Activation parse_activation(const std::string& name) {
  if (name == "relu") return harness::Activation::kRelu;
  if (name == "tanh") return harness::Activation::kTanh;
  throw InvalidArgument("activation must be relu or tanh");
}

std::vector<harness::TaskPtr> load_tasks(const std::vector<std::string>& paths, Manifest& m) {
  std::vector<harness::TaskPtr> tasks;
  for (const auto& p : paths) {
    tasks.push_back(std::make_shared<const harness::SyntheticTask>(harness::load_task(p)));
    m.inputs.push_back(p);
  }
  return tasks;
}

Checkpoint load_input(const std::string& path, Manifest& m) {
  m.inputs.push_back(path);
  return load_checkpoint(path);
}

/// Splits NAME=PATH; a bare PATH is named after its stem.
std::pair<std::string, std::string> named_path(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) return {fs::path(arg).stem().string(), arg};
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

std::uint64_t exact_count(double v, const char* flag) {
  if (!(v >= 0) || v != std::floor(v) || v > 9.007199254740992e15) {
    throw InvalidArgument(std::string(flag) + " must be a non-negative integer, got " + std::to_string(v));
  }
  return static_cast<std::uint64_t>(v);
}

json pruned_json(const PrunedTaskVector& p) {
  return {{"parameters", p.layout->size()},
          {"kept", p.kept()},
          {"ratio", p.ratio.value()},
          {"weights", p.weights_used}};
}

void save_single_bundle(const std::string& path, const Checkpoint& pre, const std::string& name,
                        PrunedTaskVector pruned, Manifest& m) {
  std::vector<std::pair<std::string, PrunedTaskVector>> entries;
  entries.emplace_back(name, std::move(pruned));
  save_bundle(compress(pre, std::move(entries)), path);
  m.outputs.push_back(path);
}

void print_table(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::size_t width = 0;
  for (const auto& [k, v] : rows) width = std::max(width, k.size());
  for (const auto& [k, v] : rows) {
    std::cerr << "  " << k << std::string(width - k.size() + 2, ' ') << v << "\n";
  }
}

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Prints the failure and maps it to an exit code. A failed search is
/// classified by the exception that stopped it.
int report_failure(std::exception_ptr error) {
  try {
    std::rethrow_exception(error);
  } catch (const cmaes::SearchAborted& e) {
    std::cerr << "search aborted after " << e.history().generations.size() << " generation(s)\n";
    return e.cause() ? report_failure(e.cause()) : kNumeric;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadFlags;
  } catch (const StructuralMismatch& e) {
    std::cerr << "structural mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kFileError;
  } catch (const IoError& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kFileError;
  } catch (const LookupError& e) {
    std::cerr << "lookup error: " << e.what() << "\n";
    return kFileError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kFileError;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural parameter search: prune, merge and compress fine-tuned checkpoints"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--out", common.out, "Write the JSON report here instead of stdout");
  app.add_option("--manifest", common.manifest, "Run manifest path");

  const auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Random seed")->envname("NPS_SEED");
  };
  const auto add_workers = [&](CLI::App* sub) {
    sub->add_option("--workers", common.workers, "Concurrent candidate evaluations")
        ->check(CLI::PositiveNumber);
  };

  // Shared flag storage; each subcommand binds the ones it uses.
  std::string pre_path, ft_path, data_path, model_out, bundle_out, tv_out, history_out, bundle_path;
  std::string name = "task", task_name, split_name, method;
  std::vector<std::string> ft_paths, data_paths, input_bundles, model_paths;
  std::vector<double> lambdas, weights;
  double ratio = kDefaultRatio, sigma = 0.3, calibration_fraction = 1.0, drop_p = 0.9;
  std::size_t subspaces = kDefaultSubspaces, generations = 30, stagnation = 10;

  auto* diff_cmd = app.add_subcommand("diff", "Task vector ft - pre");
  diff_cmd->add_option("--pre", pre_path)->required();
  diff_cmd->add_option("--ft", ft_path)->required();
  diff_cmd->add_option("--tv-out", tv_out, "Write the task vector (checkpoint container)");

  auto* prune_cmd = app.add_subcommand("prune", "Top-r magnitude pruning, optionally with subspace weights");
  prune_cmd->add_option("--pre", pre_path)->required();
  prune_cmd->add_option("--ft", ft_path)->required();
  prune_cmd->add_option("--ratio", ratio, "Kept fraction r");
  prune_cmd->add_option("--weights", weights, "Subspace weights w (M values)")->delimiter(',');
  prune_cmd->add_option("--model-out", model_out);
  prune_cmd->add_option("--bundle-out", bundle_out, "Single-task bundle with the pruned vector");
  prune_cmd->add_option("--name", name);

  auto* search_cmd = app.add_subcommand("search", "Search subspace weights on calibration data, then prune");
  search_cmd->add_option("--pre", pre_path)->required();
  search_cmd->add_option("--ft", ft_path)->required();
  search_cmd->add_option("--data", data_path, "Task dataset file")->required();
  search_cmd->add_option("--split", split_name, "Split scored during the search")->default_val("calibration");
  search_cmd->add_option("--ratio", ratio);
  search_cmd->add_option("--subspaces", subspaces)->check(CLI::PositiveNumber);
  search_cmd->add_option("--generations", generations);
  search_cmd->add_option("--stagnation", stagnation, "Stop after this many generations without gain (0: never)");
  search_cmd->add_option("--sigma", sigma);
  search_cmd->add_option("--calibration-fraction", calibration_fraction);
  search_cmd->add_option("--activation", common.activation);
  search_cmd->add_option("--model-out", model_out);
  search_cmd->add_option("--bundle-out", bundle_out);
  search_cmd->add_option("--history", history_out, "Per-generation JSON lines");
  search_cmd->add_option("--name", name);
  add_seed(search_cmd);
  add_workers(search_cmd);

  auto* merge_cmd = app.add_subcommand("merge", "Merge several tasks into one model");
  merge_cmd->add_option("--method", method, "fuse | fuse-search | weight-average | task-arithmetic | ties | dare")
      ->required();
  merge_cmd->add_option("--pre", pre_path);
  merge_cmd->add_option("--ft", ft_paths, "Fine-tuned checkpoints");
  merge_cmd->add_option("--bundle", bundle_path, "Pruned task vectors (fuse, fuse-search)");
  merge_cmd->add_option("--lambda", lambdas, "Coefficient(s)")->delimiter(',');
  merge_cmd->add_option("--ratio", ratio, "TIES trim ratio");
  merge_cmd->add_option("--p", drop_p, "DARE drop probability");
  merge_cmd->add_option("--data", data_paths, "Datasets scored by fuse-search");
  merge_cmd->add_option("--generations", generations);
  merge_cmd->add_option("--stagnation", stagnation);
  merge_cmd->add_option("--sigma", sigma);
  merge_cmd->add_option("--activation", common.activation);
  merge_cmd->add_option("--model-out", model_out);
  add_seed(merge_cmd);
  add_workers(merge_cmd);

  auto* compress_cmd = app.add_subcommand("compress", "Bundle a base with pruned task vectors");
  compress_cmd->add_option("--pre", pre_path)->required();
  compress_cmd->add_option("--input", input_bundles, "Bundles whose entries are collected");
  compress_cmd->add_option("--ft", ft_paths, "NAME=PATH fine-tuned checkpoints, magnitude pruned at --ratio");
  compress_cmd->add_option("--ratio", ratio);
  compress_cmd->add_option("--bundle-out", bundle_out)->required();

  auto* reconstruct_cmd = app.add_subcommand("reconstruct", "Rebuild one task's model from a bundle");
  reconstruct_cmd->add_option("--bundle", bundle_path)->required();
  reconstruct_cmd->add_option("--task", task_name)->required();
  reconstruct_cmd->add_option("--model-out", model_out);

  auto* eval_cmd = app.add_subcommand("eval", "Accuracy of a model on task datasets");
  eval_cmd->add_option("--model", model_paths, "Checkpoint(s); one, or one per dataset")->required();
  eval_cmd->add_option("--data", data_paths)->required();
  eval_cmd->add_option("--split", split_name)->default_val("test");
  eval_cmd->add_option("--activation", common.activation);

  double n_tasks = 1, p_total = 0, p_trainable = -1, p_frozen = 0;
  auto* storage_cmd = app.add_subcommand("storage-report", "Bits needed to store N tasks per method");
  storage_cmd->add_option("--n", n_tasks, "Task count N")->required();
  storage_cmd->add_option("--p", p_total, "Total parameters P")->required();
  storage_cmd->add_option("--p-prime", p_trainable, "Trainable parameters P' (default P - F)");
  storage_cmd->add_option("--f", p_frozen, "Frozen parameters F");
  storage_cmd->add_option("--ratio", ratio);

  bench::BenchConfig bench_cfg;
  std::string config_path, out_dir = "bench_out", export_dir;
  bool no_sweep = false, no_fusion = false;
  auto* bench_cmd = app.add_subcommand("bench", "Synthetic end-to-end benchmark");
  bench_cmd->add_option("--config", config_path, "key = value config file, applied before flags");
  bench_cmd->add_option("--tasks", bench_cfg.tasks);
  bench_cmd->add_option("--ratio", bench_cfg.ratio);
  bench_cmd->add_option("--subspaces", bench_cfg.subspaces);
  bench_cmd->add_option("--generations", bench_cfg.generations);
  bench_cmd->add_option("--fusion-generations", bench_cfg.fusion_generations);
  bench_cmd->add_option("--fusion-ratio", bench_cfg.fusion_ratio);
  bench_cmd->add_option("--stagnation", bench_cfg.stagnation);
  bench_cmd->add_option("--calibration-fraction", bench_cfg.calibration_fraction);
  bench_cmd->add_flag("--no-sweep", no_sweep);
  bench_cmd->add_flag("--no-fusion", no_fusion);
  bench_cmd->add_option("--out-dir", out_dir, "Directory for CSV / JSON outputs");
  bench_cmd->add_option("--export", export_dir, "Also write checkpoints, bundle and datasets here");
  bench_cmd->add_option("--seed", bench_cfg.seed)->envname("NPS_SEED");
  bench_cmd->add_option("--workers", bench_cfg.workers)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadFlags;
  }

  const auto start = Clock::now();
  Manifest manifest;
  manifest.command = app.get_subcommands().front()->get_name();
  for (int i = 1; i < argc; ++i) manifest.args.emplace_back(argv[i]);
  json report;
  std::vector<std::pair<std::string, std::string>> table;

  try {
    if (*diff_cmd) {
      const Checkpoint pre = load_input(pre_path, manifest);
      const Checkpoint ft = load_input(ft_path, manifest);
      const TaskVector tv = diff(ft, pre);
      double sq = 0, max_abs = 0;
      std::size_t nonzero = 0;
      for (float v : tv.values()) {
        sq += static_cast<double>(v) * v;
        max_abs = std::max(max_abs, static_cast<double>(std::fabs(v)));
        nonzero += v != 0.0f;
      }
      if (!tv_out.empty()) {
        save_checkpoint(tv, tv_out);
        manifest.outputs.push_back(tv_out);
      }
      report = {{"parameters", tv.size()}, {"nonzero", nonzero}, {"l2_norm", std::sqrt(sq)}, {"max_abs", max_abs}};
      table = {{"parameters", std::to_string(tv.size())}, {"nonzero", std::to_string(nonzero)},
               {"l2 norm", num(std::sqrt(sq))}};
    } else if (*prune_cmd) {
      manifest.config = {{"ratio", ratio}, {"weights", weights}};
      const Checkpoint pre = load_input(pre_path, manifest);
      const Checkpoint ft = load_input(ft_path, manifest);
      const TaskVector tv = diff(ft, pre);
      const SparsityRatio r(ratio);
      PruneResult result = weights.empty()
                               ? prune(pre, tv, r)
                               : prune(pre, reweight(tv, partition(tv, weights.size()), weights), r);
      result.pruned.weights_used = weights;
      if (!model_out.empty()) {
        save_checkpoint(result.model, model_out);
        manifest.outputs.push_back(model_out);
      }
      if (!bundle_out.empty()) save_single_bundle(bundle_out, pre, name, result.pruned, manifest);
      report = pruned_json(result.pruned);
      table = {{"parameters", std::to_string(tv.size())}, {"kept", std::to_string(result.pruned.kept())}};
    } else if (*search_cmd) {
      manifest.config = {{"ratio", ratio},           {"subspaces", subspaces}, {"generations", generations},
                         {"stagnation", stagnation}, {"sigma", sigma},         {"split", split_name},
                         {"calibration_fraction", calibration_fraction},      {"workers", common.workers},
                         {"activation", common.activation}};
      manifest.seeds = {{"search", common.seed}};
      const Checkpoint pre = load_input(pre_path, manifest);
      const Checkpoint ft = load_input(ft_path, manifest);
      const auto tasks = load_tasks({data_path}, manifest);
      const auto spec = harness::TinyModelSpec::from_layout(pre.layout(), parse_activation(common.activation));
      const harness::AccuracyEvaluator evaluator(spec, tasks, harness::parse_split(split_name),
                                                 calibration_fraction);
      NpsOptions o;
      o.subspaces = subspaces;
      o.ratio = SparsityRatio(ratio);
      o.budget = {generations, stagnation};
      o.init_sigma = sigma;
      o.seed = common.seed;
      o.workers = common.workers;
      NpsResult result = nps_search(pre, ft, evaluator, o);
      manifest.add_search(result.history);
      if (!history_out.empty()) {
        write_text(history_out, bench::history_jsonl(result.history));
        manifest.outputs.push_back(history_out);
      }
      if (!model_out.empty()) {
        save_checkpoint(result.model, model_out);
        manifest.outputs.push_back(model_out);
      }
      if (!bundle_out.empty()) save_single_bundle(bundle_out, pre, name, result.pruned, manifest);
      report = pruned_json(result.pruned);
      report["fitness"] = result.fitness;
      report["magnitude_fitness"] = result.baseline_fitness;
      report["generations"] = result.history.generations.size();
      report["evaluations"] = result.history.evaluations;
      table = {{"magnitude fitness", num(result.baseline_fitness)},
               {"searched fitness", num(result.fitness)},
               {"generations", std::to_string(result.history.generations.size())},
               {"kept", std::to_string(result.pruned.kept())}};
    } else if (*merge_cmd) {
      manifest.config = {{"method", method}, {"lambda", lambdas}, {"ratio", ratio}, {"p", drop_p},
                         {"generations", generations}, {"workers", common.workers}};
      manifest.seeds = {{"merge", common.seed}};
      std::optional<Checkpoint> merged;
      if (method == "fuse" || method == "fuse-search") {
        if (bundle_path.empty()) throw InvalidArgument("--bundle is required for " + method);
        manifest.inputs.push_back(bundle_path);
        const CompressedBundle bundle = load_bundle(bundle_path);
        std::vector<PrunedTaskVector> ptvs;
        for (const auto& [n, p] : bundle.entries) ptvs.push_back(p);
        if (method == "fuse") {
          if (lambdas.empty()) lambdas.assign(ptvs.size(), 1.0);
          merged = fuse(bundle.base, ptvs, lambdas);
        } else {
          const auto tasks = load_tasks(data_paths, manifest);
          const auto spec =
              harness::TinyModelSpec::from_layout(bundle.base.layout(), parse_activation(common.activation));
          const harness::AccuracyEvaluator evaluator(spec, tasks, harness::Split::kCalibration);
          FusionOptions fo;
          fo.budget = {generations, stagnation};
          fo.init_sigma = sigma;
          fo.seed = common.seed;
          fo.workers = common.workers;
          FusionResult fr = fuse_search(bundle.base, ptvs, evaluator, fo);
          manifest.add_search(fr.history);
          lambdas = fr.lambdas;
          report["fitness"] = fr.fitness;
          report["baseline_fitness"] = fr.baseline_fitness;
          merged = std::move(fr.merged);
        }
        report["lambdas"] = lambdas;
      } else {
        std::vector<Checkpoint> fts;
        for (const auto& p : ft_paths) fts.push_back(load_input(p, manifest));
        if (fts.empty()) throw InvalidArgument("--ft is required for " + method);
        if (method == "weight-average") {
          merged = baselines::weight_average(fts);
        } else {
          if (pre_path.empty()) throw InvalidArgument("--pre is required for " + method);
          const Checkpoint pre = load_input(pre_path, manifest);
          std::vector<TaskVector> tvs;
          for (const auto& f : fts) tvs.push_back(diff(f, pre));
          if (lambdas.size() > 1) throw InvalidArgument(method + " takes a single --lambda");
          const double lambda = lambdas.empty() ? 1.0 : lambdas.front();
          if (method == "task-arithmetic") {
            merged = baselines::task_arithmetic(pre, tvs, lambda);
          } else if (method == "ties") {
            merged = baselines::ties_merge(pre, tvs, SparsityRatio(ratio), lambda);
          } else if (method == "dare") {
            for (std::size_t t = 0; t < tvs.size(); ++t) {
              tvs[t] = baselines::dare(tvs[t], {drop_p, bench::derive_seed(common.seed, 0, t)});
            }
            merged = baselines::task_arithmetic(pre, tvs, lambda);
          } else {
            throw InvalidArgument("unknown merge method '" + method + "'");
          }
          report["lambda"] = lambda;
        }
      }
      if (!model_out.empty()) {
        save_checkpoint(*merged, model_out);
        manifest.outputs.push_back(model_out);
      }
      report["method"] = method;
      report["parameters"] = merged->size();
      table = {{"method", method}, {"parameters", std::to_string(merged->size())}};
    } else if (*compress_cmd) {
      manifest.config = {{"ratio", ratio}};
      const Checkpoint pre = load_input(pre_path, manifest);
      std::vector<std::pair<std::string, PrunedTaskVector>> entries;
      for (const auto& path : input_bundles) {
        manifest.inputs.push_back(path);
        CompressedBundle b = load_bundle(path);
        require_same_layout(pre.layout_ptr(), b.base.layout_ptr(), path);
        if (!std::equal(pre.values().begin(), pre.values().end(), b.base.values().begin())) {
          throw StructuralMismatch(path + " was built on a different base checkpoint");
        }
        for (auto& e : b.entries) entries.push_back(std::move(e));
      }
      for (const auto& arg : ft_paths) {
        const auto [task, path] = named_path(arg);
        const Checkpoint ft = load_input(path, manifest);
        entries.emplace_back(task, prune(pre, diff(ft, pre), SparsityRatio(ratio)).pruned);
      }
      const CompressedBundle bundle = compress(pre, std::move(entries));
      save_bundle(bundle, bundle_out);
      manifest.outputs.push_back(bundle_out);
      report = {{"tasks", bundle.task_names()},
                {"parameters", pre.size()},
                {"bytes", fs::file_size(bundle_out)}};
      table = {{"tasks", std::to_string(bundle.entries.size())},
               {"bytes", std::to_string(fs::file_size(bundle_out))}};
    } else if (*reconstruct_cmd) {
      manifest.inputs.push_back(bundle_path);
      const CompressedBundle bundle = load_bundle(bundle_path);
      const Checkpoint model = reconstruct(bundle, task_name);
      if (!model_out.empty()) {
        save_checkpoint(model, model_out);
        manifest.outputs.push_back(model_out);
      }
      report = {{"task", task_name}, {"parameters", model.size()}, {"kept", bundle.entry(task_name).kept()}};
      table = {{"task", task_name}, {"kept", std::to_string(bundle.entry(task_name).kept())}};
    } else if (*eval_cmd) {
      manifest.config = {{"split", split_name}, {"activation", common.activation}};
      std::vector<Checkpoint> models;
      for (const auto& p : model_paths) models.push_back(load_input(p, manifest));
      const auto tasks = load_tasks(data_paths, manifest);
      if (models.size() != 1 && models.size() != tasks.size()) {
        throw InvalidArgument("pass one --model, or one per --data");
      }
      const auto split = harness::parse_split(split_name);
      const auto spec =
          harness::TinyModelSpec::from_layout(models.front().layout(), parse_activation(common.activation));
      std::vector<double> acc;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        const Checkpoint& m = models.size() == 1 ? models.front() : models[t];
        acc.push_back(harness::accuracy(spec, m, tasks[t]->split(split)));
        table.push_back({data_paths[t], num(acc.back())});
      }
      double sum = 0;
      for (double a : acc) sum += a;
      report = {{"split", split_name}, {"accuracy", acc}, {"mean", sum / static_cast<double>(acc.size())}};
      table.push_back({"mean", num(report["mean"].get<double>())});
    } else if (*storage_cmd) {
      StorageInputs in;
      in.tasks = exact_count(n_tasks, "--n");
      in.params = exact_count(p_total, "--p");
      in.frozen_params = exact_count(p_frozen, "--f");
      if (p_trainable < 0) {
        if (in.frozen_params > in.params) throw InvalidArgument("--f exceeds --p");
        in.trainable_params = in.params - in.frozen_params;
      } else {
        in.trainable_params = exact_count(p_trainable, "--p-prime");
      }
      in.ratio = ratio;
      const StorageReport r = storage_report(in);
      manifest.config = {{"n", in.tasks}, {"p", in.params}, {"p_prime", in.trainable_params},
                         {"f", in.frozen_params}, {"ratio", in.ratio}};
      report = {{"fine_tuned", r.fine_tuned_bits},
                {"single_model", r.single_model_bits},
                {"tallmask_ties", r.tallmask_bits},
                {"nps", r.nps_bits},
                {"inputs", manifest.config}};
      table = {{"fine-tuned", std::to_string(r.fine_tuned_bits)},
               {"single model", std::to_string(r.single_model_bits)},
               {"TALL mask + TIES", std::to_string(r.tallmask_bits)},
               {"NPS", std::to_string(r.nps_bits)}};
    } else if (*bench_cmd) {
      // Flags given explicitly override the config file.
      bench::BenchConfig cfg;
      if (!config_path.empty()) {
        manifest.inputs.push_back(config_path);
        bench::load_config_file(cfg, config_path);
      }
      const auto given = [&](const char* flag) { return bench_cmd->count(flag) > 0; };
      if (given("--tasks")) cfg.tasks = bench_cfg.tasks;
      if (given("--ratio")) cfg.ratio = bench_cfg.ratio;
      if (given("--subspaces")) cfg.subspaces = bench_cfg.subspaces;
      if (given("--generations")) cfg.generations = bench_cfg.generations;
      if (given("--fusion-generations")) cfg.fusion_generations = bench_cfg.fusion_generations;
      if (given("--fusion-ratio")) cfg.fusion_ratio = bench_cfg.fusion_ratio;
      if (given("--stagnation")) cfg.stagnation = bench_cfg.stagnation;
      if (given("--calibration-fraction")) cfg.calibration_fraction = bench_cfg.calibration_fraction;
      if (given("--seed") || std::getenv("NPS_SEED")) cfg.seed = bench_cfg.seed;
      if (given("--workers")) cfg.workers = bench_cfg.workers;
      if (no_sweep) cfg.sweep = false;
      if (no_fusion) cfg.fusion = false;

      bench::BenchArtifacts artifacts;
      const bench::BenchReport r = bench::run_bench(cfg, export_dir.empty() ? nullptr : &artifacts);
      manifest.config = bench::config_to_json(cfg);
      manifest.config["workers"] = cfg.workers;
      manifest.seeds = {{"bench", cfg.seed}};
      for (const auto& h : r.histories) manifest.add_search(h);

      fs::create_directories(out_dir);
      const fs::path dir(out_dir);
      const auto emit = [&](const char* file, const std::string& text) {
        write_text(dir / file, text);
        manifest.outputs.push_back((dir / file).string());
      };
      report = bench::report_json(r);
      emit("comparison.csv", bench::comparison_csv(r));
      emit("sweep.csv", bench::sweep_csv(r));
      emit("storage_points.csv", bench::storage_csv(r));
      emit("report.json", report.dump(2) + "\n");
      std::string history;
      for (std::size_t i = 0; i < r.histories.size(); ++i) {
        history += bench::history_jsonl(r.histories[i], r.history_labels[i]);
      }
      emit("search_history.jsonl", history);
      if (!app.get_option("--manifest")->count()) common.manifest = (dir / "run_manifest.json").string();

      if (!export_dir.empty()) {
        const fs::path ex(export_dir);
        fs::create_directories(ex);
        const auto out = [&](const fs::path& p) { manifest.outputs.push_back(p.string()); return p; };
        save_checkpoint(*artifacts.pre, out(ex / "pre.npsc"));
        for (std::size_t t = 0; t < artifacts.fine_tuned.size(); ++t) {
          const auto id = std::to_string(t);
          save_checkpoint(artifacts.fine_tuned[t], out(ex / ("ft_" + id + ".npsc")));
          harness::save_task(*artifacts.tasks[t], out(ex / ("task_" + id + ".npsc")));
        }
        save_bundle(*artifacts.bundle, out(ex / "bundle.npsb"));
      }

      for (const auto& m : r.methods) {
        double sum = 0;
        for (double a : m.test) sum += a;
        table.push_back({m.method + (m.hyperparameters.empty() ? "" : " [" + m.hyperparameters + "]"),
                         num(sum / static_cast<double>(m.test.size()))});
      }
    }
  } catch (...) {
    return report_failure(std::current_exception());
  }

  const double wall = std::chrono::duration<double>(Clock::now() - start).count();
  try {
    const std::string text = report.dump(2) + "\n";
    if (common.out.empty()) {
      std::cout << text;
    } else {
      write_text(common.out, text);
      manifest.outputs.push_back(common.out);
    }
    write_text(common.manifest, manifest.to_json(wall).dump(2) + "\n");
  } catch (...) {
    return report_failure(std::current_exception());
  }
  std::cerr << manifest.command << "\n";
  print_table(table);
  return kOk;
}
