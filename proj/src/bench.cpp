#include "nps/bench.hpp"

#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nps/baselines.hpp"
#include "nps/binary_io.hpp"
#include "nps/error.hpp"

namespace nps::bench {

namespace {

using Clock = std::chrono::steady_clock;
using harness::AccuracyEvaluator;
using harness::Split;
using harness::TaskPtr;

enum Stage : std::uint64_t {
  kUpstreamData = 1,
  kTaskData,
  kPretrain,
  kFinetune,
  kSearch,
  kFusion,
  kDare,
  kSweepSearch,
  kFusionSearch,
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  // from_chars for double accepts 1e6 style; integers must be plain digits.
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw InvalidArgument("config key '" + std::string(key) + "': cannot parse '" +
                          std::string(text) + "'");
  }
  return value;
}

std::size_t parse_size(std::string_view key, std::string_view text) {
  return parse_number<std::size_t>(key, text);
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw InvalidArgument("config key '" + std::string(key) + "': expected a boolean");
}

template <typename T, typename Parse>
std::vector<T> parse_list(std::string_view text, Parse parse) {
  std::vector<T> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse(trim(text.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

void apply_key(BenchConfig& c, std::string_view key, std::string_view v) {
  const auto sz = [&] { return parse_size(key, v); };
  const auto num = [&] { return parse_number<double>(key, v); };
  if (key == "tasks") c.tasks = sz();
  else if (key == "upstream_tasks") c.upstream_tasks = sz();
  else if (key == "ratio") c.ratio = num();
  else if (key == "subspaces") c.subspaces = sz();
  else if (key == "generations") c.generations = sz();
  else if (key == "stagnation") c.stagnation = sz();
  else if (key == "init_sigma") c.init_sigma = num();
  else if (key == "fusion_generations") c.fusion_generations = sz();
  else if (key == "fusion_ratio") c.fusion_ratio = num();
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "workers") c.workers = sz();
  else if (key == "calibration_fraction") c.calibration_fraction = num();
  else if (key == "fusion") c.fusion = parse_bool(key, v);
  else if (key == "sweep") c.sweep = parse_bool(key, v);
  else if (key == "sweep_ratios") {
    c.sweep_ratios = parse_list<double>(v, [&](std::string_view s) { return parse_number<double>(key, s); });
  } else if (key == "input_dim") {
    c.model.input_dim = c.data.input_dim = sz();
  } else if (key == "classes") {
    c.model.classes = c.data.class_count = sz();
  } else if (key == "hidden") {
    c.model.hidden = parse_list<std::size_t>(v, [&](std::string_view s) { return parse_size(key, s); });
  } else if (key == "activation") {
    if (v == "relu") c.model.activation = harness::Activation::kRelu;
    else if (v == "tanh") c.model.activation = harness::Activation::kTanh;
    else throw InvalidArgument("config key 'activation': expected relu or tanh");
  }
  else if (key == "anchor_scale") c.data.anchor_scale = num();
  else if (key == "center_scale") c.data.center_scale = num();
  else if (key == "noise_sigma") c.data.noise_sigma = num();
  else if (key == "train_samples") c.data.train_samples = sz();
  else if (key == "calibration_samples") c.data.calibration_samples = sz();
  else if (key == "test_samples") c.data.test_samples = sz();
  else if (key == "pretrain_steps") c.pretrain.steps = sz();
  else if (key == "pretrain_batch") c.pretrain.batch_size = sz();
  else if (key == "pretrain_lr") c.pretrain.learning_rate = num();
  else if (key == "finetune_steps") c.finetune.steps = sz();
  else if (key == "finetune_batch") c.finetune.batch_size = sz();
  else if (key == "finetune_lr") c.finetune.learning_rate = num();
  else throw InvalidArgument("unknown config key '" + std::string(key) + "'");
}

void validate(const BenchConfig& c) {
  if (c.tasks == 0) throw InvalidArgument("bench needs at least one task");
  if (c.upstream_tasks == 0) throw InvalidArgument("bench needs at least one upstream task");
  if (c.workers == 0) throw InvalidArgument("workers must be at least 1");
  SparsityRatio{c.ratio};
  SparsityRatio{c.fusion_ratio};
  for (double r : c.sweep_ratios) SparsityRatio{r};
  if (!(c.calibration_fraction > 0 && c.calibration_fraction <= 1)) {
    throw InvalidArgument("calibration_fraction must lie in (0, 1]");
  }
  if (c.model.input_dim != c.data.input_dim || c.model.classes != c.data.class_count) {
    throw InvalidArgument("model and data disagree on input_dim / classes");
  }
}

double mean(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_ratio(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Per-task evaluators for one split.
struct SplitEvaluators {
  std::vector<AccuracyEvaluator> per_task;

  SplitEvaluators(const harness::TinyModelSpec& spec, const std::vector<TaskPtr>& tasks, Split split,
                  double fraction) {
    for (const auto& t : tasks) per_task.emplace_back(spec, std::vector<TaskPtr>{t}, split, fraction);
  }

  /// Every task scored against the same model.
  std::vector<double> shared(const Checkpoint& model) const {
    std::vector<double> out;
    for (const auto& e : per_task) out.push_back(e.evaluate(model));
    return out;
  }
  /// Task t scored against models[t].
  std::vector<double> own(const std::vector<Checkpoint>& models) const {
    std::vector<double> out;
    for (std::size_t t = 0; t < per_task.size(); ++t) out.push_back(per_task[t].evaluate(models[t]));
    return out;
  }
};

struct Tuned {
  double lambda = 0;
  Checkpoint model;
};

/// Picks the grid point with the highest calibration mean; the first wins ties.
template <typename Build>
Tuned tune_lambda(const std::vector<double>& grid, const SplitEvaluators& calibration, Build build) {
  std::optional<Tuned> best;
  double best_score = -1;
  for (double lambda : grid) {
    Checkpoint model = build(lambda);
    const double score = mean(calibration.shared(model));
    if (!best || score > best_score) {
      best_score = score;
      best = Tuned{lambda, std::move(model)};
    }
  }
  return std::move(*best);
}

std::string lambda_label(double lambda) { return "lambda=" + fmt_ratio(lambda); }

void accumulate_timing(BenchTiming& timing, const cmaes::SearchHistory& h) {
  for (const auto& g : h.generations) {
    timing.prune_seconds += g.elapsed_prune_s;
    timing.validate_seconds += g.elapsed_validate_s;
  }
  timing.generations += h.generations.size();
  timing.search_seconds += h.total_seconds;
}

nlohmann::json history_json(const cmaes::SearchHistory& h) {
  nlohmann::json gens = nlohmann::json::array();
  for (const auto& g : h.generations) {
    gens.push_back({{"generation", g.generation},
                    {"best_fitness", g.best_fitness},
                    {"mean_fitness", g.mean_fitness},
                    {"sigma", g.sigma},
                    {"evaluations", g.evaluations}});
  }
  return {{"evaluations", h.evaluations}, {"stopped_early", h.stopped_early}, {"generations", gens}};
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage, std::uint64_t index) {
  std::uint64_t z = seed;
  for (std::uint64_t v : {stage, index}) {
    z += 0x9e3779b97f4a7c15ull + v;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
  }
  return z;
}

void apply_config_text(BenchConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  validate(config);
}

void load_config_file(BenchConfig& config, const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  apply_config_text(config, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

nlohmann::json config_to_json(const BenchConfig& c) {
  return {
      {"tasks", c.tasks},
      {"upstream_tasks", c.upstream_tasks},
      {"ratio", c.ratio},
      {"subspaces", c.subspaces},
      {"generations", c.generations},
      {"stagnation", c.stagnation},
      {"init_sigma", c.init_sigma},
      {"fusion_generations", c.fusion_generations},
      {"fusion_ratio", c.fusion_ratio},
      {"seed", c.seed},
      {"calibration_fraction", c.calibration_fraction},
      {"fusion", c.fusion},
      {"sweep", c.sweep},
      {"sweep_ratios", c.sweep_ratios},
      {"input_dim", c.model.input_dim},
      {"hidden", c.model.hidden},
      {"classes", c.model.classes},
      {"activation", c.model.activation == harness::Activation::kRelu ? "relu" : "tanh"},
      {"anchor_scale", c.data.anchor_scale},
      {"center_scale", c.data.center_scale},
      {"noise_sigma", c.data.noise_sigma},
      {"train_samples", c.data.train_samples},
      {"calibration_samples", c.data.calibration_samples},
      {"test_samples", c.data.test_samples},
      {"pretrain_steps", c.pretrain.steps},
      {"pretrain_batch", c.pretrain.batch_size},
      {"pretrain_lr", c.pretrain.learning_rate},
      {"finetune_steps", c.finetune.steps},
      {"finetune_batch", c.finetune.batch_size},
      {"finetune_lr", c.finetune.learning_rate},
  };
}

BenchReport run_bench(const BenchConfig& config, BenchArtifacts* artifacts) {
  validate(config);
  const auto start = Clock::now();
  const std::uint64_t seed = config.seed;
  const std::size_t n = config.tasks;
  const auto& spec = config.model;

  BenchReport report;
  report.config = config;
  report.parameters = spec.param_count();

  const auto upstream =
      harness::build_tasks(harness::make_tasks(config.upstream_tasks, derive_seed(seed, kUpstreamData), config.data));
  const auto tasks = harness::build_tasks(harness::make_tasks(n, derive_seed(seed, kTaskData), config.data));
  const Checkpoint pre = harness::pretrain(spec, upstream, config.pretrain, derive_seed(seed, kPretrain));

  std::vector<Checkpoint> fine_tuned;
  std::vector<TaskVector> task_vectors;
  for (std::size_t t = 0; t < n; ++t) {
    fine_tuned.push_back(
        harness::finetune(spec, pre, *tasks[t], config.finetune, derive_seed(seed, kFinetune, t)));
    task_vectors.push_back(diff(fine_tuned.back(), pre));
  }

  const SplitEvaluators calibration(spec, tasks, Split::kCalibration, config.calibration_fraction);
  const SplitEvaluators test(spec, tasks, Split::kTest, 1.0);
  const SparsityRatio ratio(config.ratio);

  const auto search_one = [&](std::size_t t, SparsityRatio r, std::uint64_t search_seed) {
    NpsOptions o;
    o.subspaces = config.subspaces;
    o.ratio = r;
    o.budget = {config.generations, config.stagnation};
    o.init_sigma = config.init_sigma;
    o.seed = search_seed;
    o.workers = config.workers;
    return nps_search(pre, fine_tuned[t], calibration.per_task[t], o);
  };

  // Per-task pruning: magnitude vs searched subspace weights.
  std::vector<Checkpoint> magnitude_models, nps_models;
  std::vector<PrunedTaskVector> nps_pruned;
  for (std::size_t t = 0; t < n; ++t) {
    magnitude_models.push_back(prune(pre, task_vectors[t], ratio).model);
    auto r = search_one(t, ratio, derive_seed(seed, kSearch, t));
    accumulate_timing(report.timing, r.history);
    TaskResult tr;
    tr.task = t;
    tr.weights = r.pruned.weights_used;
    tr.kept = r.pruned.kept();
    tr.generations = r.history.generations.size();
    tr.nps_calibration = r.fitness;
    tr.magnitude_calibration = r.baseline_fitness;
    report.tasks.push_back(std::move(tr));
    report.histories.push_back(std::move(r.history));
    report.history_labels.push_back("task_" + std::to_string(t));
    nps_models.push_back(std::move(r.model));
    nps_pruned.push_back(std::move(r.pruned));
  }

  const auto ft_test = test.own(fine_tuned);
  const auto ft_cal = calibration.own(fine_tuned);
  const auto pre_test = test.shared(pre);
  const auto mag_test = test.own(magnitude_models);
  const auto nps_test = test.own(nps_models);
  for (std::size_t t = 0; t < n; ++t) {
    auto& tr = report.tasks[t];
    tr.pre_test = pre_test[t];
    tr.fine_tuned_test = ft_test[t];
    tr.fine_tuned_calibration = ft_cal[t];
    tr.magnitude_test = mag_test[t];
    tr.nps_test = nps_test[t];
  }

  const auto add_row = [&](std::string method, std::string hyper, std::vector<double> test_acc,
                           std::vector<double> cal_acc) {
    report.methods.push_back({std::move(method), std::move(hyper), std::move(test_acc), std::move(cal_acc)});
  };
  add_row("fine_tuned", "", ft_test, ft_cal);
  add_row("pretrained", "", pre_test, calibration.shared(pre));
  add_row("magnitude_prune", "r=" + fmt_ratio(config.ratio), mag_test, calibration.own(magnitude_models));
  add_row("nps_prune", "r=" + fmt_ratio(config.ratio) + ";M=" + std::to_string(config.subspaces), nps_test,
          calibration.own(nps_models));

  // Single merged models.
  const auto ta_grid = baselines::task_arithmetic_lambda_grid();
  const auto ties_grid = baselines::ties_lambda_grid();
  const auto merge_rows = [&](double r, const std::string& suffix) {
    std::vector<MethodRow> rows;
    const auto push = [&](std::string method, std::string hyper, const Checkpoint& model) {
      rows.push_back({std::move(method), std::move(hyper), test.shared(model), calibration.shared(model)});
    };
    const SparsityRatio sr(r);
    auto ties = tune_lambda(ties_grid, calibration,
                            [&](double l) { return baselines::ties_merge(pre, task_vectors, sr, l); });
    push("ties", "r=" + fmt_ratio(r) + ";" + lambda_label(ties.lambda) + suffix, ties.model);
    std::vector<TaskVector> dropped;
    const double p = 1.0 - r;
    for (std::size_t t = 0; t < n; ++t) {
      dropped.push_back(baselines::dare(task_vectors[t], {p, derive_seed(seed, kDare, t)}));
    }
    auto dare = tune_lambda(ta_grid, calibration,
                            [&](double l) { return baselines::task_arithmetic(pre, dropped, l); });
    push("dare", "p=" + fmt_ratio(p) + ";" + lambda_label(dare.lambda) + suffix, dare.model);
    return rows;
  };

  {
    const Checkpoint avg = baselines::weight_average(fine_tuned);
    add_row("weight_average", "", test.shared(avg), calibration.shared(avg));
    auto ta = tune_lambda(ta_grid, calibration,
                          [&](double l) { return baselines::task_arithmetic(pre, task_vectors, l); });
    add_row("task_arithmetic", lambda_label(ta.lambda), test.shared(ta.model), calibration.shared(ta.model));
    for (auto& row : merge_rows(config.ratio, "")) report.methods.push_back(std::move(row));
  }

  if (config.fusion) {
    std::vector<PrunedTaskVector> fusion_inputs;
    if (config.fusion_ratio == config.ratio) {
      fusion_inputs = nps_pruned;
    } else {
      for (std::size_t t = 0; t < n; ++t) {
        auto r = search_one(t, SparsityRatio(config.fusion_ratio), derive_seed(seed, kFusionSearch, t));
        accumulate_timing(report.timing, r.history);
        report.histories.push_back(std::move(r.history));
        report.history_labels.push_back("fusion_task_" + std::to_string(t));
        fusion_inputs.push_back(std::move(r.pruned));
      }
    }
    std::vector<TaskPtr> all(tasks.begin(), tasks.end());
    const AccuracyEvaluator joint(spec, all, Split::kCalibration, config.calibration_fraction);
    FusionOptions fo;
    fo.budget = {config.fusion_generations, config.stagnation};
    fo.init_sigma = config.init_sigma;
    fo.seed = derive_seed(seed, kFusion);
    fo.workers = config.workers;
    auto fr = fuse_search(pre, fusion_inputs, joint, fo);
    accumulate_timing(report.timing, fr.history);
    const std::string r_label = "r=" + fmt_ratio(config.fusion_ratio) + ";";
    const Checkpoint ones = fuse(pre, fusion_inputs, std::vector<double>(n, 1.0));
    add_row("nps_fusion_ones", r_label + "lambda=1", test.shared(ones), calibration.shared(ones));
    std::string hyper = r_label + "lambda=";
    for (std::size_t i = 0; i < fr.lambdas.size(); ++i) hyper += (i ? "|" : "") + fmt(fr.lambdas[i]);
    add_row("nps_fusion", hyper, test.shared(fr.merged), calibration.shared(fr.merged));
    report.has_fusion = true;
    report.fusion.lambdas = fr.lambdas;
    report.fusion.fitness = fr.fitness;
    report.fusion.baseline_fitness = fr.baseline_fitness;
    report.fusion.weight_average_fitness = joint.evaluate(baselines::weight_average(fine_tuned));
    report.histories.push_back(std::move(fr.history));
    report.history_labels.push_back("fusion");
  }

  // Compression: every reconstruction must equal the searched model bit for bit,
  // also after a serialization round trip.
  std::vector<std::pair<std::string, PrunedTaskVector>> entries;
  for (std::size_t t = 0; t < n; ++t) entries.emplace_back("task_" + std::to_string(t), nps_pruned[t]);
  CompressedBundle bundle = compress(pre, std::move(entries));
  const auto bytes = serialize_bundle(bundle);
  report.bundle_bytes = bytes.size();
  {
    const CompressedBundle loaded = deserialize_bundle(bytes);
    bool exact = true;
    for (std::size_t t = 0; t < n; ++t) {
      const auto name = "task_" + std::to_string(t);
      const Checkpoint a = reconstruct(bundle, name);
      const Checkpoint b = reconstruct(loaded, name);
      const auto ref = nps_models[t].values();
      for (std::size_t d = 0; d < ref.size(); ++d) {
        if (std::bit_cast<std::uint32_t>(a.values()[d]) != std::bit_cast<std::uint32_t>(ref[d]) ||
            std::bit_cast<std::uint32_t>(b.values()[d]) != std::bit_cast<std::uint32_t>(ref[d])) {
          exact = false;
          break;
        }
      }
    }
    report.bundle_roundtrip_exact = exact;
  }

  // Sparsity sweep.
  if (config.sweep) {
    for (std::size_t ri = 0; ri < config.sweep_ratios.size(); ++ri) {
      const double r = config.sweep_ratios[ri];
      std::vector<Checkpoint> mag, searched;
      for (std::size_t t = 0; t < n; ++t) {
        mag.push_back(prune(pre, task_vectors[t], SparsityRatio(r)).model);
        auto res = search_one(t, SparsityRatio(r), derive_seed(seed, kSweepSearch, t * 64 + ri));
        searched.push_back(std::move(res.model));
      }
      report.sweep.push_back({r, "magnitude_prune", test.own(mag)});
      report.sweep.push_back({r, "nps_prune", test.own(searched)});
      for (auto& row : merge_rows(r, "")) report.sweep.push_back({r, row.method, std::move(row.test)});
    }
  }

  // Accuracy against storage, all parameters trainable.
  {
    const auto P = static_cast<std::uint64_t>(report.parameters);
    const auto storage_for = [&](double r) {
      return storage_report({static_cast<std::uint64_t>(n), P, P, 0, r});
    };
    const auto base = storage_for(config.ratio);
    const auto point = [&](const std::string& method, std::uint64_t bits, const std::vector<double>& acc) {
      report.storage.push_back({method, bits, mean(acc), normalized_accuracy(acc, ft_test)});
    };
    for (const auto& row : report.methods) {
      if (row.method == "fine_tuned") point(row.method, base.fine_tuned_bits, row.test);
      else if (row.method == "nps_prune") point("nps_compress", base.nps_bits, row.test);
      else if (row.method != "pretrained" && row.method != "magnitude_prune") {
        point(row.method, base.single_model_bits, row.test);
      }
    }
    for (const auto& s : report.sweep) {
      if (s.method == "nps_prune") point("nps_compress@" + fmt_ratio(s.ratio), storage_for(s.ratio).nps_bits, s.test);
    }
  }

  if (artifacts) {
    artifacts->upstream = upstream;
    artifacts->tasks = tasks;
    artifacts->pre = pre;
    artifacts->fine_tuned = fine_tuned;
    artifacts->bundle = std::move(bundle);
  }
  report.timing.total_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

std::string comparison_csv(const BenchReport& report) {
  const std::size_t n = report.config.tasks;
  std::ostringstream out;
  out << "method,hyperparameters";
  for (std::size_t t = 0; t < n; ++t) out << ",task_" << t;
  out << ",mean,normalized\n";
  const auto& ft = report.methods.front().test;
  for (const auto& row : report.methods) {
    out << row.method << "," << row.hyperparameters;
    for (double a : row.test) out << "," << fmt(a);
    out << "," << fmt(mean(row.test)) << "," << fmt(normalized_accuracy(row.test, ft)) << "\n";
  }
  return out.str();
}

std::string sweep_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "ratio,method";
  for (std::size_t t = 0; t < report.config.tasks; ++t) out << ",task_" << t;
  out << ",mean\n";
  for (const auto& s : report.sweep) {
    out << fmt_ratio(s.ratio) << "," << s.method;
    for (double a : s.test) out << "," << fmt(a);
    out << "," << fmt(mean(s.test)) << "\n";
  }
  return out.str();
}

std::string storage_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "method,tasks,bits,mean_accuracy,normalized_accuracy\n";
  for (const auto& p : report.storage) {
    out << p.method << "," << report.config.tasks << "," << p.bits << "," << fmt(p.mean_accuracy) << ","
        << fmt(p.normalized_accuracy) << "\n";
  }
  return out.str();
}

nlohmann::json report_json(const BenchReport& report) {
  nlohmann::json j;
  j["config"] = config_to_json(report.config);
  j["parameters"] = report.parameters;
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : report.tasks) {
    tasks.push_back({{"task", t.task},
                     {"pre_test", t.pre_test},
                     {"fine_tuned_test", t.fine_tuned_test},
                     {"fine_tuned_calibration", t.fine_tuned_calibration},
                     {"magnitude_calibration", t.magnitude_calibration},
                     {"magnitude_test", t.magnitude_test},
                     {"nps_calibration", t.nps_calibration},
                     {"nps_test", t.nps_test},
                     {"weights", t.weights},
                     {"kept", t.kept},
                     {"generations", t.generations}});
  }
  j["tasks"] = tasks;
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : report.methods) {
    methods.push_back({{"method", m.method},
                       {"hyperparameters", m.hyperparameters},
                       {"test", m.test},
                       {"calibration", m.calibration},
                       {"mean_test", mean(m.test)},
                       {"mean_calibration", mean(m.calibration)}});
  }
  j["methods"] = methods;
  if (report.has_fusion) {
    j["fusion"] = {{"lambdas", report.fusion.lambdas},
                   {"fitness", report.fusion.fitness},
                   {"baseline_fitness", report.fusion.baseline_fitness},
                   {"weight_average_fitness", report.fusion.weight_average_fitness}};
  }
  j["bundle"] = {{"bytes", report.bundle_bytes}, {"roundtrip_exact", report.bundle_roundtrip_exact}};
  nlohmann::json searches = nlohmann::json::array();
  for (std::size_t i = 0; i < report.histories.size(); ++i) {
    auto h = history_json(report.histories[i]);
    h["label"] = report.history_labels[i];
    searches.push_back(std::move(h));
  }
  j["searches"] = searches;
  return j;
}

std::string history_jsonl(const cmaes::SearchHistory& history, std::string_view label) {
  std::string out;
  for (const auto& g : history.generations) {
    nlohmann::json line;
    if (!label.empty()) line["search"] = label;
    line["generation"] = g.generation;
    line["best_fitness"] = g.best_fitness;
    line["mean_fitness"] = g.mean_fitness;
    line["sigma"] = g.sigma;
    line["elapsed_prune_s"] = g.elapsed_prune_s;
    line["elapsed_validate_s"] = g.elapsed_validate_s;
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace nps::bench
