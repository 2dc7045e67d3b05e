#include "nps/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nps/error.hpp"

namespace nps::harness {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

struct LayerOffsets {
  std::size_t in = 0, out = 0, weight = 0, bias = 0;
};

std::vector<LayerOffsets> layer_offsets(const TinyModelSpec& spec) {
  const auto widths = spec.widths();
  std::vector<LayerOffsets> layers;
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LayerOffsets lo{widths[l], widths[l + 1], offset, offset + widths[l] * widths[l + 1]};
    offset = lo.bias + lo.out;
    layers.push_back(lo);
  }
  return layers;
}

template <typename T>
T activate(Activation a, T z) {
  return a == Activation::kRelu ? (z > T(0) ? z : T(0)) : std::tanh(z);
}

/// Weights transposed to [in][out] so that a layer is a sequence of axpy
/// updates: every output accumulates its inputs in ascending order.
struct PreparedModel {
  Activation activation;
  std::vector<LayerOffsets> layers;
  std::vector<std::vector<float>> weights_t;
  std::vector<std::span<const float>> biases;
  std::size_t max_width = 0;

  PreparedModel(const TinyModelSpec& spec, const Checkpoint& params)
      : activation(spec.activation), layers(layer_offsets(spec)) {
    const auto values = params.values();
    for (const auto& l : layers) {
      std::vector<float> wt(l.in * l.out);
      for (std::size_t j = 0; j < l.out; ++j) {
        for (std::size_t k = 0; k < l.in; ++k) wt[k * l.out + j] = values[l.weight + j * l.in + k];
      }
      weights_t.push_back(std::move(wt));
      biases.push_back(values.subspan(l.bias, l.out));
      max_width = std::max({max_width, l.in, l.out});
    }
  }

  /// Writes the logits into `a` (resized) using `b` as scratch.
  void forward(std::span<const float> sample, std::vector<float>& a, std::vector<float>& b) const {
    a.assign(sample.begin(), sample.end());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& lo = layers[l];
      b.assign(biases[l].begin(), biases[l].end());
      const float* wt = weights_t[l].data();
      for (std::size_t k = 0; k < lo.in; ++k) {
        const float ak = a[k];
        const float* row = wt + k * lo.out;
        for (std::size_t j = 0; j < lo.out; ++j) b[j] += row[j] * ak;
      }
      if (l + 1 < layers.size()) {
        for (auto& z : b) z = activate(activation, z);
      }
      std::swap(a, b);
    }
  }
};

std::int32_t argmax(std::span<const float> v) {
  return static_cast<std::int32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void require_model_layout(const TinyModelSpec& spec, const LayoutPtr& expected,
                          const Checkpoint& params) {
  (void)spec;
  require_same_layout(expected, params.layout_ptr(), "model");
}

void check_data(const TinyModelSpec& spec, const Dataset& data) {
  if (data.dim != spec.input_dim) {
    throw StructuralMismatch("dataset has " + std::to_string(data.dim) +
                             " features, model expects " + std::to_string(spec.input_dim));
  }
}

}  // namespace

std::vector<std::size_t> TinyModelSpec::widths() const {
  std::vector<std::size_t> w{input_dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(classes);
  return w;
}

std::size_t TinyModelSpec::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layer_offsets(*this)) n += l.out * (l.in + 1);
  return n;
}

LayoutPtr TinyModelSpec::layout() const {
  if (input_dim == 0 || classes < 2) throw InvalidArgument("model needs inputs and >= 2 classes");
  std::vector<std::pair<std::string, std::vector<std::uint64_t>>> tensors;
  const auto w = widths();
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    tensors.push_back({"fc" + std::to_string(l) + ".weight", {w[l + 1], w[l]}});
    tensors.push_back({"fc" + std::to_string(l) + ".bias", {w[l + 1]}});
  }
  return Layout::create(std::move(tensors));
}

TinyModelSpec TinyModelSpec::from_layout(const Layout& layout, Activation activation) {
  const auto& ts = layout.tensors();
  if (ts.size() < 2 || ts.size() % 2 != 0) throw StructuralMismatch("layout is not an fc{l} MLP");
  TinyModelSpec spec;
  spec.activation = activation;
  spec.hidden.clear();
  const std::size_t layers = ts.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& w = ts[2 * l];
    const auto& b = ts[2 * l + 1];
    const std::string prefix = "fc" + std::to_string(l);
    if (w.name != prefix + ".weight" || b.name != prefix + ".bias" || w.shape.size() != 2 ||
        b.shape.size() != 1 || b.shape[0] != w.shape[0]) {
      throw StructuralMismatch("layout is not an fc{l} MLP at tensor '" + w.name + "'");
    }
    if (l == 0) spec.input_dim = w.shape[1];
    else if (w.shape[1] != ts[2 * l - 2].shape[0]) throw StructuralMismatch("layer widths do not chain at " + w.name);
    if (l + 1 < layers) spec.hidden.push_back(w.shape[0]);
    else spec.classes = w.shape[0];
  }
  if (spec.classes < 2) throw StructuralMismatch("model must have at least two outputs");
  return spec;
}

Dataset Dataset::head(std::size_t count) const {
  count = std::min(count, size());
  Dataset out;
  out.dim = dim;
  out.x.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(count * dim));
  out.y.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

const char* to_string(Split split) noexcept {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kCalibration: return "calibration";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "calibration") return Split::kCalibration;
  if (name == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

std::vector<SyntheticTaskSpec> make_tasks(std::size_t n_tasks, std::uint64_t base_seed,
                                          const TaskGeneratorConfig& config) {
  if (n_tasks == 0) throw InvalidArgument("make_tasks needs at least one task");
  std::vector<SyntheticTaskSpec> specs;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    SyntheticTaskSpec s;
    s.task_id = t;
    s.input_dim = config.input_dim;
    s.class_count = config.class_count;
    s.noise_sigma = config.noise_sigma;
    s.train_samples = config.train_samples;
    s.calibration_samples = config.calibration_samples;
    s.test_samples = config.test_samples;
    s.seed = base_seed * 1000003ull + t;

    auto rng = make_rng(s.seed, 0);
    std::normal_distribution<double> normal;
    std::vector<double> anchor(config.input_dim);
    for (auto& a : anchor) a = config.anchor_scale * normal(rng);
    s.cluster_centers.resize(config.class_count * config.input_dim);
    for (std::size_t c = 0; c < config.class_count; ++c) {
      for (std::size_t d = 0; d < config.input_dim; ++d) {
        s.cluster_centers[c * config.input_dim + d] =
            static_cast<float>(anchor[d] + config.center_scale * normal(rng));
      }
    }
    specs.push_back(std::move(s));
  }
  return specs;
}

const Dataset& SyntheticTask::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kCalibration: return calibration;
    case Split::kTest: return test;
  }
  throw InvalidArgument("unknown split");
}

SyntheticTask build_task(const SyntheticTaskSpec& spec) {
  if (spec.cluster_centers.size() != spec.class_count * spec.input_dim) {
    throw InvalidArgument("cluster centres do not match class count and input dimension");
  }
  const auto draw = [&](std::size_t count, std::uint64_t stream) {
    auto rng = make_rng(spec.seed, stream);
    std::normal_distribution<double> normal;
    Dataset d;
    d.dim = spec.input_dim;
    d.x.resize(count * spec.input_dim);
    d.y.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto label = static_cast<std::int32_t>(i % spec.class_count);
      d.y[i] = label;
      for (std::size_t f = 0; f < spec.input_dim; ++f) {
        d.x[i * spec.input_dim + f] = static_cast<float>(
            spec.cluster_centers[static_cast<std::size_t>(label) * spec.input_dim + f] +
            spec.noise_sigma * normal(rng));
      }
    }
    return d;
  };
  // Independent streams per split keep the splits disjoint draws.
  return SyntheticTask{spec, draw(spec.train_samples, 1), draw(spec.calibration_samples, 2),
                       draw(spec.test_samples, 3)};
}

std::vector<TaskPtr> build_tasks(const std::vector<SyntheticTaskSpec>& specs) {
  std::vector<TaskPtr> tasks;
  for (const auto& s : specs) tasks.push_back(std::make_shared<const SyntheticTask>(build_task(s)));
  return tasks;
}

FlatParams task_to_params(const SyntheticTask& task) {
  std::vector<std::pair<std::string, std::vector<std::uint64_t>>> tensors;
  std::vector<float> values;
  for (Split s : {Split::kTrain, Split::kCalibration, Split::kTest}) {
    const Dataset& d = task.split(s);
    if (d.size() == 0) throw InvalidArgument(std::string("cannot store an empty ") + to_string(s) + " split");
    tensors.push_back({std::string(to_string(s)) + ".x", {d.size(), d.dim}});
    tensors.push_back({std::string(to_string(s)) + ".y", {d.size()}});
    values.insert(values.end(), d.x.begin(), d.x.end());
    for (auto y : d.y) values.push_back(static_cast<float>(y));
  }
  return FlatParams(Layout::create(std::move(tensors)), std::move(values));
}

SyntheticTask task_from_params(const FlatParams& params) {
  SyntheticTask task;
  std::size_t classes = 0;
  for (Split s : {Split::kTrain, Split::kCalibration, Split::kTest}) {
    const std::string prefix = to_string(s);
    const TensorSpec* xs = params.layout().find(prefix + ".x");
    const TensorSpec* ys = params.layout().find(prefix + ".y");
    if (!xs || !ys || xs->shape.size() != 2 || ys->shape.size() != 1 || xs->shape[0] != ys->shape[0]) {
      throw StructuralMismatch("dataset file lacks a well-formed '" + prefix + "' split");
    }
    Dataset d;
    d.dim = xs->shape[1];
    const auto x = params.tensor(prefix + ".x");
    d.x.assign(x.begin(), x.end());
    for (float v : params.tensor(prefix + ".y")) {
      if (v < 0 || v != std::floor(v)) throw StructuralMismatch("dataset labels must be non-negative integers");
      d.y.push_back(static_cast<std::int32_t>(v));
      classes = std::max(classes, static_cast<std::size_t>(v) + 1);
    }
    (s == Split::kTrain ? task.train : s == Split::kCalibration ? task.calibration : task.test) = std::move(d);
  }
  if (task.train.dim != task.calibration.dim || task.train.dim != task.test.dim) {
    throw StructuralMismatch("dataset splits disagree on the feature count");
  }
  task.spec.input_dim = task.train.dim;
  task.spec.class_count = classes;
  task.spec.train_samples = task.train.size();
  task.spec.calibration_samples = task.calibration.size();
  task.spec.test_samples = task.test.size();
  return task;
}

void save_task(const SyntheticTask& task, const std::filesystem::path& path) {
  save_checkpoint(task_to_params(task), path);
}

SyntheticTask load_task(const std::filesystem::path& path) {
  return task_from_params(load_checkpoint(path));
}

std::vector<std::int32_t> predict(const TinyModelSpec& spec, const Checkpoint& params,
                                  const Dataset& data) {
  check_data(spec, data);
  require_model_layout(spec, spec.layout(), params);
  const PreparedModel model(spec, params);
  std::vector<std::int32_t> out(data.size());
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel
  {
    std::vector<float> a, b;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      model.forward(data.row(static_cast<std::size_t>(i)), a, b);
      out[i] = argmax(a);
    }
  }
  return out;
}

std::vector<std::int32_t> predict_reference(const TinyModelSpec& spec, const Checkpoint& params,
                                            const Dataset& data) {
  check_data(spec, data);
  require_model_layout(spec, spec.layout(), params);
  const PreparedModel model(spec, params);
  std::vector<std::int32_t> out(data.size());
  std::vector<float> a, b;
  for (std::size_t i = 0; i < data.size(); ++i) {
    model.forward(data.row(i), a, b);
    out[i] = argmax(a);
  }
  return out;
}

std::vector<float> logits(const TinyModelSpec& spec, const Checkpoint& params,
                          std::span<const float> sample) {
  require_model_layout(spec, spec.layout(), params);
  if (sample.size() != spec.input_dim) throw StructuralMismatch("sample width mismatch");
  const PreparedModel model(spec, params);
  std::vector<float> a, b;
  model.forward(sample, a, b);
  return a;
}

double accuracy(const TinyModelSpec& spec, const Checkpoint& params, const Dataset& data) {
  if (data.size() == 0) throw InvalidArgument("accuracy of an empty dataset");
  const auto pred = predict(spec, params, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.y[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
T loss_and_gradient(const TinyModelSpec& spec, std::span<const T> params, const Dataset& data,
                    std::span<const std::size_t> samples, std::span<T> grad) {
  check_data(spec, data);
  const auto layers = layer_offsets(spec);
  if (params.size() != spec.param_count() || grad.size() != params.size()) {
    throw StructuralMismatch("parameter count does not match model");
  }
  std::fill(grad.begin(), grad.end(), T(0));
  if (samples.empty()) return T(0);

  const std::size_t depth = layers.size();
  std::vector<std::vector<T>> acts(depth + 1);  // acts[l] = input of layer l
  std::vector<std::vector<T>> pre(depth);       // pre-activations
  std::vector<T> delta, delta_prev;
  const T inv_batch = T(1) / static_cast<T>(samples.size());
  T total = 0;

  for (std::size_t s : samples) {
    const auto row = data.row(s);
    acts[0].assign(row.begin(), row.end());
    for (std::size_t l = 0; l < depth; ++l) {
      const auto& lo = layers[l];
      pre[l].resize(lo.out);
      for (std::size_t j = 0; j < lo.out; ++j) {
        T z = params[lo.bias + j];
        const T* w = params.data() + lo.weight + j * lo.in;
        for (std::size_t k = 0; k < lo.in; ++k) z += w[k] * acts[l][k];
        pre[l][j] = z;
      }
      acts[l + 1] = pre[l];
      if (l + 1 < depth) {
        for (auto& a : acts[l + 1]) a = activate(spec.activation, a);
      }
    }

    const auto& out = acts[depth];
    const T peak = *std::max_element(out.begin(), out.end());
    T denom = 0;
    for (T z : out) denom += std::exp(z - peak);
    const auto label = static_cast<std::size_t>(data.y[s]);
    total += std::log(denom) + peak - out[label];

    delta.resize(out.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
      delta[j] = (std::exp(out[j] - peak) / denom - (j == label ? T(1) : T(0))) * inv_batch;
    }
    for (std::size_t l = depth; l-- > 0;) {
      const auto& lo = layers[l];
      for (std::size_t j = 0; j < lo.out; ++j) {
        const T dj = delta[j];
        grad[lo.bias + j] += dj;
        T* gw = grad.data() + lo.weight + j * lo.in;
        for (std::size_t k = 0; k < lo.in; ++k) gw[k] += dj * acts[l][k];
      }
      if (l == 0) break;
      delta_prev.assign(lo.in, T(0));
      for (std::size_t j = 0; j < lo.out; ++j) {
        const T dj = delta[j];
        const T* w = params.data() + lo.weight + j * lo.in;
        for (std::size_t k = 0; k < lo.in; ++k) delta_prev[k] += w[k] * dj;
      }
      for (std::size_t k = 0; k < lo.in; ++k) {
        const T a = acts[l][k];
        const T slope = spec.activation == Activation::kRelu ? (pre[l - 1][k] > T(0) ? T(1) : T(0))
                                                             : T(1) - a * a;
        delta_prev[k] *= slope;
      }
      std::swap(delta, delta_prev);
    }
  }
  return total * inv_batch;
}

template float loss_and_gradient<float>(const TinyModelSpec&, std::span<const float>,
                                        const Dataset&, std::span<const std::size_t>,
                                        std::span<float>);
template double loss_and_gradient<double>(const TinyModelSpec&, std::span<const double>,
                                          const Dataset&, std::span<const std::size_t>,
                                          std::span<double>);

Checkpoint init_params(const TinyModelSpec& spec, std::uint64_t seed) {
  Checkpoint ckpt(spec.layout());
  auto values = ckpt.values_mut();
  auto rng = make_rng(seed, 0x1417);
  std::normal_distribution<double> normal;
  for (const auto& l : layer_offsets(spec)) {
    const double scale = std::sqrt(2.0 / static_cast<double>(l.in));
    for (std::size_t i = 0; i < l.in * l.out; ++i) {
      values[l.weight + i] = static_cast<float>(scale * normal(rng));
    }
  }
  return ckpt;
}

namespace {

void sgd(const TinyModelSpec& spec, Checkpoint& params, const Dataset& data,
         const TrainConfig& config, std::uint64_t seed) {
  if (config.steps == 0) return;
  if (data.size() == 0) throw InvalidArgument("cannot train on an empty dataset");
  if (config.batch_size == 0) throw InvalidArgument("batch size must be positive");
  auto rng = make_rng(seed, 0x56d);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<std::size_t> batch(config.batch_size);
  std::vector<float> grad(params.size());
  const auto lr = static_cast<float>(config.learning_rate);
  auto values = params.values_mut();
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& b : batch) b = pick(rng);
    const float loss = loss_and_gradient<float>(spec, values, data, batch, grad);
    if (!std::isfinite(loss)) {
      throw TrainingError("training diverged at step " + std::to_string(step));
    }
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
  }
}

}  // namespace

Checkpoint pretrain(const TinyModelSpec& spec, const std::vector<TaskPtr>& tasks,
                    const TrainConfig& config, std::uint64_t seed) {
  Dataset pool;
  pool.dim = spec.input_dim;
  for (const auto& t : tasks) {
    check_data(spec, t->train);
    pool.x.insert(pool.x.end(), t->train.x.begin(), t->train.x.end());
    pool.y.insert(pool.y.end(), t->train.y.begin(), t->train.y.end());
  }
  Checkpoint params = init_params(spec, seed);
  sgd(spec, params, pool, config, seed);
  return params;
}

Checkpoint finetune(const TinyModelSpec& spec, const Checkpoint& pre, const SyntheticTask& task,
                    const TrainConfig& config, std::uint64_t seed) {
  require_model_layout(spec, spec.layout(), pre);
  Checkpoint params(pre.layout_ptr(), std::vector<float>(pre.values().begin(), pre.values().end()));
  if (config.steps == 0) return params;
  sgd(spec, params, task.train, config, seed);
  // Materialize as pre + τ so that diff(ft, pre) added back onto pre gives
  // ft bit for bit; arbitrary f32 pairs do not have that property. Moves
  // each weight by at most one ulp.
  return apply(pre, diff(params, pre), 1.0);
}

AccuracyEvaluator::AccuracyEvaluator(TinyModelSpec spec, std::vector<TaskPtr> tasks, Split split,
                                     double calibration_fraction)
    : spec_(std::move(spec)), layout_(spec_.layout()) {
  if (tasks.empty()) throw InvalidArgument("evaluator needs at least one task");
  if (!(calibration_fraction > 0.0 && calibration_fraction <= 1.0)) {
    throw InvalidArgument("calibration fraction must lie in (0, 1]");
  }
  for (const auto& t : tasks) {
    const Dataset& d = t->split(split);
    check_data(spec_, d);
    const auto keep = static_cast<std::size_t>(
        std::ceil(calibration_fraction * static_cast<double>(d.size()) - 1e-9));
    data_.push_back(d.head(std::max<std::size_t>(keep, 1)));
  }
}

std::vector<double> AccuracyEvaluator::per_task(const Checkpoint& candidate) const {
  require_same_layout(layout_, candidate.layout_ptr(), "evaluator");
  std::vector<double> out;
  for (const auto& d : data_) out.push_back(accuracy(spec_, candidate, d));
  return out;
}

double AccuracyEvaluator::evaluate(const Checkpoint& candidate) const {
  const auto acc = per_task(candidate);
  return std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
}

}  // namespace nps::harness
