#pragma once

// Desk-scale model zoo: small ReLU/tanh MLP classifiers, Gaussian-cluster
// classification tasks, a plain SGD trainer, and accuracy evaluators that
// plug into the searches as FitnessEvaluator.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nps/checkpoint.hpp"
#include "nps/prune.hpp"

namespace nps::harness {

enum class Activation { kRelu, kTanh };

struct TinyModelSpec {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden = {128, 128};
  std::size_t classes = 4;
  Activation activation = Activation::kRelu;

  /// Widths including input and output.
  std::vector<std::size_t> widths() const;
  std::size_t param_count() const;
  /// Tensors fc{l}.weight [out, in] and fc{l}.bias [out] for each layer.
  LayoutPtr layout() const;

  /// Recovers the widths from fc{l}.weight / fc{l}.bias tensors. Throws
  /// StructuralMismatch when the layout is not such an MLP.
  static TinyModelSpec from_layout(const Layout& layout, Activation activation = Activation::kRelu);
};

/// Row-major samples with integer labels.
struct Dataset {
  std::size_t dim = 0;
  std::vector<float> x;
  std::vector<std::int32_t> y;

  std::size_t size() const noexcept { return y.size(); }
  std::span<const float> row(std::size_t i) const { return std::span(x).subspan(i * dim, dim); }
  /// First `count` samples.
  Dataset head(std::size_t count) const;
};

enum class Split { kTrain, kCalibration, kTest };
const char* to_string(Split split) noexcept;
Split parse_split(std::string_view name);

struct SyntheticTaskSpec {
  std::size_t task_id = 0;
  std::size_t input_dim = 32;
  std::size_t class_count = 4;
  std::vector<float> cluster_centers;  ///< class_count × input_dim
  double noise_sigma = 1.0;
  std::size_t train_samples = 512;
  std::size_t calibration_samples = 256;
  std::size_t test_samples = 512;
  std::uint64_t seed = 0;
};

struct TaskGeneratorConfig {
  std::size_t input_dim = 32;
  std::size_t class_count = 4;
  double anchor_scale = 1.5;   ///< spread of per-task cluster regions
  double center_scale = 0.5;   ///< spread of class centres around the task anchor
  double noise_sigma = 0.6;
  std::size_t train_samples = 512;
  std::size_t calibration_samples = 256;
  std::size_t test_samples = 512;
};

/// Gaussian-cluster tasks sharing one input space: each task draws its own
/// anchor and class centres, so tasks need different weights.
std::vector<SyntheticTaskSpec> make_tasks(std::size_t n_tasks, std::uint64_t base_seed,
                                          const TaskGeneratorConfig& config = {});

struct SyntheticTask {
  SyntheticTaskSpec spec;
  Dataset train;
  Dataset calibration;
  Dataset test;

  const Dataset& split(Split s) const;
};

/// Draws the three disjoint splits; identical for identical specs.
SyntheticTask build_task(const SyntheticTaskSpec& spec);

using TaskPtr = std::shared_ptr<const SyntheticTask>;
std::vector<TaskPtr> build_tasks(const std::vector<SyntheticTaskSpec>& specs);

/// Datasets reuse the checkpoint container: tensors {split}.x [n, dim] and
/// {split}.y [n] (labels stored as floats) for train, calibration and test.
FlatParams task_to_params(const SyntheticTask& task);
SyntheticTask task_from_params(const FlatParams& params);
void save_task(const SyntheticTask& task, const std::filesystem::path& path);
SyntheticTask load_task(const std::filesystem::path& path);

// ------------------------------------------------------------------ model

/// Predicted class per sample. Samples are processed in parallel; each
/// sample's arithmetic is identical to predict_reference.
std::vector<std::int32_t> predict(const TinyModelSpec& spec, const Checkpoint& params,
                                  const Dataset& data);
std::vector<std::int32_t> predict_reference(const TinyModelSpec& spec, const Checkpoint& params,
                                            const Dataset& data);

/// Raw output scores for one sample.
std::vector<float> logits(const TinyModelSpec& spec, const Checkpoint& params,
                          std::span<const float> sample);

double accuracy(const TinyModelSpec& spec, const Checkpoint& params, const Dataset& data);

/// Mean softmax cross-entropy over the listed samples and its gradient with
/// respect to every parameter (written to `grad`, same flat order).
template <typename T>
T loss_and_gradient(const TinyModelSpec& spec, std::span<const T> params, const Dataset& data,
                    std::span<const std::size_t> samples, std::span<T> grad);

extern template float loss_and_gradient<float>(const TinyModelSpec&, std::span<const float>,
                                               const Dataset&, std::span<const std::size_t>,
                                               std::span<float>);
extern template double loss_and_gradient<double>(const TinyModelSpec&, std::span<const double>,
                                                 const Dataset&, std::span<const std::size_t>,
                                                 std::span<double>);

// --------------------------------------------------------------- training

struct TrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
};

/// He-normal weights, zero biases.
Checkpoint init_params(const TinyModelSpec& spec, std::uint64_t seed);

/// SGD from a fresh initialization on the union of the tasks' training sets.
Checkpoint pretrain(const TinyModelSpec& spec, const std::vector<TaskPtr>& tasks,
                    const TrainConfig& config, std::uint64_t seed);

/// SGD on one task's training set starting from `pre`. steps == 0 returns
/// `pre` unchanged. The result is stored as pre + τ for an f32 τ, so
/// apply(pre, diff(ft, pre)) reproduces it exactly. Throws TrainingError if
/// the loss becomes non-finite.
Checkpoint finetune(const TinyModelSpec& spec, const Checkpoint& pre, const SyntheticTask& task,
                    const TrainConfig& config, std::uint64_t seed);

// -------------------------------------------------------------- evaluation

/// Mean classification accuracy over one or more tasks on a split.
/// `calibration_fraction` keeps only the leading share of each split
/// (1, 1/2, 1/4 for the calibration-volume ablation).
class AccuracyEvaluator : public FitnessEvaluator {
 public:
  AccuracyEvaluator(TinyModelSpec spec, std::vector<TaskPtr> tasks, Split split,
                    double calibration_fraction = 1.0);

  /// Throws StructuralMismatch when the checkpoint does not fit the model.
  double evaluate(const Checkpoint& candidate) const override;
  std::vector<double> per_task(const Checkpoint& candidate) const;

  const TinyModelSpec& spec() const noexcept { return spec_; }
  std::size_t task_count() const noexcept { return data_.size(); }

 private:
  TinyModelSpec spec_;
  LayoutPtr layout_;
  std::vector<Dataset> data_;
};

}  // namespace nps::harness
