#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shiftkit/ft_kernels.hpp"
#include "shiftkit/ingest.hpp"

namespace shiftkit {

/// A predicted answer and the ten human answers it is graded against.
struct VqaAnswerSet {
  std::string predicted;
  std::vector<std::string> human_answers;
};

inline constexpr std::size_t kHumanAnswers = 10;

/// min(matches / 3, 1) after lowercasing and trimming. Throws WrongAnswerCount.
double vqa_accuracy(const VqaAnswerSet& ans);

/// Mean shifts applied to a test split; labels are drawn before shifting.
struct ShiftSpec {
  std::string name;
  Eigen::VectorXd v_shift;
  Eigen::VectorXd q_shift;
};

/// Synthetic two-modality classification task. Image and question features
/// are standard normal; labels come from a linear teacher on v and the first
/// `q_content_dims` question coordinates. In-distribution data additionally
/// carries a class-conditional offset of `style_strength` on question
/// coordinate q_content_dims + label, a shortcut the pre-training mixture
/// lacks.
struct SyntheticTask {
  std::size_t d_v = 8;
  std::size_t d_q = 8;
  std::size_t n_classes = 4;
  std::size_t hidden = 8;
  std::size_t q_content_dims = 4;
  double style_strength = 2.0;
  /// Probability that a simulated annotator gives the teacher label.
  double annotator_agreement = 0.9;

  std::size_t n_pretrain = 20000;
  std::size_t n_train = 2000;
  std::size_t n_val = 1000;
  std::size_t n_test = 4000;

  std::vector<ShiftSpec> ood_specs;
  Eigen::MatrixXd teacher_v;  // n_classes x d_v
  Eigen::MatrixXd teacher_q;  // n_classes x d_q, zero beyond q_content_dims
  std::uint64_t seed = 0;

  /// Default task with question, image and joint shift splits.
  static SyntheticTask make(std::uint64_t seed);
  /// Same task with one OOD split that is unshifted.
  static SyntheticTask make_control(std::uint64_t seed);
  void validate() const;
};

struct Dataset {
  RowMatrix v;
  RowMatrix q;
  std::vector<int> labels;
  /// kHumanAnswers class indices per sample; empty for training splits.
  std::vector<std::array<int, kHumanAnswers>> human;
  std::size_t size() const { return labels.size(); }
};

struct TaskData {
  Dataset pretrain;
  Dataset train;
  Dataset val;
  Dataset id_test;
  std::vector<Dataset> ood_test;
};

/// All splits, bit-reproducible from task.seed.
TaskData generate(const SyntheticTask& task);

/// Layers "encoder_v", "encoder_q", "fusion", "head" (head weights then bias).
struct ToyModel {
  std::size_t d_v = 0, d_q = 0, hidden = 0, n_classes = 0;
  std::vector<LayerState> layers;

  static ToyModel init(const SyntheticTask& task, std::uint64_t seed);
  /// Copies theta into theta0, making the current weights the reference.
  void anchor();
  std::size_t parameter_count() const;
};

inline constexpr const char* kLayerNames[] = {"encoder_v", "encoder_q", "fusion", "head"};
inline constexpr std::size_t kHeadLayer = 3;

struct LossGrad {
  double loss = 0.0;
  std::vector<Eigen::VectorXd> grads;
};

/// Mean cross-entropy over the rows selected by `idx` (all rows when empty).
LossGrad loss_and_grad(const ToyModel& model, const Dataset& data, const std::vector<std::size_t>& idx = {});
double loss(const ToyModel& model, const Dataset& data, const std::vector<std::size_t>& idx = {});
std::vector<int> predict(const ToyModel& model, const Dataset& data);
/// Mean VQA accuracy in percent against the simulated annotators.
double evaluate(const ToyModel& model, const Dataset& data);

struct TrainOptions {
  std::size_t epochs = 50;
  double lr = 0.1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  /// Called after every epoch with the epoch index and current weights.
  std::function<void(std::size_t, const ToyModel&)> on_epoch;
};

struct PretrainOptions {
  std::size_t epochs = 30;
  double lr = 0.5;
  std::size_t batch_size = 64;
};

/// Trains a fresh model on the pre-training mixture and anchors it.
ToyModel pretrain(const SyntheticTask& task, const TaskData& data, const PretrainOptions& options = {});

struct TrainResult {
  MethodConfig config;
  ToyModel model;
  double id_acc = 0.0;
  std::vector<double> ood_acc;
  /// [layer][epoch]; gamma stays 0 for methods without a constraint.
  std::vector<std::vector<double>> gamma_history;
  std::vector<std::vector<double>> deviation_history;
};

/// Fine-tunes `base` (theta0 = its weights) on the ID train split.
/// Throws DivergedLoss with the epoch index.
TrainResult train(const SyntheticTask& task, const TaskData& data, const ToyModel& base, const MethodConfig& cfg,
                  const TrainOptions& options = {});

struct BenchmarkRow {
  MethodConfig config;
  std::optional<TrainResult> result;
  std::string error;
  double ood_average() const;
};

struct BenchmarkTable {
  std::vector<std::string> ood_names;
  double pretrained_id_acc = 0.0;
  std::vector<double> pretrained_ood_acc;
  std::vector<BenchmarkRow> rows;
};

/// One row per config; a failing method records its error and the rest run.
BenchmarkTable run_benchmark(const SyntheticTask& task, const std::vector<MethodConfig>& methods,
                             const TrainOptions& options = {}, const PretrainOptions& pre = {});

}  // namespace shiftkit
