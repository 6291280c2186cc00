#pragma once

#include "hsicgcn/model.hpp"
#include "hsicgcn/skeleton.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hsicgcn {

/// Every hyperparameter of a training run. Defaults follow the published
/// NTU RGB+D setup where one exists (120 epochs, 5 warm-up epochs, lr 0.1
/// decayed by 0.1 every 50 epochs, Nesterov momentum 0.9, P = 1.0, delta = 1);
/// batch size and architecture are desk-scale choices.
struct TrainConfig {
  int epochs = 120;
  int warmup_epochs = 5;
  double base_lr = 0.1;
  double lr_decay = 0.1;
  int decay_every = 50;
  double momentum = 0.9;
  double weight_decay = 4e-4;
  /// Global L2 gradient-norm cap before each step; 0 disables clipping.
  double grad_clip_norm = 1.0;
  int batch_size = 32;
  double temperature = 1.0;
  double delta = 1.0;
  int hsic_sign = -1;
  double hsic_weight = 1.0;
  bool use_hsic = true;
  bool use_distill = true;
  bool detach_teacher = true;
  std::uint64_t seed = 0;
  MaternParams matern;
  EncoderSpec base;
  EncoderSpec auxiliary{{16}};
  Modality modality = Modality::joint;
  bool center = true;

  void validate() const;
  LossConfig loss_config() const;
  /// Model spec for a dataset; both encoders use this config's delta.
  ModelSpec model_spec(const Dataset& dataset) const;
};

struct GradientResult {
  LossBreakdown loss;
  ModelParams gradients;
  Matrix base_logits;
};

/// Analytic gradient of L_Total over one batch. `frozen_teacher` pins the
/// auxiliary logits seen by the base model (only meaningful with detach_teacher).
GradientResult compute_gradients(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch,
                                 const LossConfig& config, const Matrix* frozen_teacher = nullptr);

/// Loss value only, under the same coupling rules as compute_gradients.
LossBreakdown evaluate_loss(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch,
                            const LossConfig& config, const Matrix* frozen_teacher = nullptr);

/// Nesterov SGD in the form used by common deep-learning frameworks:
///   g <- g + weight_decay * p;  v <- momentum * v + g;  p <- p - lr * (g + momentum * v).
void sgd_nesterov_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr,
                       double momentum, double weight_decay = 0.0);

/// Linear warm-up to base_lr over warmup_epochs (epoch e uses (e+1)/warmup),
/// then step decay every decay_every epochs.
double lr_at(int epoch, const TrainConfig& config);

/// Rescales every gradient array by max_norm / norm when the global L2 norm
/// exceeds max_norm. Returns the norm before clipping.
double clip_gradient_norm(ModelParams& grads, double max_norm);

struct MetricsRecord {
  int epoch = 0;
  LossBreakdown loss;  // mean over the epoch's samples
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  double learning_rate = 0.0;
  double wall_seconds = 0.0;
};

struct FitResult {
  ModelSpec spec;
  ModelParams params;
  std::vector<MetricsRecord> metrics;
  long optimizer_steps = 0;
};

/// Raised when the loss turns non-finite; carries the last finite state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& message, FitResult last_good)
      : std::runtime_error(message), last_good_(std::move(last_good)) {}
  const FitResult& last_good() const { return last_good_; }

 private:
  FitResult last_good_;
};

/// Trains on an already prepared (centered / modality-transformed) dataset.
FitResult fit(const Dataset& train, const Dataset* test, const TrainConfig& config);

struct EvaluationReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<int> per_class_count;
  Matrix scores;  // n x k softmax
  std::vector<int> predictions;
  std::vector<int> labels;
};

/// Top-1 report from a score table; argmax ties go to the lowest class index.
EvaluationReport score_report(const Eigen::Ref<const Matrix>& scores, std::span<const int> labels, int num_classes);

EvaluationReport evaluate(const ModelSpec& spec, const ModelParams& params, const Dataset& dataset);

int argmax_lowest(const Eigen::Ref<const RowVector>& row);

struct GradientReport {
  struct Entry {
    std::string name;
    double max_relative_error = 0.0;
    double max_abs_analytic = 0.0;
    int coordinates_checked = 0;
  };
  std::vector<Entry> entries;
  double worst = 0.0;
  double threshold = 1e-4;
  bool pass = true;
};

/// Central differences (f(p+h) - f(p-h)) / 2h on every coordinate (or every
/// `stride`-th one). Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradientReport gradient_check(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch,
                              const LossConfig& config, double step = 1e-5, double threshold = 1e-4, int stride = 1);

/// Headered CSV: epoch,l_cls,hsic,l_ce,l_d,total,train_acc,test_acc,lr[,wall_seconds].
void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> metrics, bool include_wall_clock = true);

}  // namespace hsicgcn
