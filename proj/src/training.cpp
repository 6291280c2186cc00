#include "hsicgcn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace hsicgcn {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (warmup_epochs < 0 || (epochs > 0 && warmup_epochs >= epochs)) {
    throw std::invalid_argument("TrainConfig: warmup_epochs must be in [0, epochs)");
  }
  if (!(base_lr > 0.0) || !(lr_decay > 0.0) || decay_every < 1) {
    throw std::invalid_argument("TrainConfig: learning-rate schedule values must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
  if (!(grad_clip_norm >= 0.0 && std::isfinite(grad_clip_norm))) {
    throw std::invalid_argument("TrainConfig: grad_clip_norm must be finite and >= 0");
  }
  if (!(weight_decay >= 0.0 && std::isfinite(weight_decay))) {
    throw std::invalid_argument("TrainConfig: weight_decay must be finite and >= 0");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  GaussianWidth{delta};
  loss_config().validate();
  base.validate();
  auxiliary.validate();
}

LossConfig TrainConfig::loss_config() const {
  LossConfig cfg;
  cfg.matern = matern;
  cfg.hsic_sign = hsic_sign;
  cfg.hsic_weight = hsic_weight;
  cfg.temperature = temperature;
  cfg.terms.hsic = use_hsic;
  cfg.terms.distill = use_distill;
  cfg.detach_teacher = detach_teacher;
  return cfg;
}

ModelSpec TrainConfig::model_spec(const Dataset& dataset) const {
  if (dataset.sequences.empty()) throw std::invalid_argument("model_spec: empty dataset");
  ModelSpec spec;
  spec.in_channels = dataset.sequences.front().channels();
  spec.num_classes = dataset.num_classes;
  spec.base = base;
  spec.auxiliary = auxiliary;
  spec.base.delta = delta;
  spec.auxiliary.delta = delta;
  spec.graph = dataset.graph;
  spec.validate();
  return spec;
}

GradientResult compute_gradients(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch,
                                 const LossConfig& config, const Matrix* frozen_teacher) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, params, true);
  const BatchForward fwd = forward_batch(tape, spec, bound, batch, {config.detach_teacher, frozen_teacher});
  const std::vector<int> labels = labels_of(batch);
  const TapeLoss loss = total_loss(tape, fwd, labels, spec.num_classes, config);
  if (!std::isfinite(loss.breakdown.total)) throw NonFiniteError("compute_gradients: non-finite loss");
  tape.backward(loss.total);
  return {loss.breakdown, collect_gradients(tape, bound, params), fwd.base_logits.value()};
}

LossBreakdown evaluate_loss(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch,
                            const LossConfig& config, const Matrix* frozen_teacher) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, params, false);
  const BatchForward fwd = forward_batch(tape, spec, bound, batch, {config.detach_teacher, frozen_teacher});
  return total_loss(tape, fwd, labels_of(batch), spec.num_classes, config).breakdown;
}

void sgd_nesterov_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr,
                       double momentum, double weight_decay) {
  std::vector<const Matrix*> g;
  std::vector<Matrix*> v;
  for_each_array(grads, [&](const std::string&, const Matrix& m) { g.push_back(&m); });
  for_each_array(velocity, [&](const std::string&, Matrix& m) { v.push_back(&m); });
  std::size_t i = 0;
  for_each_array(params, [&](const std::string& name, Matrix& p) {
    require_shape(i < g.size() && i < v.size(), "sgd_nesterov_step: parameter count mismatch at " + name);
    const Matrix grad = weight_decay == 0.0 ? *g[i] : Matrix(*g[i] + weight_decay * p);
    Matrix& vel = *v[i];
    ++i;
    require_shape(grad.rows() == p.rows() && grad.cols() == p.cols() && vel.rows() == p.rows() &&
                      vel.cols() == p.cols(),
                  "sgd_nesterov_step: shape mismatch at " + name);
    vel = momentum * vel + grad;
    p -= lr * (grad + momentum * vel);
    if (!p.allFinite()) throw NonFiniteError("sgd_nesterov_step: parameter " + name + " became non-finite");
  });
  require_shape(i == g.size() && i == v.size(), "sgd_nesterov_step: parameter count mismatch");
}

double clip_gradient_norm(ModelParams& grads, double max_norm) {
  if (!(max_norm >= 0.0)) throw std::invalid_argument("clip_gradient_norm: max_norm must be >= 0");
  double squared = 0.0;
  for_each_array(grads, [&](const std::string&, const Matrix& g) { squared += g.squaredNorm(); });
  const double norm = std::sqrt(squared);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for_each_array(grads, [&](const std::string&, Matrix& g) { g *= factor; });
  }
  return norm;
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) throw std::out_of_range("lr_at: epoch outside [0, epochs)");
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
  }
  const int decays = (epoch - config.warmup_epochs) / config.decay_every;
  return config.base_lr * std::pow(config.lr_decay, decays);
}

int argmax_lowest(const Eigen::Ref<const RowVector>& row) {
  int best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = static_cast<int>(c);
  }
  return best;
}

EvaluationReport score_report(const Eigen::Ref<const Matrix>& scores, std::span<const int> labels, int num_classes) {
  if (scores.rows() == 0) throw std::invalid_argument("evaluate: empty dataset");
  require_shape(scores.rows() == static_cast<Eigen::Index>(labels.size()), "evaluate: score/label count mismatch");
  require_shape(scores.cols() == num_classes, "evaluate: score width != class count");
  EvaluationReport report;
  report.scores = scores;
  report.labels.assign(labels.begin(), labels.end());
  report.per_class_count.assign(num_classes, 0);
  std::vector<int> correct(num_classes, 0);
  int total_correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const int pred = argmax_lowest(scores.row(i));
    report.predictions.push_back(pred);
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw std::invalid_argument("evaluate: label out of range");
    ++report.per_class_count[y];
    if (pred == y) {
      ++correct[y];
      ++total_correct;
    }
  }
  report.accuracy = static_cast<double>(total_correct) / static_cast<double>(scores.rows());
  for (int c = 0; c < num_classes; ++c) {
    report.per_class_accuracy.push_back(report.per_class_count[c] > 0
                                            ? static_cast<double>(correct[c]) / report.per_class_count[c]
                                            : std::numeric_limits<double>::quiet_NaN());
  }
  return report;
}

EvaluationReport evaluate(const ModelSpec& spec, const ModelParams& params, const Dataset& dataset) {
  if (dataset.sequences.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (dataset.num_classes != spec.num_classes) throw std::invalid_argument("evaluate: class count mismatch");
  constexpr std::size_t kChunk = 64;
  const std::span<const MotionSequence> all(dataset.sequences);
  Matrix scores(static_cast<Eigen::Index>(all.size()), spec.num_classes);
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto chunk = all.subspan(start, std::min(kChunk, all.size() - start));
    const BatchOutputs out = predict_batch(spec, params, chunk);
    scores.middleRows(static_cast<Eigen::Index>(start), out.base_logits.rows()) = softmax_rows(out.base_logits);
  }
  return score_report(scores, labels_of(all), spec.num_classes);
}

FitResult fit(const Dataset& train, const Dataset* test, const TrainConfig& config) {
  config.validate();
  if (train.sequences.empty()) throw std::invalid_argument("fit: empty training split");
  if (train.num_classes < 2) throw std::invalid_argument("fit: need at least two classes");
  validate(train);

  FitResult result;
  result.spec = config.model_spec(train);
  result.params = init_params(result.spec, config.seed);
  const LossConfig loss_cfg = config.loss_config();

  ModelParams velocity = zeros_like(result.params);
  std::vector<std::size_t> order(train.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(config.seed ^ 0xD1B54A32D192ED03ULL);
  const auto n = train.sequences.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const auto start_time = std::chrono::steady_clock::now();

  std::vector<MotionSequence> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossBreakdown sums;
    sums.hsic_sign = loss_cfg.hsic_sign;
    sums.hsic_weight = loss_cfg.hsic_weight;
    int correct = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t stop = std::min(n, start + batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(train.sequences[order[i]]);

      GradientResult step;
      try {
        step = compute_gradients(result.spec, result.params, batch, loss_cfg);
      } catch (const NonFiniteError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), result);
      }
      const double weight = static_cast<double>(batch.size());
      sums.l_cls += weight * step.loss.l_cls;
      sums.hsic_term += weight * step.loss.hsic_term;
      sums.l_ce_aux += weight * step.loss.l_ce_aux;
      sums.l_d += weight * step.loss.l_d;
      sums.total += weight * step.loss.total;
      for (Eigen::Index i = 0; i < step.base_logits.rows(); ++i) {
        if (argmax_lowest(step.base_logits.row(i)) == *batch[i].label()) ++correct;
      }

      if (config.grad_clip_norm > 0.0) clip_gradient_norm(step.gradients, config.grad_clip_norm);
      ModelParams next = result.params;
      ModelParams next_velocity = velocity;
      try {
        sgd_nesterov_step(next, step.gradients, next_velocity, lr, config.momentum, config.weight_decay);
      } catch (const NonFiniteError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what(), result);
      }
      result.params = std::move(next);
      velocity = std::move(next_velocity);
      ++result.optimizer_steps;
    }

    MetricsRecord record;
    record.epoch = epoch;
    const double count = static_cast<double>(n);
    record.loss = sums;
    record.loss.l_cls /= count;
    record.loss.hsic_term /= count;
    record.loss.l_ce_aux /= count;
    record.loss.l_d /= count;
    record.loss.total /= count;
    record.train_accuracy = static_cast<double>(correct) / count;
    if (test != nullptr) record.test_accuracy = evaluate(result.spec, result.params, *test).accuracy;
    record.learning_rate = lr;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    result.metrics.push_back(record);
  }
  return result;
}

GradientReport gradient_check(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch,
                              const LossConfig& config, double step, double threshold, int stride) {
  if (stride < 1) throw std::invalid_argument("gradient_check: stride must be positive");
  std::optional<Matrix> frozen;
  if (config.detach_teacher) frozen = predict_batch(spec, params, batch).aux_logits;
  const Matrix* frozen_ptr = frozen ? &*frozen : nullptr;

  const GradientResult analytic = compute_gradients(spec, params, batch, config, frozen_ptr);
  std::vector<const Matrix*> grads;
  for_each_array(analytic.gradients, [&](const std::string&, const Matrix& m) { grads.push_back(&m); });

  GradientReport report;
  report.threshold = threshold;
  ModelParams probe = params;
  std::size_t index = 0;
  for_each_array(probe, [&](const std::string& name, Matrix& array) {
    const Matrix& grad = *grads[index++];
    GradientReport::Entry entry;
    entry.name = name;
    for (Eigen::Index i = 0; i < array.size(); i += stride) {
      const double original = array.data()[i];
      array.data()[i] = original + step;
      const double plus = evaluate_loss(spec, probe, batch, config, frozen_ptr).total;
      array.data()[i] = original - step;
      const double minus = evaluate_loss(spec, probe, batch, config, frozen_ptr).total;
      array.data()[i] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = grad.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      entry.max_relative_error = std::max(entry.max_relative_error, std::abs(a - numeric) / denom);
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
      ++entry.coordinates_checked;
    }
    report.worst = std::max(report.worst, entry.max_relative_error);
    report.entries.push_back(entry);
  });
  report.pass = report.worst <= threshold;
  return report;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> metrics, bool include_wall_clock) {
  out << "epoch,l_cls,hsic,l_ce,l_d,total,train_acc,test_acc,lr";
  if (include_wall_clock) out << ",wall_seconds";
  out << "\n";
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& m : metrics) {
    out << m.epoch << ',' << m.loss.l_cls << ',' << m.loss.hsic_term << ',' << m.loss.l_ce_aux << ',' << m.loss.l_d
        << ',' << m.loss.total << ',' << m.train_accuracy << ',';
    if (m.test_accuracy) out << *m.test_accuracy;
    out << ',' << m.learning_rate;
    if (include_wall_clock) out << ',' << m.wall_seconds;
    out << "\n";
  }
  out.precision(old_precision);
}

}  // namespace hsicgcn
