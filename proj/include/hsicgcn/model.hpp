#pragma once

#include "hsicgcn/autodiff.hpp"
#include "hsicgcn/dependency.hpp"
#include "hsicgcn/kernel.hpp"
#include "hsicgcn/losses.hpp"
#include "hsicgcn/skeleton.hpp"

#include <concepts>
#include <cstdint>
#include <type_traits>
#include <span>
#include <string>
#include <vector>

namespace hsicgcn {

enum class TemporalPool { mean, max };
std::string to_string(TemporalPool pool);
TemporalPool parse_temporal_pool(const std::string& text);

/// Stack of refined graph-conv blocks followed by temporal and joint pooling.
struct EncoderSpec {
  std::vector<int> hidden_channels{16, 32};
  TemporalPool temporal_pool = TemporalPool::mean;
  double delta = 1.0;
  bool use_refinement = true;
  Activation activation = Activation::relu;

  int num_blocks() const { return static_cast<int>(hidden_channels.size()); }
  int output_channels() const { return hidden_channels.back(); }
  void validate() const;
};

struct ModelSpec {
  int in_channels = 3;
  int num_classes = 2;
  EncoderSpec base;
  EncoderSpec auxiliary{{16}};
  SkeletonGraph graph;

  /// dim(z) + num_classes.
  int augmented_dim() const { return base.output_channels() + num_classes; }
  void validate() const;
};

struct BlockParams {
  Matrix weight;  // C_in x C_out
  Matrix bias;    // 1 x C_out
  DependencyParams dependency;
};

struct EncoderParams {
  std::vector<BlockParams> blocks;
  Matrix classifier_weight;  // input dim x num_classes
  Matrix classifier_bias;    // 1 x num_classes
};

/// Base (student) and auxiliary (teacher) parameters. The same struct holds
/// gradients and optimizer state.
struct ModelParams {
  EncoderParams base;
  EncoderParams auxiliary;
};

namespace detail {

template <typename Encoder, typename Fn>
void visit_encoder(const std::string& prefix, Encoder& enc, Fn& fn) {
  for (std::size_t b = 0; b < enc.blocks.size(); ++b) {
    const std::string p = prefix + ".block" + std::to_string(b) + ".";
    auto& block = enc.blocks[b];
    fn(p + "weight", block.weight);
    fn(p + "bias", block.bias);
    fn(p + "phi_weights", block.dependency.phi_weights);
    fn(p + "phi_bias", block.dependency.phi_bias);
    fn(p + "channel_scale", block.dependency.channel_scale);
  }
  fn(prefix + ".classifier.weight", enc.classifier_weight);
  fn(prefix + ".classifier.bias", enc.classifier_bias);
}

}  // namespace detail

/// Calls fn(name, array) for every parameter array in declaration order.
template <typename Params, typename Fn>
  requires std::same_as<std::remove_const_t<Params>, ModelParams>
void for_each_array(Params& params, Fn&& fn) {
  detail::visit_encoder("base", params.base, fn);
  detail::visit_encoder("auxiliary", params.auxiliary, fn);
}

/// Visits matching arrays of two identically shaped parameter sets.
template <typename A, typename B, typename Fn>
void for_each_array_pair(A& a, B& b, Fn&& fn) {
  using Right = std::conditional_t<std::is_const_v<B>, const Matrix, Matrix>;
  std::vector<Right*> right;
  for_each_array(b, [&](const std::string&, Right& m) { right.push_back(&m); });
  std::size_t i = 0;
  for_each_array(a, [&](const std::string& name, auto& m) {
    require_shape(i < right.size() && right[i]->rows() == m.rows() && right[i]->cols() == m.cols(),
                  "parameter sets differ in shape at " + name);
    fn(name, m, *right[i++]);
  });
}

/// Uniform fan-in initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// biases, phi biases, and channel scales start at zero.
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);
/// Throws ShapeError when params do not match spec.
void check_consistent(const ModelSpec& spec, const ModelParams& params);

// ---------------------------------------------------------------------------
// Differentiable forward pass

struct BoundBlock {
  ad::Var weight, bias, phi_weights, phi_bias, channel_scale;
};
struct BoundEncoder {
  std::vector<BoundBlock> blocks;
  ad::Var classifier_weight, classifier_bias;
};
struct BoundModel {
  BoundEncoder base;
  BoundEncoder auxiliary;
};

/// Places every parameter array on the tape (as variables when `trainable`).
BoundModel bind(ad::Tape& tape, const ModelParams& params, bool trainable);
/// Reads tape gradients back into a ModelParams-shaped container.
ModelParams collect_gradients(const ad::Tape& tape, const BoundModel& bound, const ModelParams& shape);

/// Encoder output for one sequence, 1 x C_last.
ad::Var encode(ad::Tape& tape, const EncoderSpec& spec, const BoundEncoder& enc, const GraphNormalizer& graph,
               const MotionSequence& seq);

struct BatchForward {
  ad::Var z;               // n x dim(z)
  ad::Var z_tilde;         // n x dim(z~)
  ad::Var aux_logits;      // n x k, live auxiliary logits
  ad::Var teacher_logits;  // aux logits as seen by the base model (detached or frozen when configured)
  ad::Var y_tilde;         // softmax(teacher_logits)
  ad::Var z_hat;           // [z, y~]
  ad::Var base_logits;     // n x k
};

/// Whether the base model sees the auxiliary outputs as constants.
struct TeacherCoupling {
  bool detach = true;
  /// When set (and detach is on), the base model sees these logits instead of
  /// the live auxiliary output. Finite-difference checks use it to hold the
  /// teacher fixed at the unperturbed parameters.
  const Matrix* frozen_logits = nullptr;
};

BatchForward forward_batch(ad::Tape& tape, const ModelSpec& spec, const BoundModel& model,
                           std::span<const MotionSequence> batch, TeacherCoupling coupling = {});

// ---------------------------------------------------------------------------
// Losses

struct LossTerms {
  bool cls = true;
  bool hsic = true;
  bool ce_aux = true;
  bool distill = true;
};

struct LossConfig {
  MaternParams matern;
  int hsic_sign = -1;
  double hsic_weight = 1.0;
  double temperature = 1.0;
  LossTerms terms;
  bool detach_teacher = true;
  void validate() const;
};

struct LossBreakdown {
  double l_cls = 0.0;
  double hsic_term = 0.0;  // raw HSIC(z_hat, y), before sign and weight
  double l_ce_aux = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  int hsic_sign = -1;
  double hsic_weight = 1.0;

  /// (l_cls + sign * weight * hsic_term) + l_ce_aux + l_d, summed in that order.
  double recombined() const { return (l_cls + hsic_sign * hsic_weight * hsic_term) + l_ce_aux + l_d; }
};

struct TapeLoss {
  ad::Var total;
  LossBreakdown breakdown;
};

/// Builds L_Total on the tape. Disabled terms contribute exactly zero and are not evaluated.
TapeLoss total_loss(ad::Tape& tape, const BatchForward& forward, std::span<const int> labels, int num_classes,
                    const LossConfig& config);

// ---------------------------------------------------------------------------
// Value-level operations

Vector base_encode(const MotionSequence& seq, const ModelSpec& spec, const ModelParams& params);

struct AuxPrediction {
  Vector z_tilde;
  Vector y_tilde;
  Vector logits;
};
AuxPrediction aux_predict(const MotionSequence& seq, const ModelSpec& spec, const ModelParams& params);

/// concat(z, y_tilde).
Vector augment(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& y_tilde);

/// sign * weight * HSIC(kernel_matrix(z_hat), label_kernel(labels)).
double hsic_objective(const Eigen::Ref<const Matrix>& z_hat, std::span<const int> labels, int num_classes,
                      const MaternParams& matern, int sign, double weight);

/// Forward values for a batch without building gradients.
struct BatchOutputs {
  Matrix z, z_tilde, aux_logits, y_tilde, z_hat, base_logits;
};
BatchOutputs predict_batch(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch);

std::vector<int> labels_of(std::span<const MotionSequence> batch);

}  // namespace hsicgcn
