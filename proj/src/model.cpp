#include "hsicgcn/model.hpp"

#include <cmath>
#include <random>

namespace hsicgcn {

std::string to_string(TemporalPool pool) { return pool == TemporalPool::mean ? "mean" : "max"; }

TemporalPool parse_temporal_pool(const std::string& text) {
  if (text == "mean") return TemporalPool::mean;
  if (text == "max") return TemporalPool::max;
  throw std::invalid_argument("unknown temporal pool '" + text + "' (expected mean|max)");
}

void EncoderSpec::validate() const {
  if (hidden_channels.empty()) throw std::invalid_argument("EncoderSpec: need at least one block");
  for (int c : hidden_channels) {
    if (c < 1) throw std::invalid_argument("EncoderSpec: channel counts must be positive");
  }
  GaussianWidth{delta};
}

void ModelSpec::validate() const {
  if (in_channels < 1) throw std::invalid_argument("ModelSpec: in_channels must be positive");
  if (num_classes < 2) throw std::invalid_argument("ModelSpec: need at least two classes");
  if (graph.num_joints() < 1) throw std::invalid_argument("ModelSpec: empty skeleton graph");
  base.validate();
  auxiliary.validate();
}

namespace {

EncoderParams init_encoder(const EncoderSpec& spec, int in_channels, int classifier_in, int num_classes,
                           std::mt19937_64& rng) {
  auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    // Fill in row-major order so the draw sequence matches the checkpoint layout.
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    }
    return m;
  };

  EncoderParams enc;
  int c_in = in_channels;
  for (int c_out : spec.hidden_channels) {
    BlockParams block;
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_in));
    block.weight = uniform(c_in, c_out, bound);
    block.bias = Matrix::Zero(1, c_out);
    block.dependency.phi_weights = uniform(c_in, c_out, bound);
    block.dependency.phi_bias = Matrix::Zero(1, c_out);
    block.dependency.channel_scale = Matrix::Zero(1, c_out);
    enc.blocks.push_back(std::move(block));
    c_in = c_out;
  }
  enc.classifier_weight = uniform(classifier_in, num_classes, 1.0 / std::sqrt(static_cast<double>(classifier_in)));
  enc.classifier_bias = Matrix::Zero(1, num_classes);
  return enc;
}

void check_encoder(const EncoderSpec& spec, const EncoderParams& enc, int in_channels, int classifier_in,
                   int num_classes, const std::string& role) {
  require_shape(static_cast<int>(enc.blocks.size()) == spec.num_blocks(), role + ": block count mismatch");
  int c_in = in_channels;
  for (int b = 0; b < spec.num_blocks(); ++b) {
    const int c_out = spec.hidden_channels[b];
    const auto& block = enc.blocks[b];
    const std::string where = role + ".block" + std::to_string(b);
    require_shape(block.weight.rows() == c_in && block.weight.cols() == c_out, where + ": weight shape");
    require_shape(block.bias.rows() == 1 && block.bias.cols() == c_out, where + ": bias shape");
    require_shape(block.dependency.phi_weights.rows() == c_in && block.dependency.phi_weights.cols() == c_out,
                  where + ": phi_weights shape");
    block.dependency.validate();
    c_in = c_out;
  }
  require_shape(enc.classifier_weight.rows() == classifier_in && enc.classifier_weight.cols() == num_classes,
                role + ": classifier weight shape");
  require_shape(enc.classifier_bias.rows() == 1 && enc.classifier_bias.cols() == num_classes,
                role + ": classifier bias shape");
}

}  // namespace

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  ModelParams params;
  params.base = init_encoder(spec.base, spec.in_channels, spec.augmented_dim(), spec.num_classes, rng);
  params.auxiliary =
      init_encoder(spec.auxiliary, spec.in_channels, spec.auxiliary.output_channels(), spec.num_classes, rng);
  return params;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  for_each_array(out, [](const std::string&, Matrix& m) { m.setZero(); });
  return out;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t count = 0;
  for_each_array(params, [&](const std::string&, const Matrix& m) { count += static_cast<std::size_t>(m.size()); });
  return count;
}

void check_consistent(const ModelSpec& spec, const ModelParams& params) {
  check_encoder(spec.base, params.base, spec.in_channels, spec.augmented_dim(), spec.num_classes, "base");
  check_encoder(spec.auxiliary, params.auxiliary, spec.in_channels, spec.auxiliary.output_channels(),
                spec.num_classes, "auxiliary");
  for_each_array(params, [](const std::string& name, const Matrix& m) {
    if (!m.allFinite()) throw NonFiniteError("parameter " + name + " has a non-finite entry");
  });
}

// ---------------------------------------------------------------------------

namespace {

BoundEncoder bind_encoder(ad::Tape& tape, const EncoderParams& enc, bool trainable) {
  auto put = [&](const Matrix& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  BoundEncoder out;
  for (const auto& block : enc.blocks) {
    BoundBlock b;
    b.weight = put(block.weight);
    b.bias = put(block.bias);
    b.phi_weights = put(block.dependency.phi_weights);
    b.phi_bias = put(block.dependency.phi_bias);
    b.channel_scale = put(block.dependency.channel_scale);
    out.blocks.push_back(b);
  }
  out.classifier_weight = put(enc.classifier_weight);
  out.classifier_bias = put(enc.classifier_bias);
  return out;
}

void collect_encoder(const ad::Tape& tape, const BoundEncoder& bound, EncoderParams& out) {
  for (std::size_t b = 0; b < bound.blocks.size(); ++b) {
    out.blocks[b].weight = tape.grad(bound.blocks[b].weight);
    out.blocks[b].bias = tape.grad(bound.blocks[b].bias);
    out.blocks[b].dependency.phi_weights = tape.grad(bound.blocks[b].phi_weights);
    out.blocks[b].dependency.phi_bias = tape.grad(bound.blocks[b].phi_bias);
    out.blocks[b].dependency.channel_scale = tape.grad(bound.blocks[b].channel_scale);
  }
  out.classifier_weight = tape.grad(bound.classifier_weight);
  out.classifier_bias = tape.grad(bound.classifier_bias);
}

ad::Var classify(const BoundEncoder& enc, ad::Var features) {
  return ad::add_row(ad::matmul(features, enc.classifier_weight), enc.classifier_bias);
}

}  // namespace

BoundModel bind(ad::Tape& tape, const ModelParams& params, bool trainable) {
  return {bind_encoder(tape, params.base, trainable), bind_encoder(tape, params.auxiliary, trainable)};
}

ModelParams collect_gradients(const ad::Tape& tape, const BoundModel& bound, const ModelParams& shape) {
  ModelParams out = shape;
  collect_encoder(tape, bound.base, out.base);
  collect_encoder(tape, bound.auxiliary, out.auxiliary);
  return out;
}

ad::Var encode(ad::Tape& tape, const EncoderSpec& spec, const BoundEncoder& enc, const GraphNormalizer& graph,
               const MotionSequence& seq) {
  require_shape(seq.joints() == graph.joints(), "encode: sequence joint count != graph joint count");
  const int frames = seq.frames();
  const GaussianWidth delta(spec.delta);
  ad::Var h = tape.constant(seq.data());
  for (int b = 0; b < spec.num_blocks(); ++b) {
    const BoundBlock& block = enc.blocks[b];
    const ad::Var xw = ad::matmul(h, block.weight);
    ad::Var propagated;
    if (spec.use_refinement) {
      const ad::Var features = ad::temporal_mean(h, frames);
      const ad::Var correlations = ad::pairwise_gaussian(features, delta);
      const ad::Var dependency = ad::add_row(ad::matmul(correlations, block.phi_weights), block.phi_bias);
      propagated = ad::refined_propagate(xw, dependency, block.channel_scale, graph, frames);
    } else {
      propagated = ad::static_propagate(xw, graph, frames);
    }
    h = ad::add_row(propagated, block.bias);
    if (spec.activation == Activation::relu) h = ad::relu(h);
  }
  const ad::Var pooled =
      spec.temporal_pool == TemporalPool::mean ? ad::temporal_mean(h, frames) : ad::temporal_max(h, frames);
  const ad::Var z = ad::mean_rows(pooled);
  if (!z.value().allFinite()) throw NonFiniteError("encode: non-finite activation");
  return z;
}

BatchForward forward_batch(ad::Tape& tape, const ModelSpec& spec, const BoundModel& model,
                           std::span<const MotionSequence> batch, TeacherCoupling coupling) {
  if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
  const GraphNormalizer graph(spec.graph.adjacency());
  std::vector<ad::Var> z_rows;
  std::vector<ad::Var> aux_rows;
  z_rows.reserve(batch.size());
  aux_rows.reserve(batch.size());
  for (const auto& seq : batch) {
    require_shape(seq.channels() == spec.in_channels, "forward_batch: channel count mismatch");
    z_rows.push_back(encode(tape, spec.base, model.base, graph, seq));
    aux_rows.push_back(encode(tape, spec.auxiliary, model.auxiliary, graph, seq));
  }
  BatchForward out;
  out.z = ad::vstack(z_rows);
  out.z_tilde = ad::vstack(aux_rows);
  out.aux_logits = classify(model.auxiliary, out.z_tilde);
  if (coupling.detach) {
    if (coupling.frozen_logits) {
      require_shape(coupling.frozen_logits->rows() == out.aux_logits.value().rows() &&
                        coupling.frozen_logits->cols() == out.aux_logits.value().cols(),
                    "forward_batch: frozen teacher logits shape");
      out.teacher_logits = tape.constant(*coupling.frozen_logits);
    } else {
      out.teacher_logits = ad::detach(out.aux_logits);
    }
  } else {
    out.teacher_logits = out.aux_logits;
  }
  out.y_tilde = ad::softmax_rows(out.teacher_logits);
  out.z_hat = ad::hcat(out.z, out.y_tilde);
  out.base_logits = classify(model.base, out.z_hat);
  return out;
}

void LossConfig::validate() const {
  matern.validate();
  if (hsic_sign != 1 && hsic_sign != -1) throw std::invalid_argument("LossConfig: hsic_sign must be +1 or -1");
  if (!std::isfinite(hsic_weight)) throw std::invalid_argument("LossConfig: hsic_weight must be finite");
  if (!(temperature > 0.0)) throw std::invalid_argument("LossConfig: temperature must be > 0");
}

TapeLoss total_loss(ad::Tape& tape, const BatchForward& forward, std::span<const int> labels, int num_classes,
                    const LossConfig& config) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(labels.size());
  require_shape(forward.base_logits.value().rows() == n, "total_loss: label count != batch size");

  TapeLoss out;
  out.breakdown.hsic_sign = config.hsic_sign;
  out.breakdown.hsic_weight = config.hsic_weight;

  auto zero = [&tape] { return tape.constant(Matrix::Zero(1, 1)); };
  ad::Var cls = zero();
  ad::Var hsic_part = zero();
  ad::Var ce_aux = zero();
  ad::Var distill = zero();

  if (config.terms.cls) {
    cls = ad::cross_entropy(forward.base_logits, labels);
    out.breakdown.l_cls = cls.value()(0, 0);
  }
  // HSIC is undefined below two samples; such batches contribute nothing.
  if (config.terms.hsic && n >= 2) {
    const ad::Var raw = ad::hsic_with_labels(forward.z_hat, labels, num_classes, config.matern);
    out.breakdown.hsic_term = raw.value()(0, 0);
    hsic_part = ad::scale(raw, config.hsic_sign * config.hsic_weight);
  }
  if (config.terms.ce_aux) {
    ce_aux = ad::cross_entropy(forward.aux_logits, labels);
    out.breakdown.l_ce_aux = ce_aux.value()(0, 0);
  }
  if (config.terms.distill) {
    distill = ad::distillation_kl(forward.base_logits, forward.teacher_logits, config.temperature);
    out.breakdown.l_d = distill.value()(0, 0);
  }
  out.total = ad::add(ad::add(ad::add(cls, hsic_part), ce_aux), distill);
  out.breakdown.total = out.total.value()(0, 0);
  return out;
}

// ---------------------------------------------------------------------------

BatchOutputs predict_batch(const ModelSpec& spec, const ModelParams& params, std::span<const MotionSequence> batch) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, params, false);
  const BatchForward fwd = forward_batch(tape, spec, bound, batch);
  return {fwd.z.value(),        fwd.z_tilde.value(), fwd.aux_logits.value(),
          fwd.y_tilde.value(),  fwd.z_hat.value(),   fwd.base_logits.value()};
}

Vector base_encode(const MotionSequence& seq, const ModelSpec& spec, const ModelParams& params) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, params, false);
  const GraphNormalizer graph(spec.graph.adjacency());
  return encode(tape, spec.base, bound.base, graph, seq).value().row(0).transpose();
}

AuxPrediction aux_predict(const MotionSequence& seq, const ModelSpec& spec, const ModelParams& params) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, params, false);
  const GraphNormalizer graph(spec.graph.adjacency());
  const ad::Var z_tilde = encode(tape, spec.auxiliary, bound.auxiliary, graph, seq);
  const ad::Var logits = classify(bound.auxiliary, z_tilde);
  AuxPrediction out;
  out.z_tilde = z_tilde.value().row(0).transpose();
  out.logits = logits.value().row(0).transpose();
  out.y_tilde = softmax_rows(logits.value()).row(0).transpose();
  return out;
}

Vector augment(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& y_tilde) {
  Vector out(z.size() + y_tilde.size());
  out << z, y_tilde;
  return out;
}

double hsic_objective(const Eigen::Ref<const Matrix>& z_hat, std::span<const int> labels, int num_classes,
                      const MaternParams& matern, int sign, double weight) {
  require_shape(z_hat.rows() == static_cast<Eigen::Index>(labels.size()), "hsic_objective: batch size mismatch");
  if (z_hat.rows() < 2) throw std::invalid_argument("hsic_objective: need a batch of at least 2");
  if (sign != 1 && sign != -1) throw std::invalid_argument("hsic_objective: sign must be +1 or -1");
  return sign * weight * hsic(kernel_matrix(z_hat, matern), label_kernel(labels, num_classes));
}

std::vector<int> labels_of(std::span<const MotionSequence> batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const auto& seq : batch) {
    if (!seq.label()) throw std::invalid_argument("sequence has no label");
    labels.push_back(*seq.label());
  }
  return labels;
}

}  // namespace hsicgcn
