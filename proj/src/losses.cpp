#include "hsicgcn/losses.hpp"

#include <algorithm>
#include <cmath>

namespace hsicgcn {

Matrix log_softmax_rows(const Eigen::Ref<const Matrix>& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    const double log_norm = std::log((logits.row(i).array() - peak).exp().sum());
    out.row(i) = logits.row(i).array() - peak - log_norm;
  }
  return out;
}

Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::ArrayXd shifted = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    out.row(i) = shifted / shifted.sum();
  }
  return out;
}

namespace {

void check_labels(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels) {
  require_shape(static_cast<Eigen::Index>(labels.size()) == logits.rows(), "classification_loss: batch size mismatch");
  if (logits.rows() < 1) throw std::invalid_argument("classification_loss: empty batch");
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) throw std::invalid_argument("classification_loss: label out of range");
  }
}

}  // namespace

double classification_loss(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const Matrix log_probs = log_softmax_rows(logits);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) sum -= log_probs(i, labels[i]);
  return sum / static_cast<double>(logits.rows());
}

Matrix classification_loss_gradient(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  Matrix grad = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) grad(i, labels[i]) -= 1.0;
  return grad / static_cast<double>(logits.rows());
}

namespace {

void check_distillation(const Eigen::Ref<const Matrix>& student, const Eigen::Ref<const Matrix>& teacher,
                        double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("distillation_loss: temperature must be > 0");
  require_shape(student.rows() == teacher.rows() && student.cols() == teacher.cols(),
                "distillation_loss: logit shapes differ");
  if (student.rows() < 1) throw std::invalid_argument("distillation_loss: empty batch");
}

}  // namespace

double distillation_loss(const Eigen::Ref<const Matrix>& student_logits, const Eigen::Ref<const Matrix>& teacher_logits,
                         double temperature) {
  check_distillation(student_logits, teacher_logits, temperature);
  const Matrix log_p = log_softmax_rows(student_logits / temperature);
  const Matrix log_q = log_softmax_rows(teacher_logits / temperature);
  const double kl = (log_p.array().exp() * (log_p - log_q).array()).sum() / static_cast<double>(student_logits.rows());
  return std::max(0.0, kl);
}

DistillationGradient distillation_loss_gradient(const Eigen::Ref<const Matrix>& student_logits,
                                                const Eigen::Ref<const Matrix>& teacher_logits, double temperature) {
  check_distillation(student_logits, teacher_logits, temperature);
  const double n = static_cast<double>(student_logits.rows());
  const Matrix log_p = log_softmax_rows(student_logits / temperature);
  const Matrix log_q = log_softmax_rows(teacher_logits / temperature);
  const Matrix p = log_p.array().exp();
  const Matrix q = log_q.array().exp();
  const Matrix log_ratio = log_p - log_q;
  const Vector row_kl = (p.array() * log_ratio.array()).rowwise().sum();

  DistillationGradient grad;
  grad.student = (p.array() * (log_ratio.colwise() - row_kl).array()) / (temperature * n);
  grad.teacher = (q - p) / (temperature * n);
  return grad;
}

}  // namespace hsicgcn
