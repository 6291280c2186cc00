#pragma once

#include "hsicgcn/types.hpp"

#include <span>

namespace hsicgcn {

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Eigen::Ref<const Matrix>& logits);
Matrix log_softmax_rows(const Eigen::Ref<const Matrix>& logits);

/// Mean cross-entropy of the true classes. Throws on out-of-range labels.
double classification_loss(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels);

/// d(classification_loss)/d(logits) = (softmax - onehot) / n.
Matrix classification_loss_gradient(const Eigen::Ref<const Matrix>& logits, std::span<const int> labels);

/// Batch mean of KL(softmax(student / P) || softmax(teacher / P)).
double distillation_loss(const Eigen::Ref<const Matrix>& student_logits, const Eigen::Ref<const Matrix>& teacher_logits,
                         double temperature);

struct DistillationGradient {
  Matrix student;
  Matrix teacher;
};
DistillationGradient distillation_loss_gradient(const Eigen::Ref<const Matrix>& student_logits,
                                                const Eigen::Ref<const Matrix>& teacher_logits, double temperature);

}  // namespace hsicgcn
