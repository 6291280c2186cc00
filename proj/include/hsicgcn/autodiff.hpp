#pragma once

#include "hsicgcn/dependency.hpp"
#include "hsicgcn/kernel.hpp"
#include "hsicgcn/types.hpp"

#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

/// Reverse-mode differentiation over dense matrices. Every node holds a
/// MatrixXd value; scalars are 1x1 matrices. Nodes are appended in
/// evaluation order, so the tape is already topologically sorted.
namespace hsicgcn::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Appends an op result. `backward` is dropped when no input requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every variable. Root must be 1x1.
  void backward(Var root);

  const Matrix& value(Var v) const { return nodes_.at(v.id()).value; }
  /// Accumulated gradient; zeros when nothing reached the node.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  void accumulate(Var v, const Matrix& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  Var push(Matrix value, bool requires_grad, Backward backward);

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var scale(Var a, double factor);
/// Adds a 1 x C row to every row of a.
Var add_row(Var a, Var row);
Var relu(Var a);
Var hcat(Var left, Var right);
Var vstack(std::span<const Var> rows);
Var softmax_rows(Var logits);
/// Value copy with no gradient path.
Var detach(Var a);

/// (frames*N) x C -> N x C mean over frames.
Var temporal_mean(Var stacked, int frames);
/// (frames*N) x C -> N x C max over frames; ties route to the earliest frame.
Var temporal_max(Var stacked, int frames);
/// Column means, N x C -> 1 x C.
Var mean_rows(Var a);

/// N x C features -> (N*N) x C Gaussian correlations of every joint pair.
Var pairwise_gaussian(Var features, GaussianWidth delta);
/// Per-channel propagation with (A + s_c R_c + I) / sqrt(d_i d_j).
Var refined_propagate(Var xw, Var dependency, Var channel_scale, const GraphNormalizer& graph, int frames);
/// Propagation with the static normalized adjacency only.
Var static_propagate(Var xw, const GraphNormalizer& graph, int frames);

Var cross_entropy(Var logits, std::span<const int> labels);
/// HSIC between Matern kernel on the rows of `samples` and the delta label kernel.
Var hsic_with_labels(Var samples, std::span<const int> labels, int num_classes, const MaternParams& params);
Var distillation_kl(Var student_logits, Var teacher_logits, double temperature);

}  // namespace hsicgcn::ad
