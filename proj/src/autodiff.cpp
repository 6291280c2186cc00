#include "hsicgcn/autodiff.hpp"

#include "hsicgcn/losses.hpp"

#include <algorithm>
#include <vector>

namespace hsicgcn::ad {

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw std::invalid_argument("ad: input belongs to a different tape");
    needs = needs || requires_grad(in);
  }
  return push(std::move(value), needs, std::move(backward));
}

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_.at(v.id());
  if (!node.has_grad) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_.at(v.id());
  if (!node.requires_grad) return;
  require_shape(g.rows() == node.value.rows() && g.cols() == node.value.cols(), "ad: gradient shape mismatch");
  if (node.has_grad) {
    node.grad += g;
  } else {
    node.grad = g;
    node.has_grad = true;
  }
}

void Tape::backward(Var root) {
  require_shape(value(root).size() == 1, "ad: backward root must be a scalar");
  for (auto& node : nodes_) {
    node.has_grad = false;
    node.grad.resize(0, 0);
  }
  accumulate(root, Matrix::Ones(1, 1));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backward) continue;
    const Matrix upstream = node.grad;
    node.backward(*this, upstream);
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_shape(a.value().cols() == b.value().rows(), "matmul: inner dimensions differ");
  return a.tape().record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_shape(a.value().rows() == b.value().rows() && a.value().cols() == b.value().cols(), "add: shapes differ");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var scale(Var a, double factor) {
  return a.tape().record(a.value() * factor, {a}, [a, factor](Tape& t, const Matrix& g) { t.accumulate(a, g * factor); });
}

Var add_row(Var a, Var row) {
  require_shape(row.value().rows() == 1 && row.value().cols() == a.value().cols(), "add_row: row shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var relu(Var a) {
  return a.tape().record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (t.value(a).array() > 0.0).select(g, 0.0));
  });
}

Var hcat(Var left, Var right) {
  const Matrix& l = left.value();
  const Matrix& r = right.value();
  require_shape(l.rows() == r.rows(), "hcat: row counts differ");
  Matrix out(l.rows(), l.cols() + r.cols());
  out << l, r;
  const Eigen::Index split = l.cols();
  return left.tape().record(std::move(out), {left, right}, [left, right, split](Tape& t, const Matrix& g) {
    if (t.requires_grad(left)) t.accumulate(left, g.leftCols(split));
    if (t.requires_grad(right)) t.accumulate(right, g.rightCols(g.cols() - split));
  });
}

Var vstack(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("vstack: no inputs");
  Tape& tape = rows.front().tape();
  const Eigen::Index cols = rows.front().value().cols();
  Eigen::Index total = 0;
  for (const Var& v : rows) {
    require_shape(v.value().cols() == cols, "vstack: column counts differ");
    total += v.value().rows();
  }
  Matrix out(total, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const Var& v : rows) {
    offsets.push_back(at);
    out.middleRows(at, v.value().rows()) = v.value();
    at += v.value().rows();
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return tape.record(std::move(out), rows, [inputs, offsets](Tape& t, const Matrix& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (t.requires_grad(inputs[i])) t.accumulate(inputs[i], g.middleRows(offsets[i], t.value(inputs[i]).rows()));
    }
  });
}

Var softmax_rows(Var logits) {
  Matrix probs = hsicgcn::softmax_rows(logits.value());
  Matrix saved = probs;
  return logits.tape().record(std::move(probs), {logits}, [logits, saved](Tape& t, const Matrix& g) {
    const Vector inner = (g.array() * saved.array()).rowwise().sum();
    t.accumulate(logits, saved.array() * (g.colwise() - inner).array());
  });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var temporal_mean(Var stacked, int frames) {
  Matrix out = hsicgcn::temporal_mean(stacked.value(), frames);
  const Eigen::Index joints = out.rows();
  return stacked.tape().record(std::move(out), {stacked}, [stacked, frames, joints](Tape& t, const Matrix& g) {
    Matrix grad(joints * frames, g.cols());
    const Matrix share = g / static_cast<double>(frames);
    for (int f = 0; f < frames; ++f) grad.middleRows(f * joints, joints) = share;
    t.accumulate(stacked, grad);
  });
}

Var temporal_max(Var stacked, int frames) {
  const Matrix& in = stacked.value();
  if (frames < 1) throw std::invalid_argument("temporal_max: empty sequence");
  require_shape(in.rows() % frames == 0, "temporal_max: rows not divisible by frame count");
  const Eigen::Index joints = in.rows() / frames;
  Matrix out = in.topRows(joints);
  Eigen::MatrixXi argmax = Eigen::MatrixXi::Zero(joints, in.cols());
  for (int f = 1; f < frames; ++f) {
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      for (Eigen::Index j = 0; j < joints; ++j) {
        const double v = in(f * joints + j, c);
        if (v > out(j, c)) {
          out(j, c) = v;
          argmax(j, c) = f;
        }
      }
    }
  }
  return stacked.tape().record(std::move(out), {stacked}, [stacked, argmax, joints, frames](Tape& t, const Matrix& g) {
    Matrix grad = Matrix::Zero(joints * frames, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      for (Eigen::Index j = 0; j < joints; ++j) grad(argmax(j, c) * joints + j, c) = g(j, c);
    }
    t.accumulate(stacked, grad);
  });
}

Var mean_rows(Var a) {
  const Eigen::Index rows = a.value().rows();
  return a.tape().record(a.value().colwise().mean(), {a}, [a, rows](Tape& t, const Matrix& g) {
    t.accumulate(a, g.replicate(rows, 1) / static_cast<double>(rows));
  });
}

Var pairwise_gaussian(Var features, GaussianWidth delta) {
  Matrix out = hsicgcn::pairwise_gaussian(features.value(), delta);
  Matrix saved = out;
  return features.tape().record(std::move(out), {features}, [features, saved, delta](Tape& t, const Matrix& g) {
    const Matrix& v = t.value(features);
    const Eigen::Index n = v.rows();
    const double inv_var = 1.0 / (delta.value() * delta.value());
    Matrix grad = Matrix::Zero(n, v.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index row = i * n + j;
        const RowVector term =
            g.row(row).cwiseProduct(saved.row(row)).cwiseProduct(v.row(i) - v.row(j)) * inv_var;
        grad.row(i) -= term;
        grad.row(j) += term;
      }
    }
    t.accumulate(features, grad);
  });
}

namespace {

/// N x N slice c of an (N*N) x C' tensor stored with row i*N + j.
Matrix tensor_slice(const Matrix& tensor, Eigen::Index c, Eigen::Index n) {
  return Eigen::Map<const Matrix>(tensor.col(c).data(), n, n).transpose();
}

/// A + s_c R_c for one channel.
Matrix refined_slice(const GraphNormalizer& graph, const Matrix& dep, const Matrix& scales, Eigen::Index c) {
  return graph.adjacency + scales(0, c) * tensor_slice(dep, c, graph.adjacency.rows());
}

}  // namespace

Var refined_propagate(Var xw, Var dependency, Var channel_scale, const GraphNormalizer& graph, int frames) {
  const Eigen::Index n = graph.joints();
  const Matrix& r = dependency.value();
  const Matrix& s = channel_scale.value();
  require_shape(r.rows() == n * n && r.cols() == xw.value().cols(), "refined_propagate: dependency shape");
  require_shape(s.rows() == 1 && s.cols() == xw.value().cols(), "refined_propagate: channel scale shape");

  Matrix out = propagate_channels(xw.value(), frames, static_cast<int>(n), [&](int c) {
    return graph.channel_operator(refined_slice(graph, r, s, c));
  });
  if (!out.allFinite()) throw NonFiniteError("refined_propagate: non-finite output");

  return xw.tape().record(
      std::move(out), {xw, dependency, channel_scale},
      [xw, dependency, channel_scale, graph, frames, n](Tape& t, const Matrix& g) {
        const Matrix& xw_v = t.value(xw);
        const Matrix& dep = t.value(dependency);
        const Matrix& scales = t.value(channel_scale);
        Matrix d_xw(xw_v.rows(), xw_v.cols());
        Matrix d_dep(dep.rows(), dep.cols());
        Matrix d_scale(1, scales.cols());
        for (Eigen::Index c = 0; c < xw_v.cols(); ++c) {
          const Matrix op = graph.channel_operator(refined_slice(graph, dep, scales, c));
          Eigen::Map<const Matrix> in_c(xw_v.col(c).data(), n, frames);
          Eigen::Map<const Matrix> g_c(g.col(c).data(), n, frames);
          Eigen::Map<Matrix>(d_xw.col(c).data(), n, frames).noalias() = op.transpose() * g_c;
          const Matrix d_refined = (g_c * in_c.transpose()).cwiseQuotient(graph.sqrt_degree_products);
          // d_dep column c stores (i, j) at i*N + j, the transpose of a column-major map.
          Eigen::Map<Matrix>(d_dep.col(c).data(), n, n) = scales(0, c) * d_refined.transpose();
          d_scale(0, c) = d_refined.cwiseProduct(tensor_slice(dep, c, n)).sum();
        }
        t.accumulate(xw, d_xw);
        t.accumulate(dependency, d_dep);
        t.accumulate(channel_scale, d_scale);
      });
}

Var static_propagate(Var xw, const GraphNormalizer& graph, int frames) {
  const Eigen::Index n = graph.joints();
  Matrix op = graph.static_operator();
  Matrix out = propagate_channels(xw.value(), frames, static_cast<int>(n), [&](int) { return op; });
  return xw.tape().record(std::move(out), {xw}, [xw, op, n, frames](Tape& t, const Matrix& g) {
    Matrix d_xw(g.rows(), g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      Eigen::Map<const Matrix> g_c(g.col(c).data(), n, frames);
      Eigen::Map<Matrix>(d_xw.col(c).data(), n, frames).noalias() = op.transpose() * g_c;
    }
    t.accumulate(xw, d_xw);
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Matrix value(1, 1);
  value(0, 0) = classification_loss(logits.value(), labels);
  std::vector<int> saved(labels.begin(), labels.end());
  return logits.tape().record(std::move(value), {logits}, [logits, saved](Tape& t, const Matrix& g) {
    t.accumulate(logits, classification_loss_gradient(t.value(logits), saved) * g(0, 0));
  });
}

Var hsic_with_labels(Var samples, std::span<const int> labels, int num_classes, const MaternParams& params) {
  const Matrix& z = samples.value();
  require_shape(z.rows() == static_cast<Eigen::Index>(labels.size()), "hsic_with_labels: batch size mismatch");
  const Matrix centered_labels = center(label_kernel(labels, num_classes));
  Matrix value(1, 1);
  value(0, 0) = hsic(kernel_matrix(z, params), centered_labels);
  const double n1 = static_cast<double>(z.rows() - 1);
  const Matrix weights = centered_labels / (n1 * n1);
  return samples.tape().record(std::move(value), {samples}, [samples, weights, params](Tape& t, const Matrix& g) {
    t.accumulate(samples, kernel_weighted_sum_gradient(t.value(samples), weights, params) * g(0, 0));
  });
}

Var distillation_kl(Var student_logits, Var teacher_logits, double temperature) {
  Matrix value(1, 1);
  value(0, 0) = distillation_loss(student_logits.value(), teacher_logits.value(), temperature);
  return student_logits.tape().record(
      std::move(value), {student_logits, teacher_logits},
      [student_logits, teacher_logits, temperature](Tape& t, const Matrix& g) {
        const auto grad = distillation_loss_gradient(t.value(student_logits), t.value(teacher_logits), temperature);
        t.accumulate(student_logits, grad.student * g(0, 0));
        t.accumulate(teacher_logits, grad.teacher * g(0, 0));
      });
}

}  // namespace hsicgcn::ad
