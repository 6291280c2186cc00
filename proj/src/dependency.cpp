#include "hsicgcn/dependency.hpp"

#include <cmath>

namespace hsicgcn {

Matrix temporal_mean(const Eigen::Ref<const Matrix>& stacked, int frames) {
  if (frames < 1) throw std::invalid_argument("temporal_mean: empty sequence");
  require_shape(stacked.rows() % frames == 0, "temporal_mean: rows not divisible by frame count");
  const Eigen::Index joints = stacked.rows() / frames;
  Matrix sum = Matrix::Zero(joints, stacked.cols());
  for (int t = 0; t < frames; ++t) sum += stacked.middleRows(t * joints, joints);
  return sum / static_cast<double>(frames);
}

Matrix joint_features(const MotionSequence& seq) {
  if (seq.frames() < 1) throw std::invalid_argument("joint_features: empty sequence");
  return temporal_mean(seq.data(), seq.frames());
}

Matrix pairwise_gaussian(const Eigen::Ref<const Matrix>& features, GaussianWidth delta) {
  const Eigen::Index n = features.rows();
  const double denom = 2.0 * delta.value() * delta.value();
  Matrix out(n * n, features.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      out.row(i * n + j) = (-(features.row(i) - features.row(j)).array().square() / denom).exp();
    }
  }
  return out;
}

void DependencyParams::validate() const {
  const auto c_out = phi_weights.cols();
  require_shape(phi_bias.rows() == 1 && phi_bias.cols() == c_out, "DependencyParams: phi_bias must be 1 x C'");
  require_shape(channel_scale.rows() == 1 && channel_scale.cols() == c_out,
                "DependencyParams: channel_scale must be 1 x C'");
  if (!phi_weights.allFinite() || !phi_bias.allFinite() || !channel_scale.allFinite()) {
    throw NonFiniteError("DependencyParams: non-finite entry");
  }
}

DependencyTensor::DependencyTensor(int joints, Matrix values) : joints_(joints), values_(std::move(values)) {
  require_shape(values_.rows() == static_cast<Eigen::Index>(joints) * joints, "DependencyTensor: expected N*N rows");
}

Matrix DependencyTensor::slice(int c) const {
  Matrix out(joints_, joints_);
  for (int i = 0; i < joints_; ++i) {
    for (int j = 0; j < joints_; ++j) out(i, j) = (*this)(i, j, c);
  }
  return out;
}

DependencyTensor dependency_tensor(const Eigen::Ref<const Matrix>& features, GaussianWidth delta,
                                   const DependencyParams& params) {
  params.validate();
  require_shape(features.cols() == params.in_channels(), "dependency_tensor: feature width != phi input width");
  Matrix values = pairwise_gaussian(features, delta) * params.phi_weights;
  values.rowwise() += params.phi_bias.row(0);
  return DependencyTensor(static_cast<int>(features.rows()), std::move(values));
}

Matrix RefinedAdjacency::slice(int c) const {
  const int n = joints();
  Matrix out(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out(i, j) = values(static_cast<Eigen::Index>(i) * n + j, c);
  }
  return out;
}

RefinedAdjacency refine_adjacency(const Eigen::Ref<const Matrix>& a, const DependencyTensor& r,
                                  const DependencyParams& params) {
  params.validate();
  require_shape(a.rows() == a.cols() && a.rows() == r.joints(), "refine_adjacency: joint count mismatch");
  require_shape(r.channels() == params.out_channels(), "refine_adjacency: channel count mismatch");
  const Eigen::Index n = a.rows();
  RefinedAdjacency out{a, Matrix(n * n, r.channels())};
  for (Eigen::Index c = 0; c < r.channels(); ++c) {
    const double scale = params.channel_scale(0, c);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) out.values(i * n + j, c) = a(i, j) + scale * r.values()(i * n + j, c);
    }
  }
  return out;
}

GraphNormalizer::GraphNormalizer(const Eigen::Ref<const Matrix>& static_adjacency) : adjacency(static_adjacency) {
  require_shape(adjacency.rows() == adjacency.cols(), "GraphNormalizer: adjacency must be square");
  const Eigen::Index n = adjacency.rows();
  const Vector degree = (adjacency + Matrix::Identity(n, n)).rowwise().sum();
  sqrt_degree_products.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) sqrt_degree_products(i, j) = std::sqrt(degree(i) * degree(j));
  }
}

Matrix GraphNormalizer::channel_operator(const Eigen::Ref<const Matrix>& refined_slice) const {
  const Eigen::Index n = adjacency.rows();
  return (refined_slice + Matrix::Identity(n, n)).cwiseQuotient(sqrt_degree_products);
}

Matrix apply_activation(Matrix x, Activation activation) {
  if (activation == Activation::relu) x = x.cwiseMax(0.0);
  return x;
}

Matrix graph_conv(const Eigen::Ref<const Matrix>& x, int frames, const Eigen::Ref<const Matrix>& a,
                  const Eigen::Ref<const Matrix>& w, Activation activation) {
  require_shape(x.cols() == w.rows(), "graph_conv: input channels != weight rows");
  const GraphNormalizer norm(a);
  const Matrix op = norm.static_operator();
  const Matrix xw = x * w;
  Matrix out = propagate_channels(xw, frames, norm.joints(), [&](int) { return op; });
  if (!out.allFinite()) throw NonFiniteError("graph_conv: non-finite output");
  return apply_activation(std::move(out), activation);
}

Matrix refined_graph_conv(const Eigen::Ref<const Matrix>& x, int frames, const RefinedAdjacency& refined,
                          const Eigen::Ref<const Matrix>& w, Activation activation) {
  require_shape(x.cols() == w.rows(), "refined_graph_conv: input channels != weight rows");
  require_shape(refined.values.cols() == w.cols(), "refined_graph_conv: refined channels != output channels");
  const GraphNormalizer norm(refined.static_part);
  const Matrix xw = x * w;
  Matrix out = propagate_channels(xw, frames, norm.joints(),
                                  [&](int c) { return norm.channel_operator(refined.slice(c)); });
  if (!out.allFinite()) throw NonFiniteError("refined_graph_conv: non-finite output");
  return apply_activation(std::move(out), activation);
}

}  // namespace hsicgcn
