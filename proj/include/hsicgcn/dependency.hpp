#pragma once

#include "hsicgcn/skeleton.hpp"
#include "hsicgcn/types.hpp"

namespace hsicgcn {

/// Width of the Gaussian correlation function, in feature units.
class GaussianWidth {
 public:
  explicit GaussianWidth(double delta) : delta_(delta) {
    if (!(delta > 0.0) || !std::isfinite(delta)) throw std::invalid_argument("GaussianWidth: delta must be positive");
  }
  double value() const { return delta_; }

 private:
  double delta_;
};

/// Elementwise exp(-(v_i - v_j)^2 / (2 delta^2)).
template <typename DerivedA, typename DerivedB>
Vector gaussian_correlation(const Eigen::MatrixBase<DerivedA>& v_i, const Eigen::MatrixBase<DerivedB>& v_j,
                            GaussianWidth delta) {
  require_shape(v_i.size() == v_j.size(), "gaussian_correlation: length mismatch");
  const double denom = 2.0 * delta.value() * delta.value();
  Vector diff = v_i.derived().reshaped() - v_j.derived().reshaped();
  return (-(diff.array().square()) / denom).exp().matrix();
}

/// Temporal mean of a stacked (frames*N) x C layer input, giving N x C.
Matrix temporal_mean(const Eigen::Ref<const Matrix>& stacked, int frames);

/// Row i is the temporal mean of joint i's channel vector.
Matrix joint_features(const MotionSequence& seq);

/// Gaussian correlations of every ordered joint pair: row i*N + j holds R(v_i, v_j).
Matrix pairwise_gaussian(const Eigen::Ref<const Matrix>& features, GaussianWidth delta);

/// The linear map phi (weights + bias) and the per-channel refinement scale W_c.
struct DependencyParams {
  Matrix phi_weights;    // C x C'
  Matrix phi_bias;       // 1 x C'
  Matrix channel_scale;  // 1 x C'

  int in_channels() const { return static_cast<int>(phi_weights.rows()); }
  int out_channels() const { return static_cast<int>(phi_weights.cols()); }
  void validate() const;
};

/// N x N x C' dependency values laid out as (N*N) x C', row i*N + j.
class DependencyTensor {
 public:
  DependencyTensor(int joints, Matrix values);

  int joints() const { return joints_; }
  int channels() const { return static_cast<int>(values_.cols()); }
  const Matrix& values() const { return values_; }
  double operator()(int i, int j, int c) const { return values_(static_cast<Eigen::Index>(i) * joints_ + j, c); }
  /// N x N slice for one output channel.
  Matrix slice(int c) const;

 private:
  int joints_;
  Matrix values_;
};

/// r_ij = phi(R(v_i, v_j)) for every joint pair.
DependencyTensor dependency_tensor(const Eigen::Ref<const Matrix>& features, GaussianWidth delta,
                                   const DependencyParams& params);

struct RefinedAdjacency {
  Matrix static_part;  // A, N x N
  Matrix values;       // (N*N) x C', A + W_c * R per channel
  int joints() const { return static_cast<int>(static_part.rows()); }
  Matrix slice(int c) const;
};

/// A_c = A + W_c R, broadcast over channels.
RefinedAdjacency refine_adjacency(const Eigen::Ref<const Matrix>& a, const DependencyTensor& r,
                                  const DependencyParams& params);

enum class Activation { relu, identity };

/// Degree bookkeeping shared by the static and refined convolutions. The
/// degree matrix always comes from the static A + I.
struct GraphNormalizer {
  explicit GraphNormalizer(const Eigen::Ref<const Matrix>& static_adjacency);

  Matrix adjacency;             // A
  Matrix sqrt_degree_products;  // sqrt(d_i * d_j)

  /// (A_c + I) / sqrt(d_i d_j) for an arbitrary N x N A_c.
  Matrix channel_operator(const Eigen::Ref<const Matrix>& refined_slice) const;
  /// Static operator D^{-1/2}(A + I)D^{-1/2}.
  Matrix static_operator() const { return channel_operator(adjacency); }
  int joints() const { return static_cast<int>(adjacency.rows()); }
};

/// Applies one N x N operator per channel: out[t*N + i, c] = sum_j op_c(i, j) * xw[t*N + j, c].
template <typename OperatorFn>
Matrix propagate_channels(const Eigen::Ref<const Matrix>& xw, int frames, int joints, OperatorFn&& operator_for) {
  require_shape(xw.rows() == static_cast<Eigen::Index>(frames) * joints, "propagate: row count mismatch");
  Matrix out(xw.rows(), xw.cols());
  for (Eigen::Index c = 0; c < xw.cols(); ++c) {
    const Matrix op = operator_for(static_cast<int>(c));
    Eigen::Map<const Matrix> in_c(xw.col(c).data(), joints, frames);
    Eigen::Map<Matrix> out_c(out.col(c).data(), joints, frames);
    out_c.noalias() = op * in_c;
  }
  return out;
}

Matrix apply_activation(Matrix x, Activation activation);

/// sigma(D^{-1/2}(A+I)D^{-1/2} X W) on a stacked (frames*N) x C input.
Matrix graph_conv(const Eigen::Ref<const Matrix>& x, int frames, const Eigen::Ref<const Matrix>& a,
                  const Eigen::Ref<const Matrix>& w, Activation activation = Activation::relu);

/// sigma(D^{-1/2}(A_c+I)D^{-1/2} X W) per output channel c, D from the static A + I.
Matrix refined_graph_conv(const Eigen::Ref<const Matrix>& x, int frames, const RefinedAdjacency& refined,
                          const Eigen::Ref<const Matrix>& w, Activation activation = Activation::relu);

}  // namespace hsicgcn
