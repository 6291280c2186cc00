#pragma once

#include "hsicgcn/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hsicgcn {

/// Closed-form Matern orders (eta).
enum class MaternOrder { half, three_halves, five_halves };

std::string to_string(MaternOrder order);
/// Accepts "1/2", "3/2", "5/2", "0.5", "1.5", "2.5".
MaternOrder parse_matern_order(const std::string& text);

struct MaternParams {
  MaternOrder order = MaternOrder::three_halves;
  double amplitude = 1.0;     // alpha
  double length_scale = 1.0;  // ell

  void validate() const;
};

/// Kernel value as a function of the Euclidean distance r.
double matern_from_distance(double r, const MaternParams& params);

/// (dk/dr) / r, the factor multiplying (u - w) in the gradient of k(u, w)
/// with respect to u. Finite at r = 0 for orders 3/2 and 5/2; order 1/2 is
/// not differentiable there and returns 0.
double matern_radial_slope(double r, const MaternParams& params);

template <typename DerivedU, typename DerivedW>
double matern_kernel(const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedW>& w,
                     const MaternParams& params) {
  require_shape(u.size() == w.size(), "matern_kernel: length mismatch");
  params.validate();
  return matern_from_distance((u.derived().reshaped() - w.derived().reshaped()).norm(), params);
}

/// Gram matrix over the rows of `samples`.
Matrix kernel_matrix(const Eigen::Ref<const Matrix>& samples, const MaternParams& params);

/// Kernel matrix from a list of equally sized vectors; throws ShapeError on ragged input.
Matrix kernel_matrix(std::span<const Vector> samples, const MaternParams& params);

/// Delta kernel on class labels: 1 where labels match, else 0.
Matrix label_kernel(std::span<const int> labels, int num_classes);

/// H K H with H = I - (1/n) 1 1^T.
Matrix center(const Eigen::Ref<const Matrix>& k);

/// Biased estimator tr(K_z H K_y H) / (n - 1)^2.
double hsic(const Eigen::Ref<const Matrix>& k_z, const Eigen::Ref<const Matrix>& k_y);

/// Same estimator with a fixed row-major summation order, independent of
/// Eigen's vectorized reductions. Used as a reference.
double hsic_reference(const Eigen::Ref<const Matrix>& k_z, const Eigen::Ref<const Matrix>& k_y);

/// Gradient of sum_{u,w} weights(u, w) * k(z_u, z_w) with respect to the rows
/// of z, for symmetric `weights`.
Matrix kernel_weighted_sum_gradient(const Eigen::Ref<const Matrix>& z, const Eigen::Ref<const Matrix>& weights,
                                    const MaternParams& params);

struct PermutationTestResult {
  double hsic = 0.0;
  double p_value = 1.0;
  int num_permutations = 0;
};

/// p-value = fraction of label permutations whose HSIC is at least the
/// observed one (ties within 1e-12 relative count as at least).
PermutationTestResult hsic_permutation_test(const Eigen::Ref<const Matrix>& samples, std::span<const int> labels,
                                            const MaternParams& params, int num_permutations, std::uint64_t seed);

}  // namespace hsicgcn
