#include "hsicgcn/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hsicgcn {

std::string to_string(MaternOrder order) {
  switch (order) {
    case MaternOrder::half: return "1/2";
    case MaternOrder::three_halves: return "3/2";
    case MaternOrder::five_halves: return "5/2";
  }
  return "?";
}

MaternOrder parse_matern_order(const std::string& text) {
  if (text == "1/2" || text == "0.5") return MaternOrder::half;
  if (text == "3/2" || text == "1.5") return MaternOrder::three_halves;
  if (text == "5/2" || text == "2.5") return MaternOrder::five_halves;
  throw std::invalid_argument("unsupported Matern order '" + text + "' (closed forms: 1/2, 3/2, 5/2)");
}

void MaternParams::validate() const {
  if (!(amplitude > 0.0) || !std::isfinite(amplitude)) throw std::invalid_argument("Matern: amplitude must be > 0");
  if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
    throw std::invalid_argument("Matern: length scale must be > 0");
  }
}

double matern_from_distance(double r, const MaternParams& params) {
  switch (params.order) {
    case MaternOrder::half:
      return params.amplitude * std::exp(-r / params.length_scale);
    case MaternOrder::three_halves: {
      const double s = std::sqrt(3.0) * r / params.length_scale;
      return params.amplitude * (1.0 + s) * std::exp(-s);
    }
    case MaternOrder::five_halves: {
      const double s = std::sqrt(5.0) * r / params.length_scale;
      return params.amplitude * (1.0 + s + s * s / 3.0) * std::exp(-s);
    }
  }
  throw std::invalid_argument("unsupported Matern order");
}

double matern_radial_slope(double r, const MaternParams& params) {
  const double ell = params.length_scale;
  switch (params.order) {
    case MaternOrder::half:
      return r > 0.0 ? -params.amplitude / (ell * r) * std::exp(-r / ell) : 0.0;
    case MaternOrder::three_halves: {
      const double a = std::sqrt(3.0) / ell;
      return -params.amplitude * a * a * std::exp(-a * r);
    }
    case MaternOrder::five_halves: {
      const double a = std::sqrt(5.0) / ell;
      return -params.amplitude * a * a * (1.0 + a * r) / 3.0 * std::exp(-a * r);
    }
  }
  throw std::invalid_argument("unsupported Matern order");
}

Matrix kernel_matrix(const Eigen::Ref<const Matrix>& samples, const MaternParams& params) {
  params.validate();
  const Eigen::Index n = samples.rows();
  if (n < 1) throw std::invalid_argument("kernel_matrix: need at least one sample");
  Matrix k(n, n);
  for (Eigen::Index u = 0; u < n; ++u) {
    k(u, u) = params.amplitude;
    for (Eigen::Index w = u + 1; w < n; ++w) {
      const double value = matern_from_distance((samples.row(u) - samples.row(w)).norm(), params);
      k(u, w) = value;
      k(w, u) = value;
    }
  }
  return k;
}

Matrix kernel_matrix(std::span<const Vector> samples, const MaternParams& params) {
  if (samples.empty()) throw std::invalid_argument("kernel_matrix: need at least one sample");
  const Eigen::Index d = samples.front().size();
  Matrix stacked(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require_shape(samples[i].size() == d, "kernel_matrix: ragged input");
    stacked.row(static_cast<Eigen::Index>(i)) = samples[i].transpose();
  }
  return kernel_matrix(stacked, params);
}

Matrix label_kernel(std::span<const int> labels, int num_classes) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("label_kernel: label out of range");
  }
  Matrix k(n, n);
  for (Eigen::Index u = 0; u < n; ++u) {
    for (Eigen::Index w = 0; w < n; ++w) k(u, w) = labels[u] == labels[w] ? 1.0 : 0.0;
  }
  return k;
}

Matrix center(const Eigen::Ref<const Matrix>& k) {
  require_shape(k.rows() == k.cols() && k.rows() >= 1, "center: expected a non-empty square matrix");
  const RowVector col_means = k.colwise().mean();
  const Vector row_means = k.rowwise().mean();
  const double grand = k.mean();
  Matrix out = k;
  out.rowwise() -= col_means;
  out.colwise() -= row_means;
  out.array() += grand;
  return out;
}

namespace {

void check_hsic_inputs(const Eigen::Ref<const Matrix>& k_z, const Eigen::Ref<const Matrix>& k_y) {
  require_shape(k_z.rows() == k_z.cols() && k_y.rows() == k_y.cols(), "hsic: kernel matrices must be square");
  require_shape(k_z.rows() == k_y.rows(), "hsic: sample counts differ");
  if (k_z.rows() < 2) throw std::invalid_argument("hsic: need n >= 2 samples");
}

}  // namespace

double hsic(const Eigen::Ref<const Matrix>& k_z, const Eigen::Ref<const Matrix>& k_y) {
  check_hsic_inputs(k_z, k_y);
  const double n1 = static_cast<double>(k_z.rows() - 1);
  return center(k_z).cwiseProduct(center(k_y)).sum() / (n1 * n1);
}

double hsic_reference(const Eigen::Ref<const Matrix>& k_z, const Eigen::Ref<const Matrix>& k_y) {
  check_hsic_inputs(k_z, k_y);
  const Eigen::Index n = k_z.rows();
  const Matrix h = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  const Matrix a = k_z * h;
  const Matrix b = k_y * h;
  double trace = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) trace += a(i, j) * b(j, i);
  }
  const double n1 = static_cast<double>(n - 1);
  return trace / (n1 * n1);
}

Matrix kernel_weighted_sum_gradient(const Eigen::Ref<const Matrix>& z, const Eigen::Ref<const Matrix>& weights,
                                    const MaternParams& params) {
  const Eigen::Index n = z.rows();
  require_shape(weights.rows() == n && weights.cols() == n, "kernel gradient: weight matrix shape");
  Matrix grad = Matrix::Zero(n, z.cols());
  for (Eigen::Index u = 0; u < n; ++u) {
    for (Eigen::Index w = u + 1; w < n; ++w) {
      const RowVector diff = z.row(u) - z.row(w);
      const double coeff = 2.0 * weights(u, w) * matern_radial_slope(diff.norm(), params);
      grad.row(u) += coeff * diff;
      grad.row(w) -= coeff * diff;
    }
  }
  return grad;
}

PermutationTestResult hsic_permutation_test(const Eigen::Ref<const Matrix>& samples, std::span<const int> labels,
                                            const MaternParams& params, int num_permutations, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  require_shape(samples.rows() == n, "hsic_permutation_test: sample/label count mismatch");
  if (n < 5) throw std::invalid_argument("hsic_permutation_test: need n >= 5 samples");
  if (num_permutations < 100) throw std::invalid_argument("hsic_permutation_test: need >= 100 permutations");
  if (std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels.front(); })) {
    throw std::invalid_argument("hsic_permutation_test: labels contain a single class");
  }
  const int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  const Matrix kz = center(kernel_matrix(samples, params));
  const Matrix ky = center(label_kernel(labels, num_classes));
  const double n1 = static_cast<double>(n - 1);

  auto statistic = [&](const std::vector<Eigen::Index>& perm) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) sum += kz(i, j) * ky(perm[i], perm[j]);
    }
    return sum / (n1 * n1);
  };

  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  PermutationTestResult result;
  result.hsic = statistic(perm);
  result.num_permutations = num_permutations;

  const double tie = 1e-12 * std::max(1.0, std::abs(result.hsic));
  std::mt19937_64 rng(seed);
  int at_least = 0;
  for (int p = 0; p < num_permutations; ++p) {
    std::shuffle(perm.begin(), perm.end(), rng);
    if (statistic(perm) >= result.hsic - tie) ++at_least;
  }
  result.p_value = static_cast<double>(at_least) / num_permutations;
  return result;
}

}  // namespace hsicgcn
