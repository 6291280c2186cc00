#include "hsicgcn/dependency.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace hsicgcn;
using namespace testing_support;

namespace {

DependencyParams random_dependency(std::mt19937_64& rng, int c_in, int c_out) {
  return {random_matrix(rng, c_in, c_out), random_matrix(rng, 1, c_out), random_matrix(rng, 1, c_out)};
}

// Literal per-entry evaluation of the dependency and refinement formulas.
double oracle_dependency(const Matrix& features, double delta, const DependencyParams& p, int i, int j, int c) {
  double r = p.phi_bias(0, c);
  for (Eigen::Index k = 0; k < features.cols(); ++k) {
    const double d = features(i, k) - features(j, k);
    r += p.phi_weights(k, c) * std::exp(-d * d / (2 * delta * delta));
  }
  return r;
}

// sigma(N_c X_t W) evaluated with explicit loops over frames, joints, channels.
Matrix oracle_conv(const Matrix& x, int frames, const Matrix& a, const std::vector<Matrix>& refined_slices,
                   const Matrix& w, bool relu) {
  const Eigen::Index n = a.rows();
  Vector deg = (a + Matrix::Identity(n, n)).rowwise().sum();
  Matrix out = Matrix::Zero(x.rows(), w.cols());
  for (int t = 0; t < frames; ++t) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      const Matrix& ac = refined_slices[static_cast<std::size_t>(c)];
      for (Eigen::Index i = 0; i < n; ++i) {
        double acc = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
          const double op = (ac(i, j) + (i == j ? 1.0 : 0.0)) / std::sqrt(deg(i) * deg(j));
          double xw = 0;
          for (Eigen::Index k = 0; k < x.cols(); ++k) xw += x(t * n + j, k) * w(k, c);
          acc += op * xw;
        }
        out(t * n + i, c) = relu ? std::max(acc, 0.0) : acc;
      }
    }
  }
  return out;
}

Matrix permute_frames_rows(const Matrix& x, int frames, const std::vector<int>& perm) {
  const int n = static_cast<int>(perm.size());
  Matrix out(x.rows(), x.cols());
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < n; ++i) out.row(t * n + i) = x.row(t * n + perm[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace

TEST_CASE("gaussian_correlation examples") {
  const Vector v = (Vector(3) << 0.3, -1.0, 2.0).finished();
  CHECK(gaussian_correlation(v, v, GaussianWidth(0.7)) == Vector::Ones(3));

  const Vector big = gaussian_correlation(v, Vector::Zero(3), GaussianWidth(1e6));
  CHECK((big.array() - 1.0).abs().maxCoeff() < 1e-9);

  const double delta = 1.7;
  const Vector a = (Vector(2) << delta, 2 * delta).finished();
  const Vector r = gaussian_correlation(a, Vector::Zero(2), GaussianWidth(delta));
  CHECK(r(0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(r(1) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));

  CHECK_THROWS(GaussianWidth(0.0));
  CHECK_THROWS(GaussianWidth(-1.0));
  CHECK_THROWS(gaussian_correlation(Vector::Zero(2), Vector::Zero(3), GaussianWidth(1.0)));
}

TEST_CASE("gaussian_correlation symmetry and monotonicity") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Vector a = random_matrix(rng, 4, 1, -3, 3);
    const Vector b = random_matrix(rng, 4, 1, -3, 3);
    const double d = 0.1 + trial * 0.02;
    const Vector ab = gaussian_correlation(a, b, GaussianWidth(d));
    CHECK(ab == gaussian_correlation(b, a, GaussianWidth(d)));
    CHECK((ab.array() > 0.0).all());
    CHECK((ab.array() <= 1.0).all());
    CHECK((gaussian_correlation(a, b, GaussianWidth(d * 1.5)).array() >= ab.array()).all());
    // Moving b further from a never increases any component.
    const Vector farther = b + (b - a) * 0.5;
    CHECK((gaussian_correlation(a, farther, GaussianWidth(d)).array() <= ab.array()).all());
  }
}

TEST_CASE("joint_features is the temporal mean") {
  MotionSequence one(1, 3, (Matrix(3, 2) << 1, 2, 3, 4, 5, 6).finished());
  CHECK(joint_features(one) == one.data());

  Matrix sym(4, 2);
  sym << 1, -2, 3, 0.5, -1, 2, -3, -0.5;
  CHECK(joint_features(MotionSequence(2, 2, sym)).isZero());

  std::mt19937_64 rng(4);
  const Matrix data = random_matrix(rng, 3 * 5, 3);
  const Matrix f = joint_features(MotionSequence(3, 5, data));
  for (int j = 0; j < 5; ++j) {
    for (int c = 0; c < 3; ++c) {
      double m = 0;
      for (int t = 0; t < 3; ++t) m += data(t * 5 + j, c);
      CHECK(f(j, c) == doctest::Approx(m / 3).epsilon(1e-14));
    }
  }
}

TEST_CASE("dependency_tensor examples") {
  std::mt19937_64 rng(8);
  // All joints identical: r = phi_weights^T 1 + bias.
  const Matrix same = Matrix::Constant(4, 2, 0.3);
  DependencyParams id{Matrix::Identity(2, 2), Matrix::Zero(1, 2), Matrix::Zero(1, 2)};
  CHECK(dependency_tensor(same, GaussianWidth(1), id).values() == Matrix::Ones(16, 2));

  DependencyParams zero_w{Matrix::Zero(2, 3), (Matrix(1, 3) << 0.5, -1, 2).finished(), Matrix::Zero(1, 3)};
  const Matrix feats = random_matrix(rng, 3, 2);
  const auto r0 = dependency_tensor(feats, GaussianWidth(1), zero_w);
  for (Eigen::Index row = 0; row < 9; ++row) CHECK(r0.values().row(row) == zero_w.phi_bias);

  const auto p = random_dependency(rng, 2, 2);
  const auto r = dependency_tensor(feats, GaussianWidth(0.8), p);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int c = 0; c < 2; ++c) {
        CHECK(r(i, j, c) == doctest::Approx(oracle_dependency(feats, 0.8, p, i, j, c)).epsilon(1e-13));
      }
    }
  }
  CHECK_THROWS_AS(dependency_tensor(random_matrix(rng, 3, 4), GaussianWidth(1), p), ShapeError);
}

TEST_CASE("dependency_tensor is symmetric in the joint indices") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + trial % 6;
    const Matrix feats = random_matrix(rng, n, 3, -2, 2);
    const auto p = random_dependency(rng, 3, 4);
    const auto r = dependency_tensor(feats, GaussianWidth(0.5 + trial * 0.1), p);
    for (int c = 0; c < 4; ++c) {
      const Matrix s = r.slice(c);
      CHECK((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("refine_adjacency examples") {
  std::mt19937_64 rng(10);
  const auto g = SkeletonGraph::binary_tree(4);
  const auto p = random_dependency(rng, 2, 3);
  const auto r = dependency_tensor(random_matrix(rng, 4, 2), GaussianWidth(1), p);

  DependencyParams off = p;
  off.channel_scale.setZero();
  const auto disabled = refine_adjacency(g.adjacency(), r, off);
  for (int c = 0; c < 3; ++c) CHECK(disabled.slice(c) == g.adjacency());

  DependencyParams unit = p;
  unit.channel_scale.setOnes();
  const auto only_r = refine_adjacency(Matrix::Zero(4, 4), r, unit);
  for (int c = 0; c < 3; ++c) CHECK(only_r.slice(c) == r.slice(c));

  const auto refined = refine_adjacency(g.adjacency(), r, p);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        CHECK(refined.slice(c)(i, j) == g.adjacency()(i, j) + p.channel_scale(0, c) * r(i, j, c));
      }
    }
  }
  CHECK_THROWS_AS(refine_adjacency(Matrix::Zero(3, 3), r, p), ShapeError);
}

TEST_CASE("refined_graph_conv examples") {
  // Single isolated node, refinement off, identity weight and activation.
  const Matrix x = (Matrix(2, 3) << 1.5, -2, 0.25, 3, 4, -5).finished();
  DependencyParams p{Matrix::Ones(3, 3), Matrix::Ones(1, 3), Matrix::Zero(1, 3)};
  const auto r = dependency_tensor(joint_features(MotionSequence(2, 1, x)), GaussianWidth(1), p);
  const auto refined = refine_adjacency(Matrix::Zero(1, 1), r, p);
  CHECK(refined_graph_conv(x, 2, refined, Matrix::Identity(3, 3), Activation::identity) == x);

  std::mt19937_64 rng(12);
  const auto g = SkeletonGraph::binary_tree(3);
  const auto q = random_dependency(rng, 2, 2);
  const Matrix xr = random_matrix(rng, 6, 2);
  const auto rq = refine_adjacency(g.adjacency(), dependency_tensor(joint_features(MotionSequence(2, 3, xr)), GaussianWidth(1), q), q);
  const Matrix w = random_matrix(rng, 2, 2);
  CHECK(refined_graph_conv(Matrix::Zero(6, 2), 2, rq, w).isZero());

  const std::vector<Matrix> slices{rq.slice(0), rq.slice(1)};
  for (const bool relu : {true, false}) {
    const Matrix got = refined_graph_conv(xr, 2, rq, w, relu ? Activation::relu : Activation::identity);
    CHECK((got - oracle_conv(xr, 2, g.adjacency(), slices, w, relu)).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK_THROWS_AS(refined_graph_conv(xr, 3, rq, w), ShapeError);
  CHECK_THROWS_AS(refined_graph_conv(xr, 2, rq, random_matrix(rng, 3, 2)), ShapeError);
}

TEST_CASE("graph_conv matches the dense oracle") {
  std::mt19937_64 rng(13);
  const auto g = SkeletonGraph::binary_tree(5);
  const Matrix x = random_matrix(rng, 4 * 5, 3);
  const Matrix w = random_matrix(rng, 3, 4);
  const std::vector<Matrix> slices(4, g.adjacency());
  CHECK((graph_conv(x, 4, g.adjacency(), w) - oracle_conv(x, 4, g.adjacency(), slices, w, true)).cwiseAbs().maxCoeff() <
        1e-14);
}

TEST_CASE("refined_graph_conv with zero channel scale equals graph_conv bit for bit") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + trial % 8;
    const int frames = 1 + trial % 4;
    const auto g = SkeletonGraph::binary_tree(n);
    auto p = random_dependency(rng, 3, 5);
    p.channel_scale.setZero();
    const Matrix x = random_matrix(rng, frames * n, 3, -4, 4);
    const auto r = dependency_tensor(joint_features(MotionSequence(frames, n, x)), GaussianWidth(1.3), p);
    const auto refined = refine_adjacency(g.adjacency(), r, p);
    const Matrix w = random_matrix(rng, 3, 5);
    for (const auto act : {Activation::relu, Activation::identity}) {
      CHECK(refined_graph_conv(x, frames, refined, w, act) == graph_conv(x, frames, g.adjacency(), w, act));
    }
  }
}

TEST_CASE("refined_graph_conv is joint-permutation equivariant") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 3 + trial % 6;
    const int frames = 2 + trial % 3;
    const auto g = SkeletonGraph::binary_tree(n);
    const auto p = random_dependency(rng, 3, 4);
    const Matrix x = random_matrix(rng, frames * n, 3, -2, 2);
    const Matrix w = random_matrix(rng, 3, 4);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix pm = permutation_matrix(perm);

    auto run = [&](const Matrix& xin, const Matrix& a) {
      const auto r = dependency_tensor(joint_features(MotionSequence(frames, n, xin)), GaussianWidth(1), p);
      return refined_graph_conv(xin, frames, refine_adjacency(a, r, p), w);
    };
    const Matrix base = run(x, g.adjacency());
    const Matrix permuted = run(permute_frames_rows(x, frames, perm), pm * g.adjacency() * pm.transpose());
    CHECK((permuted - permute_frames_rows(base, frames, perm)).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("DependencyParams validation") {
  DependencyParams p{Matrix::Zero(2, 3), Matrix::Zero(1, 2), Matrix::Zero(1, 3)};
  CHECK_THROWS_AS(p.validate(), ShapeError);
  DependencyParams q{Matrix::Zero(2, 3), Matrix::Zero(1, 3), Matrix::Zero(1, 3)};
  q.phi_weights(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS(q.validate());
}
