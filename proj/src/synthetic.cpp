#include "hsicgcn/skeleton.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace hsicgcn {

namespace {

Matrix rest_pose(const SkeletonGraph& graph, int channels) {
  const int n = graph.num_joints();
  Matrix pose = Matrix::Zero(n, channels);
  // Parents precede children in heap order, so one forward pass suffices.
  for (int j = 0; j < n; ++j) {
    const int p = graph.parents()[j];
    if (p == kRootJoint) continue;
    for (int c = 0; c < channels; ++c) pose(j, c) = pose(p, c) + 0.4 * std::sin(1.3 * j + 0.7 * c);
  }
  return pose;
}

}  // namespace

Dataset generate_synthetic(const SynthesisParams& params, std::uint64_t seed, Split split) {
  if (params.num_classes < 1 || params.num_joints < 1 || params.frames < 1 || params.channels < 1 ||
      params.samples_per_class < 1) {
    throw std::invalid_argument("generate_synthetic: dimensions must be positive");
  }
  if (params.noise < 0.0) throw std::invalid_argument("generate_synthetic: noise must be non-negative");

  const int k = params.num_classes;
  const int n = params.num_joints;
  const int frames = params.frames;
  const int channels = params.channels;

  Dataset dataset;
  dataset.num_classes = k;
  dataset.split = split;
  dataset.graph = SkeletonGraph::binary_tree(n);
  const Matrix pose = rest_pose(dataset.graph, channels);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> shift_dist(-1.0, 1.0);
  std::normal_distribution<double> noise_dist(0.0, 1.0);

  const int total = k * params.samples_per_class;
  dataset.sequences.reserve(total);
  for (int s = 0; s < total; ++s) {
    const int label = s % k;
    const double global_phase = phase_dist(rng);
    RowVector shift(channels);
    for (int c = 0; c < channels; ++c) shift(c) = shift_dist(rng);

    Matrix data(static_cast<Eigen::Index>(frames) * n, channels);
    for (int t = 0; t < frames; ++t) {
      const double omega_t = 2.0 * std::numbers::pi * t / frames;
      for (int j = 0; j < n; ++j) {
        const double amplitude = (j % k == label) ? params.active_amplitude : params.passive_amplitude;
        const double offset = 2.0 * std::numbers::pi * ((label + 1) * j % n) / n;
        const double angle = omega_t + global_phase + offset;
        const Eigen::Index row = static_cast<Eigen::Index>(t) * n + j;
        data.row(row) = pose.row(j) + shift;
        data(row, 0) += amplitude * std::cos(angle);
        if (channels > 1) data(row, 1) += amplitude * std::sin(angle);
      }
    }
    if (params.noise > 0.0) {
      for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] += params.noise * noise_dist(rng);
    }
    dataset.sequences.emplace_back(frames, n, std::move(data), label);
  }
  return dataset;
}

SyntheticSplits generate_synthetic_splits(SynthesisParams params, int train_per_class, int test_per_class,
                                          std::uint64_t seed) {
  params.samples_per_class = train_per_class;
  Dataset train = generate_synthetic(params, seed, Split::train);
  params.samples_per_class = test_per_class;
  // Distinct stream for the test split; the constant is the 64-bit golden ratio.
  Dataset test = generate_synthetic(params, seed ^ 0x9E3779B97F4A7C15ULL, Split::test);
  return {std::move(train), std::move(test)};
}

}  // namespace hsicgcn
