#include "hsicgcn/skeleton.hpp"

#include <cmath>
#include <stdexcept>

namespace hsicgcn {

Matrix build_adjacency(std::span<const Edge> edges, int n) {
  if (n < 1) throw std::invalid_argument("build_adjacency: n must be positive");
  Matrix a = Matrix::Zero(n, n);
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw std::invalid_argument("build_adjacency: edge (" + std::to_string(i) + "," + std::to_string(j) +
                                  ") out of range for n=" + std::to_string(n));
    }
    if (i == j) throw std::invalid_argument("build_adjacency: self-loop at joint " + std::to_string(i));
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

Matrix normalize_adjacency(const Eigen::Ref<const Matrix>& a) {
  require_shape(a.rows() == a.cols(), "normalize_adjacency: matrix must be square");
  if (!(a.array() >= 0.0).all()) throw std::invalid_argument("normalize_adjacency: negative entry");
  if (a != a.transpose()) throw std::invalid_argument("normalize_adjacency: matrix is not symmetric");

  const Eigen::Index n = a.rows();
  Matrix self_loops = a + Matrix::Identity(n, n);
  Vector degree = self_loops.rowwise().sum();
  Matrix out(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) out(i, j) = self_loops(i, j) / std::sqrt(degree(i) * degree(j));
  }
  return out;
}

SkeletonGraph::SkeletonGraph(int num_joints, std::vector<Edge> edges, std::vector<int> parents)
    : num_joints_(num_joints), edges_(std::move(edges)), parents_(std::move(parents)) {
  adjacency_ = build_adjacency(edges_, num_joints_);
  if (static_cast<int>(parents_.size()) != num_joints_) {
    throw std::invalid_argument("SkeletonGraph: parent map must list every joint");
  }
  for (int j = 0; j < num_joints_; ++j) {
    const int p = parents_[j];
    if (p == kRootJoint) continue;
    if (p < 0 || p >= num_joints_ || p == j) {
      throw std::invalid_argument("SkeletonGraph: invalid parent for joint " + std::to_string(j));
    }
  }
  // Walking up from any joint must reach a root within num_joints steps.
  for (int j = 0; j < num_joints_; ++j) {
    int cur = j;
    for (int steps = 0; cur != kRootJoint; ++steps) {
      if (steps > num_joints_) throw std::invalid_argument("SkeletonGraph: parent map contains a cycle");
      cur = parents_[cur];
    }
  }
}

SkeletonGraph SkeletonGraph::from_parents(std::vector<int> parents) {
  std::vector<Edge> edges;
  for (int j = 0; j < static_cast<int>(parents.size()); ++j) {
    if (parents[j] != kRootJoint) edges.emplace_back(j, parents[j]);
  }
  const int n = static_cast<int>(parents.size());
  return SkeletonGraph(n, std::move(edges), std::move(parents));
}

SkeletonGraph SkeletonGraph::binary_tree(int num_joints) {
  if (num_joints < 1) throw std::invalid_argument("binary_tree: num_joints must be positive");
  std::vector<int> parents(num_joints, kRootJoint);
  for (int j = 1; j < num_joints; ++j) parents[j] = (j - 1) / 2;
  return from_parents(std::move(parents));
}

SkeletonGraph SkeletonGraph::ntu25() {
  // (child, parent), 1-based, Kinect v2 joint numbering.
  static constexpr int kPairs[24][2] = {{1, 2},   {2, 21},  {3, 21},  {4, 3},   {5, 21},  {6, 5},
                                        {7, 6},   {8, 7},   {9, 21},  {10, 9},  {11, 10}, {12, 11},
                                        {13, 1},  {14, 13}, {15, 14}, {16, 15}, {17, 1},  {18, 17},
                                        {19, 18}, {20, 19}, {22, 23}, {23, 8},  {24, 25}, {25, 12}};
  std::vector<int> parents(25, kRootJoint);
  for (const auto& pair : kPairs) parents[pair[0] - 1] = pair[1] - 1;
  return from_parents(std::move(parents));
}

MotionSequence::MotionSequence(int frames, int joints, Matrix data, std::optional<int> label)
    : frames_(frames), joints_(joints), data_(std::move(data)), label_(label) {
  if (frames < 1 || joints < 1) throw std::invalid_argument("MotionSequence: frames and joints must be positive");
  require_shape(data_.rows() == static_cast<Eigen::Index>(frames) * joints && data_.cols() >= 1,
                "MotionSequence: data must be (frames*joints) x channels");
  if (!data_.allFinite()) throw NonFiniteError("MotionSequence: non-finite coordinate");
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + text + "'");
}

std::string to_string(Modality modality) { return modality == Modality::joint ? "joint" : "bone"; }

Modality parse_modality(const std::string& text) {
  if (text == "joint") return Modality::joint;
  if (text == "bone") return Modality::bone;
  throw std::invalid_argument("unknown modality '" + text + "' (expected joint|bone)");
}

void validate(const Dataset& dataset) {
  if (dataset.num_classes < 1) throw std::invalid_argument("dataset: num_classes must be positive");
  for (std::size_t s = 0; s < dataset.sequences.size(); ++s) {
    const auto& seq = dataset.sequences[s];
    if (seq.joints() != dataset.graph.num_joints()) {
      throw ShapeError("dataset: sequence " + std::to_string(s) + " joint count does not match the skeleton graph");
    }
    if (seq.label() && (*seq.label() < 0 || *seq.label() >= dataset.num_classes)) {
      throw std::invalid_argument("dataset: sequence " + std::to_string(s) + " label out of range");
    }
  }
}

MotionSequence to_bone_stream(const MotionSequence& seq, const SkeletonGraph& graph) {
  require_shape(seq.joints() == graph.num_joints(), "to_bone_stream: joint count mismatch");
  Matrix bones = Matrix::Zero(seq.data().rows(), seq.data().cols());
  for (int t = 0; t < seq.frames(); ++t) {
    const Eigen::Index base = static_cast<Eigen::Index>(t) * seq.joints();
    for (int j = 0; j < seq.joints(); ++j) {
      const int p = graph.parents()[j];
      if (p == kRootJoint) continue;
      bones.row(base + j) = seq.data().row(base + j) - seq.data().row(base + p);
    }
  }
  return MotionSequence(seq.frames(), seq.joints(), std::move(bones), seq.label());
}

MotionSequence center_on_root(const MotionSequence& seq, int root_joint) {
  if (root_joint < 0 || root_joint >= seq.joints()) throw std::invalid_argument("center_on_root: bad root joint");
  const RowVector origin = seq.data().row(root_joint);
  Matrix centered = seq.data().rowwise() - origin;
  return MotionSequence(seq.frames(), seq.joints(), std::move(centered), seq.label());
}

Dataset prepare(const Dataset& dataset, Modality modality, bool center) {
  Dataset out{{}, dataset.num_classes, dataset.split, dataset.graph};
  out.sequences.reserve(dataset.sequences.size());
  int root = 0;
  for (int j = 0; j < dataset.graph.num_joints(); ++j) {
    if (dataset.graph.is_root(j)) {
      root = j;
      break;
    }
  }
  for (const auto& seq : dataset.sequences) {
    MotionSequence s = center ? center_on_root(seq, root) : seq;
    if (modality == Modality::bone) s = to_bone_stream(s, dataset.graph);
    out.sequences.push_back(std::move(s));
  }
  return out;
}

}  // namespace hsicgcn
