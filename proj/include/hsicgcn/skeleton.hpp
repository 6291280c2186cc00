#pragma once

#include "hsicgcn/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hsicgcn {

using Edge = std::pair<int, int>;

/// Marker stored in a parent map for joints without a parent.
inline constexpr int kRootJoint = -1;

/// Symmetric {0,1} adjacency of an undirected simple graph on `n` nodes.
/// Throws std::invalid_argument on out-of-range indices or self-loops.
Matrix build_adjacency(std::span<const Edge> edges, int n);

/// D^{-1/2}(A+I)D^{-1/2} with D the degree matrix of A+I. Each entry is
/// evaluated as (A+I)_ij / sqrt(d_i d_j) so binary inputs give exact halves,
/// quarters, and so on where the degrees allow it.
Matrix normalize_adjacency(const Eigen::Ref<const Matrix>& a);

/// Joints, bones, and the parent map used to derive the bone modality.
class SkeletonGraph {
 public:
  SkeletonGraph() = default;
  SkeletonGraph(int num_joints, std::vector<Edge> edges, std::vector<int> parents);

  /// Graph whose edge set is exactly the child-parent pairs.
  static SkeletonGraph from_parents(std::vector<int> parents);
  /// Heap-ordered tree: parent(j) = (j - 1) / 2. Used by the synthetic data.
  static SkeletonGraph binary_tree(int num_joints);
  /// The 25-joint Kinect v2 layout of NTU RGB+D, rooted at the spine joint.
  static SkeletonGraph ntu25();

  int num_joints() const { return num_joints_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Matrix& adjacency() const { return adjacency_; }
  const std::vector<int>& parents() const { return parents_; }
  bool is_root(int joint) const { return parents_.at(joint) == kRootJoint; }

 private:
  int num_joints_ = 0;
  std::vector<Edge> edges_;
  Matrix adjacency_;
  std::vector<int> parents_;
};

/// A T x N x C coordinate tensor. `data` stores frame t, joint j in row
/// t * joints + j, so each frame is a contiguous N x C row block.
class MotionSequence {
 public:
  MotionSequence() = default;
  MotionSequence(int frames, int joints, Matrix data, std::optional<int> label = std::nullopt);

  int frames() const { return frames_; }
  int joints() const { return joints_; }
  int channels() const { return static_cast<int>(data_.cols()); }
  const Matrix& data() const { return data_; }
  const std::optional<int>& label() const { return label_; }
  void set_label(std::optional<int> label) { label_ = label; }

  auto frame(int t) const { return data_.middleRows(static_cast<Eigen::Index>(t) * joints_, joints_); }
  double at(int t, int joint, int channel) const {
    return data_(static_cast<Eigen::Index>(t) * joints_ + joint, channel);
  }

 private:
  int frames_ = 0;
  int joints_ = 0;
  Matrix data_;
  std::optional<int> label_;
};

enum class Split { train, test };
std::string to_string(Split split);
Split parse_split(const std::string& text);

struct Dataset {
  std::vector<MotionSequence> sequences;
  int num_classes = 0;
  Split split = Split::train;
  SkeletonGraph graph;
};

/// Checks label ranges and that every sequence shares the graph's joint count.
void validate(const Dataset& dataset);

enum class Modality { joint, bone };
std::string to_string(Modality modality);
Modality parse_modality(const std::string& text);

/// Parent-relative difference vectors; root joints map to zero.
MotionSequence to_bone_stream(const MotionSequence& seq, const SkeletonGraph& graph);

/// Subtracts the first frame's position of `root_joint` from every entry.
MotionSequence center_on_root(const MotionSequence& seq, int root_joint = 0);

/// Applies centering (optional) then the modality transform to every sequence.
Dataset prepare(const Dataset& dataset, Modality modality, bool center = true);

// ---------------------------------------------------------------------------
// NTU-style .skeleton text ingestion

enum class MissingBodyPolicy { drop, zero_fill };

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

/// One sequence per body track, in order of first appearance.
std::vector<MotionSequence> parse_skeleton_file(std::string_view text,
                                                MissingBodyPolicy policy = MissingBodyPolicy::drop);

// ---------------------------------------------------------------------------
// Dataset text container

/// Writes the dataset as structured text; values use round-trip precision.
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

// ---------------------------------------------------------------------------
// Synthetic motion data

struct SynthesisParams {
  int num_classes = 3;
  int num_joints = 8;
  int frames = 16;
  int channels = 3;
  int samples_per_class = 200;
  double noise = 0.05;
  /// Oscillation amplitude of the class's active joint group.
  double active_amplitude = 0.6;
  /// Oscillation amplitude of every other joint.
  double passive_amplitude = 0.15;
};

/// Class c moves the joints j with j % num_classes == c strongly and the rest
/// weakly, with class-specific per-joint phase offsets, a random global phase
/// per sample, a random translation, and i.i.d. Gaussian noise.
Dataset generate_synthetic(const SynthesisParams& params, std::uint64_t seed, Split split = Split::train);

struct SyntheticSplits {
  Dataset train;
  Dataset test;
};
SyntheticSplits generate_synthetic_splits(SynthesisParams params, int train_per_class, int test_per_class,
                                          std::uint64_t seed);

}  // namespace hsicgcn
