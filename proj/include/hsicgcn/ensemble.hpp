#pragma once

#include "hsicgcn/training.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace hsicgcn {

struct StreamSpec {
  Modality modality = Modality::joint;
  double delta = 1.0;
  std::string id;  // defaults to "<modality>_d<delta>"

  std::string stream_id() const;
};

struct StreamPrediction {
  std::string stream_id;
  std::vector<int> sample_ids;
  Matrix scores;  // n x k, rows sum to 1
  std::vector<int> labels;
};

struct StreamResult {
  FitResult fit;
  StreamPrediction prediction;
  double accuracy = 0.0;
  std::vector<std::string> warnings;
};

/// Derives the stream's modality from raw datasets, trains with the stream's
/// delta, and scores the test split.
StreamResult run_stream(const Dataset& train, const Dataset& test, const StreamSpec& spec, TrainConfig config);

/// The four streams {joint, bone} x {small, large delta}.
std::vector<StreamSpec> four_stream_specs(double small_delta = 1.0, double large_delta = 9.0);

struct FusedPrediction {
  Matrix scores;
  std::vector<int> predicted;
  std::vector<int> labels;
  double accuracy = 0.0;
};

/// Unweighted mean of the streams' score tables, summed in sorted stream-id
/// order. Argmax ties resolve to the lowest class index.
FusedPrediction ensemble_average(std::span<const StreamPrediction> predictions);

/// CSV: sample_id,score_0..score_{k-1},label,stream_id
void write_predictions_csv(std::ostream& out, const StreamPrediction& prediction);
StreamPrediction read_predictions_csv(std::istream& in);
void save_predictions(const std::string& path, const StreamPrediction& prediction);
StreamPrediction load_predictions(const std::string& path);

}  // namespace hsicgcn
