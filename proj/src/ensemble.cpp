#include "hsicgcn/ensemble.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace hsicgcn {

std::string StreamSpec::stream_id() const {
  if (!id.empty()) return id;
  std::ostringstream out;
  out << to_string(modality) << "_d" << delta;
  return out.str();
}

std::vector<StreamSpec> four_stream_specs(double small_delta, double large_delta) {
  return {{Modality::joint, small_delta, {}},
          {Modality::joint, large_delta, {}},
          {Modality::bone, small_delta, {}},
          {Modality::bone, large_delta, {}}};
}

StreamResult run_stream(const Dataset& train, const Dataset& test, const StreamSpec& spec, TrainConfig config) {
  config.modality = spec.modality;
  config.delta = spec.delta;
  const Dataset train_ready = prepare(train, config.modality, config.center);
  const Dataset test_ready = prepare(test, config.modality, config.center);

  StreamResult result;
  const bool degenerate = std::all_of(train_ready.sequences.begin(), train_ready.sequences.end(),
                                      [](const MotionSequence& s) { return s.data().isZero(0.0); });
  if (degenerate) result.warnings.push_back("stream " + spec.stream_id() + ": all training inputs are zero");

  result.fit = fit(train_ready, nullptr, config);
  const EvaluationReport report = evaluate(result.fit.spec, result.fit.params, test_ready);
  result.accuracy = report.accuracy;
  result.prediction.stream_id = spec.stream_id();
  result.prediction.scores = report.scores;
  result.prediction.labels = report.labels;
  result.prediction.sample_ids.resize(report.labels.size());
  std::iota(result.prediction.sample_ids.begin(), result.prediction.sample_ids.end(), 0);
  return result;
}

FusedPrediction ensemble_average(std::span<const StreamPrediction> predictions) {
  if (predictions.empty()) throw std::invalid_argument("ensemble_average: need at least one stream");
  const auto& first = predictions.front();
  for (const auto& p : predictions) {
    require_shape(p.scores.rows() == first.scores.rows() && p.scores.cols() == first.scores.cols(),
                  "ensemble_average: stream " + p.stream_id + " has a different shape");
    if (p.labels != first.labels) throw std::invalid_argument("ensemble_average: streams disagree on labels");
  }
  std::vector<const StreamPrediction*> sorted;
  for (const auto& p : predictions) sorted.push_back(&p);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const StreamPrediction* a, const StreamPrediction* b) { return a->stream_id < b->stream_id; });

  FusedPrediction fused;
  fused.scores = Matrix::Zero(first.scores.rows(), first.scores.cols());
  for (const auto* p : sorted) fused.scores += p->scores;
  fused.scores /= static_cast<double>(predictions.size());
  fused.labels = first.labels;
  int correct = 0;
  for (Eigen::Index i = 0; i < fused.scores.rows(); ++i) {
    const int pred = argmax_lowest(fused.scores.row(i));
    fused.predicted.push_back(pred);
    if (i < static_cast<Eigen::Index>(fused.labels.size()) && fused.labels[i] == pred) ++correct;
  }
  if (!fused.labels.empty()) fused.accuracy = static_cast<double>(correct) / static_cast<double>(fused.labels.size());
  return fused;
}

void write_predictions_csv(std::ostream& out, const StreamPrediction& prediction) {
  const Eigen::Index k = prediction.scores.cols();
  out << "sample_id";
  for (Eigen::Index c = 0; c < k; ++c) out << ",score_" << c;
  out << ",label,stream_id\n";
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < prediction.scores.rows(); ++i) {
    out << prediction.sample_ids.at(i);
    for (Eigen::Index c = 0; c < k; ++c) out << ',' << prediction.scores(i, c);
    out << ',' << prediction.labels.at(i) << ',' << prediction.stream_id << "\n";
  }
  out.precision(old_precision);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

StreamPrediction read_predictions_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "empty prediction file");
  const auto header = split_csv(line);
  if (header.size() < 4 || header.front() != "sample_id" || header[header.size() - 2] != "label" ||
      header.back() != "stream_id") {
    throw ParseError(1, "prediction header must be sample_id,score_*,label,stream_id");
  }
  const std::size_t k = header.size() - 3;
  StreamPrediction pred;
  std::vector<std::vector<double>> rows;
  int line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != k + 3) throw ParseError(line_number, "expected " + std::to_string(k + 3) + " fields");
    try {
      pred.sample_ids.push_back(std::stoi(fields[0]));
      std::vector<double> scores;
      for (std::size_t c = 0; c < k; ++c) scores.push_back(std::stod(fields[1 + c]));
      rows.push_back(std::move(scores));
      pred.labels.push_back(std::stoi(fields[k + 1]));
    } catch (const std::logic_error&) {
      throw ParseError(line_number, "non-numeric field");
    }
    if (pred.stream_id.empty()) pred.stream_id = fields[k + 2];
  }
  pred.scores.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c) pred.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  }
  return pred;
}

void save_predictions(const std::string& path, const StreamPrediction& prediction) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_predictions_csv(out, prediction);
}

StreamPrediction load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open predictions '" + path + "'");
  return read_predictions_csv(in);
}

}  // namespace hsicgcn
