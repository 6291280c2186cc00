#include "hsicgcn/cli.hpp"

#include "hsicgcn/ensemble.hpp"
#include "hsicgcn/kernel.hpp"
#include "hsicgcn/serialization.hpp"
#include "hsicgcn/skeleton.hpp"
#include "hsicgcn/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

namespace hsicgcn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

fs::path ensure_dir(const std::string& dir) {
  fs::path path(dir);
  fs::create_directories(path);
  return path;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& resolved) {
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
  out << json{{"command", command}, {"resolved", resolved}}.dump(2) << "\n";
}

std::string one_line(std::string message) {
  for (char& ch : message) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return message;
}

struct TrainFlags {
  std::string train_path;
  std::string test_path;
  std::string config_path;
  std::string out_dir = "run";
  std::string stream_id;
  std::optional<std::uint64_t> seed;
  std::optional<double> delta;
  std::optional<std::string> modality;
  std::optional<int> hsic_sign;
  std::optional<double> hsic_weight;
  std::optional<double> temperature;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  bool no_hsic = false;
  bool no_distill = false;
};

/// CLI flag > config file > built-in default.
TrainConfig resolve_config(const TrainFlags& f) {
  TrainConfig config;
  if (!f.config_path.empty()) config = load_config_file(f.config_path, config);
  if (f.seed) config.seed = *f.seed;
  if (f.delta) config.delta = *f.delta;
  if (f.modality) config.modality = parse_modality(*f.modality);
  if (f.hsic_sign) config.hsic_sign = *f.hsic_sign;
  if (f.hsic_weight) config.hsic_weight = *f.hsic_weight;
  if (f.temperature) config.temperature = *f.temperature;
  if (f.epochs) config.epochs = *f.epochs;
  if (f.batch_size) config.batch_size = *f.batch_size;
  if (f.lr) config.base_lr = *f.lr;
  if (f.no_hsic) config.use_hsic = false;
  if (f.no_distill) config.use_distill = false;
  config.validate();
  return config;
}

int cmd_generate(const SynthesisParams& params, int train_per_class, int test_per_class, std::uint64_t seed,
                 const std::string& out_dir, std::ostream& out) {
  if (train_per_class < 1 || test_per_class < 1) throw UsageError("samples per class must be positive");
  if (params.num_classes < 1 || params.num_joints < 1 || params.frames < 1 || params.channels < 1) {
    throw UsageError("dimensions must be positive");
  }
  const auto splits = generate_synthetic_splits(params, train_per_class, test_per_class, seed);
  const fs::path dir = ensure_dir(out_dir);
  save_dataset((dir / "train.txt").string(), splits.train);
  save_dataset((dir / "test.txt").string(), splits.test);
  write_manifest(dir, "generate",
                 {{"seed", seed},
                  {"classes", params.num_classes},
                  {"joints", params.num_joints},
                  {"frames", params.frames},
                  {"channels", params.channels},
                  {"train_per_class", train_per_class},
                  {"test_per_class", test_per_class},
                  {"noise", params.noise},
                  {"active_amplitude", params.active_amplitude},
                  {"passive_amplitude", params.passive_amplitude}});
  out << "wrote " << splits.train.sequences.size() << " train and " << splits.test.sequences.size()
      << " test sequences to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const TrainFlags& flags, std::ostream& out) {
  if (flags.train_path.empty()) throw UsageError("--train PATH is required");
  const TrainConfig config = resolve_config(flags);
  const Dataset train_raw = load_dataset(flags.train_path);
  std::optional<Dataset> test_raw;
  if (!flags.test_path.empty()) test_raw = load_dataset(flags.test_path);

  const Dataset train = prepare(train_raw, config.modality, config.center);
  std::optional<Dataset> test;
  if (test_raw) {
    if (test_raw->num_classes != train.num_classes) throw std::invalid_argument("train/test class counts differ");
    test = prepare(*test_raw, config.modality, config.center);
  }

  const fs::path dir = ensure_dir(flags.out_dir);
  json resolved = to_json(config);
  resolved["train"] = flags.train_path;
  resolved["test"] = flags.test_path;
  write_manifest(dir, "train", resolved);

  FitResult result = fit(train, test ? &*test : nullptr, config);
  {
    std::ofstream metrics(dir / "metrics.csv");
    write_metrics_csv(metrics, result.metrics);
  }
  save_checkpoint((dir / "checkpoint.txt").string(),
                  {result.spec, config.seed, config.epochs, config.modality, config.center}, result.params);

  const auto& last = result.metrics.empty() ? MetricsRecord{} : result.metrics.back();
  out << "trained " << config.epochs << " epochs (" << result.optimizer_steps << " steps), final loss "
      << last.loss.total << ", train accuracy " << last.train_accuracy;
  if (test) {
    const EvaluationReport report = evaluate(result.spec, result.params, *test);
    StreamPrediction pred;
    pred.stream_id = flags.stream_id.empty() ? StreamSpec{config.modality, config.delta, {}}.stream_id()
                                             : flags.stream_id;
    pred.scores = report.scores;
    pred.labels = report.labels;
    for (std::size_t i = 0; i < report.labels.size(); ++i) pred.sample_ids.push_back(static_cast<int>(i));
    save_predictions((dir / "predictions.csv").string(), pred);
    out << ", test accuracy " << report.accuracy;
  }
  out << "\n";
  return 0;
}

Dataset load_for_checkpoint(const Checkpoint& ckpt, const std::string& data_path) {
  const Dataset raw = load_dataset(data_path);
  if (raw.num_classes != ckpt.header.spec.num_classes) {
    throw std::invalid_argument("checkpoint has " + std::to_string(ckpt.header.spec.num_classes) +
                                " classes but dataset has " + std::to_string(raw.num_classes));
  }
  if (raw.graph.parents() != ckpt.header.spec.graph.parents()) {
    throw std::invalid_argument("dataset skeleton differs from the checkpoint's");
  }
  return prepare(raw, ckpt.header.modality, ckpt.header.center);
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path, const std::string& out_dir,
             std::ostream& out) {
  if (checkpoint_path.empty() || data_path.empty()) throw UsageError("--checkpoint and --data are required");
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Dataset data = load_for_checkpoint(ckpt, data_path);
  const EvaluationReport report = evaluate(ckpt.header.spec, ckpt.params, data);

  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "accuracy " << report.accuracy << "\n";
  if (!out_dir.empty()) {
    const fs::path dir = ensure_dir(out_dir);
    write_manifest(dir, "eval", {{"checkpoint", checkpoint_path}, {"data", data_path}, {"seed", ckpt.header.seed}});
    std::ofstream per_class(dir / "per_class.csv");
    per_class << "class,count,accuracy\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t c = 0; c < report.per_class_accuracy.size(); ++c) {
      per_class << c << ',' << report.per_class_count[c] << ',' << report.per_class_accuracy[c] << "\n";
    }
    StreamPrediction pred;
    pred.stream_id = StreamSpec{ckpt.header.modality, ckpt.header.spec.base.delta, {}}.stream_id();
    pred.scores = report.scores;
    pred.labels = report.labels;
    for (std::size_t i = 0; i < report.labels.size(); ++i) pred.sample_ids.push_back(static_cast<int>(i));
    save_predictions((dir / "predictions.csv").string(), pred);
  }
  return 0;
}

int cmd_ensemble(const std::vector<std::string>& files, const std::string& out_dir, std::ostream& out) {
  if (files.empty()) throw UsageError("ensemble needs at least one prediction file");
  std::vector<StreamPrediction> preds;
  for (const auto& f : files) preds.push_back(load_predictions(f));
  const FusedPrediction fused = ensemble_average(preds);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : preds) {
    const EvaluationReport r = score_report(p.scores, p.labels, static_cast<int>(p.scores.cols()));
    out << "stream " << p.stream_id << " accuracy " << r.accuracy << "\n";
  }
  out << "fused accuracy " << fused.accuracy << "\n";
  if (!out_dir.empty()) {
    const fs::path dir = ensure_dir(out_dir);
    write_manifest(dir, "ensemble", {{"files", files}});
    StreamPrediction fused_pred;
    fused_pred.stream_id = "fused";
    fused_pred.scores = fused.scores;
    fused_pred.labels = fused.labels;
    fused_pred.sample_ids = preds.front().sample_ids;
    save_predictions((dir / "fused.csv").string(), fused_pred);
  }
  return 0;
}

/// Rows are samples; the last column is an integer label. Commas or whitespace separate fields.
void read_labeled_table(const std::string& path, Matrix& samples, std::vector<int>& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open table '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    for (char& ch : line) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream ss(line);
    std::vector<double> values;
    std::string token;
    while (ss >> token) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::logic_error&) {
        throw ParseError(line_number, "non-numeric token '" + token + "'");
      }
    }
    if (values.empty()) continue;
    if (values.size() < 2) throw ParseError(line_number, "need at least one feature and a label");
    if (!rows.empty() && values.size() != rows.front().size()) throw ParseError(line_number, "ragged row");
    const double label = values.back();
    if (label != std::floor(label) || label < 0) throw ParseError(line_number, "label must be a non-negative integer");
    rows.push_back(std::move(values));
  }
  samples.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size() - 1));
  labels.clear();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c + 1 < rows[i].size(); ++c) {
      samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    }
    labels.push_back(static_cast<int>(rows[i].back()));
  }
}

int cmd_hsic_test(const std::string& input, const MaternParams& params, int permutations, std::uint64_t seed,
                  const std::string& out_dir, std::ostream& out) {
  if (input.empty()) throw UsageError("--input PATH is required");
  Matrix samples;
  std::vector<int> labels;
  read_labeled_table(input, samples, labels);
  if (labels.size() < 5) throw std::invalid_argument("hsic-test needs at least 5 samples");
  const PermutationTestResult result = hsic_permutation_test(samples, labels, params, permutations, seed);
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "hsic " << result.hsic << "\n";
  out << "p_value " << result.p_value << "\n";
  if (!out_dir.empty()) {
    write_manifest(ensure_dir(out_dir), "hsic-test",
                   {{"input", input}, {"matern", to_json(params)}, {"permutations", permutations}, {"seed", seed}});
  }
  return 0;
}

int cmd_export_embeddings(const std::string& checkpoint_path, const std::string& data_path, const std::string& out_dir,
                          std::ostream& out) {
  if (checkpoint_path.empty() || data_path.empty()) throw UsageError("--checkpoint and --data are required");
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Dataset data = load_for_checkpoint(ckpt, data_path);
  const fs::path dir = ensure_dir(out_dir);
  write_manifest(dir, "export-embeddings",
                 {{"checkpoint", checkpoint_path}, {"data", data_path}, {"seed", ckpt.header.seed}});

  std::ofstream csv(dir / "embeddings.csv");
  const int dim = ckpt.header.spec.augmented_dim();
  csv << "sample_id,label";
  for (int c = 0; c < dim; ++c) csv << ",zhat_" << c;
  csv << "\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  constexpr std::size_t kChunk = 64;
  const std::span<const MotionSequence> all(data.sequences);
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const auto chunk = all.subspan(start, std::min(kChunk, all.size() - start));
    const BatchOutputs outputs = predict_batch(ckpt.header.spec, ckpt.params, chunk);
    for (Eigen::Index i = 0; i < outputs.z_hat.rows(); ++i) {
      const auto& seq = chunk[static_cast<std::size_t>(i)];
      csv << start + static_cast<std::size_t>(i) << ',' << (seq.label() ? *seq.label() : -1);
      for (Eigen::Index c = 0; c < outputs.z_hat.cols(); ++c) csv << ',' << outputs.z_hat(i, c);
      csv << "\n";
    }
  }
  out << "wrote " << all.size() << " embeddings of dimension " << dim << " to " << (dir / "embeddings.csv").string()
      << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HSIC-regularized dependency-refined GCN for skeleton action recognition", "hsicgcn"};
  app.require_subcommand(1);

  // generate
  SynthesisParams synth;
  int train_per_class = 200;
  int test_per_class = 100;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data";
  auto* generate = app.add_subcommand("generate", "Write a seeded synthetic train/test dataset");
  generate->add_option("--classes", synth.num_classes, "Number of classes");
  generate->add_option("--joints", synth.num_joints, "Joints per skeleton");
  generate->add_option("--frames", synth.frames, "Frames per sequence");
  generate->add_option("--channels", synth.channels, "Coordinate channels");
  generate->add_option("--train-per-class", train_per_class, "Training samples per class");
  generate->add_option("--test-per-class", test_per_class, "Test samples per class");
  generate->add_option("--noise", synth.noise, "Gaussian noise standard deviation");
  generate->add_option("--seed", gen_seed, "Random seed");
  generate->add_option("--out", gen_out, "Output directory");

  // train
  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train base and auxiliary models");
  train->add_option("--train", tf.train_path, "Training dataset file");
  train->add_option("--test", tf.test_path, "Test dataset file (optional)");
  train->add_option("--config", tf.config_path, "JSON config file");
  train->add_option("--out", tf.out_dir, "Output directory");
  train->add_option("--seed", tf.seed, "Random seed");
  train->add_option("--delta", tf.delta, "Gaussian correlation width");
  train->add_option("--modality", tf.modality, "joint|bone");
  train->add_option("--hsic-sign", tf.hsic_sign, "+1|-1")->check(CLI::IsMember({-1, 1}));
  train->add_option("--hsic-weight", tf.hsic_weight, "Weight of the HSIC term");
  train->add_option("--temperature", tf.temperature, "Distillation temperature P");
  train->add_option("--epochs", tf.epochs, "Training epochs");
  train->add_option("--batch-size", tf.batch_size, "Batch size");
  train->add_option("--lr", tf.lr, "Base learning rate");
  train->add_option("--stream-id", tf.stream_id, "Stream id written to predictions.csv");
  train->add_flag("--no-hsic", tf.no_hsic, "Disable the HSIC term");
  train->add_flag("--no-distill", tf.no_distill, "Disable the distillation term");

  // eval
  std::string eval_ckpt, eval_data, eval_out = "eval";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file");
  eval->add_option("--data", eval_data, "Dataset file");
  eval->add_option("--out", eval_out, "Output directory for per-class and prediction CSVs");

  // ensemble
  std::vector<std::string> ens_files;
  std::string ens_out = "ensemble";
  auto* ensemble = app.add_subcommand("ensemble", "Average softmax scores of prediction files");
  ensemble->add_option("files", ens_files, "Prediction CSV files");
  ensemble->add_option("--out", ens_out, "Output directory for fused.csv");

  // hsic-test
  std::string hsic_input, hsic_out = "hsic_test", hsic_order = "3/2";
  MaternParams matern;
  int permutations = 200;
  std::uint64_t hsic_seed = 0;
  auto* hsic_test = app.add_subcommand("hsic-test", "HSIC value and permutation p-value for a labeled table");
  hsic_test->add_option("--input", hsic_input, "Table: rows are samples, last column is the label");
  hsic_test->add_option("--permutations", permutations, "Number of label permutations");
  hsic_test->add_option("--seed", hsic_seed, "Random seed");
  hsic_test->add_option("--matern-order", hsic_order, "1/2, 3/2 or 5/2");
  hsic_test->add_option("--amplitude", matern.amplitude, "Kernel amplitude alpha");
  hsic_test->add_option("--length-scale", matern.length_scale, "Kernel length scale");
  hsic_test->add_option("--out", hsic_out, "Directory for the run manifest");

  // export-embeddings
  std::string exp_ckpt, exp_data, exp_out = "embeddings";
  auto* exporter = app.add_subcommand("export-embeddings", "Write augmented features for external plotting");
  exporter->add_option("--checkpoint", exp_ckpt, "Checkpoint file");
  exporter->add_option("--data", exp_data, "Dataset file");
  exporter->add_option("--out", exp_out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*generate) return cmd_generate(synth, train_per_class, test_per_class, gen_seed, gen_out, out);
    if (*train) return cmd_train(tf, out);
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_out, out);
    if (*ensemble) return cmd_ensemble(ens_files, ens_out, out);
    if (*hsic_test) {
      matern.order = parse_matern_order(hsic_order);
      return cmd_hsic_test(hsic_input, matern, permutations, hsic_seed, hsic_out, out);
    }
    if (*exporter) return cmd_export_embeddings(exp_ckpt, exp_data, exp_out, out);
  } catch (const UsageError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}

}  // namespace hsicgcn
