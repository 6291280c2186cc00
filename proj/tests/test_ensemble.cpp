#include "hsicgcn/ensemble.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace hsicgcn;
using namespace testing_support;

namespace {

StreamPrediction make(const std::string& id, Matrix scores, std::vector<int> labels) {
  StreamPrediction p;
  p.stream_id = id;
  p.scores = std::move(scores);
  p.labels = std::move(labels);
  for (std::size_t i = 0; i < p.labels.size(); ++i) p.sample_ids.push_back(static_cast<int>(i));
  return p;
}

Matrix random_scores(std::mt19937_64& rng, int n, int k) {
  Matrix m = random_matrix(rng, n, k, 0.01, 1.0);
  for (int i = 0; i < n; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

}  // namespace

TEST_CASE("ensemble_average examples") {
  const auto a = make("a", (Matrix(1, 2) << 0.6, 0.4).finished(), {1});
  const auto b = make("b", (Matrix(1, 2) << 0.2, 0.8).finished(), {1});
  const std::vector<StreamPrediction> two{a, b};
  const auto fused = ensemble_average(two);
  CHECK(fused.scores == (Matrix(1, 2) << (0.6 + 0.2) / 2, (0.4 + 0.8) / 2).finished());
  CHECK((fused.scores - (Matrix(1, 2) << 0.4, 0.6).finished()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(fused.predicted == std::vector<int>{1});
  CHECK(fused.accuracy == 1.0);

  const std::vector<StreamPrediction> single{a};
  CHECK(ensemble_average(single).scores == a.scores);
  const std::vector<StreamPrediction> twins{a, make("a2", a.scores, {1})};
  CHECK(ensemble_average(twins).scores == a.scores);

  // Tie goes to the lowest class index.
  const std::vector<StreamPrediction> tie{make("t", (Matrix(1, 2) << 0.5, 0.5).finished(), {1})};
  CHECK(ensemble_average(tie).predicted == std::vector<int>{0});
}

TEST_CASE("ensemble_average errors") {
  const auto a = make("a", Matrix::Constant(2, 2, 0.5), {0, 1});
  const std::vector<StreamPrediction> none;
  CHECK_THROWS(ensemble_average(none));
  const std::vector<StreamPrediction> rows{a, make("b", Matrix::Constant(3, 2, 0.5), {0, 1, 1})};
  CHECK_THROWS_AS(ensemble_average(rows), ShapeError);
  const std::vector<StreamPrediction> cols{a, make("b", Matrix::Constant(2, 4, 0.25), {0, 1})};
  CHECK_THROWS_AS(ensemble_average(cols), ShapeError);
  const std::vector<StreamPrediction> labels{a, make("b", Matrix::Constant(2, 2, 0.5), {1, 1})};
  CHECK_THROWS(ensemble_average(labels));
}

TEST_CASE("ensemble_average properties") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + trial % 7;
    const int k = 2 + trial % 4;
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % k;
    std::vector<StreamPrediction> streams;
    for (int s = 0; s < 4; ++s) streams.push_back(make("s" + std::to_string(s), random_scores(rng, n, k), labels));
    const auto fused = ensemble_average(streams);
    CHECK((fused.scores.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-8);
    CHECK((fused.scores.array() >= 0.0).all());

    std::vector<StreamPrediction> shuffled = streams;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(ensemble_average(shuffled).scores == fused.scores);

    // Scaling every stream by the same constant leaves the argmax alone.
    std::vector<StreamPrediction> scaled = streams;
    for (auto& s : scaled) s.scores *= 3.0;
    CHECK(ensemble_average(scaled).predicted == fused.predicted);
  }
}

TEST_CASE("prediction CSV round trip") {
  std::mt19937_64 rng(4);
  auto p = make("joint_d1", random_scores(rng, 5, 3), {0, 1, 2, 0, 1});
  std::stringstream buf;
  write_predictions_csv(buf, p);
  const std::string text = buf.str();
  CHECK(text.rfind("sample_id,score_0,score_1,score_2,label,stream_id\n", 0) == 0);
  const auto back = read_predictions_csv(buf);
  CHECK(back.stream_id == p.stream_id);
  CHECK(back.scores == p.scores);
  CHECK(back.labels == p.labels);
  CHECK(back.sample_ids == p.sample_ids);

  std::stringstream bad_header("id,a,b\n");
  CHECK_THROWS_AS(read_predictions_csv(bad_header), ParseError);
  std::stringstream bad_row("sample_id,score_0,score_1,label,stream_id\n0,0.5,x,1,s\n");
  CHECK_THROWS_AS(read_predictions_csv(bad_row), ParseError);
  std::stringstream short_row("sample_id,score_0,score_1,label,stream_id\n0,0.5,1,s\n");
  CHECK_THROWS_AS(read_predictions_csv(short_row), ParseError);
}

TEST_CASE("stream specs") {
  const auto specs = four_stream_specs();
  REQUIRE(specs.size() == 4);
  CHECK(specs[0].stream_id() == "joint_d1");
  CHECK(specs[3].stream_id() == "bone_d9");
  StreamSpec named{Modality::bone, 2.0, "custom"};
  CHECK(named.stream_id() == "custom");
}

TEST_CASE("run_stream wiring") {
  SynthesisParams p;
  p.samples_per_class = 5;
  p.frames = 4;
  p.num_joints = 5;
  const auto splits = generate_synthetic_splits(p, 5, 2, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  cfg.base.hidden_channels = {4};
  cfg.auxiliary.hidden_channels = {3};

  // The joint stream is exactly prepare + fit + evaluate.
  const auto joint = run_stream(splits.train, splits.test, {Modality::joint, 1.0, {}}, cfg);
  TrainConfig direct = cfg;
  direct.delta = 1.0;
  const auto fitted = fit(prepare(splits.train, Modality::joint, true), nullptr, direct);
  const auto report = evaluate(fitted.spec, fitted.params, prepare(splits.test, Modality::joint, true));
  CHECK(joint.prediction.scores == report.scores);
  CHECK(joint.accuracy == report.accuracy);
  CHECK(joint.warnings.empty());
  CHECK(joint.fit.spec.base.delta == 1.0);

  const auto bone = run_stream(splits.train, splits.test, {Modality::bone, 9.0, {}}, cfg);
  CHECK(bone.fit.spec.base.delta == 9.0);
  CHECK(bone.prediction.stream_id == "bone_d9");

  // Constant pose: every joint at the same point, so the bone stream is all zero.
  Dataset flat = splits.train;
  for (auto& s : flat.sequences) s = MotionSequence(s.frames(), s.joints(), Matrix::Constant(s.data().rows(), 3, 0.5), s.label());
  const auto degenerate = run_stream(flat, splits.test, {Modality::bone, 1.0, {}}, cfg);
  CHECK(degenerate.warnings.size() == 1);
}
