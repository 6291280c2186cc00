#include "hsicgcn/serialization.hpp"
#include "hsicgcn/training.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace hsicgcn;
using namespace testing_support;

namespace {

ModelSpec tiny_spec() {
  ModelSpec spec;
  spec.in_channels = 3;
  spec.num_classes = 3;
  spec.base.hidden_channels = {4, 3};
  spec.auxiliary.hidden_channels = {3};
  spec.graph = SkeletonGraph::binary_tree(3);
  return spec;
}

ModelParams randomized(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams p = init_params(spec, seed);
  std::mt19937_64 rng(seed + 1000);
  for_each_array(p, [&](const std::string&, Matrix& m) { m = random_matrix(rng, m.rows(), m.cols(), -0.8, 0.8); });
  return p;
}

std::vector<MotionSequence> tiny_batch(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<MotionSequence> batch;
  for (int i = 0; i < 4; ++i) batch.emplace_back(2, 3, random_matrix(rng, 6, 3), i % 3);
  return batch;
}

LossConfig only(bool cls, bool hsic, bool ce, bool distill) {
  LossConfig cfg;
  cfg.terms = {cls, hsic, ce, distill};
  return cfg;
}

Dataset small_dataset(int per_class, std::uint64_t seed, Split split = Split::train) {
  SynthesisParams p;
  p.samples_per_class = per_class;
  p.frames = 6;
  p.num_joints = 5;
  return prepare(generate_synthetic(p, seed, split), Modality::joint, true);
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  cfg.base.hidden_channels = {6};
  cfg.auxiliary.hidden_channels = {4};
  return cfg;
}

}  // namespace

TEST_CASE("gradient check passes for every loss subset") {
  const ModelSpec spec = tiny_spec();
  const auto batch = tiny_batch(1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const ModelParams p = randomized(spec, seed);
    const LossConfig configs[] = {only(true, true, true, true), only(true, false, false, false),
                                  only(false, true, false, false), only(false, false, true, false),
                                  only(false, false, false, true)};
    for (const auto& cfg : configs) {
      const GradientReport r = gradient_check(spec, p, batch, cfg);
      CAPTURE(seed);
      CAPTURE(r.worst);
      CHECK(r.pass);
    }
    LossConfig plus = only(true, true, true, true);
    plus.hsic_sign = 1;
    plus.temperature = 2.0;
    plus.hsic_weight = 0.5;
    CHECK(gradient_check(spec, p, batch, plus).pass);
    LossConfig coupled = plus;
    coupled.detach_teacher = false;
    CHECK(gradient_check(spec, p, batch, coupled).pass);
  }
}

TEST_CASE("plain GCN with cross-entropy only still passes the gradient check") {
  ModelSpec spec = tiny_spec();
  spec.base.use_refinement = false;
  spec.auxiliary.use_refinement = false;
  const ModelParams p = randomized(spec, 4);
  const GradientReport r = gradient_check(spec, p, tiny_batch(2), only(true, false, false, false));
  CHECK(r.pass);
}

TEST_CASE("excluded parameters report zero analytic gradient") {
  const ModelSpec spec = tiny_spec();
  const ModelParams p = randomized(spec, 5);
  const auto batch = tiny_batch(3);
  // With the teacher detached, L_cls alone never reaches the auxiliary model.
  const GradientResult g = compute_gradients(spec, p, batch, only(true, false, false, false));
  for_each_array(g.gradients, [](const std::string& name, const Matrix& m) {
    if (name.rfind("auxiliary", 0) == 0) CHECK(m.isZero());
  });
  // L_CE alone never reaches the base model.
  const GradientResult h = compute_gradients(spec, p, batch, only(false, false, true, false));
  for_each_array(h.gradients, [](const std::string& name, const Matrix& m) {
    if (name.rfind("base", 0) == 0) CHECK(m.isZero());
  });
}

TEST_CASE("zero-weight head matches the analytic softmax gradient") {
  const ModelSpec spec = tiny_spec();
  ModelParams p = randomized(spec, 6);
  p.base.classifier_weight.setZero();
  p.base.classifier_bias.setZero();
  const auto batch = tiny_batch(4);
  const GradientResult g = compute_gradients(spec, p, batch, only(true, false, false, false));
  const BatchOutputs out = predict_batch(spec, p, batch);
  Matrix residual = Matrix::Constant(4, 3, 1.0 / 3);
  for (int i = 0; i < 4; ++i) residual(i, *batch[static_cast<std::size_t>(i)].label()) -= 1.0;
  residual /= 4.0;
  CHECK((g.gradients.base.classifier_bias - residual.colwise().sum()).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((g.gradients.base.classifier_weight - out.z_hat.transpose() * residual).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("constant-feature batch has zero HSIC gradient") {
  const ModelSpec spec = tiny_spec();
  const ModelParams p = randomized(spec, 7);
  std::vector<MotionSequence> batch;
  for (int i = 0; i < 4; ++i) batch.emplace_back(2, 3, Matrix::Constant(6, 3, 0.3), i % 3);
  const GradientResult g = compute_gradients(spec, p, batch, only(false, true, false, false));
  CHECK(g.loss.hsic_term == doctest::Approx(0.0).epsilon(1e-12));
  for_each_array(g.gradients, [](const std::string& name, const Matrix& m) {
    CAPTURE(name);
    CHECK(m.cwiseAbs().maxCoeff() <= 1e-12);
  });
}

TEST_CASE("compute_gradients is deterministic and rejects non-finite losses") {
  const ModelSpec spec = tiny_spec();
  const ModelParams p = randomized(spec, 8);
  const auto batch = tiny_batch(5);
  const auto a = compute_gradients(spec, p, batch, LossConfig{});
  const auto b = compute_gradients(spec, p, batch, LossConfig{});
  for_each_array_pair(a.gradients, b.gradients, [](const std::string&, const Matrix& x, const Matrix& y) {
    CHECK(x == y);
  });
  ModelParams bad = p;
  bad.base.classifier_bias(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(compute_gradients(spec, bad, batch, LossConfig{}), NonFiniteError);
}

TEST_CASE("sgd_nesterov_step examples") {
  const ModelSpec spec = tiny_spec();
  const ModelParams p = randomized(spec, 9);

  ModelParams q = p;
  ModelParams v = zeros_like(p);
  sgd_nesterov_step(q, p, v, 1.0, 0.0);
  for_each_array(q, [](const std::string&, const Matrix& m) { CHECK(m.isZero()); });

  ModelParams r = p;
  ModelParams v2 = zeros_like(p);
  sgd_nesterov_step(r, zeros_like(p), v2, 0.1, 0.9);
  for_each_array_pair(r, p, [](const std::string&, const Matrix& x, const Matrix& y) { CHECK(x == y); });

  // f(x) = x^2 / 2 on one coordinate: two hand-iterated steps.
  ModelParams s = zeros_like(p);
  s.base.classifier_bias(0, 0) = 2.0;
  ModelParams vel = zeros_like(p);
  double x = 2.0, u = 0.0;
  const double lr = 0.1, mu = 0.9;
  for (int step = 0; step < 2; ++step) {
    ModelParams g = zeros_like(p);
    g.base.classifier_bias(0, 0) = s.base.classifier_bias(0, 0);
    sgd_nesterov_step(s, g, vel, lr, mu);
    const double grad = x;
    u = mu * u + grad;
    x -= lr * (grad + mu * u);
    CHECK(s.base.classifier_bias(0, 0) == x);
  }
  CHECK(x == doctest::Approx(2.0 - 0.1 * 2.0 * 1.9 - 0.1 * (1.62 + 0.9 * (0.9 * 2.0 + 1.62))));

  ModelParams wrong = zeros_like(p);
  wrong.base.blocks[0].weight.resize(1, 1);
  ModelParams v3 = zeros_like(p);
  CHECK_THROWS_AS(sgd_nesterov_step(q, wrong, v3, 0.1, 0.9), ShapeError);
}

TEST_CASE("clip_gradient_norm") {
  const ModelSpec spec = tiny_spec();
  ModelParams g = randomized(spec, 10);
  double sq = 0;
  for_each_array(g, [&](const std::string&, const Matrix& m) { sq += m.squaredNorm(); });
  const ModelParams original = g;
  CHECK(clip_gradient_norm(g, 0.0) == doctest::Approx(std::sqrt(sq)));
  for_each_array_pair(g, original, [](const std::string&, const Matrix& x, const Matrix& y) { CHECK(x == y); });
  clip_gradient_norm(g, 0.5);
  double after = 0;
  for_each_array(g, [&](const std::string&, const Matrix& m) { after += m.squaredNorm(); });
  CHECK(std::sqrt(after) == doctest::Approx(0.5));
  ModelParams small = original;
  clip_gradient_norm(small, 1e9);
  for_each_array_pair(small, original, [](const std::string&, const Matrix& x, const Matrix& y) { CHECK(x == y); });
}

TEST_CASE("lr_at examples") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(lr_at(cfg.warmup_epochs, cfg) == cfg.base_lr);
  CHECK(lr_at(cfg.warmup_epochs + 50, cfg) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK_THROWS_AS(lr_at(-1, cfg), std::out_of_range);
  CHECK_THROWS_AS(lr_at(cfg.epochs, cfg), std::out_of_range);
  for (int e = cfg.warmup_epochs + 1; e < cfg.epochs; ++e) {
    const double ratio = lr_at(e, cfg) / lr_at(e - 1, cfg);
    if ((e - cfg.warmup_epochs) % cfg.decay_every == 0) {
      CHECK(ratio == doctest::Approx(cfg.lr_decay).epsilon(1e-12));
    } else {
      CHECK(ratio == 1.0);
    }
  }
}

TEST_CASE("TrainConfig validation") {
  TrainConfig cfg;
  cfg.validate();
  auto broken = [&](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS(c.validate());
  };
  broken([](TrainConfig& c) { c.base_lr = 0; });
  broken([](TrainConfig& c) { c.warmup_epochs = c.epochs; });
  broken([](TrainConfig& c) { c.batch_size = 0; });
  broken([](TrainConfig& c) { c.temperature = 0; });
  broken([](TrainConfig& c) { c.delta = -1; });
  broken([](TrainConfig& c) { c.hsic_sign = 2; });
  broken([](TrainConfig& c) { c.momentum = 1.0; });
  broken([](TrainConfig& c) { c.lr_decay = 0.0; });
}

TEST_CASE("fit contracts") {
  const Dataset train = small_dataset(6, 1);
  const Dataset test = small_dataset(3, 2, Split::test);
  TrainConfig cfg = quick_config();

  TrainConfig zero = cfg;
  zero.epochs = 0;
  zero.warmup_epochs = 0;
  const FitResult untouched = fit(train, nullptr, zero);
  const ModelParams initial = init_params(untouched.spec, zero.seed);
  for_each_array_pair(untouched.params, initial, [](const std::string&, const Matrix& x, const Matrix& y) {
    CHECK(x == y);
  });
  CHECK(untouched.optimizer_steps == 0);
  CHECK(untouched.metrics.empty());

  const FitResult a = fit(train, &test, cfg);
  CHECK(a.optimizer_steps == 3 * ((18 + 7) / 8));
  REQUIRE(a.metrics.size() == 3);
  for (const auto& m : a.metrics) {
    CHECK(m.test_accuracy.has_value());
    CHECK(m.train_accuracy >= 0.0);
    CHECK(m.train_accuracy <= 1.0);
    CHECK(m.loss.total == doctest::Approx(m.loss.recombined()).epsilon(1e-12));
  }
  const FitResult b = fit(train, &test, cfg);
  std::ostringstream ca, cb;
  write_metrics_csv(ca, a.metrics, false);
  write_metrics_csv(cb, b.metrics, false);
  CHECK(ca.str() == cb.str());

  Dataset empty = train;
  empty.sequences.clear();
  CHECK_THROWS(fit(empty, nullptr, cfg));
  Dataset one_class = train;
  one_class.num_classes = 1;
  for (auto& s : one_class.sequences) s.set_label(0);
  CHECK_THROWS(fit(one_class, nullptr, cfg));
}

TEST_CASE("fit reports divergence with the last good state") {
  const Dataset train = small_dataset(4, 3);
  TrainConfig cfg = quick_config();
  cfg.base_lr = 1e200;
  cfg.grad_clip_norm = 0.0;
  try {
    fit(train, nullptr, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    bool finite = true;
    for_each_array(e.last_good().params, [&](const std::string&, const Matrix& m) { finite = finite && m.allFinite(); });
    CHECK(finite);
  }
}

TEST_CASE("evaluate examples") {
  Matrix perfect(4, 2);
  perfect << 0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7;
  const std::vector<int> y{0, 1, 0, 1};
  const auto r = score_report(perfect, y, 2);
  CHECK(r.accuracy == 1.0);
  CHECK(r.per_class_accuracy == std::vector<double>{1.0, 1.0});

  // Handcrafted logits table, counted by hand: rows 0 and 3 correct, row 1 wrong, row 2 ties -> class 0 (wrong).
  Matrix table(4, 3);
  table << 2, 1, 0, 0, 0, 5, 1, 1, 0, -1, -2, 3;
  const std::vector<int> labels{0, 1, 1, 2};
  const auto h = score_report(table, labels, 3);
  CHECK(h.accuracy == 0.5);
  CHECK(h.predictions == std::vector<int>{0, 2, 0, 2});
  CHECK(h.per_class_count == std::vector<int>{1, 2, 1});
  CHECK(h.per_class_accuracy == std::vector<double>{1.0, 0.0, 1.0});

  // Constant classifier on balanced data.
  const Matrix constant = Matrix::Constant(9, 3, 1.0 / 3);
  const std::vector<int> balanced{0, 1, 2, 0, 1, 2, 0, 1, 2};
  CHECK(score_report(constant, balanced, 3).accuracy == doctest::Approx(1.0 / 3));
  CHECK_THROWS(score_report(Matrix(0, 3), std::vector<int>{}, 3));

  const Dataset ds = small_dataset(3, 4);
  const ModelSpec spec = quick_config().model_spec(ds);
  const ModelParams p = init_params(spec, 1);
  const auto e1 = evaluate(spec, p, ds);
  const auto e2 = evaluate(spec, p, ds);
  CHECK(e1.scores == e2.scores);
  CHECK((e1.scores.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("metrics CSV format") {
  MetricsRecord m;
  m.epoch = 2;
  m.loss.l_cls = 0.5;
  m.loss.total = 0.25;
  m.train_accuracy = 1.0;
  m.learning_rate = 0.1;
  m.wall_seconds = 3.5;
  std::vector<MetricsRecord> rows{m};
  std::ostringstream with, without;
  write_metrics_csv(with, rows);
  write_metrics_csv(without, rows, false);
  CHECK(with.str() == "epoch,l_cls,hsic,l_ce,l_d,total,train_acc,test_acc,lr,wall_seconds\n2,0.5,0,0,0,0.25,1,,0.10000000000000001,3.5\n");
  CHECK(without.str() == "epoch,l_cls,hsic,l_ce,l_d,total,train_acc,test_acc,lr\n2,0.5,0,0,0,0.25,1,,0.10000000000000001\n");
}

TEST_CASE("config JSON round trip and unknown keys") {
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.delta = 9.0;
  cfg.modality = Modality::bone;
  cfg.matern.order = MaternOrder::five_halves;
  cfg.base.hidden_channels = {8, 8, 4};
  TrainConfig back;
  apply_config_json(to_json(cfg), back);
  CHECK(to_json(back) == to_json(cfg));
  CHECK_THROWS(apply_config_json(nlohmann::json{{"epoch", 3}}, back));
  CHECK_THROWS(apply_config_json(nlohmann::json{{"matern", {{"order", "7/2"}}}}, back));
}
