#include "hsicgcn/serialization.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace hsicgcn {

using nlohmann::json;

json to_json(const EncoderSpec& spec) {
  return {{"hidden_channels", spec.hidden_channels},
          {"temporal_pool", to_string(spec.temporal_pool)},
          {"delta", spec.delta},
          {"use_refinement", spec.use_refinement},
          {"activation", spec.activation == Activation::relu ? "relu" : "identity"}};
}

json to_json(const MaternParams& params) {
  return {{"order", to_string(params.order)}, {"amplitude", params.amplitude}, {"length_scale", params.length_scale}};
}

json to_json(const ModelSpec& spec) {
  return {{"in_channels", spec.in_channels},       {"num_classes", spec.num_classes},
          {"base", to_json(spec.base)},           {"auxiliary", to_json(spec.auxiliary)},
          {"graph_parents", spec.graph.parents()}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"base_lr", c.base_lr},
          {"lr_decay", c.lr_decay},
          {"decay_every", c.decay_every},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"grad_clip_norm", c.grad_clip_norm},
          {"batch_size", c.batch_size},
          {"temperature", c.temperature},
          {"delta", c.delta},
          {"hsic_sign", c.hsic_sign},
          {"hsic_weight", c.hsic_weight},
          {"use_hsic", c.use_hsic},
          {"use_distill", c.use_distill},
          {"detach_teacher", c.detach_teacher},
          {"seed", c.seed},
          {"matern", to_json(c.matern)},
          {"base", to_json(c.base)},
          {"auxiliary", to_json(c.auxiliary)},
          {"modality", to_string(c.modality)},
          {"center", c.center}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

void apply_encoder(const json& j, EncoderSpec& spec, const std::string& where) {
  reject_unknown(j, {"hidden_channels", "temporal_pool", "delta", "use_refinement", "activation"}, where);
  if (j.contains("hidden_channels")) spec.hidden_channels = j.at("hidden_channels").get<std::vector<int>>();
  if (j.contains("temporal_pool")) spec.temporal_pool = parse_temporal_pool(j.at("temporal_pool").get<std::string>());
  if (j.contains("delta")) spec.delta = j.at("delta").get<double>();
  if (j.contains("use_refinement")) spec.use_refinement = j.at("use_refinement").get<bool>();
  if (j.contains("activation")) {
    const auto name = j.at("activation").get<std::string>();
    if (name != "relu" && name != "identity") throw std::invalid_argument(where + ": unknown activation '" + name + "'");
    spec.activation = name == "relu" ? Activation::relu : Activation::identity;
  }
}

void apply_matern(const json& j, MaternParams& params) {
  reject_unknown(j, {"order", "amplitude", "length_scale"}, "matern");
  if (j.contains("order")) params.order = parse_matern_order(j.at("order").get<std::string>());
  if (j.contains("amplitude")) params.amplitude = j.at("amplitude").get<double>();
  if (j.contains("length_scale")) params.length_scale = j.at("length_scale").get<double>();
}

}  // namespace

ModelSpec model_spec_from_json(const json& j) {
  reject_unknown(j, {"in_channels", "num_classes", "base", "auxiliary", "graph_parents"}, "model spec");
  ModelSpec spec;
  spec.in_channels = j.at("in_channels").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  apply_encoder(j.at("base"), spec.base, "base");
  apply_encoder(j.at("auxiliary"), spec.auxiliary, "auxiliary");
  spec.graph = SkeletonGraph::from_parents(j.at("graph_parents").get<std::vector<int>>());
  spec.validate();
  return spec;
}

void apply_config_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"epochs", "warmup_epochs", "base_lr", "lr_decay", "decay_every", "momentum", "weight_decay", "grad_clip_norm", "batch_size",
                  "temperature", "delta", "hsic_sign", "hsic_weight", "use_hsic", "use_distill", "detach_teacher",
                  "seed", "matern", "base", "auxiliary", "modality", "center"},
                 "config");
  auto set = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  set("epochs", c.epochs);
  set("warmup_epochs", c.warmup_epochs);
  set("base_lr", c.base_lr);
  set("lr_decay", c.lr_decay);
  set("decay_every", c.decay_every);
  set("momentum", c.momentum);
  set("weight_decay", c.weight_decay);
  set("grad_clip_norm", c.grad_clip_norm);
  set("batch_size", c.batch_size);
  set("temperature", c.temperature);
  set("delta", c.delta);
  set("hsic_sign", c.hsic_sign);
  set("hsic_weight", c.hsic_weight);
  set("use_hsic", c.use_hsic);
  set("use_distill", c.use_distill);
  set("detach_teacher", c.detach_teacher);
  set("seed", c.seed);
  set("center", c.center);
  if (j.contains("matern")) apply_matern(j.at("matern"), c.matern);
  if (j.contains("base")) apply_encoder(j.at("base"), c.base, "base");
  if (j.contains("auxiliary")) apply_encoder(j.at("auxiliary"), c.auxiliary, "auxiliary");
  if (j.contains("modality")) c.modality = parse_modality(j.at("modality").get<std::string>());
}

TrainConfig load_config_file(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  apply_config_json(j, base);
  return base;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "hsicgcn-checkpoint 1";

std::string next_line(std::istream& in, int& line_number, const char* what) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(line_number + 1, std::string("unexpected end of checkpoint, expected ") + what);
  }
  ++line_number;
  return line;
}

}  // namespace

void write_checkpoint(std::ostream& out, const CheckpointHeader& header, const ModelParams& params) {
  check_consistent(header.spec, params);
  json spec = to_json(header.spec);
  out << kCheckpointMagic << "\n";
  out << "seed " << header.seed << "\n";
  out << "epoch " << header.epoch << "\n";
  out << "modality " << to_string(header.modality) << "\n";
  out << "center " << (header.center ? 1 : 0) << "\n";
  out << "spec " << spec.dump() << "\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for_each_array(params, [&](const std::string& name, const Matrix& m) {
    out << "array " << name << ' ' << m.rows() << ' ' << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) out << (k ? " " : "") << m(i, k);
      out << "\n";
    }
  });
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  int line_number = 0;
  if (next_line(in, line_number, "header") != kCheckpointMagic) throw ParseError(1, "not a hsicgcn checkpoint");

  auto keyed = [&](const std::string& key) {
    const std::string line = next_line(in, line_number, key.c_str());
    if (line.rfind(key + " ", 0) != 0) throw ParseError(line_number, "expected '" + key + "' record");
    return line.substr(key.size() + 1);
  };

  Checkpoint ckpt;
  try {
    ckpt.header.seed = std::stoull(keyed("seed"));
    ckpt.header.epoch = std::stoi(keyed("epoch"));
    ckpt.header.modality = parse_modality(keyed("modality"));
    ckpt.header.center = keyed("center") == "1";
    ckpt.header.spec = model_spec_from_json(json::parse(keyed("spec")));
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(line_number, e.what());
  }

  ckpt.params = init_params(ckpt.header.spec, 0);
  for_each_array(ckpt.params, [&](const std::string& name, Matrix& m) {
    std::istringstream header(next_line(in, line_number, "array record"));
    std::string tag, stored_name;
    Eigen::Index rows = -1, cols = -1;
    header >> tag >> stored_name >> rows >> cols;
    if (tag != "array" || stored_name != name || rows != m.rows() || cols != m.cols()) {
      throw ParseError(line_number, "expected array " + name + " " + std::to_string(m.rows()) + "x" +
                                        std::to_string(m.cols()));
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      std::istringstream row(next_line(in, line_number, "array row"));
      for (Eigen::Index k = 0; k < cols; ++k) {
        if (!(row >> m(i, k)) || !std::isfinite(m(i, k))) throw ParseError(line_number, "bad value in " + name);
      }
    }
  });
  if (next_line(in, line_number, "end marker") != "end") throw ParseError(line_number, "expected 'end'");
  return ckpt;
}

void save_checkpoint(const std::string& path, const CheckpointHeader& header, const ModelParams& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(out, header, params);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace hsicgcn
