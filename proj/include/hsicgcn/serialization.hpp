#pragma once

#include "hsicgcn/model.hpp"
#include "hsicgcn/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <string>

namespace hsicgcn {

nlohmann::json to_json(const EncoderSpec& spec);
nlohmann::json to_json(const ModelSpec& spec);
nlohmann::json to_json(const MaternParams& params);
nlohmann::json to_json(const TrainConfig& config);

ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Overlays the keys present in `j` onto `config`. Unknown keys throw.
void apply_config_json(const nlohmann::json& j, TrainConfig& config);
TrainConfig load_config_file(const std::string& path, TrainConfig base = {});

/// Everything needed to rebuild the input pipeline and model at load time.
struct CheckpointHeader {
  ModelSpec spec;
  std::uint64_t seed = 0;
  int epoch = 0;
  Modality modality = Modality::joint;
  bool center = true;
};

struct Checkpoint {
  CheckpointHeader header;
  ModelParams params;
};

/// Text container: magic line, seed, epoch, one-line JSON spec echo, then
/// `array <name> <rows> <cols>` records with row-major values in declaration order.
void write_checkpoint(std::ostream& out, const CheckpointHeader& header, const ModelParams& params);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const CheckpointHeader& header, const ModelParams& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hsicgcn
