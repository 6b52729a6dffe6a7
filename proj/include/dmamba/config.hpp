#pragma once

// Flat key-value experiment configuration with lossless text round-trips and
// a machine-independent hash.

#include <cstdint>
#include <string>

#include "dmamba/model.hpp"

namespace dmamba {

struct TrainConfig {
  ModelConfig model;

  double lr = 1e-4;
  int batch_size = 32;
  int max_epochs = 10;
  int patience = 3;
  std::uint64_t seed = 2024;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;

  std::string data_path;
  double split_train = 0.0;  // 0/0/0 means pick defaults from dataset name
  double split_val = 0.0;
  double split_test = 0.0;
  int stride = 1;
  int max_rows = 0;
  bool has_date = true;
  std::string out_dir = "out";
};

// Canonical "key = value" text, one key per line, full double precision.
std::string serialize_config(const TrainConfig& cfg);
// Accepts the serialize_config format plus comments (#) and blank lines.
// Unknown keys or malformed values raise ConfigError.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);

// FNV-1a over the semantic fields (dataset name rather than path, output
// directory excluded), hex-encoded; stable across machines.
std::string config_hash(const TrainConfig& cfg);

// Range checks; throws ConfigError.
void validate_config(const TrainConfig& cfg);

}  // namespace dmamba
