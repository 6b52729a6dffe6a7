#pragma once

// Versioned binary checkpoint: named f64 parameter arrays, optimizer
// moments, RNG states, and the effective config text, so a run can be
// resumed or re-evaluated bit-exactly.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmamba/errors.hpp"

namespace dmamba {

using NamedArrays = std::vector<std::pair<std::string, std::vector<double>>>;

struct Checkpoint {
  std::uint8_t version = 1;
  std::string config_text;
  std::string config_hash_hex;
  int epochs_done = 0;
  long adam_t = 0;
  double best_val = 0;
  int best_epoch = -1;
  int epochs_since_improve = 0;
  NamedArrays params;
  NamedArrays adam_m;
  NamedArrays adam_v;
  NamedArrays best_params;
  std::string shuffle_rng_state;
  std::string dropout_rng_state;
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
// Validates the magic and the format-version byte.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dmamba
