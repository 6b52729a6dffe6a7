#pragma once

// Run reports: one row per completed run, emitted as CSV and JSON lines.

#include <cstdint>
#include <string>
#include <vector>

namespace dmamba {

struct RunReport {
  std::string dataset;
  std::string variant;
  std::string loss;
  int seq_len = 0;
  int pred_len = 0;
  double alpha = 0;
  std::uint64_t seed = 0;
  int epochs_run = 0;
  int best_epoch = -1;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  double test_mse = 0;
  double test_mae = 0;
  long param_count = 0;
  double wall_clock_sec = 0;
  double epoch_sec_mean = 0;
  double inference_batch_ms = 0;
  std::string config_hash;
  std::string status = "ok";  // error text for isolated per-variant failures
};

// Stable column schema (golden-tested): name:type pairs joined by commas.
const std::vector<std::pair<std::string, std::string>>& report_columns();
std::string report_csv_header();
std::string report_csv_row(const RunReport& r);
std::string report_json_row(const RunReport& r);

// Appends rows, creating the file (CSV: with header) on first write.
void append_report_csv(const std::string& path, const RunReport& r);
void append_report_jsonl(const std::string& path, const RunReport& r);

}  // namespace dmamba
