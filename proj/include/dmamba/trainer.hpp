#pragma once

// Training loop, evaluation, and the ablation / smoothing-factor sweep
// drivers. Every run is fully determined by (seed, config, data).

#include <string>
#include <vector>

#include "dmamba/checkpoint.hpp"
#include "dmamba/config.hpp"
#include "dmamba/data.hpp"
#include "dmamba/report.hpp"

namespace dmamba {

// Trains with validation-based early stopping, restores the best-validation
// weights, evaluates test MSE/MAE, and writes report.csv, report.jsonl,
// checkpoint.bin and forecast_sample.csv under cfg.out_dir.
// resume_path continues a previous run from its per-epoch checkpoint.
RunReport train_run(const TrainConfig& cfg, const DatasetBundle& data,
                    const std::string& resume_path = std::string(),
                    bool quiet = false);

// Rebuilds the model recorded in a checkpoint and evaluates it on `data`.
RunReport evaluate_checkpoint(const std::string& checkpoint_path,
                              const DatasetBundle& data,
                              const std::string& out_dir, bool quiet = false);

// All five stream wirings, identical seeds and budgets. A failing variant is
// reported in its row's status and does not abort the siblings.
std::vector<RunReport> run_ablation(const TrainConfig& cfg,
                                    const DatasetBundle& data,
                                    bool quiet = false);

std::vector<RunReport> run_alpha_sweep(const TrainConfig& cfg,
                                       const DatasetBundle& data,
                                       const std::vector<double>& alphas,
                                       bool quiet = false);

std::string format_ablation_table(const std::vector<RunReport>& rows);
std::string format_sweep_table(const std::vector<RunReport>& rows);

}  // namespace dmamba
