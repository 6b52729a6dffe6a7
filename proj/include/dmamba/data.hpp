#pragma once

// ETT-style multivariate CSV loading, train-statistics standardization, and
// sliding-window extraction.

#include <string>
#include <vector>

#include "dmamba/errors.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

struct RawSeries {
  std::vector<std::string> timestamps;    // empty when no date column
  std::vector<std::string> column_names;  // D value columns
  std::vector<double> values;             // rows x cols, row-major
  int rows = 0;
  int cols = 0;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

// UTF-8 CSV with a header row; when has_date_column, the first column is the
// timestamp and must be strictly increasing. Rejects ragged rows and
// non-finite cells with the offending location.
RawSeries load_csv(const std::string& path, bool has_date_column);

struct Scaler {
  std::vector<double> mean;
  std::vector<double> stdev;  // population std + 1e-8 guard

  double scale(double v, int c) const { return (v - mean[c]) / stdev[c]; }
  double unscale(double v, int c) const { return v * stdev[c] + mean[c]; }
};

struct SplitResult {
  RawSeries train, val, test;
  Scaler scaler;
};

// Chronological split; scaler fitted on the train rows only, then applied to
// every split. Errors if any train column has near-zero variance.
SplitResult split_and_standardize(const RawSeries& s, double r_train,
                                  double r_val, double r_test);

struct WindowedDataset {
  int seq_len = 0, pred_len = 0, n_vars = 0, n_windows = 0, stride = 1;
  std::vector<double> inputs;   // n_windows x L x D
  std::vector<double> targets;  // n_windows x T x D

  Tensor input_batch(const std::vector<int>& idx) const;   // (B, L, D)
  Tensor target_batch(const std::vector<int>& idx) const;  // (B, T, D)
};

// N = floor((rows - L - T) / stride) + 1 aligned pairs; targets[i] starts
// exactly where inputs[i] ends.
WindowedDataset make_windows(const RawSeries& s, int L, int T, int stride);

struct DatasetBundle {
  std::string name;
  int n_vars = 0;
  WindowedDataset train, val, test;
  Scaler scaler;
};

// max_rows > 0 truncates the raw series before splitting.
DatasetBundle load_dataset(const std::string& path, int L, int T, double r1,
                           double r2, double r3, int stride, bool has_date,
                           int max_rows);

std::string dataset_name_from_path(const std::string& path);

// 0.6/0.2/0.2 for ETT-prefixed datasets, 0.7/0.1/0.2 otherwise.
void default_split_ratios(const std::string& name, double& r1, double& r2,
                          double& r3);

}  // namespace dmamba
