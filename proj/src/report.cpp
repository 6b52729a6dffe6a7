#include "dmamba/report.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dmamba/errors.hpp"

namespace dmamba {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_losses(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ';';
    os << fmt(v[i]);
  }
  return os.str();
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& report_columns() {
  static const std::vector<std::pair<std::string, std::string>> cols{
      {"dataset", "string"},
      {"variant", "string"},
      {"loss", "string"},
      {"seq_len", "int"},
      {"pred_len", "int"},
      {"alpha", "float"},
      {"seed", "int"},
      {"epochs_run", "int"},
      {"best_epoch", "int"},
      {"train_loss", "float_list"},
      {"val_loss", "float_list"},
      {"test_mse", "float"},
      {"test_mae", "float"},
      {"param_count", "int"},
      {"wall_clock_sec", "float"},
      {"epoch_sec_mean", "float"},
      {"inference_batch_ms", "float"},
      {"config_hash", "string"},
      {"status", "string"},
  };
  return cols;
}

std::string report_csv_header() {
  std::ostringstream os;
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) os << ',';
    os << cols[i].first;
  }
  return os.str();
}

std::string report_csv_row(const RunReport& r) {
  std::ostringstream os;
  os << r.dataset << ',' << r.variant << ',' << r.loss << ',' << r.seq_len
     << ',' << r.pred_len << ',' << fmt(r.alpha) << ',' << r.seed << ','
     << r.epochs_run << ',' << r.best_epoch << ',' << join_losses(r.train_loss)
     << ',' << join_losses(r.val_loss) << ',' << fmt(r.test_mse) << ','
     << fmt(r.test_mae) << ',' << r.param_count << ',' << fmt(r.wall_clock_sec)
     << ',' << fmt(r.epoch_sec_mean) << ',' << fmt(r.inference_batch_ms) << ','
     << r.config_hash << ',' << r.status;
  return os.str();
}

std::string report_json_row(const RunReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["variant"] = r.variant;
  j["loss"] = r.loss;
  j["seq_len"] = r.seq_len;
  j["pred_len"] = r.pred_len;
  j["alpha"] = r.alpha;
  j["seed"] = r.seed;
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["test_mse"] = r.test_mse;
  j["test_mae"] = r.test_mae;
  j["param_count"] = r.param_count;
  j["wall_clock_sec"] = r.wall_clock_sec;
  j["epoch_sec_mean"] = r.epoch_sec_mean;
  j["inference_batch_ms"] = r.inference_batch_ms;
  j["config_hash"] = r.config_hash;
  j["status"] = r.status;
  return j.dump();
}

void append_report_csv(const std::string& path, const RunReport& r) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw DataError("report: cannot write '" + path + "'");
  if (fresh) os << report_csv_header() << '\n';
  os << report_csv_row(r) << '\n';
}

void append_report_jsonl(const std::string& path, const RunReport& r) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw DataError("report: cannot write '" + path + "'");
  os << report_json_row(r) << '\n';
}

}  // namespace dmamba
