#include "dmamba/data.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dmamba {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(',', pos);
    if (next == std::string::npos) {
      cells.push_back(line.substr(pos));
      break;
    }
    cells.push_back(line.substr(pos, next - pos));
    pos = next + 1;
  }
  return cells;
}

bool parse_f64(const std::string& cell, double& out) {
  const char* b = cell.data();
  const char* e = b + cell.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
  if (b == e) return false;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace

RawSeries load_csv(const std::string& path, bool has_date_column) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_line(line);
  const int ncells = static_cast<int>(header.size());
  const int first_value_col = has_date_column ? 1 : 0;
  if (ncells <= first_value_col)
    throw DataError(path + ": header has no value columns");

  RawSeries s;
  s.cols = ncells - first_value_col;
  s.column_names.assign(header.begin() + first_value_col, header.end());
  for (auto& n : s.column_names) {
    while (!n.empty() && (n.back() == '\r' || n.back() == ' ')) n.pop_back();
  }

  int row = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (static_cast<int>(cells.size()) != ncells) {
      throw DataError(path + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(ncells));
    }
    if (has_date_column) {
      if (!s.timestamps.empty() && cells[0] <= s.timestamps.back()) {
        throw DataError(path + ": timestamps not strictly increasing at row " +
                        std::to_string(row) + " ('" + cells[0] + "')");
      }
      s.timestamps.push_back(cells[0]);
    }
    for (int c = 0; c < s.cols; ++c) {
      double v;
      if (!parse_f64(cells[first_value_col + c], v) || !std::isfinite(v)) {
        throw DataError(path + ": invalid numeric value '" +
                        cells[first_value_col + c] + "' at row " +
                        std::to_string(row) + ", column '" + s.column_names[c] +
                        "'");
      }
      s.values.push_back(v);
    }
    ++s.rows;
  }
  if (s.rows == 0) throw DataError(path + ": no data rows");
  return s;
}

SplitResult split_and_standardize(const RawSeries& s, double r_train,
                                  double r_val, double r_test) {
  if (r_train <= 0 || r_val <= 0 || r_test <= 0)
    throw ConfigError("split ratios must be positive");
  if (std::fabs(r_train + r_val + r_test - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");
  const int n_train = static_cast<int>(std::floor(s.rows * r_train));
  const int n_val = static_cast<int>(std::floor(s.rows * r_val));
  const int n_test = s.rows - n_train - n_val;
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw DataError("series too short for the requested split ratios");

  Scaler sc;
  sc.mean.resize(s.cols);
  sc.stdev.resize(s.cols);
  for (int c = 0; c < s.cols; ++c) {
    double m = 0;
    for (int r = 0; r < n_train; ++r) m += s.at(r, c);
    m /= n_train;
    double var = 0;
    for (int r = 0; r < n_train; ++r) {
      double d = s.at(r, c) - m;
      var += d * d;
    }
    var /= n_train;  // population variance
    double sd = std::sqrt(var);
    if (sd < 1e-12) {
      throw DataError("column '" + s.column_names[c] +
                      "' has near-zero variance in the train split");
    }
    sc.mean[c] = m;
    sc.stdev[c] = sd + 1e-8;
  }

  auto cut = [&](int begin, int count) {
    RawSeries out;
    out.cols = s.cols;
    out.rows = count;
    out.column_names = s.column_names;
    if (!s.timestamps.empty())
      out.timestamps.assign(s.timestamps.begin() + begin,
                            s.timestamps.begin() + begin + count);
    out.values.reserve(static_cast<std::size_t>(count) * s.cols);
    for (int r = begin; r < begin + count; ++r)
      for (int c = 0; c < s.cols; ++c)
        out.values.push_back(sc.scale(s.at(r, c), c));
    return out;
  };

  SplitResult res;
  res.train = cut(0, n_train);
  res.val = cut(n_train, n_val);
  res.test = cut(n_train + n_val, n_test);
  res.scaler = std::move(sc);
  return res;
}

WindowedDataset make_windows(const RawSeries& s, int L, int T, int stride) {
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  if (L < 1 || T < 1) throw ConfigError("seq-len and pred-len must be >= 1");
  if (s.rows < L + T) {
    throw DataError("series too short: " + std::to_string(s.rows) +
                    " rows, need at least " + std::to_string(L + T));
  }
  WindowedDataset d;
  d.seq_len = L;
  d.pred_len = T;
  d.n_vars = s.cols;
  d.stride = stride;
  d.n_windows = (s.rows - L - T) / stride + 1;
  d.inputs.reserve(static_cast<std::size_t>(d.n_windows) * L * s.cols);
  d.targets.reserve(static_cast<std::size_t>(d.n_windows) * T * s.cols);
  for (int w = 0; w < d.n_windows; ++w) {
    const int start = w * stride;
    for (int r = start; r < start + L; ++r)
      for (int c = 0; c < s.cols; ++c) d.inputs.push_back(s.at(r, c));
    for (int r = start + L; r < start + L + T; ++r)
      for (int c = 0; c < s.cols; ++c) d.targets.push_back(s.at(r, c));
  }
  return d;
}

Tensor WindowedDataset::input_batch(const std::vector<int>& idx) const {
  const std::size_t win = static_cast<std::size_t>(seq_len) * n_vars;
  std::vector<double> buf;
  buf.reserve(idx.size() * win);
  for (int i : idx) {
    const double* src = inputs.data() + static_cast<std::size_t>(i) * win;
    buf.insert(buf.end(), src, src + win);
  }
  return Tensor({static_cast<int>(idx.size()), seq_len, n_vars}, std::move(buf));
}

Tensor WindowedDataset::target_batch(const std::vector<int>& idx) const {
  const std::size_t win = static_cast<std::size_t>(pred_len) * n_vars;
  std::vector<double> buf;
  buf.reserve(idx.size() * win);
  for (int i : idx) {
    const double* src = targets.data() + static_cast<std::size_t>(i) * win;
    buf.insert(buf.end(), src, src + win);
  }
  return Tensor({static_cast<int>(idx.size()), pred_len, n_vars}, std::move(buf));
}

DatasetBundle load_dataset(const std::string& path, int L, int T, double r1,
                           double r2, double r3, int stride, bool has_date,
                           int max_rows) {
  RawSeries raw = load_csv(path, has_date);
  if (max_rows > 0 && raw.rows > max_rows) {
    raw.rows = max_rows;
    raw.values.resize(static_cast<std::size_t>(max_rows) * raw.cols);
    if (!raw.timestamps.empty()) raw.timestamps.resize(max_rows);
  }
  SplitResult sp = split_and_standardize(raw, r1, r2, r3);
  DatasetBundle b;
  b.name = dataset_name_from_path(path);
  b.n_vars = raw.cols;
  b.train = make_windows(sp.train, L, T, stride);
  b.val = make_windows(sp.val, L, T, stride);
  b.test = make_windows(sp.test, L, T, stride);
  b.scaler = std::move(sp.scaler);
  return b;
}

std::string dataset_name_from_path(const std::string& path) {
  std::size_t slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  std::size_t dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

void default_split_ratios(const std::string& name, double& r1, double& r2,
                          double& r3) {
  if (name.rfind("ETT", 0) == 0) {
    r1 = 0.6;
    r2 = 0.2;
    r3 = 0.2;
  } else {
    r1 = 0.7;
    r2 = 0.1;
    r3 = 0.2;
  }
}

}  // namespace dmamba
