#include "dmamba/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmamba/data.hpp"

namespace dmamba {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value '" + v + "' for key '" + key +
                      "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(d);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value '" + v + "' for key '" + key +
                      "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean value '" + v + "' for key '" + key +
                    "'");
}

}  // namespace

std::string serialize_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "data = " << c.data_path << "\n";
  os << "out = " << c.out_dir << "\n";
  os << "seed = " << c.seed << "\n";
  os << "variant = " << to_string(c.model.variant) << "\n";
  os << "loss = " << to_string(c.model.loss) << "\n";
  os << "seq_len = " << c.model.seq_len << "\n";
  os << "pred_len = " << c.model.pred_len << "\n";
  os << "d_model = " << c.model.d_model << "\n";
  os << "d_state = " << c.model.d_state << "\n";
  os << "d_conv = " << c.model.d_conv << "\n";
  os << "expand = " << c.model.expand << "\n";
  os << "e_layers = " << c.model.e_layers << "\n";
  os << "d_ff = " << c.model.d_ff << "\n";
  os << "dropout = " << fmt_double(c.model.dropout) << "\n";
  os << "ema_alpha = " << fmt_double(c.model.ema_alpha) << "\n";
  os << "revin_eps = " << fmt_double(c.model.revin_eps) << "\n";
  os << "revin_affine = " << (c.model.revin_affine ? "true" : "false") << "\n";
  os << "trend_layers = " << c.model.trend_layers << "\n";
  os << "trend_pool = " << c.model.trend_pool << "\n";
  os << "lr = " << fmt_double(c.lr) << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "max_epochs = " << c.max_epochs << "\n";
  os << "patience = " << c.patience << "\n";
  os << "beta1 = " << fmt_double(c.beta1) << "\n";
  os << "beta2 = " << fmt_double(c.beta2) << "\n";
  os << "adam_eps = " << fmt_double(c.adam_eps) << "\n";
  os << "grad_clip = " << fmt_double(c.grad_clip) << "\n";
  os << "split_train = " << fmt_double(c.split_train) << "\n";
  os << "split_val = " << fmt_double(c.split_val) << "\n";
  os << "split_test = " << fmt_double(c.split_test) << "\n";
  os << "stride = " << c.stride << "\n";
  os << "max_rows = " << c.max_rows << "\n";
  os << "has_date = " << (c.has_date ? "true" : "false") << "\n";
  return os.str();
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        " is not 'key = value': " + t);
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key == "data") c.data_path = val;
    else if (key == "out") c.out_dir = val;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(val));
    else if (key == "variant") c.model.variant = variant_from_string(val);
    else if (key == "loss") c.model.loss = loss_from_string(val);
    else if (key == "seq_len") c.model.seq_len = parse_int(key, val);
    else if (key == "pred_len") c.model.pred_len = parse_int(key, val);
    else if (key == "d_model") c.model.d_model = parse_int(key, val);
    else if (key == "d_state") c.model.d_state = parse_int(key, val);
    else if (key == "d_conv") c.model.d_conv = parse_int(key, val);
    else if (key == "expand") c.model.expand = parse_int(key, val);
    else if (key == "e_layers") c.model.e_layers = parse_int(key, val);
    else if (key == "d_ff") c.model.d_ff = parse_int(key, val);
    else if (key == "dropout") c.model.dropout = parse_double(key, val);
    else if (key == "ema_alpha") c.model.ema_alpha = parse_double(key, val);
    else if (key == "revin_eps") c.model.revin_eps = parse_double(key, val);
    else if (key == "revin_affine") c.model.revin_affine = parse_bool(key, val);
    else if (key == "trend_layers") c.model.trend_layers = parse_int(key, val);
    else if (key == "trend_pool") c.model.trend_pool = parse_int(key, val);
    else if (key == "lr") c.lr = parse_double(key, val);
    else if (key == "batch_size") c.batch_size = parse_int(key, val);
    else if (key == "max_epochs") c.max_epochs = parse_int(key, val);
    else if (key == "patience") c.patience = parse_int(key, val);
    else if (key == "beta1") c.beta1 = parse_double(key, val);
    else if (key == "beta2") c.beta2 = parse_double(key, val);
    else if (key == "adam_eps") c.adam_eps = parse_double(key, val);
    else if (key == "grad_clip") c.grad_clip = parse_double(key, val);
    else if (key == "split_train") c.split_train = parse_double(key, val);
    else if (key == "split_val") c.split_val = parse_double(key, val);
    else if (key == "split_test") c.split_test = parse_double(key, val);
    else if (key == "stride") c.stride = parse_int(key, val);
    else if (key == "max_rows") c.max_rows = parse_int(key, val);
    else if (key == "has_date") c.has_date = parse_bool(key, val);
    else
      throw ConfigError("config: unknown key '" + key + "' at line " +
                        std::to_string(lineno));
  }
  return c;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str());
}

std::string config_hash(const TrainConfig& c) {
  // Hash a canonical copy: dataset name instead of path, no output dir.
  TrainConfig canon = c;
  canon.data_path = dataset_name_from_path(c.data_path);
  canon.out_dir = "";
  const std::string text = serialize_config(canon);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

void validate_config(const TrainConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  require(c.model.seq_len >= 2, "seq-len must be >= 2");
  require(c.model.pred_len >= 1, "pred-len must be >= 1");
  require(c.model.d_model >= 1, "d-model must be >= 1");
  require(c.model.d_state >= 1, "d-state must be >= 1");
  require(c.model.d_conv >= 1, "d-conv must be >= 1");
  require(c.model.expand >= 1, "expand must be >= 1");
  require(c.model.e_layers >= 1, "e-layers must be >= 1");
  require(c.model.dropout >= 0 && c.model.dropout < 1,
          "dropout must be in [0, 1)");
  require(c.model.ema_alpha > 0 && c.model.ema_alpha <= 1,
          "ema-alpha must be in (0, 1]");
  require(c.model.revin_eps > 0, "revin-eps must be > 0");
  require(c.model.trend_layers >= 1, "trend-layers must be >= 1");
  require(c.model.trend_pool >= 1, "trend-pool must be >= 1");
  require(c.model.seq_len - (c.model.trend_pool - 1) >= 1,
          "trend-pool too large for seq-len");
  require(c.lr > 0, "lr must be > 0");
  require(c.batch_size >= 1, "batch-size must be >= 1");
  require(c.max_epochs >= 1, "max-epochs must be >= 1");
  require(c.patience >= 1, "patience must be >= 1");
  require(c.stride >= 1, "stride must be >= 1");
}

}  // namespace dmamba
