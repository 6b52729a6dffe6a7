#include "dmamba/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dmamba {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint8_t kVersion = 1;

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_i64(std::ostream& os, std::int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_vec(std::ostream& os, const std::vector<double>& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void write_arrays(std::ostream& os, const NamedArrays& a) {
  write_u64(os, a.size());
  for (const auto& [name, vec] : a) {
    write_str(os, name);
    write_vec(os, vec);
  }
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::int64_t read_i64(std::istream& is) {
  std::int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::string read_str(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

std::vector<double> read_vec(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

NamedArrays read_arrays(std::istream& is) {
  std::uint64_t n = read_u64(is);
  NamedArrays a;
  a.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(is);
    a.emplace_back(std::move(name), read_vec(is));
  }
  return a;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot write '" + path + "'");
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  write_str(os, ck.config_text);
  write_str(os, ck.config_hash_hex);
  write_i64(os, ck.epochs_done);
  write_i64(os, ck.adam_t);
  write_f64(os, ck.best_val);
  write_i64(os, ck.best_epoch);
  write_i64(os, ck.epochs_since_improve);
  write_arrays(os, ck.params);
  write_arrays(os, ck.adam_m);
  write_arrays(os, ck.adam_v);
  write_arrays(os, ck.best_params);
  write_str(os, ck.shuffle_rng_state);
  write_str(os, ck.dropout_rng_state);
  write_vec(os, ck.train_loss_history);
  write_vec(os, ck.val_loss_history);
  if (!os) throw DataError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: '" + path + "' is not a checkpoint file");
  const int version = is.get();
  if (version != kVersion)
    throw DataError("checkpoint: '" + path + "' has format version " +
                    std::to_string(version) + ", expected " +
                    std::to_string(kVersion));
  Checkpoint ck;
  ck.version = static_cast<std::uint8_t>(version);
  ck.config_text = read_str(is);
  ck.config_hash_hex = read_str(is);
  ck.epochs_done = static_cast<int>(read_i64(is));
  ck.adam_t = static_cast<long>(read_i64(is));
  ck.best_val = read_f64(is);
  ck.best_epoch = static_cast<int>(read_i64(is));
  ck.epochs_since_improve = static_cast<int>(read_i64(is));
  ck.params = read_arrays(is);
  ck.adam_m = read_arrays(is);
  ck.adam_v = read_arrays(is);
  ck.best_params = read_arrays(is);
  ck.shuffle_rng_state = read_str(is);
  ck.dropout_rng_state = read_str(is);
  ck.train_loss_history = read_vec(is);
  ck.val_loss_history = read_vec(is);
  if (!is) throw DataError("checkpoint: '" + path + "' is truncated");
  return ck;
}

}  // namespace dmamba
