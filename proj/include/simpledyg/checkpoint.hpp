#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "simpledyg/errors.hpp"
#include "simpledyg/model.hpp"

namespace simpledyg {

// Checkpoint layout:
//   SDYG1\n
//   meta <count>\n
//   key=value\n ...                (config, vocab hash, seed, tool version)
//   tensors <count>\n
//   tensor <name> <rows> <cols>\n  followed by rows*cols little-endian f64
//   ...
// The float payload is written byte-for-byte, so a save/load round trip is
// bit-exact.

inline constexpr const char* kCheckpointMagic = "SDYG1";

namespace detail {

inline void write_f64_le(std::ostream& out, const double* data, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 8));
  } else {
    for (size_t i = 0; i < n; ++i) {
      uint64_t bits;
      std::memcpy(&bits, &data[i], 8);
      char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      out.write(buf, 8);
    }
  }
}

inline void read_f64_le(std::istream& in, double* data, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 8));
  } else {
    for (size_t i = 0; i < n; ++i) {
      char buf[8];
      in.read(buf, 8);
      uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
      std::memcpy(&data[i], &bits, 8);
    }
  }
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const ModelParams& params,
                            const std::map<std::string, std::string>& extra_meta) {
  std::map<std::string, std::string> meta = extra_meta;
  const ModelConfig& c = params.config;
  meta["config.layers"] = std::to_string(c.layers);
  meta["config.heads"] = std::to_string(c.heads);
  meta["config.dim"] = std::to_string(c.dim);
  meta["config.ffn_dim"] = std::to_string(c.ffn_dim);
  meta["config.context_length"] = std::to_string(c.context_length);
  meta["config.vocab_size"] = std::to_string(c.vocab_size);
  meta["config.dropout"] = std::to_string(c.dropout);
  meta["config.seed"] = std::to_string(c.seed);

  out << kCheckpointMagic << "\n";
  out << "meta " << meta.size() << "\n";
  for (const auto& [k, v] : meta) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint: metadata key/value may not contain '=' or newlines: " + k);
    }
    out << k << "=" << v << "\n";
  }
  size_t count = 0;
  params.for_each_named([&](const std::string&, const Matrix&) { ++count; });
  out << "tensors " << count << "\n";
  params.for_each_named([&](const std::string& name, const Matrix& m) {
    out << "tensor " << name << " " << m.rows << " " << m.cols << "\n";
    detail::write_f64_le(out, m.data.data(), m.data.size());
  });
  if (!out) throw DataError("checkpoint: write failed");
}

struct Checkpoint {
  ModelParams params;
  std::map<std::string, std::string> meta;
};

inline Checkpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic (expected SDYG1)");
  }
  auto expect_count = [&](const std::string& tag) -> size_t {
    if (!std::getline(in, line) || line.rfind(tag + " ", 0) != 0) {
      throw DataError("checkpoint: expected '" + tag + " <count>' line");
    }
    return std::stoull(line.substr(tag.size() + 1));
  };
  Checkpoint ck;
  const size_t nmeta = expect_count("meta");
  for (size_t i = 0; i < nmeta; ++i) {
    if (!std::getline(in, line)) throw DataError("checkpoint: truncated metadata");
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: bad metadata line '" + line + "'");
    ck.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ModelConfig cfg;
  auto meta_int = [&](const std::string& key) {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw DataError("checkpoint: missing metadata " + key);
    return std::stoll(it->second);
  };
  cfg.layers = static_cast<int>(meta_int("config.layers"));
  cfg.heads = static_cast<int>(meta_int("config.heads"));
  cfg.dim = static_cast<int>(meta_int("config.dim"));
  cfg.ffn_dim = static_cast<int>(meta_int("config.ffn_dim"));
  cfg.context_length = static_cast<int>(meta_int("config.context_length"));
  cfg.vocab_size = static_cast<int>(meta_int("config.vocab_size"));
  cfg.dropout = std::stod(ck.meta.at("config.dropout"));
  cfg.seed = static_cast<uint64_t>(meta_int("config.seed"));
  ck.params = make_empty_params(cfg);

  const size_t ntensors = expect_count("tensors");
  std::map<std::string, Matrix*> slots;
  ck.params.for_each_named([&](const std::string& name, Matrix& m) { slots[name] = &m; });
  if (slots.size() != ntensors) {
    throw DataError("checkpoint: tensor count " + std::to_string(ntensors) + " != expected " +
                    std::to_string(slots.size()));
  }
  for (size_t i = 0; i < ntensors; ++i) {
    if (!std::getline(in, line)) throw DataError("checkpoint: truncated tensor table");
    if (line.rfind("tensor ", 0) != 0) throw DataError("checkpoint: bad tensor header '" + line + "'");
    std::string rest = line.substr(7);
    const size_t sp1 = rest.find(' ');
    const size_t sp2 = rest.find(' ', sp1 + 1);
    if (sp1 == std::string::npos || sp2 == std::string::npos) {
      throw DataError("checkpoint: bad tensor header '" + line + "'");
    }
    const std::string name = rest.substr(0, sp1);
    const int rows = std::stoi(rest.substr(sp1 + 1, sp2 - sp1 - 1));
    const int cols = std::stoi(rest.substr(sp2 + 1));
    auto it = slots.find(name);
    if (it == slots.end()) throw DataError("checkpoint: unknown tensor '" + name + "'");
    Matrix& m = *it->second;
    if (m.rows != rows || m.cols != cols) {
      throw DataError("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected " + shape_str(m));
    }
    detail::read_f64_le(in, m.data.data(), m.data.size());
    if (!in) throw DataError("checkpoint: truncated tensor payload for '" + name + "'");
    slots.erase(it);
  }
  if (!slots.empty()) throw DataError("checkpoint: missing tensors");
  return ck;
}

inline void save_checkpoint_file(const std::string& path, const ModelParams& params,
                                 const std::map<std::string, std::string>& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  save_checkpoint(out, params, meta);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  return load_checkpoint(in);
}

}  // namespace simpledyg
