#pragma once

// Checkpoint file: magic string, format version, a key-value config text
// block, then length-prefixed little-endian f64 arrays per named parameter
// in sorted name order. Round-trips byte-identically.

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rdg/tensor.hpp"

namespace rdg {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { version, truncated, shape };
  CheckpointError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  std::map<std::string, std::string> config;          // echoed key-values
  std::map<std::string, Tensor> arrays;               // named f64 arrays
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'R', 'D', 'G', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCkptVersion = 1;

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in)
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in)
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint: unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string read_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in)
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint: unexpected end of file");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_u32(out, detail::kCkptVersion);

  std::string config_block;
  for (const auto& [k, v] : ckpt.config)
    config_block += k + " = " + v + "\n";
  detail::write_u64(out, config_block.size());
  out.write(config_block.data(),
            static_cast<std::streamsize>(config_block.size()));

  detail::write_u64(out, ckpt.arrays.size());
  for (const auto& [name, t] : ckpt.arrays) {  // std::map iterates sorted
    detail::write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u64(out, t.shape().size());
    for (std::size_t d : t.shape()) detail::write_u64(out, d);
    detail::write_u64(out, t.size());
    for (double v : t.values()) detail::write_f64(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed on " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[sizeof(detail::kCkptMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
    throw CheckpointError(CheckpointError::Kind::version,
                          "checkpoint: " + path + " has no recognizable header");
  const std::uint32_t version = detail::read_u32(in);
  if (version != detail::kCkptVersion)
    throw CheckpointError(CheckpointError::Kind::version,
                          "checkpoint: " + path + " has format version " +
                              std::to_string(version) + ", expected " +
                              std::to_string(detail::kCkptVersion));

  Checkpoint ckpt;
  const std::uint64_t config_len = detail::read_u64(in);
  const std::string block = detail::read_bytes(in, config_len);
  std::size_t pos = 0;
  while (pos < block.size()) {
    const std::size_t eol = block.find('\n', pos);
    const std::string line =
        block.substr(pos, eol == std::string::npos ? eol : eol - pos);
    pos = eol == std::string::npos ? block.size() : eol + 1;
    const std::size_t sep = line.find(" = ");
    if (sep != std::string::npos)
      ckpt.config[line.substr(0, sep)] = line.substr(sep + 3);
  }

  const std::uint64_t count = detail::read_u64(in);
  for (std::uint64_t a = 0; a < count; ++a) {
    const std::uint64_t name_len = detail::read_u64(in);
    const std::string name = detail::read_bytes(in, name_len);
    const std::uint64_t ndims = detail::read_u64(in);
    Shape shape;
    for (std::uint64_t d = 0; d < ndims; ++d)
      shape.push_back(detail::read_u64(in));
    const std::uint64_t nvalues = detail::read_u64(in);
    if (nvalues != shape_numel(shape))
      throw CheckpointError(
          CheckpointError::Kind::shape,
          "checkpoint: array '" + name + "' declares " +
              std::to_string(nvalues) + " values for shape " +
              shape_str(shape));
    std::vector<double> values(nvalues);
    for (std::uint64_t i = 0; i < nvalues; ++i)
      values[i] = detail::read_f64(in);
    ckpt.arrays.emplace(name, Tensor::from(shape, std::move(values)));
  }
  return ckpt;
}

// Copies a loaded array into an existing parameter tensor, enforcing shape.
inline void restore_into(const Checkpoint& ckpt, const std::string& name,
                         Tensor param) {
  auto it = ckpt.arrays.find(name);
  if (it == ckpt.arrays.end())
    throw CheckpointError(CheckpointError::Kind::shape,
                          "checkpoint: missing array '" + name + "'");
  if (it->second.shape() != param.shape())
    throw CheckpointError(CheckpointError::Kind::shape,
                          "checkpoint: array '" + name + "' has shape " +
                              shape_str(it->second.shape()) + ", model needs " +
                              shape_str(param.shape()));
  param.values() = it->second.values();
}

}  // namespace rdg
