#include "evplan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "evplan/error.hpp"

namespace evplan {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw DataError("checkpoint: unexpected end of file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const TensorMap& tensors, DType dtype) {
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) {
      if (dtype == DType::f64) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      } else {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  if (!out) throw DataError("checkpoint: write failed");
}

TensorMap read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(in);
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto tag = get_le<std::uint8_t>(in);
    if (tag != static_cast<std::uint8_t>(DType::f64) && tag != static_cast<std::uint8_t>(DType::f32)) {
      throw DataError("checkpoint: unknown dtype tag " + std::to_string(tag) + " for " + name);
    }
    const auto rank = get_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    std::vector<double> values(numel(shape));
    for (auto& v : values) {
      if (tag == static_cast<std::uint8_t>(DType::f64)) {
        v = std::bit_cast<double>(get_le<std::uint64_t>(in));
      } else {
        v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
      }
    }
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, tensors, dtype);
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

TensorMap section(const TensorMap& tensors, const std::string& prefix) {
  TensorMap out;
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name.substr(prefix.size()), t);
  }
  return out;
}

void merge_section(TensorMap& into, const std::string& prefix, const TensorMap& part) {
  for (const auto& [name, t] : part) into.insert_or_assign(prefix + name, t);
}

void restore_into(const TensorMap& source, TensorMap& destination) {
  for (auto& [name, dst] : destination) {
    auto it = source.find(name);
    if (it == source.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape() != dst.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second.shape()) +
                      ", expected " + shape_string(dst.shape()));
    }
    dst.assign(it->second.values());
  }
}

std::uint64_t checksum(const TensorMap& tensors) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    for (char c : name) feed(static_cast<unsigned char>(c));
    for (std::size_t d : t.shape()) feed(d);
    for (double v : t.values()) feed(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace evplan
