#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "evplan/tensor.hpp"

namespace evplan {

/// Named tensors, ordered by name so files are byte-deterministic.
using TensorMap = std::map<std::string, Tensor>;

// Container layout (all integers little-endian):
//   magic "EVPT" | u32 version | u32 count
//   per tensor: u32 name length | name bytes | u8 dtype tag | u32 rank |
//               u64 dims[rank] | raw little-endian values
// dtype tag 1 = float64, 2 = float32.
enum class DType : std::uint8_t { f64 = 1, f32 = 2 };

void write_checkpoint(std::ostream& out, const TensorMap& tensors, DType dtype = DType::f64);
TensorMap read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors, DType dtype = DType::f64);
TensorMap load_checkpoint(const std::filesystem::path& path);

/// Entries whose name starts with prefix, with the prefix stripped.
TensorMap section(const TensorMap& tensors, const std::string& prefix);
void merge_section(TensorMap& into, const std::string& prefix, const TensorMap& part);

/// Copies values into existing tensors by name; every destination must be present with a matching shape.
void restore_into(const TensorMap& source, TensorMap& destination);

/// FNV-1a over names, shapes and value bits; used to prove parameters were not touched.
std::uint64_t checksum(const TensorMap& tensors);

}  // namespace evplan
