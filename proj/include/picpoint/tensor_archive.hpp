#pragma once

// Single-file archive of named tensors plus a JSON metadata document.
//
// Layout (little endian):
//   "PCTA"  u32 version (1)
//   u64 metadata length, metadata bytes (UTF-8 JSON)
//   u32 tensor count, then per tensor in ascending name order:
//     u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//     u32 rank, u64 dims[rank], data in row-major order
//   u32 CRC-32 of every preceding byte
//
// Writes go to a temporary sibling file that is renamed over the target.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "picpoint/nn.hpp"

namespace picpoint {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::vector<std::uint64_t> shape;
  std::variant<std::vector<float>, std::vector<double>> data;

  std::uint64_t numel() const;
  bool is_f64() const { return data.index() == 1; }

  /// Row-major copy of a matrix, shape {rows, cols}.
  template <typename T>
  static Tensor from_matrix(const nn::Matrix<T>& m);
  /// Reads back a rank-1 or rank-2 tensor as a matrix of type T (a rank-1
  /// tensor becomes a column).
  template <typename T>
  nn::Matrix<T> to_matrix() const;
};

struct TensorArchive {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes);

  void write(const std::filesystem::path& path) const;
  static TensorArchive read(const std::filesystem::path& path);
};

/// Atomic whole-file write: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

std::uint32_t crc32_of(const void* data, std::size_t size);

}  // namespace picpoint
