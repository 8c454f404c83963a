#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace distnav {

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

/// Binary tensor container shared by every checkpoint type.
///
/// Layout (all integers little-endian u32):
///   magic[4] | version | meta_len | meta (UTF-8) | tensor_count |
///   { name_len | name | rank | dims[rank] | f32 data (row-major) }* | crc32
///
/// Values are stored as 32-bit floats, so a round trip is exact only for
/// float-representable parameters (see round_to_float).
struct TensorFile {
  std::array<char, 4> magic{};
  std::uint32_t version = 1;
  std::string metadata;
  std::vector<NamedTensor> tensors;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);

/// Throws DataError on I/O failure, checksum mismatch, truncation or a magic
/// other than `expected_magic`.
TensorFile read_tensor_file(const std::filesystem::path& path, std::array<char, 4> expected_magic,
                            std::uint32_t expected_version = 1);

/// Rounds every entry to the nearest 32-bit float.
void round_to_float(Eigen::MatrixXd& m);

}  // namespace distnav
