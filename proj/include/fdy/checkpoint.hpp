#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fdy {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<TensorRecord> tensors;
};

/// Layout: "FDYK", u32 version, u32 length + config text, u32 tensor count,
/// then per tensor u32 name length + name, u32 rank, rank × u32 dims and the
/// float32 payload. All integers and floats little-endian.
void write_checkpoint_file(const std::string& path, const CheckpointData& data);
std::string encode_checkpoint(const CheckpointData& data);
CheckpointData read_checkpoint_file(const std::string& path);
CheckpointData decode_checkpoint(const std::string& bytes);

}  // namespace fdy
