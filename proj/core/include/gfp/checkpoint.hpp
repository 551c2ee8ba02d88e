#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gfp/graph.hpp"
#include "gfp/io.hpp"

namespace gfp {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// GFPC container: "GFPC", u8 version = 1, u32 count, then per tensor
// u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 data. All little-endian.
inline constexpr std::uint8_t kCheckpointVersion = 1;

io::Bytes encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const io::Bytes& bytes);

std::vector<NamedTensor> to_named(const ad::ParamSet<float>& params);
ad::ParamSet<float> to_params(const std::vector<NamedTensor>& tensors);

void save_checkpoint(const std::filesystem::path& path, const ad::ParamSet<float>& params);
ad::ParamSet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace gfp
