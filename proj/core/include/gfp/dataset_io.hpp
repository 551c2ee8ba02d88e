#pragma once

#include <filesystem>

#include "gfp/io.hpp"
#include "gfp/synth.hpp"

namespace gfp::synth {

// GFPD: "GFPD", u8 version = 1, u16 H, u16 W, u8 C, u32 count, u8 class count, class names
// (u16 length + UTF-8 each), then per record u8 label + H*W*C u8 pixels (round(255 v)).
inline constexpr std::uint8_t kDatasetVersion = 1;

io::Bytes encode_dataset(const LabeledDataset& ds);
LabeledDataset decode_dataset(const io::Bytes& bytes);

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace gfp::synth
