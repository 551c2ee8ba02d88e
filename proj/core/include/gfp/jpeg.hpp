#pragma once

#include <array>

#include "gfp/image.hpp"
#include "gfp/io.hpp"

// Baseline JPEG: colour conversion, 8x8 DCT and quantization with the IJG-scaled standard
// tables. round_trip() runs encode+decode in memory without entropy coding; encode() adds
// Huffman coding and JFIF framing for writing real .jpg files.
namespace gfp::jpeg {

struct Options {
  int quality = 75;       // 1..100
  bool subsample = true;  // 4:2:0 chroma
};

// Row-major (natural order) quantization table for the given quality.
std::array<int, 64> quant_table(bool chroma, int quality);

// zigzag[k] = natural index of the k-th coefficient in zigzag order.
extern const std::array<int, 64> kZigzag;

// [H,W,3] or [H,W,1] image in [0,1] -> decoded image quantized to 8 bits.
image::Image round_trip(const image::Image& img, const Options& opt = {});

// Complete baseline JFIF stream.
io::Bytes encode(const image::Image& img, const Options& opt = {});

}  // namespace gfp::jpeg
