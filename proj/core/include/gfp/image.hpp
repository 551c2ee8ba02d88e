#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "gfp/tensor.hpp"

namespace gfp::image {

// An Image is a [H,W,C] float tensor with values in [0,1].
using Image = Tensor;

void clamp01(Image& img);

// Normalized sampled Gaussian of odd length `size`.
std::vector<double> gaussian_kernel(int size, double sigma);

// Separable correlation with a symmetric 1-D kernel along both axes, reflect padding.
Image filter_separable(const Image& img, std::span<const double> kernel);

// 5-tap binomial [1,4,6,4,1]/16 blur, reflect padding, stride 1.
Image binomial_blur(const Image& img);

// 3x3 Gaussian blur with the given sigma, reflect padding.
Image gaussian_blur3(const Image& img, double sigma);

// Bilinear resize, align_corners = false, edge-clamped sampling.
Image resize_bilinear(const Image& img, int out_h, int out_w);

// Sub-image [top, top+h) x [left, left+w).
Image crop(const Image& img, int top, int left, int h, int w);

// Channel mean -> [H,W,1].
Image to_grayscale(const Image& img);

double mean_abs_diff(const Image& a, const Image& b);
double max_abs_diff(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

// Quantizes to 8 bits exactly as stored in dataset files: round(255 v).
std::uint8_t to_u8(float v);
// In place: v <- to_u8(v) / 255.
void quantize8(Image& img);

// Binary PGM (1 channel) or PPM (3 channels), maxval 255.
void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

}  // namespace gfp::image
