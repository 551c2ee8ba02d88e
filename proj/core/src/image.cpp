#include "gfp/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "gfp/io.hpp"
#include "gfp/ops.hpp"

namespace gfp::image {

void clamp01(Image& img) {
  for (auto& v : img.data()) v = std::clamp(v, 0.0f, 1.0f);
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ArgumentError("gaussian kernel size must be odd and positive");
  std::vector<double> k(size);
  const int r = size / 2;
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - r;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

Image filter_separable(const Image& img, std::span<const double> kernel) {
  const int h = image_height(img), w = image_width(img), c = image_channels(img);
  const int r = static_cast<int>(kernel.size()) / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int t = -r; t <= r; ++t) s += kernel[t + r] * img.at(y, fn::reflect_index(x + t, w), ch);
        tmp[(static_cast<std::size_t>(y) * w + x) * c + ch] = s;
      }
  Image out(img.dims());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int t = -r; t <= r; ++t)
          s += kernel[t + r] * tmp[(static_cast<std::size_t>(fn::reflect_index(y + t, h)) * w + x) * c + ch];
        out.at(y, x, ch) = static_cast<float>(s);
      }
  return out;
}

Image binomial_blur(const Image& img) {
  static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  return filter_separable(img, k);
}

Image gaussian_blur3(const Image& img, double sigma) {
  const auto k = gaussian_kernel(3, sigma);
  return filter_separable(img, k);
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  const int h = image_height(img), w = image_width(img), c = image_channels(img);
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be positive");
  Image out({out_h, out_w, c});
  auto src_coord = [](int o, int in, int out) {
    double s = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (int oy = 0; oy < out_h; ++oy) {
    const double sy = src_coord(oy, h, out_h);
    const int y0 = static_cast<int>(std::floor(sy)), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double sx = src_coord(ox, w, out_w);
      const int x0 = static_cast<int>(std::floor(sx)), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch)) +
                         fy * ((1 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch));
        out.at(oy, ox, ch) = static_cast<float>(v);
      }
    }
  }
  return out;
}

Image crop(const Image& img, int top, int left, int h, int w) {
  const int H = image_height(img), W = image_width(img), c = image_channels(img);
  if (h < 1 || w < 1 || top < 0 || left < 0 || top + h > H || left + w > W)
    throw ShapeError("crop window outside image");
  Image out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = img.at(top + y, left + x, ch);
  return out;
}

Image to_grayscale(const Image& img) {
  const int h = image_height(img), w = image_width(img), c = image_channels(img);
  Image out({h, w, 1});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) s += img.at(y, x, ch);
      out.at(y, x, 0) = static_cast<float>(s / c);
    }
  return out;
}

double mean_abs_diff(const Image& a, const Image& b) {
  if (a.dims() != b.dims()) throw ShapeError("mean_abs_diff: dims differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
  return s / a.size();
}

double max_abs_diff(const Image& a, const Image& b) {
  if (a.dims() != b.dims()) throw ShapeError("max_abs_diff: dims differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

double psnr(const Image& a, const Image& b) {
  if (a.dims() != b.dims()) throw ShapeError("psnr: dims differ");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    mse += d * d;
  }
  mse /= a.size();
  if (mse == 0.0) return INFINITY;
  return 10.0 * std::log10(1.0 / mse);
}

std::uint8_t to_u8(float v) {
  const double s = std::round(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0));
  return static_cast<std::uint8_t>(s);
}

void write_pnm(const std::filesystem::path& path, const Image& img) {
  const int h = image_height(img), w = image_width(img), c = image_channels(img);
  if (c != 1 && c != 3) throw ShapeError("PNM output needs 1 or 3 channels");
  std::string header = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  io::Bytes bytes(header.begin(), header.end());
  for (float v : img.data()) bytes.push_back(to_u8(v));
  io::write_file_atomic(path, bytes);
}

Image read_pnm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  const auto magic = token();
  if (magic != "P5" && magic != "P6") throw FormatError("unsupported PNM magic in " + path.string());
  const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  if (maxval != 255) throw FormatError("only maxval 255 PNM files are supported");
  ++pos;
  const int c = magic == "P5" ? 1 : 3;
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  if (bytes.size() < pos + n) throw FormatError("truncated PNM " + path.string());
  Image img({h, w, c});
  for (std::size_t i = 0; i < n; ++i) img[i] = bytes[pos + i] / 255.0f;
  return img;
}

void quantize8(Image& img) {
  for (auto& v : img.data()) v = to_u8(v) / 255.0f;
}

}  // namespace gfp::image
