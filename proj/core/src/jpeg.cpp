#include "gfp/jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace gfp::jpeg {

const std::array<int, 64> kZigzag = {0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
                                     12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
                                     35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
                                     58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

namespace {

constexpr std::array<int, 64> kLumaBase = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                           14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                           18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                           49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
constexpr std::array<int, 64> kChromaBase = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                             24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                             99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                             99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

// Standard Huffman tables: code counts per length 1..16, then symbols.
struct HuffSpec {
  std::array<std::uint8_t, 16> bits;
  std::vector<std::uint8_t> vals;
};

const HuffSpec kDcLuma{{0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
const HuffSpec kDcChroma{{0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
const HuffSpec kAcLuma{
    {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d},
    {0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14,
     0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09,
     0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a,
     0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65,
     0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88,
     0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9,
     0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca,
     0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea,
     0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
const HuffSpec kAcChroma{
    {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77},
    {0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71, 0x13, 0x22, 0x32,
     0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16,
     0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39,
     0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64,
     0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86,
     0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
     0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8,
     0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9,
     0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};

using Block = std::array<int, 64>;

struct Component {
  int bw = 0, bh = 0;  // block grid
  int hs = 1, vs = 1;  // sampling factors
  bool chroma = false;
  std::vector<Block> blocks;  // quantized, natural order, row-major block grid
};

struct Coded {
  int width = 0, height = 0;
  int mcu = 8;  // MCU side in full-resolution pixels
  std::array<int, 64> qt_luma{}, qt_chroma{};
  std::vector<Component> comps;
};

struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

const std::array<std::array<double, 8>, 8>& cos_table() {
  static const auto table = [] {
    std::array<std::array<double, 8>, 8> t{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        t[u][x] = (u == 0 ? std::sqrt(0.125) : 0.5) * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    return t;
  }();
  return table;
}

// Orthonormal 2-D DCT-II of an 8x8 block (equal to the JPEG definition).
std::array<double, 64> fdct(const std::array<double, 64>& in) {
  const auto& c = cos_table();
  std::array<double, 64> tmp{}, out{};
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += c[u][x] * in[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += c[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
  return out;
}

std::array<double, 64> idct(const std::array<double, 64>& in) {
  const auto& c = cos_table();
  std::array<double, 64> tmp{}, out{};
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += c[u][x] * in[v * 8 + u];
      tmp[v * 8 + x] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += c[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = s;
    }
  return out;
}

double to_level(float v) { return std::round(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0)); }

Component quantize_plane(const Plane& p, const std::array<int, 64>& qt, int hs, int vs, bool chroma) {
  Component c;
  c.bw = p.w / 8;
  c.bh = p.h / 8;
  c.hs = hs;
  c.vs = vs;
  c.chroma = chroma;
  for (int by = 0; by < c.bh; ++by)
    for (int bx = 0; bx < c.bw; ++bx) {
      std::array<double, 64> px{};
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) px[y * 8 + x] = p.at(bx * 8 + x, by * 8 + y) - 128.0;
      const auto f = fdct(px);
      Block b{};
      for (int i = 0; i < 64; ++i) b[i] = static_cast<int>(std::lround(f[i] / qt[i]));
      c.blocks.push_back(b);
    }
  return c;
}

Plane dequantize_plane(const Component& c, const std::array<int, 64>& qt) {
  Plane p{c.bw * 8, c.bh * 8, std::vector<double>(static_cast<std::size_t>(c.bw) * c.bh * 64)};
  for (int by = 0; by < c.bh; ++by)
    for (int bx = 0; bx < c.bw; ++bx) {
      const Block& b = c.blocks[static_cast<std::size_t>(by) * c.bw + bx];
      std::array<double, 64> f{};
      for (int i = 0; i < 64; ++i) f[i] = static_cast<double>(b[i]) * qt[i];
      const auto px = idct(f);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) p.at(bx * 8 + x, by * 8 + y) = px[y * 8 + x] + 128.0;
    }
  return p;
}

Coded analyze(const image::Image& img, const Options& opt) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    throw ShapeError("jpeg expects [H,W,1] or [H,W,3], got " + dims_to_string(img.dims()));
  Coded out;
  out.height = img.dim(0);
  out.width = img.dim(1);
  const bool color = img.dim(2) == 3;
  const bool sub = color && opt.subsample;
  out.mcu = sub ? 16 : 8;
  out.qt_luma = quant_table(false, opt.quality);
  out.qt_chroma = quant_table(true, opt.quality);
  const int pw = (out.width + out.mcu - 1) / out.mcu * out.mcu;
  const int ph = (out.height + out.mcu - 1) / out.mcu * out.mcu;
  const int ch = img.dim(2);

  std::vector<Plane> planes(ch, Plane{pw, ph, std::vector<double>(static_cast<std::size_t>(pw) * ph)});
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) {
      const int sy = std::min(y, out.height - 1), sx = std::min(x, out.width - 1);
      if (!color) {
        planes[0].at(x, y) = to_level(img.at(sy, sx, 0));
        continue;
      }
      const double r = to_level(img.at(sy, sx, 0)), g = to_level(img.at(sy, sx, 1)), b = to_level(img.at(sy, sx, 2));
      planes[0].at(x, y) = 0.299 * r + 0.587 * g + 0.114 * b;
      planes[1].at(x, y) = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
      planes[2].at(x, y) = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }
  out.comps.push_back(quantize_plane(planes[0], out.qt_luma, sub ? 2 : 1, sub ? 2 : 1, false));
  for (int c = 1; c < ch; ++c) {
    Plane p = planes[c];
    if (sub) {
      Plane s{pw / 2, ph / 2, std::vector<double>(static_cast<std::size_t>(pw / 2) * (ph / 2))};
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          s.at(x, y) = 0.25 * (p.at(2 * x, 2 * y) + p.at(2 * x + 1, 2 * y) + p.at(2 * x, 2 * y + 1) + p.at(2 * x + 1, 2 * y + 1));
      p = std::move(s);
    }
    out.comps.push_back(quantize_plane(p, out.qt_chroma, 1, 1, true));
  }
  return out;
}

// Triangle-filter ("fancy") chroma upsampling: bilinear between chroma sample centres, edges clamped.
double chroma_at(const Plane& p, int x, int y, int factor) {
  if (factor == 1) return p.at(x, y);
  const double fx = (x + 0.5) / factor - 0.5, fy = (y + 0.5) / factor - 0.5;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto at = [&](int xi, int yi) { return p.at(std::clamp(xi, 0, p.w - 1), std::clamp(yi, 0, p.h - 1)); };
  return (1 - ay) * ((1 - ax) * at(x0, y0) + ax * at(x0 + 1, y0)) + ay * ((1 - ax) * at(x0, y0 + 1) + ax * at(x0 + 1, y0 + 1));
}

image::Image synthesize(const Coded& coded) {
  const int ch = static_cast<int>(coded.comps.size());
  std::vector<Plane> planes;
  for (const auto& c : coded.comps) planes.push_back(dequantize_plane(c, c.chroma ? coded.qt_chroma : coded.qt_luma));
  const int factor = coded.mcu / 8;
  image::Image out({coded.height, coded.width, ch});
  auto to_unit = [](double level) {
    return static_cast<float>(std::clamp(std::round(level), 0.0, 255.0) / 255.0);
  };
  for (int y = 0; y < coded.height; ++y)
    for (int x = 0; x < coded.width; ++x) {
      const double yy = planes[0].at(x, y);
      if (ch == 1) {
        out.at(y, x, 0) = to_unit(yy);
        continue;
      }
      const double cb = chroma_at(planes[1], x, y, factor) - 128.0;
      const double cr = chroma_at(planes[2], x, y, factor) - 128.0;
      out.at(y, x, 0) = to_unit(yy + 1.402 * cr);
      out.at(y, x, 1) = to_unit(yy - 0.344136 * cb - 0.714136 * cr);
      out.at(y, x, 2) = to_unit(yy + 1.772 * cb);
    }
  return out;
}

// Canonical codes (code, length) indexed by symbol.
struct HuffTable {
  std::array<std::uint16_t, 256> code{};
  std::array<std::uint8_t, 256> len{};
};

HuffTable build(const HuffSpec& s) {
  HuffTable t;
  int code = 0;
  std::size_t k = 0;
  for (int l = 1; l <= 16; ++l) {
    for (int i = 0; i < s.bits[l - 1]; ++i, ++k) {
      t.code[s.vals[k]] = static_cast<std::uint16_t>(code++);
      t.len[s.vals[k]] = static_cast<std::uint8_t>(l);
    }
    code <<= 1;
  }
  return t;
}

class BitWriter {
 public:
  explicit BitWriter(io::Bytes& out) : out_(out) {}
  void put(std::uint32_t bits, int n) {
    for (int i = n - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1u));
      if (++count_ == 8) emit();
    }
  }
  void flush() {
    while (count_ != 0) put(1, 1);
  }

 private:
  void emit() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    count_ = 0;
  }
  io::Bytes& out_;
  std::uint8_t acc_ = 0;
  int count_ = 0;
};

int magnitude_bits(int v) {
  int a = std::abs(v), n = 0;
  while (a) {
    ++n;
    a >>= 1;
  }
  return n;
}

void put_value(BitWriter& bw, int v, int n) {
  if (n == 0) return;
  bw.put(static_cast<std::uint32_t>(v < 0 ? v + (1 << n) - 1 : v), n);
}

void encode_block(BitWriter& bw, const Block& b, int& pred, const HuffTable& dc, const HuffTable& ac) {
  const int diff = b[0] - pred;
  pred = b[0];
  const int s = magnitude_bits(diff);
  bw.put(dc.code[s], dc.len[s]);
  put_value(bw, diff, s);
  int run = 0;
  for (int k = 1; k < 64; ++k) {
    const int v = b[kZigzag[k]];
    if (v == 0) {
      ++run;
      continue;
    }
    while (run > 15) {
      bw.put(ac.code[0xF0], ac.len[0xF0]);
      run -= 16;
    }
    const int n = magnitude_bits(v);
    const int sym = (run << 4) | n;
    bw.put(ac.code[sym], ac.len[sym]);
    put_value(bw, v, n);
    run = 0;
  }
  if (run > 0) bw.put(ac.code[0x00], ac.len[0x00]);
}

void u16be(io::Bytes& b, int v) {
  b.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void marker(io::Bytes& b, std::uint8_t m) {
  b.push_back(0xFF);
  b.push_back(m);
}

void write_dht(io::Bytes& b, int cls, int id, const HuffSpec& s) {
  marker(b, 0xC4);
  u16be(b, 2 + 1 + 16 + static_cast<int>(s.vals.size()));
  b.push_back(static_cast<std::uint8_t>((cls << 4) | id));
  b.insert(b.end(), s.bits.begin(), s.bits.end());
  b.insert(b.end(), s.vals.begin(), s.vals.end());
}

}  // namespace

std::array<int, 64> quant_table(bool chroma, int quality) {
  quality = std::clamp(quality, 1, 100);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const auto& base = chroma ? kChromaBase : kLumaBase;
  std::array<int, 64> t{};
  for (int i = 0; i < 64; ++i) t[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return t;
}

image::Image round_trip(const image::Image& img, const Options& opt) { return synthesize(analyze(img, opt)); }

io::Bytes encode(const image::Image& img, const Options& opt) {
  const Coded c = analyze(img, opt);
  const int nc = static_cast<int>(c.comps.size());
  io::Bytes b;
  marker(b, 0xD8);

  marker(b, 0xE0);
  u16be(b, 16);
  for (char ch : {'J', 'F', 'I', 'F', '\0'}) b.push_back(static_cast<std::uint8_t>(ch));
  b.insert(b.end(), {1, 1, 0});
  u16be(b, 1);
  u16be(b, 1);
  b.insert(b.end(), {0, 0});

  const int tables = nc == 1 ? 1 : 2;
  marker(b, 0xDB);
  u16be(b, 2 + 65 * tables);
  for (int t = 0; t < tables; ++t) {
    b.push_back(static_cast<std::uint8_t>(t));
    const auto& q = t == 0 ? c.qt_luma : c.qt_chroma;
    for (int k = 0; k < 64; ++k) b.push_back(static_cast<std::uint8_t>(q[kZigzag[k]]));
  }

  marker(b, 0xC0);
  u16be(b, 8 + 3 * nc);
  b.push_back(8);
  u16be(b, c.height);
  u16be(b, c.width);
  b.push_back(static_cast<std::uint8_t>(nc));
  for (int i = 0; i < nc; ++i) {
    b.push_back(static_cast<std::uint8_t>(i + 1));
    b.push_back(static_cast<std::uint8_t>((c.comps[i].hs << 4) | c.comps[i].vs));
    b.push_back(static_cast<std::uint8_t>(i == 0 ? 0 : 1));
  }

  write_dht(b, 0, 0, kDcLuma);
  write_dht(b, 1, 0, kAcLuma);
  if (nc > 1) {
    write_dht(b, 0, 1, kDcChroma);
    write_dht(b, 1, 1, kAcChroma);
  }

  marker(b, 0xDA);
  u16be(b, 6 + 2 * nc);
  b.push_back(static_cast<std::uint8_t>(nc));
  for (int i = 0; i < nc; ++i) {
    b.push_back(static_cast<std::uint8_t>(i + 1));
    b.push_back(static_cast<std::uint8_t>(i == 0 ? 0x00 : 0x11));
  }
  b.insert(b.end(), {0, 63, 0});

  const HuffTable dcl = build(kDcLuma), acl = build(kAcLuma), dcc = build(kDcChroma), acc = build(kAcChroma);
  BitWriter bw(b);
  std::vector<int> pred(nc, 0);
  const int mcus_x = (c.width + c.mcu - 1) / c.mcu, mcus_y = (c.height + c.mcu - 1) / c.mcu;
  for (int my = 0; my < mcus_y; ++my)
    for (int mx = 0; mx < mcus_x; ++mx)
      for (int i = 0; i < nc; ++i) {
        const auto& comp = c.comps[i];
        for (int v = 0; v < comp.vs; ++v)
          for (int h = 0; h < comp.hs; ++h) {
            const int bx = mx * comp.hs + h, by = my * comp.vs + v;
            encode_block(bw, comp.blocks[static_cast<std::size_t>(by) * comp.bw + bx], pred[i],
                         comp.chroma ? dcc : dcl, comp.chroma ? acc : acl);
          }
      }
  bw.flush();
  marker(b, 0xD9);
  return b;
}

}  // namespace gfp::jpeg
