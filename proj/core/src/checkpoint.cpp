#include "gfp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace gfp {
namespace io {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::str16(std::string_view s) {
  if (s.size() > 0xFFFF) throw ArgumentError("string too long for u16 length prefix");
  u16(static_cast<std::uint16_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteWriter::raw(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf_.insert(buf_.end(), p, p + n);
}

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n)) throw FormatError("unexpected end of data");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::fixed(std::size_t n) {
  const auto* p = take(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

std::string ByteReader::str16() { return fixed(u16()); }

const std::uint8_t* ByteReader::take(std::size_t n) {
  if (remaining() < n) throw FormatError("unexpected end of data");
  const auto* p = data_ + pos_;
  pos_ += n;
  return p;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return b;
}

void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

std::string content_hash(const Bytes& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace io

io::Bytes encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  io::ByteWriter w;
  w.raw("GFPC", 4);
  w.u8(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.str16(t.name);
    w.u8(static_cast<std::uint8_t>(t.value.rank()));
    for (int d : t.value.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) w.f32(v);
  }
  return w.take();
}

std::vector<NamedTensor> decode_checkpoint(const io::Bytes& bytes) {
  io::ByteReader r(bytes);
  if (r.fixed(4) != "GFPC") throw FormatError("not a GFPC checkpoint (bad magic)");
  const auto version = r.u8();
  if (version != kCheckpointVersion) throw FormatError("unsupported GFPC version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str16();
    const int rank = r.u8();
    Dims dims(rank);
    for (int k = 0; k < rank; ++k) {
      const auto d = r.u32();
      if (d == 0 || d > (1u << 28)) throw FormatError("invalid dim in tensor " + t.name);
      dims[k] = static_cast<int>(d);
    }
    const std::size_t n = dims_product(dims);
    if (r.remaining() < n * 4) throw FormatError("truncated data for tensor " + t.name);
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    t.value = Tensor(std::move(dims), std::move(data));
    out.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after GFPC payload");
  return out;
}

std::vector<NamedTensor> to_named(const ad::ParamSet<float>& params) {
  std::vector<NamedTensor> out;
  for (const auto& [name, p] : params) out.push_back({name, p.value});
  return out;
}

ad::ParamSet<float> to_params(const std::vector<NamedTensor>& tensors) {
  ad::ParamSet<float> ps;
  for (const auto& t : tensors) ps.add(t.name, t.value);
  return ps;
}

void save_checkpoint(const std::filesystem::path& path, const ad::ParamSet<float>& params) {
  io::write_file_atomic(path, encode_checkpoint(to_named(params)));
}

ad::ParamSet<float> load_checkpoint(const std::filesystem::path& path) {
  return to_params(decode_checkpoint(io::read_file(path)));
}

}  // namespace gfp
