#include "gfp/dataset_io.hpp"

namespace gfp::synth {

io::Bytes encode_dataset(const LabeledDataset& ds) {
  ds.validate();
  if (ds.empty()) throw ArgumentError("refusing to encode an empty dataset");
  const Dims d = ds.image_dims();
  if (d[0] > 0xFFFF || d[1] > 0xFFFF || d[2] > 0xFF) throw ArgumentError("image dims exceed GFPD field widths");
  io::ByteWriter w;
  w.raw("GFPD", 4);
  w.u8(kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(d[0]));
  w.u16(static_cast<std::uint16_t>(d[1]));
  w.u8(static_cast<std::uint8_t>(d[2]));
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u8(static_cast<std::uint8_t>(ds.classes.size()));
  for (const auto& name : ds.classes) w.str16(name);
  for (const auto& r : ds.records) {
    w.u8(static_cast<std::uint8_t>(r.label));
    for (float v : r.image.data()) w.u8(image::to_u8(v));
  }
  return w.take();
}

LabeledDataset decode_dataset(const io::Bytes& bytes) {
  io::ByteReader r(bytes);
  if (r.fixed(4) != "GFPD") throw FormatError("not a GFPD dataset (bad magic)");
  const auto version = r.u8();
  if (version != kDatasetVersion) throw FormatError("unsupported GFPD version " + std::to_string(version));
  const int h = r.u16(), w = r.u16(), c = r.u8();
  const auto count = r.u32();
  const int ncls = r.u8();
  if (h == 0 || w == 0 || c == 0) throw FormatError("GFPD header has zero image dims");
  LabeledDataset ds;
  for (int i = 0; i < ncls; ++i) ds.classes.push_back(r.str16());
  const std::size_t px = static_cast<std::size_t>(h) * w * c;
  if (r.remaining() != static_cast<std::size_t>(count) * (px + 1))
    throw FormatError("GFPD record section has wrong length");
  ds.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec;
    rec.label = r.u8();
    if (rec.label >= ncls) throw FormatError("GFPD record label outside class table");
    rec.image = image::Image({h, w, c});
    const auto* p = r.take(px);
    for (std::size_t k = 0; k < px; ++k) rec.image[k] = p[k] / 255.0f;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  io::write_file_atomic(path, encode_dataset(ds));
}

LabeledDataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

}  // namespace gfp::synth
