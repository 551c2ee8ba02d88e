#include "gfp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>

#include "gfp/rng.hpp"

namespace gfp::synth {

void validate(const SourceSpec& spec) {
  if (!(spec.pattern_amplitude >= 0.0 && spec.pattern_amplitude <= 0.1))
    throw ArgumentError("pattern amplitude must lie in [0, 0.1]");
  if (!(spec.filter_strength >= 0.0 && spec.filter_strength <= 1.0))
    throw ArgumentError("filter strength must lie in [0, 1]");
}

Image high_pass_pattern(std::uint64_t seed, int height, int width, int channels) {
  Rng rng(mix_seed(seed, 0x5041545445524eULL));
  Image noise({height, width, channels});
  for (auto& v : noise.data()) v = static_cast<float>(rng.normal());
  const Image blurred = image::binomial_blur(noise);
  std::vector<double> hp(noise.size());
  double mu = 0.0;
  for (std::size_t i = 0; i < hp.size(); ++i) {
    hp[i] = static_cast<double>(noise[i]) - blurred[i];
    mu += hp[i];
  }
  mu /= hp.size();
  double var = 0.0;
  for (double v : hp) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / hp.size());
  Image out(noise.dims());
  for (std::size_t i = 0; i < hp.size(); ++i) out[i] = static_cast<float>((hp[i] - mu) / sd);
  return out;
}

SourceTransform::SourceTransform(SourceSpec spec, int height, int width, int channels)
    : spec_(std::move(spec)), pattern_(high_pass_pattern(spec_.seed, height, width, channels)) {
  validate(spec_);
}

Image SourceTransform::apply(const Image& img) const {
  if (img.dims() != pattern_.dims())
    throw ShapeError("source transform built for " + dims_to_string(pattern_.dims()) + ", got " +
                     dims_to_string(img.dims()));
  Image out = img;
  if (spec_.filter_strength > 0.0) {
    // (1 - s) I + s * sharpen(I) with sharpen(I) = 2I - blur(I)
    const Image blurred = image::binomial_blur(img);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<float>(img[i] + spec_.filter_strength * (static_cast<double>(img[i]) - blurred[i]));
  }
  if (spec_.pattern_amplitude > 0.0)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<float>(out[i] + spec_.pattern_amplitude * pattern_[i]);
  image::clamp01(out);
  return out;
}

SourceTransform make_source(const SourceSpec& spec, int size, int channels) {
  return SourceTransform(spec, size, size, channels);
}

namespace {

void check_size(int size) {
  if (size != 16 && size != 32 && size != 64 && size != 128)
    throw ArgumentError("image size must be one of 16, 32, 64, 128");
}

}  // namespace

Image gen_base_image(std::uint64_t seed, std::int64_t index, int size) {
  check_size(size);
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  const int c = kBaseChannels;

  // Two octaves of smooth noise: a coarse 4x4 grid and a finer size/4 grid, both bilinearly
  // upsampled, around a random base color.
  Image img({size, size, c});
  double base[kBaseChannels];
  for (auto& b : base) b = rng.uniform(0.3, 0.7);
  const int grids[2] = {4, std::max(4, size / 4)};
  const double amps[2] = {0.15, 0.05};
  for (int o = 0; o < 2; ++o) {
    Image coarse({grids[o], grids[o], c});
    for (auto& v : coarse.data()) v = static_cast<float>(rng.uniform(-amps[o], amps[o]));
    const Image up = image::resize_bilinear(coarse, size, size);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] += up[i];
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int ch = 0; ch < c; ++ch) img.at(y, x, ch) += static_cast<float>(base[ch]);

  const int shapes = rng.uniform_int(1, 4);
  for (int s = 0; s < shapes; ++s) {
    const bool circle = rng.coin();
    const double cx = rng.uniform(0, size), cy = rng.uniform(0, size);
    const double r = rng.uniform(0.08, 0.3) * size;
    const double rw = rng.uniform(0.1, 0.35) * size, rh = rng.uniform(0.1, 0.35) * size;
    const double alpha = rng.uniform(0.5, 1.0);
    double color[kBaseChannels];
    for (auto& col : color) col = rng.uniform(0.1, 0.9);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const bool inside = circle ? (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r
                                   : std::abs(px - cx) <= rw / 2 && std::abs(py - cy) <= rh / 2;
        if (!inside) continue;
        for (int ch = 0; ch < c; ++ch)
          img.at(y, x, ch) = static_cast<float>((1 - alpha) * img.at(y, x, ch) + alpha * color[ch]);
      }
  }
  image::clamp01(img);
  image::quantize8(img);
  return img;
}

std::vector<Image> gen_base_images(std::uint64_t seed, int n, int size) {
  if (n < 1) throw ArgumentError("need at least one base image");
  std::vector<Image> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(gen_base_image(seed, i, size));
  return out;
}

Dims LabeledDataset::image_dims() const {
  if (records.empty()) throw ArgumentError("empty dataset has no image dims");
  return records.front().image.dims();
}

std::vector<int> LabeledDataset::class_counts() const {
  std::vector<int> counts(classes.size(), 0);
  for (const auto& r : records) counts.at(r.label) += 1;
  return counts;
}

std::vector<int> LabeledDataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

void LabeledDataset::validate() const {
  if (classes.size() > 255) throw ArgumentError("at most 255 classes are supported");
  if (records.empty()) return;
  const Dims d = records.front().image.dims();
  if (d.size() != 3) throw ShapeError("dataset images must be [H,W,C]");
  for (const auto& r : records) {
    if (r.label < 0 || r.label >= num_classes())
      throw ArgumentError("record label " + std::to_string(r.label) + " missing from class table");
    if (r.image.dims() != d) throw ShapeError("dataset image dims are not uniform");
  }
}

LabeledDataset sample_dataset(const std::vector<SourceSpec>& sources, std::uint64_t base_seed, int per_class,
                              int size, bool include_real, std::int64_t base_offset) {
  if (per_class < 1) throw ArgumentError("per_class must be at least 1");
  const int num_classes = static_cast<int>(sources.size()) + (include_real ? 1 : 0);
  if (num_classes < 2) throw ArgumentError("a dataset needs at least two classes");
  check_size(size);

  LabeledDataset ds;
  std::vector<const SourceSpec*> per_label(num_classes, nullptr);
  if (include_real) ds.classes.push_back("real");
  for (const auto& s : sources) {
    validate(s);
    ds.classes.push_back(s.name.empty() ? "source_" + std::to_string(ds.classes.size()) : s.name);
  }
  std::set<std::string> unique(ds.classes.begin(), ds.classes.end());
  if (unique.size() != ds.classes.size()) throw ArgumentError("class names must be unique");

  std::vector<std::optional<SourceTransform>> transforms;
  if (include_real) transforms.emplace_back(std::nullopt);
  for (const auto& s : sources) transforms.emplace_back(make_source(s, size));

  ds.records.reserve(static_cast<std::size_t>(num_classes) * per_class);
  for (int c = 0; c < num_classes; ++c)
    for (int j = 0; j < per_class; ++j) {
      const std::int64_t idx = base_offset + static_cast<std::int64_t>(c) * per_class + j;
      Image img = gen_base_image(base_seed, idx, size);
      if (transforms[c]) {
        img = transforms[c]->apply(img);
        image::quantize8(img);
      }
      ds.records.push_back({std::move(img), c, idx});
    }
  return ds;
}

DatasetSplit sample_split(const std::vector<SourceSpec>& sources, std::uint64_t base_seed, int train_per_class,
                          int test_per_class, int size, bool include_real) {
  const int num_classes = static_cast<int>(sources.size()) + (include_real ? 1 : 0);
  DatasetSplit split;
  split.train = sample_dataset(sources, base_seed, train_per_class, size, include_real, 0);
  split.test = sample_dataset(sources, base_seed, test_per_class, size, include_real,
                              static_cast<std::int64_t>(num_classes) * train_per_class);
  return split;
}

std::vector<SourceSpec> seeded_sources(int count, std::uint64_t seed, double amplitude, double filter_strength) {
  std::vector<SourceSpec> out;
  for (int i = 0; i < count; ++i) {
    SourceSpec s;
    s.seed = mix_seed(seed, 1000 + i);
    s.pattern_amplitude = amplitude;
    s.filter_strength = filter_strength;
    s.label = i + 1;
    s.name = "source_" + std::to_string(i + 1);
    out.push_back(s);
  }
  return out;
}

}  // namespace gfp::synth
