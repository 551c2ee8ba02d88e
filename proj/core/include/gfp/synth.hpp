#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfp/image.hpp"

namespace gfp::synth {

using image::Image;

// Stand-in for one generator instance: a fixed high-pass pattern plus an optional sharpening mix.
struct SourceSpec {
  std::uint64_t seed = 0;
  double pattern_amplitude = 0.02;
  double filter_strength = 0.0;
  int label = 1;
  std::string name;
};

void validate(const SourceSpec& spec);

class SourceTransform {
 public:
  SourceTransform(SourceSpec spec, int height, int width, int channels);

  // clamp(filter_mix(I) + amplitude * pattern)
  Image apply(const Image& img) const;
  const Image& pattern() const { return pattern_; }
  const SourceSpec& spec() const { return spec_; }

 private:
  SourceSpec spec_;
  Image pattern_;
};

SourceTransform make_source(const SourceSpec& spec, int size, int channels = 3);

// Zero-mean, unit-variance high-pass pseudo-random field (white noise minus its binomial blur).
Image high_pass_pattern(std::uint64_t seed, int height, int width, int channels);

inline constexpr int kBaseChannels = 3;

// Procedural base image number `index` of the pool identified by `seed`: a low-pass noise field
// with a few flat shapes on top, quantized to 8 bits.
Image gen_base_image(std::uint64_t seed, std::int64_t index, int size);
std::vector<Image> gen_base_images(std::uint64_t seed, int n, int size);

struct Record {
  Image image;
  int label = 0;
  std::int64_t base_index = -1;  // index into the base pool; -1 when unknown (loaded from file)
};

struct LabeledDataset {
  std::vector<std::string> classes;
  std::vector<Record> records;

  int num_classes() const { return static_cast<int>(classes.size()); }
  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  Dims image_dims() const;
  std::vector<int> class_counts() const;
  std::vector<int> labels() const;
  // Throws if a label is outside the class table or image dims are not uniform.
  void validate() const;
};

// Classes: "real" (label 0, untransformed) when include_real, then one class per source in order.
// Sample j of class c uses base image base_offset + c * per_class + j, so every class draws
// fresh base images.
LabeledDataset sample_dataset(const std::vector<SourceSpec>& sources, std::uint64_t base_seed, int per_class,
                              int size, bool include_real, std::int64_t base_offset = 0);

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset test;
};

// Train and test sets over disjoint ranges of the base pool.
DatasetSplit sample_split(const std::vector<SourceSpec>& sources, std::uint64_t base_seed, int train_per_class,
                          int test_per_class, int size, bool include_real);

// `count` sources that differ only in their pattern seed.
std::vector<SourceSpec> seeded_sources(int count, std::uint64_t seed, double amplitude, double filter_strength = 0.0);

}  // namespace gfp::synth
