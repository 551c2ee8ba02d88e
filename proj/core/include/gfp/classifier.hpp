#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gfp/graph.hpp"
#include "gfp/metrics.hpp"
#include "gfp/synth.hpp"
#include "json.hpp"

namespace gfp::attr {

enum class VariantKind { Full, PreDownsample, PreDownsampleResidual, PostPool };

// Component-analysis variant of the attribution network. `resolution` is the stop resolution
// for pre-downsampling, the residual resolution, or the pooling start resolution.
struct Variant {
  VariantKind kind = VariantKind::Full;
  int resolution = 0;

  // "full" | "predown:8" | "residual:16" | "postpool:8"
  static Variant parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const Variant&) const = default;
};

struct ArchConfig {
  int input_size = 32;
  int in_channels = 3;
  int base_channels = 16;
  int max_channels = 128;
  Variant variant;
  int num_classes = 2;

  void validate() const;
  // Length of the pre-logit feature vector.
  int feature_dim() const;
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
};

enum class LayerKind { GaussianDown, Residual, Conv, AvgPool, Linear };

struct LayerSpec {
  LayerKind kind;
  std::string name;  // parameter prefix for Conv/Linear
  int kernel = 0, stride = 1, pad = 0;
  int in_channels = 0, out_channels = 0;
  int in_resolution = 0, out_resolution = 0;
  bool activation = false;  // LeakyReLU(0.2) after the layer
};

// Full layer sequence of the configured network, input end first.
std::vector<LayerSpec> layer_plan(const ArchConfig& config);

// Patch side covered by one tensor pixel where pooling would start at `pool_start_resolution`
// (r <- r + (k-1) j, j <- j s over the trainable layers up to that point), clamped to input_size.
int receptive_field(const ArchConfig& config, int pool_start_resolution);
// Same recurrence over the Conv entries of an arbitrary layer list.
int receptive_field(std::span<const LayerSpec> layers, int input_size);

inline constexpr float kLeakySlope = 0.2f;

template <class T>
struct ForwardResult {
  ad::Var<T> features;  // [N, feature_dim]
  ad::Var<T> logits;    // [N, num_classes]
};

// Records the network on `graph`. images: [N,H,W,C] in [0,1]. When `trainable` is false the
// parameters enter as constants and no backward closures are kept.
template <class T>
ForwardResult<T> forward(const ArchConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph,
                         const BasicTensor<T>& images, bool trainable);

// Per-class weight row of the final fully connected layer.
using ClassifierFingerprint = std::vector<float>;
using FeatureVector = std::vector<float>;

struct Prediction {
  int label = 0;
  std::vector<float> logits;
};

class Classifier {
 public:
  Classifier(ArchConfig config, std::uint64_t seed);
  Classifier(ArchConfig config, ad::ParamSet<float> params);

  const ArchConfig& config() const { return config_; }
  ad::ParamSet<float>& params() { return params_; }
  const ad::ParamSet<float>& params() const { return params_; }

  FeatureVector extract_feature(const Tensor& image) const;
  // Batched pre-logit features, one row per image.
  std::vector<FeatureVector> extract_features(std::span<const Tensor> images) const;
  std::vector<ClassifierFingerprint> model_fingerprints() const;
  std::vector<float> fc_bias() const;

  Prediction classify(const Tensor& image) const;
  std::vector<Prediction> classify_batch(std::span<const Tensor> images) const;

 private:
  ArchConfig config_;
  mutable ad::ParamSet<float> params_;
};

// Argmax with smallest-index tie-break.
int argmax(std::span<const float> values);

// Stacks [H,W,C] images into [N,H,W,C].
Tensor stack_images(std::span<const Tensor> images);

ad::ParamSet<float> init_params(const ArchConfig& config, std::uint64_t seed);

struct Evaluation {
  double accuracy = 0.0;
  metrics::ConfusionMatrix confusion;
};

Evaluation evaluate(const Classifier& net, const synth::LabeledDataset& test_set);

}  // namespace gfp::attr
