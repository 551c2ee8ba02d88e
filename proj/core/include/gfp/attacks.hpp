#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gfp/image.hpp"
#include "gfp/rng.hpp"
#include "gfp/synth.hpp"
#include "gfp/trainer.hpp"
#include "json.hpp"

namespace gfp::attacks {

using image::Image;

enum class AttackKind { Noise, Blur, Crop, Jpeg, Relight, Combination };

std::string kind_name(AttackKind k);

struct AttackSpec {
  AttackKind kind = AttackKind::Noise;
  std::uint64_t seed = 0;

  // noise: s ~ U[min, max] in 8-bit units; std = s/255, or sqrt(s)/255 when noise_variance
  double noise_min = 5.0, noise_max = 20.0;
  bool noise_variance = false;
  std::vector<int> blur_kernels{1, 3, 5, 7, 9};
  double crop_min = 0.05, crop_max = 0.20;  // per-side offset fraction
  int jpeg_min = 10, jpeg_max = 75;
  bool jpeg_subsample = true;
  double relight_coeff = 0.3;  // a_i ~ U[-c, c]
  double gain_min = 0.5, gain_max = 1.5;
  double combo_p = 0.5;

  // "noise:seed=7", "crop:min=0.05,max=0.20,seed=3", "combo:seed=11", "blur:kernels=3/5,seed=1"
  static AttackSpec parse(const std::string& text);
  std::string to_string() const;
  nlohmann::json to_json() const;
  void validate() const;
};

// Gaussian sigma of a digital kernel of odd size k.
double blur_sigma(int k);
Image gaussian_blur(const Image& img, int k);

Image add_gaussian_noise(const Image& img, double stddev, Rng& rng, bool clamp = true);

struct CropBox {
  int top = 0, bottom = 0, left = 0, right = 0;  // pixels removed from each side
};
Image crop_resize(const Image& img, const CropBox& box);

using RelightCoeffs = std::array<double, 5>;  // for x, y, x^2, xy, y^2
// Gain field clamp(1 + sum a_i b_i(x,y), lo, hi) at pixel centres mapped to [-1,1]^2; [H,W].
std::vector<double> gain_field(int height, int width, const RelightCoeffs& a, double lo = 0.5, double hi = 1.5);
Image relight(const Image& img, const RelightCoeffs& a, double lo = 0.5, double hi = 1.5);

// Sampled parameters of one applied stage, for logging.
struct TraceEntry {
  std::string stage;
  bool applied = false;
  std::uint64_t sub_seed = 0;
  std::string params;
};
using Trace = std::vector<TraceEntry>;

Image apply_noise(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);
Image apply_blur(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);
Image apply_crop(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);
Image apply_jpeg(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);
Image apply_relight(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);

inline constexpr std::array<AttackKind, 5> kCombinationOrder = {AttackKind::Relight, AttackKind::Crop, AttackKind::Blur,
                                                                AttackKind::Jpeg, AttackKind::Noise};

// One coin and one sub-seed per stage in kCombinationOrder are always drawn from rng; an applied
// stage samples its parameters from Rng(sub_seed).
Image apply_combination(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);

// Dispatch on spec.kind.
Image apply(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);
// Single-stage attack of the given kind using spec's ranges.
Image apply_kind(AttackKind kind, const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace = nullptr);

// Image i uses Rng(mix_seed(spec.seed, i)); outputs are quantized to 8 bits.
synth::LabeledDataset attack_dataset(const synth::LabeledDataset& data, const AttackSpec& spec,
                                     std::vector<Trace>* traces = nullptr);

// Continues training on attacked copies of the training set, with fresh attack parameters
// every epoch.
attr::History immunize(attr::Classifier& net, const synth::LabeledDataset& train, const AttackSpec& spec,
                       const attr::TrainHyper& hyper,
                       const std::function<void(const attr::EpochStats&)>& on_epoch = {});

}  // namespace gfp::attacks
