#include "gfp/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gfp/jpeg.hpp"

namespace gfp::attacks {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void log_stage(Trace* trace, AttackKind kind, std::string params) {
  if (trace) trace->push_back({kind_name(kind), true, 0, std::move(params)});
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ArgumentError("attack parameter " + key + " expects a number, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto d = std::stoull(v, &used);
    if (used == v.size() && !v.empty() && v[0] != '-') return d;
  } catch (const std::exception&) {
  }
  throw ArgumentError("attack parameter " + key + " expects a non-negative integer, got '" + v + "'");
}

AttackKind parse_kind(const std::string& name) {
  for (auto k : {AttackKind::Noise, AttackKind::Blur, AttackKind::Crop, AttackKind::Jpeg, AttackKind::Relight,
                 AttackKind::Combination})
    if (kind_name(k) == name) return k;
  throw ArgumentError("unknown attack kind '" + name + "' (noise|blur|crop|jpeg|relight|combo)");
}

}  // namespace

std::string kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::Noise: return "noise";
    case AttackKind::Blur: return "blur";
    case AttackKind::Crop: return "crop";
    case AttackKind::Jpeg: return "jpeg";
    case AttackKind::Relight: return "relight";
    case AttackKind::Combination: return "combo";
  }
  return "?";
}

AttackSpec AttackSpec::parse(const std::string& text) {
  AttackSpec s;
  const auto colon = text.find(':');
  s.kind = parse_kind(text.substr(0, colon));
  if (colon == std::string::npos) return s;
  std::stringstream items(text.substr(colon + 1));
  std::string item;
  while (std::getline(items, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ArgumentError("attack parameter '" + item + "' must be key=value");
    const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
    const bool noise = s.kind == AttackKind::Noise, crop = s.kind == AttackKind::Crop, jpeg = s.kind == AttackKind::Jpeg;
    if (key == "seed") {
      s.seed = parse_u64(key, val);
    } else if (key == "min" && noise) {
      s.noise_min = parse_double(key, val);
    } else if (key == "max" && noise) {
      s.noise_max = parse_double(key, val);
    } else if (key == "variance" && noise) {
      s.noise_variance = parse_u64(key, val) != 0;
    } else if (key == "min" && crop) {
      s.crop_min = parse_double(key, val);
    } else if (key == "max" && crop) {
      s.crop_max = parse_double(key, val);
    } else if (key == "min" && jpeg) {
      s.jpeg_min = static_cast<int>(parse_u64(key, val));
    } else if (key == "max" && jpeg) {
      s.jpeg_max = static_cast<int>(parse_u64(key, val));
    } else if (key == "subsample" && jpeg) {
      s.jpeg_subsample = parse_u64(key, val) != 0;
    } else if (key == "kernels" && s.kind == AttackKind::Blur) {
      s.blur_kernels.clear();
      std::stringstream ks(val);
      std::string k;
      while (std::getline(ks, k, '/')) s.blur_kernels.push_back(static_cast<int>(parse_u64(key, k)));
    } else if (key == "coeff" && s.kind == AttackKind::Relight) {
      s.relight_coeff = parse_double(key, val);
    } else if (key == "p" && s.kind == AttackKind::Combination) {
      s.combo_p = parse_double(key, val);
    } else {
      throw ArgumentError("attack " + kind_name(s.kind) + " has no parameter '" + key + "'");
    }
  }
  s.validate();
  return s;
}

std::string AttackSpec::to_string() const {
  std::string out = kind_name(kind) + ":";
  switch (kind) {
    case AttackKind::Noise:
      out += "min=" + fmt("%g", noise_min) + ",max=" + fmt("%g", noise_max) + ",variance=" + (noise_variance ? "1" : "0");
      break;
    case AttackKind::Blur: {
      out += "kernels=";
      for (std::size_t i = 0; i < blur_kernels.size(); ++i) out += (i ? "/" : "") + std::to_string(blur_kernels[i]);
      break;
    }
    case AttackKind::Crop: out += "min=" + fmt("%g", crop_min) + ",max=" + fmt("%g", crop_max); break;
    case AttackKind::Jpeg:
      out += "min=" + std::to_string(jpeg_min) + ",max=" + std::to_string(jpeg_max) + ",subsample=" + (jpeg_subsample ? "1" : "0");
      break;
    case AttackKind::Relight: out += "coeff=" + fmt("%g", relight_coeff); break;
    case AttackKind::Combination: out += "p=" + fmt("%g", combo_p); break;
  }
  return out + ",seed=" + std::to_string(seed);
}

nlohmann::json AttackSpec::to_json() const {
  return {{"spec", to_string()},
          {"kind", kind_name(kind)},
          {"seed", seed},
          {"noise", {{"min", noise_min}, {"max", noise_max}, {"variance", noise_variance}}},
          {"blur_kernels", blur_kernels},
          {"crop", {{"min", crop_min}, {"max", crop_max}}},
          {"jpeg", {{"min", jpeg_min}, {"max", jpeg_max}, {"subsample", jpeg_subsample}}},
          {"relight", {{"coeff", relight_coeff}, {"gain_min", gain_min}, {"gain_max", gain_max}}},
          {"combo_p", combo_p}};
}

void AttackSpec::validate() const {
  if (!(noise_min >= 0.0 && noise_min <= noise_max)) throw ArgumentError("noise range must satisfy 0 <= min <= max");
  if (blur_kernels.empty()) throw ArgumentError("blur needs at least one kernel size");
  for (int k : blur_kernels)
    if (k < 1 || k % 2 == 0) throw ArgumentError("blur kernel sizes must be odd and positive");
  if (!(crop_min >= 0.0 && crop_min <= crop_max && crop_max < 0.5))
    throw ArgumentError("crop range must satisfy 0 <= min <= max < 0.5");
  if (jpeg_min < 1 || jpeg_max > 100 || jpeg_min > jpeg_max) throw ArgumentError("jpeg quality range must lie in [1, 100]");
  if (!(relight_coeff >= 0.0)) throw ArgumentError("relight coefficient bound must be non-negative");
  if (!(gain_min > 0.0 && gain_min <= 1.0 && gain_max >= 1.0)) throw ArgumentError("gain clamp must bracket 1");
  if (!(combo_p >= 0.0 && combo_p <= 1.0)) throw ArgumentError("combination probability must lie in [0, 1]");
}

double blur_sigma(int k) { return 0.3 * ((k - 1) / 2.0 - 1.0) + 0.8; }

Image gaussian_blur(const Image& img, int k) {
  if (k < 1 || k % 2 == 0) throw ArgumentError("blur kernel size must be odd and positive");
  if (k == 1) return img;
  const auto kernel = image::gaussian_kernel(k, blur_sigma(k));
  return image::filter_separable(img, kernel);
}

Image add_gaussian_noise(const Image& img, double stddev, Rng& rng, bool clamp) {
  Image out = img;
  for (auto& v : out.data()) v = static_cast<float>(v + rng.normal(0.0, stddev));
  if (clamp) image::clamp01(out);
  return out;
}

Image crop_resize(const Image& img, const CropBox& b) {
  const int h = img.dim(0), w = img.dim(1);
  const int ch = h - b.top - b.bottom, cw = w - b.left - b.right;
  if (b.top < 0 || b.bottom < 0 || b.left < 0 || b.right < 0 || ch < 1 || cw < 1)
    throw ArgumentError("crop box leaves an empty image");
  return image::resize_bilinear(image::crop(img, b.top, b.left, ch, cw), h, w);
}

std::vector<double> gain_field(int height, int width, const RelightCoeffs& a, double lo, double hi) {
  std::vector<double> g(static_cast<std::size_t>(height) * width);
  for (int yi = 0; yi < height; ++yi) {
    const double y = -1.0 + (2.0 * yi + 1.0) / height;
    for (int xi = 0; xi < width; ++xi) {
      const double x = -1.0 + (2.0 * xi + 1.0) / width;
      const double v = 1.0 + a[0] * x + a[1] * y + a[2] * x * x + a[3] * x * y + a[4] * y * y;
      g[static_cast<std::size_t>(yi) * width + xi] = std::clamp(v, lo, hi);
    }
  }
  return g;
}

Image relight(const Image& img, const RelightCoeffs& a, double lo, double hi) {
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const auto g = gain_field(h, w, a, lo, hi);
  Image out = img;
  for (std::size_t p = 0; p < g.size(); ++p)
    for (int k = 0; k < c; ++k) out[p * c + k] = static_cast<float>(out[p * c + k] * g[p]);
  image::clamp01(out);
  return out;
}

Image apply_noise(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  const double s = rng.uniform(spec.noise_min, spec.noise_max);
  const double sd = (spec.noise_variance ? std::sqrt(s) : s) / 255.0;
  log_stage(trace, AttackKind::Noise, "s=" + fmt("%.4f", s) + " std=" + fmt("%.6f", sd));
  return add_gaussian_noise(img, sd, rng);
}

Image apply_blur(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  const int k = spec.blur_kernels[rng.uniform_int(0, static_cast<int>(spec.blur_kernels.size()) - 1)];
  log_stage(trace, AttackKind::Blur, "k=" + std::to_string(k) + " sigma=" + fmt("%.4f", blur_sigma(k)));
  return gaussian_blur(img, k);
}

Image apply_crop(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  const int h = img.dim(0), w = img.dim(1);
  auto side = [&](int extent) { return static_cast<int>(std::lround(rng.uniform(spec.crop_min, spec.crop_max) * extent)); };
  CropBox b;
  b.left = side(w);
  b.right = side(w);
  b.top = side(h);
  b.bottom = side(h);
  log_stage(trace, AttackKind::Crop,
            "top=" + std::to_string(b.top) + " bottom=" + std::to_string(b.bottom) + " left=" + std::to_string(b.left) +
                " right=" + std::to_string(b.right));
  return crop_resize(img, b);
}

Image apply_jpeg(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  const int q = rng.uniform_int(spec.jpeg_min, spec.jpeg_max);
  log_stage(trace, AttackKind::Jpeg, "quality=" + std::to_string(q));
  return jpeg::round_trip(img, {q, spec.jpeg_subsample});
}

Image apply_relight(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  RelightCoeffs a{};
  for (auto& v : a) v = rng.uniform(-spec.relight_coeff, spec.relight_coeff);
  std::string p = "a=";
  for (std::size_t i = 0; i < a.size(); ++i) p += (i ? "/" : "") + fmt("%.4f", a[i]);
  log_stage(trace, AttackKind::Relight, p);
  return relight(img, a, spec.gain_min, spec.gain_max);
}

Image apply_kind(AttackKind kind, const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  switch (kind) {
    case AttackKind::Noise: return apply_noise(img, spec, rng, trace);
    case AttackKind::Blur: return apply_blur(img, spec, rng, trace);
    case AttackKind::Crop: return apply_crop(img, spec, rng, trace);
    case AttackKind::Jpeg: return apply_jpeg(img, spec, rng, trace);
    case AttackKind::Relight: return apply_relight(img, spec, rng, trace);
    case AttackKind::Combination: return apply_combination(img, spec, rng, trace);
  }
  return img;
}

Image apply_combination(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  Image out = img;
  for (AttackKind stage : kCombinationOrder) {
    const bool on = rng.coin(spec.combo_p);
    const std::uint64_t sub = rng.next_u64();
    if (!on) {
      if (trace) trace->push_back({kind_name(stage), false, sub, ""});
      continue;
    }
    Rng stage_rng(sub);
    Trace inner;
    out = apply_kind(stage, out, spec, stage_rng, trace ? &inner : nullptr);
    if (trace) trace->push_back({kind_name(stage), true, sub, inner.empty() ? "" : inner.front().params});
  }
  return out;
}

Image apply(const Image& img, const AttackSpec& spec, Rng& rng, Trace* trace) {
  return apply_kind(spec.kind, img, spec, rng, trace);
}

synth::LabeledDataset attack_dataset(const synth::LabeledDataset& data, const AttackSpec& spec,
                                     std::vector<Trace>* traces) {
  spec.validate();
  synth::LabeledDataset out;
  out.classes = data.classes;
  out.records.reserve(data.size());
  if (traces) traces->assign(data.size(), {});
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng(mix_seed(spec.seed, i));
    Image img = apply(data.records[i].image, spec, rng, traces ? &(*traces)[i] : nullptr);
    image::quantize8(img);
    out.records.push_back({std::move(img), data.records[i].label, data.records[i].base_index});
  }
  return out;
}

attr::History immunize(attr::Classifier& net, const synth::LabeledDataset& train, const AttackSpec& spec,
                       const attr::TrainHyper& hyper, const std::function<void(const attr::EpochStats&)>& on_epoch) {
  spec.validate();
  const attr::Augment augment = [&spec](const Tensor& img, int epoch, std::size_t index) {
    Rng rng(mix_seed(mix_seed(spec.seed, 0x494d4d554e45ULL + static_cast<std::uint64_t>(epoch)), index));
    Image out = apply(img, spec, rng);
    image::quantize8(out);
    return out;
  };
  return attr::train(net, train, hyper, augment, on_epoch);
}

}  // namespace gfp::attacks
