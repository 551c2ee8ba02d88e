#include "gfp/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "gfp/ops.hpp"
#include "gfp/rng.hpp"

namespace gfp::attr {
namespace {

bool is_pow2(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }
int log2i(int v) { return std::countr_zero(static_cast<unsigned>(v)); }

int channels_at(const ArchConfig& c, int resolution) {
  const int level = log2i(c.input_size / resolution);
  return std::min(c.base_channels << level, c.max_channels);
}

LayerSpec conv(const std::string& name, int k, int stride, int pad, int cin, int cout, int res) {
  LayerSpec l{LayerKind::Conv, name, k, stride, pad, cin, cout, res, 0, true};
  l.out_resolution = (res + 2 * pad - k) / stride + 1;
  return l;
}

}  // namespace

Variant Variant::parse(const std::string& text) {
  if (text == "full") return {};
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ArgumentError("unknown architecture '" + text + "'");
  const std::string kind = text.substr(0, colon);
  int res = 0;
  try {
    std::size_t used = 0;
    res = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ArgumentError("bad resolution in architecture '" + text + "'");
  }
  if (kind == "predown") return {VariantKind::PreDownsample, res};
  if (kind == "residual") return {VariantKind::PreDownsampleResidual, res};
  if (kind == "postpool") return {VariantKind::PostPool, res};
  throw ArgumentError("unknown architecture '" + text + "'");
}

std::string Variant::to_string() const {
  switch (kind) {
    case VariantKind::Full: return "full";
    case VariantKind::PreDownsample: return "predown:" + std::to_string(resolution);
    case VariantKind::PreDownsampleResidual: return "residual:" + std::to_string(resolution);
    case VariantKind::PostPool: return "postpool:" + std::to_string(resolution);
  }
  return "full";
}

void ArchConfig::validate() const {
  if (!is_pow2(input_size) || input_size < 16 || input_size > 128)
    throw ArgumentError("input_size must be a power of two in [16, 128]");
  if (in_channels < 1) throw ArgumentError("in_channels must be positive");
  if (base_channels < 1 || max_channels < base_channels)
    throw ArgumentError("need 1 <= base_channels <= max_channels");
  if (num_classes < 2) throw ArgumentError("num_classes must be at least 2");
  if (variant.kind != VariantKind::Full) {
    const int r = variant.resolution;
    if (!is_pow2(r) || r < 4 || r > input_size)
      throw ArgumentError("variant resolution " + std::to_string(r) + " must be a power of two in [4, input_size]");
  }
}

int ArchConfig::feature_dim() const {
  if (variant.kind == VariantKind::PostPool) return channels_at(*this, variant.resolution);
  return max_channels;
}

nlohmann::json ArchConfig::to_json() const {
  return {{"input_size", input_size},       {"in_channels", in_channels}, {"base_channels", base_channels},
          {"max_channels", max_channels},   {"variant", variant.to_string()}, {"num_classes", num_classes}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.in_channels = j.value("in_channels", 3);
  c.base_channels = j.at("base_channels").get<int>();
  c.max_channels = j.at("max_channels").get<int>();
  c.variant = Variant::parse(j.at("variant").get<std::string>());
  c.num_classes = j.at("num_classes").get<int>();
  c.validate();
  return c;
}

std::vector<LayerSpec> layer_plan(const ArchConfig& c) {
  c.validate();
  std::vector<LayerSpec> plan;
  const auto kind = c.variant.kind;
  int res = c.input_size;
  const int ch = c.in_channels;

  if (kind == VariantKind::PreDownsample || kind == VariantKind::PreDownsampleResidual) {
    for (; res > c.variant.resolution; res /= 2)
      plan.push_back({LayerKind::GaussianDown, "", 5, 2, 2, ch, ch, res, res / 2, false});
    if (kind == VariantKind::PreDownsampleResidual)
      plan.push_back({LayerKind::Residual, "", 0, 1, 0, ch, ch, res, res, false});
  }

  const bool postpool = kind == VariantKind::PostPool;
  const int pool_at = postpool ? c.variant.resolution : 0;
  int cin = ch;
  bool pooled = false;
  for (; res >= 8; res /= 2) {
    const int cur = channels_at(c, res), next = channels_at(c, res / 2);
    const std::string prefix = "b" + std::to_string(res);
    plan.push_back(conv(prefix + ".conv1", 3, 1, 1, cin, cur, res));
    if (postpool && res == pool_at) {
      pooled = true;
      cin = cur;
      break;
    }
    plan.push_back(conv(prefix + ".conv2", 3, 2, 1, cur, next, res));
    cin = next;
  }
  if (!pooled) {
    const int cur = channels_at(c, 4);
    plan.push_back(conv("b4.conv1", 3, 1, 1, cin, cur, 4));
    cin = cur;
    if (postpool) {
      pooled = true;
    } else {
      plan.push_back(conv("head", 4, 1, 0, cur, c.max_channels, 4));
      cin = c.max_channels;
      res = 1;
    }
  }
  if (pooled)
    for (; res > 1; res /= 2) plan.push_back({LayerKind::AvgPool, "", 2, 2, 0, cin, cin, res, res / 2, false});
  plan.push_back({LayerKind::Linear, "fc", 0, 1, 0, cin, c.num_classes, 1, 1, false});
  return plan;
}

int receptive_field(std::span<const LayerSpec> layers, int input_size) {
  int rf = 1, jump = 1;
  for (const auto& l : layers) {
    if (l.kind != LayerKind::Conv) continue;
    rf += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return std::min(rf, input_size);
}

int receptive_field(const ArchConfig& config, int pool_start_resolution) {
  ArchConfig c = config;
  c.variant = {VariantKind::PostPool, pool_start_resolution};
  c.validate();
  return receptive_field(layer_plan(c), c.input_size);
}

ad::ParamSet<float> init_params(const ArchConfig& config, std::uint64_t seed) {
  ad::ParamSet<float> ps;
  Rng rng(seed);
  const double gain = 2.0 / (1.0 + static_cast<double>(kLeakySlope) * kLeakySlope);
  for (const auto& l : layer_plan(config)) {
    if (l.kind == LayerKind::Conv) {
      const double sd = std::sqrt(gain / (l.kernel * l.kernel * l.in_channels));
      Tensor w({l.kernel, l.kernel, l.in_channels, l.out_channels});
      for (auto& v : w.data()) v = static_cast<float>(rng.normal(0.0, sd));
      ps.add(l.name + ".w", std::move(w));
      ps.add(l.name + ".b", Tensor({l.out_channels}));
    } else if (l.kind == LayerKind::Linear) {
      const double sd = std::sqrt(1.0 / l.in_channels);
      Tensor w({l.out_channels, l.in_channels});
      for (auto& v : w.data()) v = static_cast<float>(rng.normal(0.0, sd));
      ps.add(l.name + ".w", std::move(w));
      ps.add(l.name + ".b", Tensor({l.out_channels}));
    }
  }
  return ps;
}

template <class T>
ForwardResult<T> forward(const ArchConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph,
                         const BasicTensor<T>& images, bool trainable) {
  if (images.rank() != 4 || images.dim(1) != config.input_size || images.dim(2) != config.input_size ||
      images.dim(3) != config.in_channels)
    throw ShapeError("classifier expects [N," + std::to_string(config.input_size) + "," +
                     std::to_string(config.input_size) + "," + std::to_string(config.in_channels) + "], got " +
                     dims_to_string(images.dims()));
  BasicTensor<T> x = images;
  for (auto& v : x.data()) v = v * T(2) - T(1);
  auto p = [&](const std::string& name) {
    return trainable ? graph.param(params, name) : graph.constant(params.at(name).value);
  };
  const int n = images.dim(0);
  ad::Var<T> h = graph.constant(std::move(x));
  ForwardResult<T> out;
  for (const auto& l : layer_plan(config)) {
    switch (l.kind) {
      case LayerKind::GaussianDown: h = ad::gaussian_downsample(h); break;
      case LayerKind::Residual: h = ad::sub(h, ad::upsample_bilinear(ad::gaussian_downsample(h))); break;
      case LayerKind::Conv:
        h = ad::add_channel_bias(ad::conv2d(h, p(l.name + ".w"), l.stride, l.pad), p(l.name + ".b"));
        if (l.activation) h = ad::leaky_relu(h, static_cast<T>(kLeakySlope));
        break;
      case LayerKind::AvgPool: h = ad::avg_pool2d(h, 2, 2); break;
      case LayerKind::Linear:
        out.features = ad::reshape(h, {n, l.in_channels});
        out.logits = ad::linear(out.features, p(l.name + ".w"), p(l.name + ".b"));
        break;
    }
  }
  return out;
}

template ForwardResult<float> forward(const ArchConfig&, ad::ParamSet<float>&, ad::Graph<float>&,
                                      const BasicTensor<float>&, bool);
template ForwardResult<double> forward(const ArchConfig&, ad::ParamSet<double>&, ad::Graph<double>&,
                                       const BasicTensor<double>&, bool);

int argmax(std::span<const float> values) {
  if (values.empty()) throw ArgumentError("argmax of empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw ArgumentError("cannot stack zero images");
  const Dims d = images.front().dims();
  if (d.size() != 3) throw ShapeError("stack_images expects [H,W,C] images");
  Tensor out({static_cast<int>(images.size()), d[0], d[1], d[2]});
  const std::size_t per = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].dims() != d) throw ShapeError("stack_images: image dims differ");
    std::copy(images[i].ptr(), images[i].ptr() + per, out.ptr() + i * per);
  }
  return out;
}

Classifier::Classifier(ArchConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(init_params(config_, seed)) {}

Classifier::Classifier(ArchConfig config, ad::ParamSet<float> params)
    : config_(std::move(config)), params_(std::move(params)) {
  const auto expected = init_params(config_, 0);
  for (const auto& [name, p] : expected) {
    if (!params_.contains(name)) throw FormatError("checkpoint is missing parameter " + name);
    if (params_.at(name).value.dims() != p.value.dims())
      throw FormatError("checkpoint parameter " + name + " has dims " + dims_to_string(params_.at(name).value.dims()) +
                        ", expected " + dims_to_string(p.value.dims()));
  }
  if (params_.size() != expected.size()) throw FormatError("checkpoint has unexpected extra parameters");
}

namespace {
constexpr std::size_t kInferenceBatch = 128;
}

std::vector<FeatureVector> Classifier::extract_features(std::span<const Tensor> images) const {
  std::vector<FeatureVector> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kInferenceBatch) {
    const auto chunk = images.subspan(start, std::min(kInferenceBatch, images.size() - start));
    ad::Graph<float> g;
    auto r = forward(config_, params_, g, stack_images(chunk), false);
    const auto& f = r.features.value();
    const int d = f.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) out.emplace_back(f.ptr() + i * d, f.ptr() + (i + 1) * d);
  }
  return out;
}

FeatureVector Classifier::extract_feature(const Tensor& image) const {
  return extract_features(std::span<const Tensor>(&image, 1)).front();
}

std::vector<ClassifierFingerprint> Classifier::model_fingerprints() const {
  const auto& w = params_.at("fc.w").value;
  const int k = w.dim(0), d = w.dim(1);
  std::vector<ClassifierFingerprint> out;
  for (int i = 0; i < k; ++i) out.emplace_back(w.ptr() + static_cast<std::size_t>(i) * d, w.ptr() + static_cast<std::size_t>(i + 1) * d);
  return out;
}

std::vector<float> Classifier::fc_bias() const {
  const auto& b = params_.at("fc.b").value;
  return {b.ptr(), b.ptr() + b.size()};
}

std::vector<Prediction> Classifier::classify_batch(std::span<const Tensor> images) const {
  std::vector<Prediction> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kInferenceBatch) {
    const auto chunk = images.subspan(start, std::min(kInferenceBatch, images.size() - start));
    ad::Graph<float> g;
    auto r = forward(config_, params_, g, stack_images(chunk), false);
    const auto& l = r.logits.value();
    const int k = l.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Prediction p;
      p.logits.assign(l.ptr() + i * k, l.ptr() + (i + 1) * k);
      p.label = argmax(p.logits);
      out.push_back(std::move(p));
    }
  }
  return out;
}

Prediction Classifier::classify(const Tensor& image) const {
  return classify_batch(std::span<const Tensor>(&image, 1)).front();
}

Evaluation evaluate(const Classifier& net, const synth::LabeledDataset& test_set) {
  if (test_set.num_classes() != net.config().num_classes)
    throw ArgumentError("evaluation set has " + std::to_string(test_set.num_classes()) + " classes, network has " +
                        std::to_string(net.config().num_classes));
  std::vector<Tensor> images;
  images.reserve(test_set.size());
  for (const auto& r : test_set.records) images.push_back(r.image);
  const auto preds = net.classify_batch(images);
  Evaluation e{0.0, metrics::ConfusionMatrix(net.config().num_classes)};
  for (std::size_t i = 0; i < preds.size(); ++i) e.confusion.add(test_set.records[i].label, preds[i].label);
  e.accuracy = e.confusion.accuracy();
  return e;
}

}  // namespace gfp::attr
