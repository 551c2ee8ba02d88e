#include "gfp/fingerprint_vis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "gfp/checkpoint.hpp"
#include "gfp/classifier.hpp"
#include "gfp/image.hpp"
#include "gfp/ops.hpp"
#include "gfp/rng.hpp"

namespace gfp::vis {
namespace {

constexpr float kSlope = 0.2f;
constexpr std::size_t kInferenceBatch = 128;

int layer_width(const VisConfig& c, int level) { return std::min(c.width << level, c.max_width); }

// Number of stride-2 stages from `size` down to 4x4.
int stages(const VisConfig& c) {
  int n = 0;
  for (int r = c.size; r > 4; r /= 2) ++n;
  return n;
}

void add_conv(ad::ParamSet<float>& ps, Rng& rng, const std::string& name, int k, int cin, int cout, double gain) {
  const double sd = std::sqrt(gain / (k * k * cin));
  Tensor w({k, k, cin, cout});
  for (auto& v : w.data()) v = static_cast<float>(rng.normal(0.0, sd));
  ps.add(name + ".w", std::move(w));
  ps.add(name + ".b", Tensor({cout}));
}

template <class T>
ad::Var<T> bind_param(ad::ParamSet<T>& ps, ad::Graph<T>& g, const std::string& name, bool trainable) {
  return trainable ? g.param(ps, name) : g.constant(ps.at(name).value);
}

template <class T>
ad::Var<T> conv_layer(ad::ParamSet<T>& ps, ad::Graph<T>& g, ad::Var<T> x, const std::string& name, int stride,
                      bool trainable) {
  return ad::add_channel_bias(ad::conv2d(x, bind_param(ps, g, name + ".w", trainable), stride, 1),
                              bind_param(ps, g, name + ".b", trainable));
}

// The reconstruction API takes mutable parameter sets because trainable graphs bind gradients;
// inference only reads values.
ad::ParamSet<float>& readonly(const ad::ParamSet<float>& ps) { return const_cast<ad::ParamSet<float>&>(ps); }

void check_images(const VisConfig& c, const Dims& d) {
  if (d.size() != 4 || d[1] != c.size || d[2] != c.size || d[3] != c.channels)
    throw ShapeError("visualization nets expect [N," + std::to_string(c.size) + "," + std::to_string(c.size) + "," +
                     std::to_string(c.channels) + "], got " + dims_to_string(d));
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double corr(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw ShapeError("corr: dims " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("corr of empty images");
  const double ma = a.mean(), mb = b.mean();
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[i] - ma, y = b[i] - mb;
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (!(aa > 0.0) || !(bb > 0.0)) throw NumericalError("corr: constant image has zero norm after centering");
  return ab / std::sqrt(aa * bb);
}

double pix_loss(const Tensor& image, const Tensor& reconstruction) {
  if (image.dims() != reconstruction.dims())
    throw ShapeError("pix_loss: dims " + dims_to_string(image.dims()) + " vs " + dims_to_string(reconstruction.dims()));
  return image::mean_abs_diff(image, reconstruction);
}

double total_objective(double pix, double adv, double cls, const LossWeights& w) {
  return w.pix * pix + w.adv * adv + w.cls * cls;
}

void VisConfig::validate() const {
  if (size < 8 || size > 128 || (size & (size - 1)) != 0) throw ArgumentError("vis size must be a power of two in [8, 128]");
  if (channels != 1 && channels != 3) throw ArgumentError("vis channels must be 1 or 3");
  if (width < 1 || max_width < width) throw ArgumentError("need 1 <= width <= max_width");
  if (num_classes < 2) throw ArgumentError("num_classes must be at least 2");
}

nlohmann::json VisConfig::to_json() const {
  return {{"size", size}, {"channels", channels}, {"width", width}, {"max_width", max_width}, {"num_classes", num_classes}};
}

VisConfig VisConfig::from_json(const nlohmann::json& j) {
  VisConfig c;
  c.size = j.at("size").get<int>();
  c.channels = j.at("channels").get<int>();
  c.width = j.at("width").get<int>();
  c.max_width = j.at("max_width").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.validate();
  return c;
}

VisNets init_vis(const VisConfig& config, std::uint64_t seed) {
  config.validate();
  VisNets n{config, {}, {}, {}};
  Rng rng(seed);
  const double he = 2.0 / (1.0 + static_cast<double>(kSlope) * kSlope);
  const int s = stages(config);

  add_conv(n.recon, rng, "e0", 3, config.channels, layer_width(config, 0), he);
  for (int i = 1; i <= s; ++i) add_conv(n.recon, rng, "e" + std::to_string(i), 3, layer_width(config, i - 1), layer_width(config, i), he);
  for (int i = s; i >= 1; --i)
    add_conv(n.recon, rng, "u" + std::to_string(i), 3, layer_width(config, i), layer_width(config, i - 1), he);
  add_conv(n.recon, rng, "out", 3, layer_width(config, 0), config.channels, 1.0);
  n.recon.at("out.b").value.fill(0.5f);

  int cin = config.channels;
  for (int i = 0; i < s; ++i) {
    add_conv(n.critic, rng, "d" + std::to_string(i), 3, cin, layer_width(config, i), he);
    cin = layer_width(config, i);
  }
  const int flat = 16 * cin;
  Tensor fw({1, flat});
  for (auto& v : fw.data()) v = static_cast<float>(rng.normal(0.0, std::sqrt(1.0 / flat)));
  n.critic.add("fc.w", std::move(fw));
  n.critic.add("fc.b", Tensor({1}));

  Tensor bank({config.num_classes, config.size, config.size, config.channels});
  for (auto& v : bank.data()) v = static_cast<float>(rng.normal(0.0, 0.01));
  n.bank.add("bank", std::move(bank));
  return n;
}

template <class T>
ad::Var<T> reconstruct(const VisConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph, ad::Var<T> images,
                       bool trainable) {
  check_images(config, images.dims());
  const T slope = static_cast<T>(kSlope);
  ad::Var<T> h = ad::add_scalar(ad::scale(images, T(2)), T(-1));
  h = ad::leaky_relu(conv_layer(params, graph, h, "e0", 1, trainable), slope);
  const int s = stages(config);
  for (int i = 1; i <= s; ++i) h = ad::leaky_relu(conv_layer(params, graph, h, "e" + std::to_string(i), 2, trainable), slope);
  for (int i = s; i >= 1; --i)
    h = ad::leaky_relu(conv_layer(params, graph, ad::upsample_bilinear(h), "u" + std::to_string(i), 1, trainable), slope);
  return conv_layer(params, graph, h, "out", 1, trainable);
}

template <class T>
ad::Var<T> critic_score(const VisConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph, ad::Var<T> x,
                        bool trainable) {
  check_images(config, x.dims());
  const int n = x.dim(0);
  ad::Var<T> h = x;
  for (int i = 0; i < stages(config); ++i)
    h = ad::leaky_relu(conv_layer(params, graph, h, "d" + std::to_string(i), 2, trainable), static_cast<T>(kSlope));
  h = ad::reshape(h, {n, static_cast<int>(h.value().size()) / n});
  return ad::linear(h, bind_param(params, graph, "fc.w", trainable), bind_param(params, graph, "fc.b", trainable));
}

template <class T>
ad::Var<T> critic_input_gradient(const VisConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph,
                                 ad::Var<T> x, bool trainable) {
  check_images(config, x.dims());
  const int n = x.dim(0);
  const T slope = static_cast<T>(kSlope);
  std::vector<ad::Var<T>> pre, kernels;
  std::vector<Dims> inputs;
  ad::Var<T> h = x;
  for (int i = 0; i < stages(config); ++i) {
    const std::string name = "d" + std::to_string(i);
    inputs.push_back(h.dims());
    kernels.push_back(bind_param(params, graph, name + ".w", trainable));
    pre.push_back(ad::add_channel_bias(ad::conv2d(h, kernels.back(), 2, 1), bind_param(params, graph, name + ".b", trainable)));
    h = ad::leaky_relu(pre.back(), slope);
  }
  ad::Var<T> g = ad::reshape(ad::tile_rows(bind_param(params, graph, "fc.w", trainable), n), h.dims());
  for (int i = static_cast<int>(pre.size()) - 1; i >= 0; --i) {
    g = ad::leaky_relu_mask(pre[i], g, slope);
    g = ad::conv2d_transpose(g, kernels[i], 2, 1, inputs[i][1], inputs[i][2]);
  }
  return g;
}

template <class T>
ad::Var<T> gradient_penalty(ad::Var<T> input_grad, T lambda) {
  return ad::scale(ad::mean(ad::square(ad::add_scalar(ad::row_norm(input_grad), T(-1)))), lambda);
}

template <class T>
ad::Var<T> critic_loss(const VisConfig& config, ad::ParamSet<T>& critic, ad::Graph<T>& graph,
                       const BasicTensor<T>& real, const BasicTensor<T>& fake, const std::vector<T>& eps,
                       T lambda_gp) {
  if (real.dims() != fake.dims()) throw ShapeError("critic_loss: real and fake dims differ");
  const int n = real.dim(0);
  if (static_cast<int>(eps.size()) != n) throw ShapeError("critic_loss: one eps per sample required");
  BasicTensor<T> mix(real.dims());
  const std::size_t per = real.size() / n;
  for (int s = 0; s < n; ++s)
    for (std::size_t i = s * per; i < (s + 1) * per; ++i) mix[i] = eps[s] * real[i] + (T(1) - eps[s]) * fake[i];
  auto d_real = ad::mean(critic_score(config, critic, graph, graph.constant(real), true));
  auto d_fake = ad::mean(critic_score(config, critic, graph, graph.constant(fake), true));
  auto loss = ad::sub(d_fake, d_real);
  if (lambda_gp != T(0))
    loss = ad::add(loss, gradient_penalty(critic_input_gradient(config, critic, graph, graph.constant(std::move(mix)), true),
                                          lambda_gp));
  return loss;
}

template <class T>
ad::Var<T> correlation_logits(ad::Var<T> fim, ad::Var<T> bank) {
  return ad::matmul_nt(ad::normalize_rows(fim), ad::normalize_rows(bank));
}

template <class T>
ad::Var<T> cls_loss(ad::Var<T> fim, ad::Var<T> bank, std::span<const int> labels) {
  return ad::softmax_cross_entropy(correlation_logits(fim, bank), labels);
}

void VisHyper::validate() const {
  if (n_critic < 1) throw ArgumentError("n_critic must be at least 1");
  if (!(lr >= 0.0) || !(critic_lr >= 0.0) || !(bank_lr >= 0.0)) throw ArgumentError("learning rates must be non-negative");
  if (batch < 1) throw ArgumentError("batch size must be positive");
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
}

std::vector<VisEpochStats> train_vis(VisNets& nets, const synth::LabeledDataset& data, const VisHyper& hyper,
                                     const std::function<void(const VisEpochStats&)>& on_epoch) {
  hyper.validate();
  const auto& cfg = nets.config;
  if (data.empty()) throw ArgumentError("training set is empty");
  if (data.num_classes() != cfg.num_classes)
    throw ArgumentError("training set has " + std::to_string(data.num_classes()) + " classes, nets have " +
                        std::to_string(cfg.num_classes));
  check_images(cfg, {1, data.image_dims()[0], data.image_dims()[1], data.image_dims()[2]});

  ad::AdamState<float> opt_recon, opt_bank, opt_critic;
  opt_recon.config.lr = hyper.lr;
  opt_bank.config.lr = hyper.bank_lr;
  opt_critic.config.lr = hyper.critic_lr;
  opt_critic.config.beta1 = 0.5;
  opt_critic.config.beta2 = 0.9;
  const auto& w = hyper.weights;
  const bool adversarial = w.adv != 0.0;

  std::vector<VisEpochStats> history;
  std::vector<Tensor> batch_images;
  std::vector<int> labels;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(hyper.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng.engine());
    if (hyper.cosine_decay) {
      const double f = 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / hyper.epochs));
      opt_recon.config.lr = hyper.lr * f;
      opt_bank.config.lr = hyper.bank_lr * f;
    }

    VisEpochStats st;
    st.epoch = epoch;
    std::size_t batches = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      batch_images.clear();
      labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_images.push_back(data.records[order[i]].image);
        labels.push_back(data.records[order[i]].label);
      }
      const Tensor real = attr::stack_images(batch_images);
      const int n = real.dim(0);

      if (adversarial) {
        Tensor fake;
        {
          ad::Graph<float> g;
          fake = reconstruct(cfg, nets.recon, g, g.constant(real), false).value();
        }
        for (int k = 0; k < hyper.n_critic; ++k) {
          std::vector<float> eps(n);
          for (auto& e : eps) e = static_cast<float>(rng.uniform());
          ad::Graph<float> g;
          nets.critic.zero_grad();
          auto loss = critic_loss(cfg, nets.critic, g, real, fake, eps, static_cast<float>(w.gp));
          g.backward(loss);
          ad::adam_step(nets.critic, opt_critic);
          st.critic += loss.value()[0] / hyper.n_critic;
        }
      }

      ad::Graph<float> g;
      nets.recon.zero_grad();
      nets.bank.zero_grad();
      auto x = g.constant(real);
      auto r = reconstruct(cfg, nets.recon, g, x, true);
      auto lp = ad::l1_mean(r, x);
      auto logits = correlation_logits(ad::sub(r, x), g.param(nets.bank, "bank"));
      auto lc = ad::softmax_cross_entropy(logits, labels);
      auto total = ad::add(ad::scale(lp, static_cast<float>(w.pix)), ad::scale(lc, static_cast<float>(w.cls)));
      if (adversarial) {
        auto la = ad::scale(ad::mean(critic_score(cfg, nets.critic, g, r, false)), -1.0f);
        total = ad::add(total, ad::scale(la, static_cast<float>(w.adv)));
        st.adv += la.value()[0];
      }
      if (!std::isfinite(total.value()[0]))
        throw NumericalError("non-finite reconstruction objective in epoch " + std::to_string(epoch));
      g.backward(total);
      ad::adam_step(nets.recon, opt_recon);
      ad::adam_step(nets.bank, opt_bank);

      st.pix += lp.value()[0];
      st.cls += lc.value()[0];
      const auto& lv = logits.value();
      const int k = lv.dim(1);
      for (int i = 0; i < n; ++i)
        if (attr::argmax(std::span<const float>(lv.ptr() + static_cast<std::size_t>(i) * k, k)) == labels[i]) ++correct;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    st.pix /= nb;
    st.adv /= nb;
    st.cls /= nb;
    st.critic /= nb;
    st.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

std::vector<Tensor> image_fingerprints(const VisNets& nets, std::span<const Tensor> images) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += kInferenceBatch) {
    const auto chunk = images.subspan(start, std::min(kInferenceBatch, images.size() - start));
    ad::Graph<float> g;
    auto x = g.constant(attr::stack_images(chunk));
    const auto& f = ad::sub(reconstruct(nets.config, readonly(nets.recon), g, x, false), x).value();
    const std::size_t per = f.size() / chunk.size();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Tensor t(chunk[i].dims());
      std::copy(f.ptr() + i * per, f.ptr() + (i + 1) * per, t.ptr());
      out.push_back(std::move(t));
    }
  }
  return out;
}

Tensor model_fingerprint(const VisNets& nets, int k) {
  const auto& bank = nets.bank.at("bank").value;
  if (k < 0 || k >= bank.dim(0)) throw ArgumentError("no model fingerprint " + std::to_string(k));
  Tensor t({bank.dim(1), bank.dim(2), bank.dim(3)});
  std::copy(bank.ptr() + k * t.size(), bank.ptr() + (k + 1) * t.size(), t.ptr());
  return t;
}

std::vector<int> attribute(const VisNets& nets, std::span<const Tensor> images) {
  const int k = nets.config.num_classes;
  std::vector<Tensor> bank;
  for (int c = 0; c < k; ++c) bank.push_back(model_fingerprint(nets, c));
  std::vector<int> out;
  for (const auto& f : image_fingerprints(nets, images)) {
    std::vector<float> scores(k);
    for (int c = 0; c < k; ++c) scores[c] = static_cast<float>(corr(f, bank[c]));
    out.push_back(attr::argmax(scores));
  }
  return out;
}

double attribution_accuracy(const VisNets& nets, const synth::LabeledDataset& data) {
  if (data.empty()) throw ArgumentError("evaluation set is empty");
  std::vector<Tensor> images;
  for (const auto& r : data.records) images.push_back(r.image);
  const auto pred = attribute(nets, images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.records[i].label;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

ResponseMatrix response_matrix(const VisNets& nets, const synth::LabeledDataset& data) {
  const int k = nets.config.num_classes;
  if (data.num_classes() != k) throw ArgumentError("dataset class count does not match the fingerprint bank");
  std::vector<Tensor> images;
  for (const auto& r : data.records) images.push_back(r.image);
  const auto fims = image_fingerprints(nets, images);
  std::vector<Tensor> bank;
  for (int c = 0; c < k; ++c) bank.push_back(model_fingerprint(nets, c));
  ResponseMatrix m(k, std::vector<double>(k, 0.0));
  std::vector<int> counts(k, 0);
  for (std::size_t i = 0; i < fims.size(); ++i) {
    const int y = data.records[i].label;
    ++counts[y];
    for (int c = 0; c < k; ++c) m[y][c] += corr(fims[i], bank[c]);
  }
  for (int y = 0; y < k; ++y) {
    if (counts[y] == 0) throw ArgumentError("class " + data.classes[y] + " has no images");
    for (auto& v : m[y]) v /= counts[y];
  }
  return m;
}

std::string response_csv(const ResponseMatrix& m, const std::vector<std::string>& classes) {
  std::string out = "class";
  for (const auto& c : classes) out += "," + c;
  out += "\n";
  for (std::size_t y = 0; y < m.size(); ++y) {
    out += classes.at(y);
    for (double v : m[y]) out += "," + fmt6(v);
    out += "\n";
  }
  return out;
}

namespace {

// Affine min->0, max->1 display mapping; returns {min, max}.
std::pair<double, double> write_display(const std::filesystem::path& path, const Tensor& residual) {
  const auto [lo, hi] = std::minmax_element(residual.data().begin(), residual.data().end());
  const double mn = *lo, mx = *hi;
  Tensor img(residual.dims());
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = mx > mn ? static_cast<float>((residual[i] - mn) / (mx - mn)) : 0.0f;
  image::write_pnm(path, img);
  return {mn, mx};
}

}  // namespace

void fingerprint_report(const VisNets& nets, const synth::LabeledDataset& data, const std::filesystem::path& out_dir) {
  const auto m = response_matrix(nets, data);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const std::string ext = nets.config.channels == 1 ? ".pgm" : ".ppm";
  nlohmann::json mapping = nlohmann::json::object();
  auto record = [&](const std::string& file, const Tensor& residual) {
    const auto [mn, mx] = write_display(out_dir / file, residual);
    mapping[file] = {{"min", mn}, {"max", mx}, {"display", "255 * (v - min) / (max - min)"}};
  };
  for (int k = 0; k < nets.config.num_classes; ++k) {
    record("model_" + std::to_string(k) + "_" + data.classes[k] + ext, model_fingerprint(nets, k));
    for (const auto& r : data.records) {
      if (r.label != k) continue;
      record("image_" + std::to_string(k) + "_" + data.classes[k] + ext, image_fingerprints(nets, std::span<const Tensor>(&r.image, 1)).front());
      break;
    }
  }
  io::write_file_atomic(out_dir / "mapping.json", mapping.dump(2) + "\n");
  io::write_file_atomic(out_dir / "response.csv", response_csv(m, data.classes));
}

io::Bytes encode_vis(const VisNets& nets) {
  std::vector<NamedTensor> all;
  for (const auto& [name, p] : nets.recon) all.push_back({"recon." + name, p.value});
  for (const auto& [name, p] : nets.critic) all.push_back({"critic." + name, p.value});
  all.push_back({"bank", nets.bank.at("bank").value});
  return encode_checkpoint(all);
}

VisNets decode_vis(const VisConfig& config, const io::Bytes& bytes) {
  VisNets out = init_vis(config, 0);
  const auto tensors = decode_checkpoint(bytes);
  std::size_t expected = out.recon.size() + out.critic.size() + 1;
  if (tensors.size() != expected) throw FormatError("vis checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " + std::to_string(expected));
  for (const auto& t : tensors) {
    ad::Param<float>* p = nullptr;
    if (t.name == "bank") p = &out.bank.at("bank");
    else if (t.name.rfind("recon.", 0) == 0 && out.recon.contains(t.name.substr(6))) p = &out.recon.at(t.name.substr(6));
    else if (t.name.rfind("critic.", 0) == 0 && out.critic.contains(t.name.substr(7))) p = &out.critic.at(t.name.substr(7));
    if (!p) throw FormatError("unexpected tensor " + t.name + " in vis checkpoint");
    if (p->value.dims() != t.value.dims())
      throw FormatError("tensor " + t.name + " has dims " + dims_to_string(t.value.dims()) + ", expected " + dims_to_string(p->value.dims()));
    p->value = t.value;
  }
  return out;
}

#define GFP_INSTANTIATE_VIS(T)                                                                                     \
  template ad::Var<T> reconstruct(const VisConfig&, ad::ParamSet<T>&, ad::Graph<T>&, ad::Var<T>, bool);           \
  template ad::Var<T> critic_score(const VisConfig&, ad::ParamSet<T>&, ad::Graph<T>&, ad::Var<T>, bool);          \
  template ad::Var<T> critic_input_gradient(const VisConfig&, ad::ParamSet<T>&, ad::Graph<T>&, ad::Var<T>, bool); \
  template ad::Var<T> gradient_penalty(ad::Var<T>, T);                                                           \
  template ad::Var<T> critic_loss(const VisConfig&, ad::ParamSet<T>&, ad::Graph<T>&, const BasicTensor<T>&,      \
                                  const BasicTensor<T>&, const std::vector<T>&, T);                             \
  template ad::Var<T> correlation_logits(ad::Var<T>, ad::Var<T>);                                                \
  template ad::Var<T> cls_loss(ad::Var<T>, ad::Var<T>, std::span<const int>);

GFP_INSTANTIATE_VIS(float)
GFP_INSTANTIATE_VIS(double)

}  // namespace gfp::vis
