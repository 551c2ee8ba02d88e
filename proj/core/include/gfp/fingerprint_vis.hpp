#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gfp/adam.hpp"
#include "gfp/graph.hpp"
#include "gfp/io.hpp"
#include "gfp/synth.hpp"
#include "json.hpp"

namespace gfp::vis {

// Pearson-style correlation of two same-shape images: inner product of their zero-mean,
// unit-norm vectorizations. Throws NumericalError when either image is constant.
double corr(const Tensor& a, const Tensor& b);

// Mean absolute difference.
double pix_loss(const Tensor& image, const Tensor& reconstruction);

struct LossWeights {
  double pix = 20.0;
  double adv = 0.1;
  double cls = 1.0;
  double gp = 10.0;
};

double total_objective(double pix, double adv, double cls, const LossWeights& w = {});

struct VisConfig {
  int size = 32;
  int channels = 3;
  int width = 16;  // channels of the first encoder / critic layer
  int max_width = 64;
  int num_classes = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static VisConfig from_json(const nlohmann::json& j);
};

// Reconstructor R, critic D and the per-class fingerprint bank (parameter "bank", [K,H,W,C]).
struct VisNets {
  VisConfig config;
  ad::ParamSet<float> recon;
  ad::ParamSet<float> critic;
  ad::ParamSet<float> bank;
};

VisNets init_vis(const VisConfig& config, std::uint64_t seed);

// R(images); images [N,H,W,C] in [0,1].
template <class T>
ad::Var<T> reconstruct(const VisConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph, ad::Var<T> images,
                       bool trainable);

// D(x) -> [N,1].
template <class T>
ad::Var<T> critic_score(const VisConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph, ad::Var<T> x,
                        bool trainable);

// dD/dx built as a differentiable expression of the critic parameters (for the gradient penalty).
template <class T>
ad::Var<T> critic_input_gradient(const VisConfig& config, ad::ParamSet<T>& params, ad::Graph<T>& graph,
                                 ad::Var<T> x, bool trainable);

// lambda * mean_n (||g_n|| - 1)^2 over per-sample gradients g [N, ...].
template <class T>
ad::Var<T> gradient_penalty(ad::Var<T> input_grad, T lambda);

// mean D(fake) - mean D(real) + GP at x = eps_n * real + (1 - eps_n) * fake.
template <class T>
ad::Var<T> critic_loss(const VisConfig& config, ad::ParamSet<T>& critic, ad::Graph<T>& graph,
                       const BasicTensor<T>& real, const BasicTensor<T>& fake, const std::vector<T>& eps,
                       T lambda_gp);

// logits[n][k] = corr(fim_n, bank_k); fim [N,H,W,C], bank [K,H,W,C].
template <class T>
ad::Var<T> correlation_logits(ad::Var<T> fim, ad::Var<T> bank);

template <class T>
ad::Var<T> cls_loss(ad::Var<T> fim, ad::Var<T> bank, std::span<const int> labels);

struct VisHyper {
  LossWeights weights;
  int n_critic = 1;
  double lr = 1e-3;
  double critic_lr = 1e-4;
  double bank_lr = 1e-3;
  int batch = 32;
  int epochs = 8;
  std::uint64_t seed = 1;
  // Reconstructor and bank learning rates follow lr * (1 + cos(pi * epoch / epochs)) / 2.
  bool cosine_decay = true;

  void validate() const;
};

struct VisEpochStats {
  int epoch = 0;
  double pix = 0.0;
  double adv = 0.0;  // generator side, -mean D(R(I))
  double cls = 0.0;
  double critic = 0.0;
  double accuracy = 0.0;  // training attribution accuracy from the correlation logits
};

std::vector<VisEpochStats> train_vis(VisNets& nets, const synth::LabeledDataset& data, const VisHyper& hyper,
                                     const std::function<void(const VisEpochStats&)>& on_epoch = {});

// F_im = R(I) - I for every image.
std::vector<Tensor> image_fingerprints(const VisNets& nets, std::span<const Tensor> images);
// Bank entry k as an [H,W,C] image.
Tensor model_fingerprint(const VisNets& nets, int k);

// argmax_k corr(F_im, F_mod^k) per image.
std::vector<int> attribute(const VisNets& nets, std::span<const Tensor> images);
double attribution_accuracy(const VisNets& nets, const synth::LabeledDataset& data);

// [true class][model fingerprint] mean correlation.
using ResponseMatrix = std::vector<std::vector<double>>;
ResponseMatrix response_matrix(const VisNets& nets, const synth::LabeledDataset& data);
std::string response_csv(const ResponseMatrix& m, const std::vector<std::string>& classes);

// Writes model and sample image fingerprints as PGM/PPM, their display mapping (mapping.json)
// and response.csv into out_dir.
void fingerprint_report(const VisNets& nets, const synth::LabeledDataset& data, const std::filesystem::path& out_dir);

// GFPC with parameters prefixed "recon.", "critic.", "bank".
io::Bytes encode_vis(const VisNets& nets);
VisNets decode_vis(const VisConfig& config, const io::Bytes& bytes);

}  // namespace gfp::vis
