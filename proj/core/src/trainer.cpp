#include "gfp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfp/ops.hpp"
#include "gfp/rng.hpp"

namespace gfp::attr {

void TrainHyper::validate() const {
  if (!(lr >= 0.0)) throw ArgumentError("learning rate must be non-negative");
  if (batch < 1) throw ArgumentError("batch size must be positive");
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
}

Trainer::Trainer(Classifier& net, TrainHyper hyper) : net_(net), hyper_(hyper) {
  hyper_.validate();
  adam_.config.lr = hyper_.lr;
}

EpochStats Trainer::run_epoch(const synth::LabeledDataset& data, const Augment& augment) {
  if (data.empty()) throw ArgumentError("training set is empty");
  if (data.num_classes() != net_.config().num_classes)
    throw ArgumentError("training set has " + std::to_string(data.num_classes()) + " classes, network has " +
                        std::to_string(net_.config().num_classes));
  const int epoch = static_cast<int>(history_.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(hyper_.seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng.engine());

  auto& params = net_.params();
  double loss_sum = 0.0;
  std::size_t correct = 0, batches = 0;
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (std::size_t start = 0; start < order.size(); start += hyper_.batch) {
    const std::size_t end = std::min(order.size(), start + hyper_.batch);
    images.clear();
    labels.clear();
    for (std::size_t i = start; i < end; ++i) {
      const auto& r = data.records[order[i]];
      images.push_back(augment ? augment(r.image, epoch, order[i]) : r.image);
      labels.push_back(r.label);
    }
    ad::Graph<float> g;
    params.zero_grad();
    auto out = forward(net_.config(), params, g, stack_images(images), true);
    auto loss = ad::softmax_cross_entropy(out.logits, labels);
    if (!std::isfinite(g.value(loss)[0]))
      throw NumericalError("non-finite training loss in epoch " + std::to_string(epoch));
    g.backward(loss);
    ad::adam_step(params, adam_);

    loss_sum += g.value(loss)[0];
    ++batches;
    const auto& logits = out.logits.value();
    const int k = logits.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (argmax(std::span<const float>(logits.ptr() + i * k, k)) == labels[i]) ++correct;
  }
  EpochStats s{epoch, loss_sum / static_cast<double>(batches),
               static_cast<double>(correct) / static_cast<double>(order.size())};
  history_.push_back(s);
  return s;
}

History train(Classifier& net, const synth::LabeledDataset& data, const TrainHyper& hyper, const Augment& augment,
              const std::function<void(const EpochStats&)>& on_epoch) {
  Trainer t(net, hyper);
  for (int e = 0; e < hyper.epochs; ++e) {
    const auto s = t.run_epoch(data, augment);
    if (on_epoch) on_epoch(s);
  }
  return t.history();
}

}  // namespace gfp::attr
