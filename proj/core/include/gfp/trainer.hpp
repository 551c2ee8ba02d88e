#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gfp/adam.hpp"
#include "gfp/classifier.hpp"
#include "gfp/synth.hpp"

namespace gfp::attr {

struct TrainHyper {
  double lr = 1e-3;
  int batch = 32;
  int epochs = 10;
  std::uint64_t seed = 1;  // shuffling

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // mean minibatch loss
  double accuracy = 0.0;  // training accuracy observed during the epoch
};

using History = std::vector<EpochStats>;

// Per-epoch image augmentation: (image, epoch, dataset index) -> image.
using Augment = std::function<Tensor(const Tensor&, int epoch, std::size_t index)>;

class Trainer {
 public:
  Trainer(Classifier& net, TrainHyper hyper);

  EpochStats run_epoch(const synth::LabeledDataset& data, const Augment& augment = {});
  const History& history() const { return history_; }

 private:
  Classifier& net_;
  TrainHyper hyper_;
  ad::AdamState<float> adam_;
  History history_;
};

// Runs hyper.epochs epochs; `on_epoch` is called after each one.
History train(Classifier& net, const synth::LabeledDataset& data, const TrainHyper& hyper,
              const Augment& augment = {}, const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace gfp::attr
