#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "richunet/checkpoint.hpp"
#include "richunet/config.hpp"
#include "richunet/dataset.hpp"
#include "richunet/network.hpp"
#include "richunet/optimizer.hpp"

namespace richunet {

struct StepRecord {
  std::size_t step = 0;  ///< 1-based index of the completed step
  double loss = 0.0;
  double dice = 0.0;     ///< mean batch Dice of the training-mode prediction
};

/// Sample indices for a step: the data is visited in epochs, each epoch a
/// fresh permutation derived from (seed, epoch). Stateless in the step.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t batch_size,
                                       std::size_t dataset_size);

/// Stacks images into [B,1,H,W].
Tensor stack_images(const std::vector<SegmentationSample>& data, const std::vector<std::size_t>& indices);

/// Owns the complete training state: model, optimizer moments, dropout RNG
/// and step counter. checkpoint()/restore() round-trip all of it.
class Trainer {
 public:
  Trainer(RunConfig config, RichUNet net);
  /// Builds the network from config.model seeded with config.train.seed.
  static Trainer create(const RunConfig& config);
  static Trainer restore(const Checkpoint& checkpoint);

  Checkpoint checkpoint();

  /// One optimizer step. Throws NumericalError on a non-finite loss.
  StepRecord step(const std::vector<SegmentationSample>& data);
  /// Runs until step_count() == until. `on_step` sees every record.
  std::vector<StepRecord> run(const std::vector<SegmentationSample>& data, std::size_t until,
                              const std::function<void(Trainer&, const StepRecord&)>& on_step = {});

  RichUNet& net() { return net_; }
  const RunConfig& config() const { return config_; }
  std::size_t step_count() const { return adam_.steps(); }

 private:
  RunConfig config_;
  RichUNet net_;
  Adam adam_;
  Rng rng_;
};

std::string format_log(const std::vector<StepRecord>& log);

}  // namespace richunet
