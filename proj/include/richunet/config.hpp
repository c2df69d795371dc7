#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "richunet/checkpoint.hpp"
#include "richunet/network.hpp"
#include "richunet/optimizer.hpp"

namespace richunet {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 400;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Weight of cross-entropy against soft Dice.
  double loss_lambda = 0.5;
  /// Save a checkpoint every N steps; 0 disables.
  std::size_t checkpoint_every = 0;
  /// Total optimizer steps; 0 means `epochs` passes over the data.
  std::size_t steps = 0;

  void validate() const;
  AdamOptions adam() const { return {learning_rate, beta1, beta2, adam_eps}; }
  std::size_t total_steps(std::size_t dataset_size) const;
};

struct RunConfig {
  RichUNetConfig model;
  TrainConfig train;
};

/// Flat key=value text, one pair per line, '#' starts a comment. Unknown
/// keys and malformed values raise ConfigError naming the line.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Inverse of parse_config for every key.
std::string format_config(const RunConfig& config);

/// Stores every key as "config.<key>" entries.
void store_config(const RunConfig& config, Checkpoint& checkpoint);
RunConfig restore_config(const Checkpoint& checkpoint);

}  // namespace richunet
