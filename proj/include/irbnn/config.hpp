#pragma once

#include <cstdint>
#include <string>

#include "irbnn/net.hpp"

namespace irbnn {

/// One training run, as read from a config file. Grammar: `key = value`
/// lines under `[section]` headers; blank lines and full-line `#` comments
/// allowed. Unknown sections or keys are config errors. Duplicate keys:
/// last one wins.
///
///   [run]    arch, dataset, data_root, epochs, batch_size, seed, arm,
///            estimator (empty = arm default), augment
///   [optim]  lr, momentum, weight_decay, decay_binary, lr_step, lr_gamma
///   [ede]    t_min, t_max
///   [out]    dir
struct RunConfig {
  std::string arch = "mnist_cnn";
  std::string dataset = "synth";  // synth | mnist | cifar10 | auto
  std::string data_root;          // empty: env var, then ./data/<dataset>
  int epochs = 5;
  int batch_size = 100;
  std::uint64_t seed = 1;
  std::string arm = "irnet";
  std::string estimator;  // empty: the arm's default
  bool augment = false;
  SgdConfig optim;
  double t_min = 0.1;
  double t_max = 10.0;
  std::string out_dir = "runs/out";

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);

/// Canonical form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& c);

}  // namespace irbnn
