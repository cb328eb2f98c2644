#pragma once

// Flat key = value experiment configuration. '#' starts a comment; unknown
// keys and malformed values are ErrorKind::Config errors. docs/config.md
// lists every key.

#include "posedist/data.hpp"
#include "posedist/fit.hpp"
#include "posedist/gmm.hpp"
#include "posedist/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace posedist {

struct ExperimentConfig {
  std::uint64_t seed = 0;
  /// Empty selects the bundled default body.
  std::string body_spec;

  data::GenerateConfig data;  // count/views/seed are set per split
  int train_count = 20000;
  int test_count = 2000;
  int multiview_count = 200;
  int multiview_views = 4;

  train::TrainConfig train;
  fit::FitOptions fit;
  gmm::FitOptions gmm;

  std::vector<int> min_n = {1, 5, 10, 25};
  /// Test rows used by fit/smplify; 0 means all.
  int fit_limit = 200;
  /// Multi-view samples used by fuse; 0 means all.
  int fuse_limit = 0;

  /// Propagates `seed` into the sub-configs.
  void set_seed(std::uint64_t s);
  /// Generation settings for "train", "test" or "multiview".
  data::GenerateConfig split(const std::string& name) const;
  void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Every key with its current value, in documentation order.
std::string to_text(const ExperimentConfig& config);

}  // namespace posedist
