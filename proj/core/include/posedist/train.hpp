#pragma once

// Training loop for the lifting model: L_nll plus the expectation, mode and
// orthogonality terms, with an optional least-squares adversarial prior.

#include "posedist/body.hpp"
#include "posedist/data.hpp"
#include "posedist/losses.hpp"
#include "posedist/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace posedist::train {

struct TrainConfig {
  model::ModelConfig model;
  losses::LossWeights weights;
  int epochs = 50;
  int batch = 64;
  double lr = 1e-4;
  double disc_lr = 1e-4;
  /// Cosine-anneal the generator step size from `lr` to this value over
  /// all steps; negative keeps `lr` constant.
  double lr_final = -1.0;
  std::uint64_t seed = 0;
  /// Data-dependent norm-layer init from the first `init_rows` shuffled
  /// training rows.
  bool data_init = false;
  int init_rows = 1024;
  /// Global gradient-norm clip for the generator; 0 disables it.
  double grad_clip = 0.0;
  /// Validation rows evaluated per epoch; 0 means all.
  int val_rows = 0;
  /// Latent draws per row for the expectation term.
  int exp_samples = 1;

  /// Throws ErrorKind::Config.
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double val_mpjpe_mm = 0.0;
  double val_pa_mpjpe_mm = 0.0;
};

struct ValMetrics {
  double nll = 0.0;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
};

/// Mean held-out NLL and mode errors.
ValMetrics validate(const model::PoseModel& model, const body::BodyModel& body, const data::Examples& val);

struct TrainResult {
  model::PoseModel best;  // lowest validation PA-MPJPE
  model::PoseModel last;
  int best_epoch = 0;
  std::vector<EpochMetrics> log;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Deterministic for a fixed config. Throws ErrorKind::Numeric naming the
/// loss term when a loss becomes non-finite.
TrainResult train(const body::BodyModel& body, const data::Examples& train_set, const data::Examples& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

std::string metrics_csv(const std::vector<EpochMetrics>& log);

}  // namespace posedist::train
