#pragma once

// Evaluation protocols over a trained model: mode regression, nested
// min-of-n sampling, keypoint fitting and multi-view fusion.

#include "posedist/body.hpp"
#include "posedist/data.hpp"
#include "posedist/fit.hpp"
#include "posedist/gmm.hpp"
#include "posedist/metrics.hpp"
#include "posedist/model.hpp"

#include <cstdint>
#include <vector>

namespace posedist::eval {

using ad::Matrix;

/// Row-batched joints (n x 3J) for row-batched poses and shapes.
Matrix pose_joints(const body::BodyModel& body, const Matrix& theta, const Matrix& beta);

/// Method "mode": f(0; c) with the head's shape.
metrics::EvalReport evaluate_mode(const model::PoseModel& model, const body::BodyModel& body,
                                  const data::Examples& examples);

/// Hypothesis 0 is the mode, hypotheses 1.. are samples, so the sets for
/// increasing n are nested.
metrics::MinOfNReport min_of_n(const model::PoseModel& model, const body::BodyModel& body,
                               const data::Examples& examples, const std::vector<int>& n_list, std::uint64_t seed);

struct FitEvaluation {
  metrics::EvalReport report;  // methods "mode" and "fit"
  std::vector<fit::FitResult> fits;
  /// Samples whose accepted objective trace ever increased.
  int non_monotone = 0;
};

/// Fits every example's observed keypoints.
FitEvaluation evaluate_fitting(const model::PoseModel& model, const body::BodyModel& body,
                               const data::Examples& examples, const fit::FitOptions& options);

/// Pose-space baseline started at the mode; methods "mode" and "smplify".
FitEvaluation evaluate_smplify(const model::PoseModel& model, const body::BodyModel& body,
                               const data::Examples& examples, const gmm::GmmPrior& prior,
                               const fit::FitOptions& options);

struct FusionEvaluation {
  metrics::EvalReport report;  // methods "mode", "rot_avg" and "fused"
  std::vector<fit::FusionResult> fusions;
  /// Samples where the fused objective exceeded its initial value.
  int worse_than_init = 0;
};

FusionEvaluation evaluate_fusion(const model::PoseModel& model, const body::BodyModel& body,
                                 const data::Dataset& dataset, const fit::FitOptions& options);

}  // namespace posedist::eval
