#pragma once

// Central finite-difference checks of every training loss and fitting
// objective on a tiny randomly initialized model (2 joints, pose dim 12).
// Each check compares tape gradients against differences with respect to
// both the objective's inputs and the model parameters it touches.

#include "posedist/autodiff.hpp"
#include "posedist/body.hpp"
#include "posedist/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace posedist::gradcheck {

struct CheckResult {
  std::string name;
  double input_error = 0.0;  // worst relative error over input leaves
  double param_error = 0.0;  // worst relative error over parameters
  int input_entries = 0;
  int param_entries = 0;
  bool passed = false;

  double worst() const { return input_error > param_error ? input_error : param_error; }
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
};

/// Root plus one hinged child, two shape coefficients.
body::BodySpec tiny_body_spec();
/// Small widths matching tiny_body_spec().
model::ModelConfig tiny_model_config();

/// Relative error max_i |g_i - fd_i| / max(|g|_inf, |fd|_inf, 1e-12) of the
/// accumulated parameter gradients of `loss` against central differences,
/// with i and the norms running over all entries of all `params` (some
/// parameters legitimately have zero gradient).
/// `loss` must be a pure function of the parameter values.
double param_check(const std::function<ad::Var(ad::Tape&)>& loss, const std::vector<ad::Parameter*>& params,
                   double step, int* entries = nullptr);

std::vector<CheckResult> run_suite(const SuiteOptions& options = {});

/// name,input_rel_error,param_rel_error,input_entries,param_entries,passed
std::string to_csv(const std::vector<CheckResult>& results);

}  // namespace posedist::gradcheck
