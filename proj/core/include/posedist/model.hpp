#pragma once

// Networks around the flow: the keypoint encoder g, the shape/camera head h
// and the pose discriminator.

#include "posedist/autodiff.hpp"
#include "posedist/flow.hpp"
#include "posedist/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace posedist {
class Checkpoint;
}

namespace posedist::model {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

struct ModelConfig {
  int num_joints = 16;
  int shape_dims = 10;
  int encoder_width = 1024;
  int encoder_blocks = 2;
  int context_dim = 128;
  int head_hidden = 256;
  int disc_hidden = 256;
  int flow_blocks = 4;
  std::vector<int> coupling_hidden = {256, 256};

  int pose_dim() const { return 6 * num_joints; }
  flow::FlowConfig flow_config() const;
  /// Throws ErrorKind::Config.
  void validate() const;
};

/// Residual MLP lifting backbone: linear, ReLU, then residual blocks of two
/// ReLU layers each, then a linear map to the context.
struct Encoder {
  nn::Dense input;
  std::vector<nn::Dense> hidden;  // two per residual block
  nn::Dense output;

  Encoder() = default;
  Encoder(int in, int width, int blocks, int out, nn::Rng& rng);
  Var operator()(Tape& tape, const Var& x) const;
  void collect(std::vector<Parameter*>& out);
};

struct HeadOutput {
  Var beta;    // B x shape_dims
  Var camera;  // B x 3 [s, tx, ty], s = exp(raw)
  Var raw;     // B x (shape_dims + 3) before the exp
};

/// Maps a raw head row [beta, log s, tx, ty] to [beta] and [s, tx, ty].
HeadOutput split_head(const Var& raw, int shape_dims);

struct PoseModel {
  ModelConfig config;
  Encoder encoder;
  flow::CondFlow flow;
  nn::Mlp heads;
  nn::Mlp disc;

  PoseModel() = default;
  PoseModel(const ModelConfig& config, std::uint64_t seed);

  Var context(Tape& tape, const Var& inputs) const;
  HeadOutput head(Tape& tape, const Var& context) const;
  /// Realism score per row from the body-pose 6D blocks (global excluded)
  /// and the shape.
  Var discriminate(Tape& tape, const Var& theta, const Var& beta) const;

  /// Encoder, flow and heads.
  std::vector<Parameter*> generator_parameters();
  std::vector<Parameter*> discriminator_parameters();

  void save(Checkpoint& ckpt) const;
  static PoseModel load(const Checkpoint& ckpt);
  void save(const std::string& path) const;
  static PoseModel load(const std::string& path);
};

/// Plain-matrix predictions for row-batched encoder inputs.
struct Prediction {
  Matrix context;  // n x c
  Matrix mode;     // n x 6J
  Matrix beta;     // n x B
  Matrix camera;   // n x 3
};
Prediction predict(const PoseModel& model, const Matrix& inputs);

}  // namespace posedist::model
