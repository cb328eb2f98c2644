#pragma once

#include "posedist/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace posedist::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;
using Rng = std::mt19937_64;

enum class Activation { None, Tanh, Relu };

Var activate(const Var& x, Activation act);

/// Affine layer acting on row batches: y = x W + b, W is in x out.
struct Dense {
  Parameter weight;
  Parameter bias;

  Dense() = default;
  Dense(const std::string& name, int in, int out, Rng& rng, bool zero_init = false);

  Var operator()(Tape& tape, const Var& x) const;
  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }
};

/// Plain multilayer perceptron; `act` after every layer except the last.
struct Mlp {
  std::vector<Dense> layers;
  Activation act = Activation::Tanh;

  Mlp() = default;
  Mlp(const std::string& name, int in, const std::vector<int>& hidden, int out, Activation act,
      Rng& rng, bool zero_last = false);

  Var operator()(Tape& tape, const Var& x) const;
  void collect(std::vector<Parameter*>& out);
};

// Dense doesn't own tapes, so binding a const layer needs a mutable param.
// Layers are logically const during a forward pass; gradients are the only
// thing the tape writes back.
Var bind(Tape& tape, const Parameter& p);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions opts);

  /// One update from the accumulated grads; grads are left untouched.
  void step();
  void zero_grad();
  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  long steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamOptions opts_;
  long t_ = 0;
};

Matrix randn(Rng& rng, ad::Index rows, ad::Index cols, double stddev = 1.0);

}  // namespace posedist::nn
