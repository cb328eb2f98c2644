#include "posedist/nn.hpp"

#include <cmath>

namespace posedist::nn {

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::None:
      return x;
    case Activation::Tanh:
      return ad::tanh(x);
    case Activation::Relu:
      return ad::relu(x);
  }
  return x;
}

Var bind(Tape& tape, const Parameter& p) { return tape.param(const_cast<Parameter&>(p)); }

Dense::Dense(const std::string& name, int in, int out, Rng& rng, bool zero_init)
    : weight(name + ".weight", zero_init ? Matrix::Zero(in, out)
                                         : randn(rng, in, out, std::sqrt(1.0 / static_cast<double>(in)))),
      bias(name + ".bias", Matrix::Zero(1, out)) {}

Var Dense::operator()(Tape& tape, const Var& x) const {
  return ad::add(ad::matmul(x, bind(tape, weight)), bind(tape, bias));
}

Mlp::Mlp(const std::string& name, int in, const std::vector<int>& hidden, int out, Activation a,
         Rng& rng, bool zero_last)
    : act(a) {
  int prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.emplace_back(name + ".l" + std::to_string(i), prev, hidden[i], rng);
    prev = hidden[i];
  }
  layers.emplace_back(name + ".l" + std::to_string(hidden.size()), prev, out, rng, zero_last);
}

Var Mlp::operator()(Tape& tape, const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](tape, h);
    if (i + 1 < layers.size()) h = activate(h, act);
  }
  return h;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (Dense& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    if (p->grad.size() != p->value.size()) p->zero_grad();
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * p.grad;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

Matrix randn(Rng& rng, ad::Index rows, ad::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (ad::Index j = 0; j < cols; ++j)
    for (ad::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

}  // namespace posedist::nn
