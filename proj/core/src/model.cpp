#include "posedist/model.hpp"

#include "posedist/checkpoint.hpp"
#include "posedist/error.hpp"

#include <sstream>

namespace posedist::model {

flow::FlowConfig ModelConfig::flow_config() const {
  flow::FlowConfig f;
  f.dim = pose_dim();
  f.context_dim = context_dim;
  f.num_blocks = flow_blocks;
  f.coupling_hidden = coupling_hidden;
  return f;
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::Config, "model: " + what); };
  if (num_joints < 2) bad("num_joints must be at least 2");
  if (shape_dims < 1) bad("shape_dims must be at least 1");
  if (encoder_width < 1 || context_dim < 1 || head_hidden < 1 || disc_hidden < 1) bad("widths must be positive");
  if (encoder_blocks < 0) bad("encoder_blocks must be non-negative");
  flow_config().validate();
}

Encoder::Encoder(int in, int width, int blocks, int out, nn::Rng& rng)
    : input("encoder.input", in, width, rng), output("encoder.output", width, out, rng) {
  for (int b = 0; b < blocks; ++b)
    for (int k = 0; k < 2; ++k)
      hidden.emplace_back("encoder.block" + std::to_string(b) + ".l" + std::to_string(k), width, width, rng);
}

Var Encoder::operator()(Tape& tape, const Var& x) const {
  Var h = ad::relu(input(tape, x));
  for (std::size_t i = 0; i + 1 < hidden.size(); i += 2) {
    const Var y = ad::relu(hidden[i + 1](tape, ad::relu(hidden[i](tape, h))));
    h = ad::add(h, y);
  }
  return output(tape, h);
}

void Encoder::collect(std::vector<Parameter*>& out) {
  for (nn::Dense* d : {&input, &output}) {
    out.push_back(&d->weight);
    out.push_back(&d->bias);
  }
  for (nn::Dense& d : hidden) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
}

HeadOutput split_head(const Var& raw, int shape_dims) {
  HeadOutput out;
  out.raw = raw;
  out.beta = ad::cols(raw, 0, shape_dims);
  out.camera = ad::concat({ad::exp(ad::cols(raw, shape_dims, 1)), ad::cols(raw, shape_dims + 1, 2)}, ad::Axis::Cols);
  return out;
}

PoseModel::PoseModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  nn::Rng rng(seed);
  const int J = config.num_joints;
  encoder = Encoder(3 * J, config.encoder_width, config.encoder_blocks, config.context_dim, rng);
  flow = flow::CondFlow(config.flow_config(), rng());
  heads = nn::Mlp("heads", config.context_dim, {config.head_hidden}, config.shape_dims + 3, nn::Activation::Relu, rng);
  disc = nn::Mlp("disc", 6 * (J - 1) + config.shape_dims, {config.disc_hidden, config.disc_hidden}, 1,
                 nn::Activation::Relu, rng);
}

Var PoseModel::context(Tape& tape, const Var& inputs) const { return encoder(tape, inputs); }

HeadOutput PoseModel::head(Tape& tape, const Var& context) const {
  return split_head(heads(tape, context), config.shape_dims);
}

Var PoseModel::discriminate(Tape& tape, const Var& theta, const Var& beta) const {
  const Var body = ad::cols(theta, 6, theta.cols() - 6);
  return disc(tape, ad::concat({body, beta}, ad::Axis::Cols));
}

std::vector<Parameter*> PoseModel::generator_parameters() {
  std::vector<Parameter*> out;
  encoder.collect(out);
  flow.collect(out);
  heads.collect(out);
  return out;
}

std::vector<Parameter*> PoseModel::discriminator_parameters() {
  std::vector<Parameter*> out;
  disc.collect(out);
  return out;
}

namespace {

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

int meta_int(const Checkpoint& ckpt, const std::string& key) {
  try {
    return std::stoi(ckpt.meta(key));
  } catch (const std::logic_error&) {
    fail(ErrorKind::Data, "checkpoint: metadata '" + key + "' is not an integer");
  }
}

}  // namespace

void PoseModel::save(Checkpoint& ckpt) const {
  ckpt.set_meta("kind", "posedist-model");
  ckpt.set_meta("model.num_joints", std::to_string(config.num_joints));
  ckpt.set_meta("model.shape_dims", std::to_string(config.shape_dims));
  ckpt.set_meta("model.encoder_width", std::to_string(config.encoder_width));
  ckpt.set_meta("model.encoder_blocks", std::to_string(config.encoder_blocks));
  ckpt.set_meta("model.context_dim", std::to_string(config.context_dim));
  ckpt.set_meta("model.head_hidden", std::to_string(config.head_hidden));
  ckpt.set_meta("model.disc_hidden", std::to_string(config.disc_hidden));
  ckpt.set_meta("model.flow_blocks", std::to_string(config.flow_blocks));
  ckpt.set_meta("model.coupling_hidden", join(config.coupling_hidden));
  flow.save(ckpt, "flow");
  auto& self = const_cast<PoseModel&>(*this);
  std::vector<Parameter*> params;
  self.encoder.collect(params);
  self.heads.collect(params);
  self.disc.collect(params);
  for (const Parameter* p : params) ckpt.put(p->name, p->value);
}

PoseModel PoseModel::load(const Checkpoint& ckpt) {
  if (!ckpt.has_meta("kind") || ckpt.meta("kind") != "posedist-model")
    fail(ErrorKind::Data, "checkpoint: not a posedist model");
  ModelConfig cfg;
  cfg.num_joints = meta_int(ckpt, "model.num_joints");
  cfg.shape_dims = meta_int(ckpt, "model.shape_dims");
  cfg.encoder_width = meta_int(ckpt, "model.encoder_width");
  cfg.encoder_blocks = meta_int(ckpt, "model.encoder_blocks");
  cfg.context_dim = meta_int(ckpt, "model.context_dim");
  cfg.head_hidden = meta_int(ckpt, "model.head_hidden");
  cfg.disc_hidden = meta_int(ckpt, "model.disc_hidden");
  cfg.flow_blocks = meta_int(ckpt, "model.flow_blocks");
  cfg.coupling_hidden = split_ints(ckpt.meta("model.coupling_hidden"));
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Data, std::string("checkpoint: ") + e.what());
  }
  PoseModel m(cfg, 0);
  m.flow = flow::CondFlow::load(ckpt, "flow");
  if (m.flow.config().dim != cfg.pose_dim() || m.flow.config().context_dim != cfg.context_dim)
    fail(ErrorKind::Data, "checkpoint: flow dimensions do not match the model");
  std::vector<Parameter*> params;
  m.encoder.collect(params);
  m.heads.collect(params);
  m.disc.collect(params);
  for (Parameter* p : params) p->value = ckpt.get(p->name, p->value.rows(), p->value.cols());
  return m;
}

void PoseModel::save(const std::string& path) const {
  Checkpoint ckpt;
  save(ckpt);
  ckpt.save(path);
}

PoseModel PoseModel::load(const std::string& path) { return load(Checkpoint::load(path)); }

Prediction predict(const PoseModel& model, const Matrix& inputs) {
  Tape tape(false);
  const Var c = model.context(tape, tape.constant(inputs));
  const HeadOutput h = model.head(tape, c);
  Prediction p;
  p.context = c.value();
  p.mode = model.flow.mode(p.context);
  p.beta = h.beta.value();
  p.camera = h.camera.value();
  return p;
}

}  // namespace posedist::model
