#include "posedist/config.hpp"

#include "posedist/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace posedist {

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  gmm.seed = s;
}

data::GenerateConfig ExperimentConfig::split(const std::string& name) const {
  data::GenerateConfig g = data;
  if (name == "train") {
    g.count = train_count;
    g.views = 1;
    g.seed = seed;
  } else if (name == "test") {
    g.count = test_count;
    g.views = 1;
    g.seed = seed + 1;
  } else if (name == "multiview") {
    g.count = multiview_count;
    g.views = multiview_views;
    g.seed = seed + 2;
  } else {
    fail(ErrorKind::Config, "unknown split '" + name + "'");
  }
  return g;
}

void ExperimentConfig::validate() const {
  for (const char* s : {"train", "test", "multiview"}) split(s).validate();
  train.validate();
  fit.validate();
  if (gmm.components < 1 || gmm.max_iters < 0 || !(gmm.reg > 0.0)) fail(ErrorKind::Config, "invalid gmm settings");
  if (min_n.empty()) fail(ErrorKind::Config, "min_n must list at least one n");
  for (int n : min_n)
    if (n < 1) fail(ErrorKind::Config, "min_n entries must be at least 1");
  if (fit_limit < 0 || fuse_limit < 0) fail(ErrorKind::Config, "limits must be non-negative");
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  fail(ErrorKind::Config, "config: invalid value '" + value + "' for key '" + key + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::vector<int> parse_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::istringstream is(value);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(parse_number<int>(key, tok));
  if (out.empty()) bad_value(key, value);
  return out;
}

std::string list_text(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string num_text(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Key {
  const char* name;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define POSEDIST_INT(NAME, FIELD)                                                                          \
  Key{NAME, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_number<int>(k, v); }, \
      [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define POSEDIST_DOUBLE(NAME, FIELD)                                                                            \
  Key{NAME, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_number<double>(k, v); }, \
      [](const ExperimentConfig& c) { return num_text(c.FIELD); }}
#define POSEDIST_BOOL(NAME, FIELD)                                                                     \
  Key{NAME, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_bool(k, v); }, \
      [](const ExperimentConfig& c) { return std::string(c.FIELD ? "true" : "false"); }}
#define POSEDIST_LIST(NAME, FIELD)                                                                     \
  Key{NAME, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_list(k, v); }, \
      [](const ExperimentConfig& c) { return list_text(c.FIELD); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"seed",
          [](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.set_seed(parse_number<std::uint64_t>(k, v));
          },
          [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      Key{"body_spec", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.body_spec = v; },
          [](const ExperimentConfig& c) { return c.body_spec; }},
      // data
      POSEDIST_INT("train_count", train_count),
      POSEDIST_INT("test_count", test_count),
      POSEDIST_INT("multiview_count", multiview_count),
      POSEDIST_INT("multiview_views", multiview_views),
      POSEDIST_DOUBLE("noise_sigma", data.noise_sigma),
      POSEDIST_DOUBLE("drop_prob", data.drop_prob),
      POSEDIST_DOUBLE("shape_sigma", data.shape_sigma),
      POSEDIST_DOUBLE("scale_min", data.scale_min),
      POSEDIST_DOUBLE("scale_max", data.scale_max),
      POSEDIST_DOUBLE("trans_sigma", data.trans_sigma),
      POSEDIST_DOUBLE("max_tilt", data.max_tilt),
      // model
      POSEDIST_INT("encoder_width", train.model.encoder_width),
      POSEDIST_INT("encoder_blocks", train.model.encoder_blocks),
      POSEDIST_INT("context_dim", train.model.context_dim),
      POSEDIST_INT("head_hidden", train.model.head_hidden),
      POSEDIST_INT("disc_hidden", train.model.disc_hidden),
      POSEDIST_INT("flow_blocks", train.model.flow_blocks),
      POSEDIST_LIST("coupling_hidden", train.model.coupling_hidden),
      // training
      POSEDIST_INT("epochs", train.epochs),
      POSEDIST_INT("batch", train.batch),
      POSEDIST_DOUBLE("lr", train.lr),
      POSEDIST_DOUBLE("disc_lr", train.disc_lr),
      POSEDIST_DOUBLE("lr_final", train.lr_final),
      POSEDIST_BOOL("data_init", train.data_init),
      POSEDIST_INT("init_rows", train.init_rows),
      POSEDIST_DOUBLE("grad_clip", train.grad_clip),
      POSEDIST_INT("val_rows", train.val_rows),
      POSEDIST_INT("exp_samples", train.exp_samples),
      POSEDIST_DOUBLE("lambda_nll", train.weights.nll),
      POSEDIST_DOUBLE("lambda_exp_2d", train.weights.exp_2d),
      POSEDIST_DOUBLE("lambda_exp_adv", train.weights.exp_adv),
      POSEDIST_DOUBLE("lambda_mode_3d", train.weights.mode_3d),
      POSEDIST_DOUBLE("lambda_mode_2d", train.weights.mode_2d),
      POSEDIST_DOUBLE("lambda_mode_adv", train.weights.mode_adv),
      POSEDIST_DOUBLE("lambda_orth", train.weights.orth),
      // fitting
      POSEDIST_DOUBLE("fit_lambda_j", fit.lambda_j),
      POSEDIST_DOUBLE("fit_lambda_beta", fit.lambda_beta),
      POSEDIST_DOUBLE("fit_lambda_mv", fit.lambda_mv),
      POSEDIST_DOUBLE("fit_lambda_theta", fit.lambda_theta),
      POSEDIST_DOUBLE("fit_lambda_alpha", fit.lambda_alpha),
      POSEDIST_INT("fit_max_iters", fit.optimizer.max_iters),
      POSEDIST_DOUBLE("fit_step", fit.optimizer.step),
      POSEDIST_DOUBLE("fit_rel_tol", fit.optimizer.rel_tol),
      POSEDIST_BOOL("fit_share_beta", fit.share_beta),
      POSEDIST_INT("gmm_components", gmm.components),
      POSEDIST_INT("gmm_max_iters", gmm.max_iters),
      POSEDIST_DOUBLE("gmm_reg", gmm.reg),
      // evaluation
      POSEDIST_LIST("min_n", min_n),
      POSEDIST_INT("fit_limit", fit_limit),
      POSEDIST_INT("fuse_limit", fuse_limit),
  };
  return table;
}

#undef POSEDIST_INT
#undef POSEDIST_DOUBLE
#undef POSEDIST_BOOL
#undef POSEDIST_LIST

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Config, "config: line " + std::to_string(lineno) + " is not of the form key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return key == k.name; });
    if (it == table.end()) fail(ErrorKind::Config, "config: unknown key '" + key + "' on line " + std::to_string(lineno));
    it->set(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::Data, "config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

}  // namespace posedist
