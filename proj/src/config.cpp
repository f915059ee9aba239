#include "atgnn/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace atgnn {

std::string variant_name(Variant v) {
  return v == Variant::Isotropic ? "isotropic" : "pyramid";
}

Variant variant_from_name(const std::string& name) {
  if (name == "isotropic") return Variant::Isotropic;
  if (name == "pyramid") return Variant::Pyramid;
  throw ConfigError("variant: expected 'isotropic' or 'pyramid', got '" + name + "'");
}

int ModelConfig::total_pgn_blocks() const {
  int total = 0;
  for (int m : stage_pgn) total += m;
  return total;
}

void ModelConfig::validate() const {
  auto positive = [](const std::vector<int>& v, const char* field) {
    if (v.empty()) throw ConfigError(std::string(field) + ": must not be empty");
    for (int x : v)
      if (x <= 0) throw ConfigError(std::string(field) + ": entries must be positive");
  };
  positive(stage_pgn, "stage-pgn");
  positive(stage_dims, "dims");
  positive(stem_channels, "stem-channels");
  if (stage_mlg.empty()) throw ConfigError("stage-mlg: must not be empty");
  for (int x : stage_mlg)
    if (x < 0) throw ConfigError("stage-mlg: entries must be non-negative");
  if (stage_mlg.size() != stage_pgn.size() || stage_dims.size() != stage_pgn.size())
    throw ConfigError("stage-pgn / stage-mlg / dims: stage counts disagree");
  if (variant == Variant::Isotropic) {
    if (stages() != 1) throw ConfigError("stage-pgn: isotropic variant has exactly one stage");
    if (int(stem_channels.size()) != 4)
      throw ConfigError("stem-channels: isotropic stem uses four stride-2 convs");
  } else {
    if (int(stem_channels.size()) != 2)
      throw ConfigError("stem-channels: pyramid stem uses two stride-2 convs");
    if (int(stage_dilation.size()) < stages())
      throw ConfigError("stage-dilation: needs one entry per stage");
    for (int x : stage_dilation)
      if (x <= 0) throw ConfigError("stage-dilation: entries must be positive");
  }
  if (stem_channels.back() != stage_dims.front())
    throw ConfigError("stem-channels: last entry must equal the first stage dim");
  if (base_k < 1) throw ConfigError("k: must be >= 1");
  if (k_plg < 1) throw ConfigError("k-plg: must be >= 1");
  if (dilation_max < 1) throw ConfigError("dilation-max: must be >= 1");
  if (classes < 1) throw ConfigError("classes: must be >= 1");
  if (ffn_ratio < 1) throw ConfigError("ffn-ratio: must be >= 1");
  if (pos_dim < 4 || pos_dim % 4 != 0) throw ConfigError("pos-dim: must be a positive multiple of 4");
  if (rel_bias_sign != 1.0 && rel_bias_sign != -1.0)
    throw ConfigError("rel-bias-sign: must be +1 or -1");
  const int red = total_reduction();
  if (input_freq <= 0 || input_freq % red != 0)
    throw ConfigError("input-freq: must be a positive multiple of " + std::to_string(red));
  if (input_time <= 0 || input_time % red != 0)
    throw ConfigError("input-time: must be a positive multiple of " + std::to_string(red));
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.variant = Variant::Isotropic;
  c.stage_pgn = {2};
  c.stage_mlg = {1};
  c.stage_dims = {32};
  c.base_k = 4;
  c.k_plg = 4;
  c.dilation_max = 2;
  c.input_freq = 64;
  c.input_time = 64;
  c.classes = 8;
  c.stem_channels = {8, 8, 16, 32};
  return c;
}

ModelConfig ModelConfig::isotropic_base(int classes) {
  ModelConfig c;
  c.variant = Variant::Isotropic;
  c.stage_pgn = {12};
  c.stage_mlg = {1};
  c.stage_dims = {192};
  c.base_k = 9;
  c.k_plg = 9;
  c.dilation_max = 4;
  c.input_freq = 128;
  c.input_time = 1024;
  c.classes = classes;
  c.stem_channels = {48, 96, 144, 192};
  return c;
}

ModelConfig pyramid_common(int classes) {
  ModelConfig c;
  c.variant = Variant::Pyramid;
  c.stage_dilation = {1, 1, 2, 2};
  c.base_k = 9;
  c.k_plg = 9;
  c.input_freq = 128;
  c.input_time = 1024;
  c.classes = classes;
  return c;
}

ModelConfig ModelConfig::pyramid_small(int classes) {
  ModelConfig c = pyramid_common(classes);
  c.stage_pgn = {2, 2, 6, 2};
  c.stage_mlg = {1, 1, 3, 1};
  c.stage_dims = {48, 96, 240, 384};
  c.stem_channels = {24, 48};
  return c;
}

ModelConfig ModelConfig::pyramid_medium(int classes) {
  ModelConfig c = pyramid_common(classes);
  c.stage_pgn = {2, 2, 16, 2};
  c.stage_mlg = {1, 1, 6, 1};
  c.stage_dims = {96, 192, 384, 768};
  c.stem_channels = {48, 96};
  return c;
}

void TrainConfig::validate() const {
  if (lr0 < 0.0) throw ConfigError("lr0: must be non-negative");
  if (warmup_iters < 0) throw ConfigError("warmup-iters: must be >= 0");
  if (epochs < 0) throw ConfigError("epochs: must be >= 0");
  if (batch_size < 1) throw ConfigError("batch-size: must be >= 1");
  if (mixup_ratio < 0.0 || mixup_ratio > 1.0) throw ConfigError("mixup-ratio: must be in [0,1]");
  if (max_time_mask < 0) throw ConfigError("max-time-mask: must be >= 0");
  if (max_freq_mask < 0) throw ConfigError("max-freq-mask: must be >= 0");
  for (std::size_t i = 1; i < lr_halve_epochs.size(); ++i)
    if (lr_halve_epochs[i] <= lr_halve_epochs[i - 1])
      throw ConfigError("lr-halve-epochs: must be strictly increasing");
}

bool Config::operator==(const Config& o) const {
  return serialize_config(*this) == serialize_config(o);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& value, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected integer list, got '" + value + "'");
    }
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

int parse_int(const std::string& value, const std::string& key) {
  try {
    return std::stoi(trim(value));
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + value + "'");
  }
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    return std::stod(trim(value));
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + value + "'");
  }
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

Config parse_config(const std::string& text) {
  Config cfg;
  cfg.model = ModelConfig();
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    ModelConfig& m = cfg.model;
    TrainConfig& t = cfg.train;
    DataConfig& d = cfg.data;
    if (key == "variant") m.variant = variant_from_name(value);
    else if (key == "stage-pgn") m.stage_pgn = parse_int_list(value, key);
    else if (key == "stage-mlg") m.stage_mlg = parse_int_list(value, key);
    else if (key == "dims") m.stage_dims = parse_int_list(value, key);
    else if (key == "stage-dilation") m.stage_dilation = parse_int_list(value, key);
    else if (key == "k") m.base_k = parse_int(value, key);
    else if (key == "k-plg") m.k_plg = parse_int(value, key);
    else if (key == "dilation-max") m.dilation_max = parse_int(value, key);
    else if (key == "input-freq") m.input_freq = parse_int(value, key);
    else if (key == "input-time") m.input_time = parse_int(value, key);
    else if (key == "classes") m.classes = parse_int(value, key);
    else if (key == "stem-channels") m.stem_channels = parse_int_list(value, key);
    else if (key == "pos-dim") m.pos_dim = parse_int(value, key);
    else if (key == "rel-bias-sign") m.rel_bias_sign = parse_double(value, key);
    else if (key == "plg-diff") {
      if (value == "label-minus-patch") m.plg_label_minus_patch = true;
      else if (value == "patch-minus-label") m.plg_label_minus_patch = false;
      else throw ConfigError("plg-diff: expected 'label-minus-patch' or 'patch-minus-label'");
    }
    else if (key == "ffn-ratio") m.ffn_ratio = parse_int(value, key);
    else if (key == "lr0") t.lr0 = parse_double(value, key);
    else if (key == "warmup-iters") t.warmup_iters = parse_int(value, key);
    else if (key == "lr-halve-epochs") t.lr_halve_epochs = parse_int_list(value, key);
    else if (key == "epochs") t.epochs = parse_int(value, key);
    else if (key == "batch-size") t.batch_size = parse_int(value, key);
    else if (key == "mixup-ratio") t.mixup_ratio = parse_double(value, key);
    else if (key == "max-time-mask") t.max_time_mask = parse_int(value, key);
    else if (key == "max-freq-mask") t.max_freq_mask = parse_int(value, key);
    else if (key == "seed") t.seed = std::uint64_t(std::stoull(trim(value)));
    else if (key == "train-manifest") d.train_manifest = value;
    else if (key == "val-manifest") d.val_manifest = value;
    else if (key == "out-dir") d.out_dir = value;
    else if (key == "cache-dir") d.cache_dir = value;
    else throw ConfigError("unknown config field: '" + key + "'");
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string model_signature(const ModelConfig& m) {
  std::ostringstream os;
  os << "variant = " << variant_name(m.variant) << "\n";
  os << "stage-pgn = " << join(m.stage_pgn) << "\n";
  os << "stage-mlg = " << join(m.stage_mlg) << "\n";
  os << "dims = " << join(m.stage_dims) << "\n";
  os << "stage-dilation = " << join(m.stage_dilation) << "\n";
  os << "k = " << m.base_k << "\n";
  os << "k-plg = " << m.k_plg << "\n";
  os << "dilation-max = " << m.dilation_max << "\n";
  os << "input-freq = " << m.input_freq << "\n";
  os << "input-time = " << m.input_time << "\n";
  os << "classes = " << m.classes << "\n";
  os << "stem-channels = " << join(m.stem_channels) << "\n";
  os << "pos-dim = " << m.pos_dim << "\n";
  os << "rel-bias-sign = " << (m.rel_bias_sign > 0 ? "1" : "-1") << "\n";
  os << "plg-diff = " << (m.plg_label_minus_patch ? "label-minus-patch" : "patch-minus-label")
     << "\n";
  os << "ffn-ratio = " << m.ffn_ratio << "\n";
  return os.str();
}

std::string serialize_config(const Config& cfg) {
  std::ostringstream os;
  const TrainConfig& t = cfg.train;
  const DataConfig& d = cfg.data;
  os << model_signature(cfg.model);
  std::ostringstream lr;
  lr.precision(17);
  lr << t.lr0;
  os << "lr0 = " << lr.str() << "\n";
  os << "warmup-iters = " << t.warmup_iters << "\n";
  os << "lr-halve-epochs = " << join(t.lr_halve_epochs) << "\n";
  os << "epochs = " << t.epochs << "\n";
  os << "batch-size = " << t.batch_size << "\n";
  std::ostringstream mix;
  mix.precision(17);
  mix << t.mixup_ratio;
  os << "mixup-ratio = " << mix.str() << "\n";
  os << "max-time-mask = " << t.max_time_mask << "\n";
  os << "max-freq-mask = " << t.max_freq_mask << "\n";
  os << "seed = " << t.seed << "\n";
  if (!d.train_manifest.empty()) os << "train-manifest = " << d.train_manifest << "\n";
  if (!d.val_manifest.empty()) os << "val-manifest = " << d.val_manifest << "\n";
  if (d.out_dir != ".") os << "out-dir = " << d.out_dir << "\n";
  if (!d.cache_dir.empty()) os << "cache-dir = " << d.cache_dir << "\n";
  return os.str();
}

}  // namespace atgnn
