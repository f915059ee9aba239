#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atgnn/tensor.hpp"

namespace atgnn {

enum class Variant { Isotropic, Pyramid };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Architecture description. Stages apply in order; the isotropic variant is a
// single stage with no downsampling between blocks.
struct ModelConfig {
  Variant variant = Variant::Isotropic;
  std::vector<int> stage_pgn{12};        // graph-conv blocks per stage
  std::vector<int> stage_mlg{1};         // label blocks per stage
  std::vector<int> stage_dims{192};      // feature dim per stage
  std::vector<int> stage_dilation{1, 1, 2, 2};  // per-stage dilation (pyramid)
  int base_k = 9;
  int k_plg = 9;
  int dilation_max = 4;                  // dilation schedule cap (isotropic)
  int input_freq = 128;                  // model input rows
  int input_time = 1024;                 // model input cols
  int classes = 527;
  std::vector<int> stem_channels{48, 96, 144, 192};  // one entry per stride-2 conv
  int pos_dim = 16;                      // relative grid encoding dim (pyramid)
  double rel_bias_sign = 1.0;            // sign of the ranking bias term
  bool plg_label_minus_patch = true;     // direction of the label/patch difference
  int ffn_ratio = 4;

  int stages() const { return int(stage_pgn.size()); }
  int stem_reduction() const { return 1 << int(stem_channels.size()); }
  int total_reduction() const { return stem_reduction() << (stages() - 1); }
  int total_pgn_blocks() const;
  int head_dim() const { return stage_dims.back(); }
  void validate() const;

  // 64x64 input, two graph-conv blocks and one label block at dim 32; small
  // enough for exhaustive finite-difference checks.
  static ModelConfig tiny();
  static ModelConfig isotropic_base(int classes);
  static ModelConfig pyramid_small(int classes);
  static ModelConfig pyramid_medium(int classes);
};

struct TrainConfig {
  double lr0 = 5e-4;
  int warmup_iters = 1000;
  std::vector<int> lr_halve_epochs{15, 20, 25, 30, 35, 40, 45};
  int epochs = 50;
  int batch_size = 24;
  // Probability of keeping a drawn sample unchanged; otherwise it is mixed
  // with a random partner at lambda ~ Beta(10, 10).
  double mixup_ratio = 0.5;
  int max_time_mask = 192;
  int max_freq_mask = 48;
  std::uint64_t seed = 1234;

  void validate() const;
};

struct DataConfig {
  std::string train_manifest;
  std::string val_manifest;
  std::string out_dir = ".";
  std::string cache_dir;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  bool operator==(const Config& o) const;
};

// Key-value config file ("key = value", '#' comments, lists comma-separated).
Config parse_config(const std::string& text);
Config load_config(const std::string& path);
std::string serialize_config(const Config& cfg);

// Architecture fields only; equal signatures mean checkpoints are
// interchangeable between the two configs.
std::string model_signature(const ModelConfig& cfg);

}  // namespace atgnn
