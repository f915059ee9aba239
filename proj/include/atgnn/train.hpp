#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "atgnn/config.hpp"
#include "atgnn/network.hpp"
#include "atgnn/rng.hpp"

namespace atgnn {

// Raw training material: padded log-mel grids [frames x 128] plus multi-hot
// targets. Augmentation operates on the raw grids; model inputs are derived
// per draw.
struct Dataset {
  std::vector<Tensor> spec_values;
  Tensor targets;  // [n x S], entries in {0,1}
  std::vector<std::vector<int>> label_sets;
  int classes = 0;

  int size() const { return int(spec_values.size()); }
};

struct MixedSample {
  Tensor spec;
  Tensor targets;
  double lambda = 1.0;
  bool mixed = false;
};

// Convex combination of two spectrograms and their target rows.
MixedSample mix_samples(const Tensor& spec_a, const Tensor& targets_a, const Tensor& spec_b,
                        const Tensor& targets_b, double lambda);

struct MaskRects {
  int time_start = 0, time_width = 0;
  int freq_start = 0, freq_width = 0;
};

// One time band and one frequency band, widths uniform in {0..max}, positions
// uniform, filled with the pre-mask mean of the grid. Returns the applied
// rectangles.
MaskRects time_freq_mask(Tensor& spec, Rng& rng, int max_time, int max_freq);

// Applies given bands, filling with the current mean of the grid.
void apply_mask_rects(Tensor& spec, const MaskRects& rects);

// Clip weight = max over its positive classes of inverse class frequency.
std::vector<double> balanced_weights(const std::vector<std::vector<int>>& label_sets, int classes);

// Reference form of the loss computed from probabilities (training itself
// differentiates through the fused logit form).
double bce_from_probs(const Tensor& probs, const Tensor& targets);

// Linear warmup over the first warmup_iters steps, then halved once per
// schedule epoch passed.
double lr_at(long step, int epoch, const TrainConfig& cfg);

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(ParamStore& store);
  void step(ParamStore& store, double lr);

  long steps() const { return t_; }
  int slots() const { return int(m_.size()); }
  const Tensor& first_moment(int i) const { return m_[i]; }
  const Tensor& second_moment(int i) const { return v_[i]; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, long t);

 private:
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

struct StepRecord {
  int epoch = 0;
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  long step = 0;  // global step count after the epoch
  double lr = 0.0;
  double mean_loss = 0.0;
  double val_map = 0.0;
  bool has_val = false;
};

// Derives model inputs from a dataset entry and runs inference over a whole
// dataset; rows follow dataset order.
Tensor predict_scores(Network& net, const Dataset& ds);

class Trainer {
 public:
  using EpochSink = std::function<void(const EpochRecord&)>;

  Trainer(Network& net, const Dataset& train_set, const Dataset* val_set, TrainConfig cfg);

  // Runs epochs [start_epoch, cfg.epochs). Sampling, augmentation and the
  // update order are all derived from cfg.seed and the epoch index, so a
  // resumed run continues the exact stream of a straight run.
  void run(int start_epoch, Adam& adam, long& global_step, const EpochSink& sink = nullptr);

  const std::vector<StepRecord>& step_log() const { return step_log_; }

 private:
  Network& net_;
  const Dataset& train_;
  const Dataset* val_;
  TrainConfig cfg_;
  std::vector<StepRecord> step_log_;
};

}  // namespace atgnn
