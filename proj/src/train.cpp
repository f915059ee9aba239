#include "atgnn/train.hpp"

#include <algorithm>
#include <cmath>

#include "atgnn/data.hpp"
#include "atgnn/metrics.hpp"
#include "atgnn/parallel.hpp"

namespace atgnn {

MixedSample mix_samples(const Tensor& spec_a, const Tensor& targets_a, const Tensor& spec_b,
                        const Tensor& targets_b, double lambda) {
  require_same_shape(spec_a, spec_b, "mix_samples");
  require_same_shape(targets_a, targets_b, "mix_samples targets");
  MixedSample out;
  out.lambda = lambda;
  out.mixed = true;
  out.spec = Tensor(spec_a.rows(), spec_a.cols());
  for (std::size_t i = 0; i < spec_a.size(); ++i)
    out.spec.data()[i] = lambda * spec_a.data()[i] + (1.0 - lambda) * spec_b.data()[i];
  out.targets = Tensor(targets_a.rows(), targets_a.cols());
  for (std::size_t i = 0; i < targets_a.size(); ++i)
    out.targets.data()[i] = lambda * targets_a.data()[i] + (1.0 - lambda) * targets_b.data()[i];
  return out;
}

void apply_mask_rects(Tensor& spec, const MaskRects& r) {
  const int frames = spec.rows(), bins = spec.cols();
  const double fill = spec.mean();
  for (int f = r.time_start; f < r.time_start + r.time_width; ++f)
    for (int b = 0; b < bins; ++b) spec.at(f, b) = fill;
  for (int f = 0; f < frames; ++f)
    for (int b = r.freq_start; b < r.freq_start + r.freq_width; ++b) spec.at(f, b) = fill;
}

MaskRects time_freq_mask(Tensor& spec, Rng& rng, int max_time, int max_freq) {
  const int frames = spec.rows(), bins = spec.cols();
  MaskRects r;
  r.time_width = int(rng.below(std::uint64_t(std::min(max_time, frames)) + 1));
  r.time_start = int(rng.below(std::uint64_t(frames - r.time_width) + 1));
  r.freq_width = int(rng.below(std::uint64_t(std::min(max_freq, bins)) + 1));
  r.freq_start = int(rng.below(std::uint64_t(bins - r.freq_width) + 1));
  apply_mask_rects(spec, r);
  return r;
}

std::vector<double> balanced_weights(const std::vector<std::vector<int>>& label_sets,
                                     int classes) {
  std::vector<int> freq(classes, 0);
  for (std::size_t i = 0; i < label_sets.size(); ++i) {
    if (label_sets[i].empty())
      throw DataError("clip " + std::to_string(i) + " has no labels");
    for (int c : label_sets[i]) {
      if (c < 0 || c >= classes)
        throw DataError("clip " + std::to_string(i) + ": label id " + std::to_string(c) +
                        " out of range");
      ++freq[c];
    }
  }
  std::vector<double> weights(label_sets.size(), 0.0);
  for (std::size_t i = 0; i < label_sets.size(); ++i) {
    double w = 0.0;
    for (int c : label_sets[i]) w = std::max(w, 1.0 / double(freq[c]));
    weights[i] = w;
  }
  return weights;
}

double bce_from_probs(const Tensor& probs, const Tensor& targets) {
  require_same_shape(probs, targets, "bce_from_probs");
  if (probs.empty()) throw DomainError("bce_from_probs: empty input");
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs.data()[i];
    const double t = targets.data()[i];
    if (!(p > 0.0 && p < 1.0)) throw DomainError("bce_from_probs: probabilities must be in (0,1)");
    loss += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
  }
  loss /= double(probs.size());
  if (!std::isfinite(loss)) throw NumericError("bce_from_probs: non-finite loss");
  return loss;
}

double lr_at(long step, int epoch, const TrainConfig& cfg) {
  if (step < 0 || epoch < 0) throw DomainError("lr_at: step and epoch must be >= 0");
  if (cfg.warmup_iters > 0 && step < cfg.warmup_iters)
    return cfg.lr0 * double(step) / double(cfg.warmup_iters);
  int halvings = 0;
  for (int e : cfg.lr_halve_epochs)
    if (e <= epoch) ++halvings;
  return cfg.lr0 * std::pow(0.5, halvings);
}

Adam::Adam(ParamStore& store) {
  m_.reserve(store.count());
  v_.reserve(store.count());
  for (int i = 0; i < store.count(); ++i) {
    const Tensor& value = store.at(i).value;
    m_.emplace_back(value.rows(), value.cols());
    v_.emplace_back(value.rows(), value.cols());
  }
}

void Adam::step(ParamStore& store, double lr) {
  if (store.count() != int(m_.size()))
    throw DomainError("Adam::step: optimizer state does not match parameter store");
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, double(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, double(t_));
  for (int i = 0; i < store.count(); ++i) {
    Parameter& p = store.at(i);
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* value = p.value.data();
    const double* g = p.grad.data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

void Adam::restore(std::vector<Tensor> m, std::vector<Tensor> v, long t) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw DataError("Adam::restore: slot count mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) {
    require_same_shape(m[i], m_[i], "Adam::restore");
    require_same_shape(v[i], v_[i], "Adam::restore");
  }
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

Tensor predict_scores(Network& net, const Dataset& ds) {
  const int n = ds.size();
  Tensor scores(n, ds.classes);
  parallel_for(n, [&](int i) {
    const Tensor input = to_model_input(ds.spec_values[i], net.config().input_freq);
    const Tensor probs = net.predict(input);
    for (int c = 0; c < ds.classes; ++c) scores.at(i, c) = probs.at(0, c);
  });
  return scores;
}

Trainer::Trainer(Network& net, const Dataset& train_set, const Dataset* val_set, TrainConfig cfg)
    : net_(net), train_(train_set), val_(val_set), cfg_(std::move(cfg)) {
  if (train_.size() == 0) throw DataError("Trainer: empty training set");
  if (train_.classes != net_.config().classes)
    throw DataError("Trainer: dataset classes " + std::to_string(train_.classes) +
                    " do not match model classes " + std::to_string(net_.config().classes));
  if (cfg_.max_time_mask > net_.config().input_time)
    throw ConfigError("max-time-mask: exceeds spectrogram frames (" +
                      std::to_string(net_.config().input_time) + ")");
  if (cfg_.max_freq_mask > kMelBins)
    throw ConfigError("max-freq-mask: exceeds mel bins (" + std::to_string(kMelBins) + ")");
}

void Trainer::run(int start_epoch, Adam& adam, long& global_step, const EpochSink& sink) {
  const int n = train_.size();
  const int batch = cfg_.batch_size;
  const int steps_per_epoch = std::max(1, n / batch);

  const std::vector<double> weights = balanced_weights(train_.label_sets, train_.classes);
  std::vector<double> cumulative(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    total += weights[i];
    cumulative[i] = total;
  }
  auto weighted_pick = [&](Rng& rng) {
    const double u = rng.uniform() * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    return int(std::min<std::size_t>(it - cumulative.begin(), n - 1));
  };

  auto target_row = [&](int idx) {
    Tensor row(1, train_.classes);
    for (int c = 0; c < train_.classes; ++c) row.at(0, c) = train_.targets.at(idx, c);
    return row;
  };

  for (int epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
    Rng rng(mix_seed(cfg_.seed, 0xE70C0000ULL + std::uint64_t(epoch)));
    double loss_sum = 0.0;
    double last_lr = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      const double lr = lr_at(global_step, epoch, cfg_);
      last_lr = lr;

      std::vector<Tensor> inputs(batch);
      std::vector<Tensor> targets(batch);
      for (int b = 0; b < batch; ++b) {
        const int idx = weighted_pick(rng);
        MixedSample sample;
        if (rng.uniform() < cfg_.mixup_ratio) {
          sample.spec = train_.spec_values[idx];
          sample.targets = target_row(idx);
        } else {
          const int partner = int(rng.below(std::uint64_t(n)));
          const double lambda = rng.beta(10.0, 10.0);
          sample = mix_samples(train_.spec_values[idx], target_row(idx),
                               train_.spec_values[partner], target_row(partner), lambda);
        }
        time_freq_mask(sample.spec, rng, cfg_.max_time_mask, cfg_.max_freq_mask);
        inputs[b] = to_model_input(sample.spec, net_.config().input_freq);
        targets[b] = std::move(sample.targets);
      }

      net_.params().zero_grads();
      std::vector<std::unique_ptr<Tape>> tapes(batch);
      std::vector<double> losses(batch, 0.0);
      parallel_for(batch, [&](int b) {
        tapes[b] = std::make_unique<Tape>(true);
        Network::Output out = net_.forward(*tapes[b], inputs[b], nullptr);
        const Var l = net_.loss(*tapes[b], out, targets[b]);
        tapes[b]->backward(l);
        losses[b] = tapes[b]->value(l).at(0, 0);
      });
      double step_loss = 0.0;
      for (int b = 0; b < batch; ++b) {
        if (!std::isfinite(losses[b]))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                             std::to_string(global_step) + " sample " + std::to_string(b));
        step_loss += losses[b];
      }
      step_loss /= batch;
      // Reduction in sample order keeps results independent of thread count.
      for (int b = 0; b < batch; ++b) tapes[b]->add_param_grads(1.0 / batch);
      adam.step(net_.params(), lr);

      step_log_.push_back({epoch, global_step, lr, step_loss});
      loss_sum += step_loss;
      ++global_step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = global_step;
    rec.lr = last_lr;
    rec.mean_loss = loss_sum / steps_per_epoch;
    if (val_ != nullptr && val_->size() > 0) {
      const Tensor scores = predict_scores(net_, *val_);
      rec.val_map = mean_average_precision(scores, val_->targets).map;
      rec.has_val = true;
    }
    if (sink) sink(rec);
  }
}

}  // namespace atgnn
