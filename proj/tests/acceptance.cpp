// Acceptance suite: runs every gate criterion end to end and prints one
// pass/fail line per criterion. Exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "atgnn/checkpoint.hpp"
#include "atgnn/cli.hpp"
#include "atgnn/data.hpp"
#include "atgnn/metrics.hpp"
#include "atgnn/network.hpp"
#include "atgnn/train.hpp"

using namespace atgnn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Tensor random_tensor(Rng& rng, int rows, int cols) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "atgnn_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ---------------------------------------------------------------------------
// 1. Gradient integrity on the tiny configuration.

Outcome criterion_gradient_integrity() {
  const ModelConfig cfg = ModelConfig::tiny();
  Network net(cfg);
  net.init_params(8);
  Rng rng(mix_seed(8, 0x6EADC0DEULL));
  const Tensor input = random_tensor(rng, cfg.input_freq, cfg.input_time);
  Tensor targets(1, cfg.classes);
  for (int c = 0; c < cfg.classes; ++c) targets.at(0, c) = double(rng.below(2));

  GraphPlan plan;
  net.loss_value(input, targets, &plan, false);
  plan.frozen = true;

  const double t0 = now_seconds();
  const auto params = net.params().pointers();
  const double err = check_gradient(
      params, [&](bool grad) { return net.loss_value(input, targets, &plan, grad); }, 1e-5);
  const double secs = now_seconds() - t0;

  std::ostringstream os;
  os << "max rel err " << err << " over " << net.params().total_entries() << " entries, "
     << secs << " s";
  return {err < 1e-4 && secs < 60.0, os.str()};
}

// ---------------------------------------------------------------------------
// 2. Dilated k-NN against an independent naive oracle.

std::vector<std::vector<int>> naive_dilated(const Tensor& nodes, int k, int d) {
  const int n = nodes.rows();
  std::vector<std::vector<int>> out(n);
  const int kk = std::min(k, n - 1);
  if (kk <= 0) return out;
  const int pool = std::min(k * d, n - 1);
  const int stride = kk > 1 ? std::min(d, (pool - 1) / (kk - 1)) : d;
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> cand;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double dist = 0.0;
      for (int c = 0; c < nodes.cols(); ++c) {
        const double diff = nodes.at(i, c) - nodes.at(j, c);
        dist += diff * diff;
      }
      cand.emplace_back(dist, j);
    }
    std::sort(cand.begin(), cand.end());
    for (int m = 0; m < kk; ++m) out[i].push_back(cand[std::size_t(m) * stride].second);
  }
  return out;
}

Outcome criterion_graph_oracle() {
  Rng rng(1234);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + int(rng.below(63));
    const int k = 1 + int(rng.below(8));
    const int d = 1 + int(rng.below(4));
    const Tensor pts = random_tensor(rng, n, 1 + int(rng.below(6)));
    const FeatureGraph got = dilated_knn_graph(pts, k, d);
    if (got.neighbors != naive_dilated(pts, k, d))
      return {false, "oracle mismatch at trial " + std::to_string(trial)};
    const FeatureGraph plain = knn_graph(pts, k);
    const FeatureGraph d1 = dilated_knn_graph(pts, k, 1);
    if (plain.neighbors != d1.neighbors)
      return {false, "d=1 differs from plain k-NN at trial " + std::to_string(trial)};
    ++checked;
  }
  return {true, std::to_string(checked) + " randomized cases exact"};
}

// ---------------------------------------------------------------------------
// 3. Structural ablation identity.

Outcome criterion_ablation_identity() {
  Network net(ModelConfig::tiny());
  net.init_params(15);
  for (const StageParams& stage : net.stages())
    for (const MlgBlockParams& blk : stage.mlg) {
      blk.label_update->value.fill(0.0);
      blk.adjacency->value.fill(0.0);
    }
  net.params().find("head.readout")->value.fill(0.0);

  Rng rng(16);
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor input = random_tensor(rng, 64, 64);
    Tape t;
    Network::Output out = net.forward(t, input);
    const Tensor& probs = t.value(out.probs);
    const Tensor& patch = t.value(out.patch_logits);
    for (int c = 0; c < probs.cols(); ++c) {
      const double expected = 1.0 / (1.0 + std::exp(-patch.at(0, c)));
      worst = std::max(worst, std::fabs(probs.at(0, c) - expected));
    }
  }
  std::ostringstream os;
  os << "max per-class deviation " << worst;
  return {worst <= 1e-12, os.str()};
}

// ---------------------------------------------------------------------------
// 4. Algebraic identities.

Outcome criterion_algebraic_identities() {
  Rng rng(20);

  // Label mixing with a zero adjacency is exactly the identity.
  ParamStore store;
  Parameter& adjacency = store.create("adj", 6, 6);
  const Tensor labels = random_tensor(rng, 6, 5);
  Tape t;
  const bool llg_identity = t.value(llg_block(t, t.constant(labels), adjacency)) == labels;

  // Zero block weights make the stack an identity on node features.
  Network net(ModelConfig::tiny());
  net.init_params(21);
  for (const StageParams& stage : net.stages())
    for (const PgnBlockParams& blk : stage.pgn)
      for (Parameter* w : {blk.lin_in, blk.update, blk.lin_out, blk.ffn_hidden, blk.ffn_out})
        w->value.fill(0.0);
  Tape t2;
  Network::Output out = net.forward(t2, random_tensor(rng, 64, 64));
  const bool stack_identity = t2.value(out.stem_nodes) == t2.value(out.final_nodes);

  // Fused score of zero logits is exactly one half.
  Tape t3;
  Var probs = fuse_probs(t3, t3.constant(Tensor(1, 4)), t3.constant(Tensor(1, 4)));
  bool fuse_half = true;
  for (int c = 0; c < 4; ++c) fuse_half = fuse_half && t3.value(probs).at(0, c) == 0.5;

  std::ostringstream os;
  os << "llg identity " << (llg_identity ? "exact" : "BROKEN") << ", stack identity "
     << (stack_identity ? "exact" : "BROKEN") << ", fuse(0,0)=0.5 "
     << (fuse_half ? "exact" : "BROKEN");
  return {llg_identity && stack_identity && fuse_half, os.str()};
}

// ---------------------------------------------------------------------------
// Shared synthetic data and training harness.

struct TrainResult {
  double final_loss = 0.0;
  double train_map = 0.0;
  double eval_map = 0.0;
  long steps = 0;
};

Dataset load_synthetic(const fs::path& dir, int classes, int count, std::uint64_t seed) {
  if (!fs::exists(dir / "manifest.jsonl"))
    generate_synthetic(dir.string(), classes, count, seed);
  return load_dataset(load_manifest((dir / "manifest.jsonl").string()), 64);
}

TrainResult run_training(const Dataset& train_set, const Dataset* eval_set, int k, int epochs,
                         TrainConfig tc) {
  ModelConfig mc = ModelConfig::tiny();
  mc.base_k = k;
  mc.k_plg = std::min(k, 9);
  tc.epochs = epochs;
  Network net(mc);
  net.init_params(tc.seed);
  Adam adam(net.params());
  long step = 0;
  Trainer trainer(net, train_set, nullptr, tc);
  trainer.run(0, adam, step, nullptr);

  TrainResult r;
  r.steps = step;
  r.final_loss = trainer.step_log().empty() ? 0.0 : trainer.step_log().back().loss;
  r.train_map = mean_average_precision(predict_scores(net, train_set), train_set.targets).map;
  if (eval_set)
    r.eval_map = mean_average_precision(predict_scores(net, *eval_set), eval_set->targets).map;
  return r;
}

// ---------------------------------------------------------------------------
// 5. Overfit 16 clips within 300 steps.

Outcome criterion_overfit() {
  const double t0 = now_seconds();
  const Dataset ds = load_synthetic(work_dir() / "overfit16", 8, 16, 1001);

  TrainConfig tc;
  tc.lr0 = 2e-3;
  tc.warmup_iters = 10;
  tc.lr_halve_epochs = {10000};
  tc.batch_size = 8;
  tc.mixup_ratio = 1.0;
  tc.max_time_mask = 0;
  tc.max_freq_mask = 0;
  tc.seed = 2024;
  const TrainResult r = run_training(ds, nullptr, 4, 150, tc);  // 2 steps/epoch -> 300 steps
  const double secs = now_seconds() - t0;

  std::ostringstream os;
  os << "train bce " << r.final_loss << ", train mAP " << r.train_map << " after " << r.steps
     << " steps, " << secs << " s";
  return {r.steps <= 300 && r.final_loss < 0.05 && r.train_map == 1.0 && secs < 300.0, os.str()};
}

// ---------------------------------------------------------------------------
// 6 + 7. Generalization smoke test and k-insensitivity.

TrainConfig smoke_config() {
  TrainConfig tc;
  tc.lr0 = 1.5e-3;
  tc.warmup_iters = 20;
  tc.lr_halve_epochs = {20, 26};
  tc.batch_size = 16;
  tc.mixup_ratio = 0.7;
  tc.max_time_mask = 8;
  tc.max_freq_mask = 4;
  tc.seed = 3030;
  return tc;
}

struct SmokeResults {
  double map_k3 = 0.0, map_k5 = 0.0, map_k9 = 0.0;
  bool ready = false;
};

SmokeResults& smoke_results() {
  static SmokeResults r;
  return r;
}

void run_smoke_suite() {
  const Dataset train_set = load_synthetic(work_dir() / "smoke_train", 8, 200, 1002);
  const Dataset eval_set = load_synthetic(work_dir() / "smoke_eval", 8, 50, 1003);
  SmokeResults& r = smoke_results();
  r.map_k3 = run_training(train_set, &eval_set, 3, 30, smoke_config()).eval_map;
  r.map_k5 = run_training(train_set, &eval_set, 5, 30, smoke_config()).eval_map;
  r.map_k9 = run_training(train_set, &eval_set, 9, 30, smoke_config()).eval_map;
  r.ready = true;
}

Outcome criterion_generalization() {
  if (!smoke_results().ready) run_smoke_suite();
  const double map = smoke_results().map_k5;
  std::ostringstream os;
  os << "eval mAP " << map << " (200 train / 50 eval, 30 epochs, k=5)";
  return {map >= 0.90, os.str()};
}

Outcome criterion_k_insensitivity() {
  if (!smoke_results().ready) run_smoke_suite();
  const SmokeResults& r = smoke_results();
  const double lo = std::min({r.map_k3, r.map_k5, r.map_k9});
  const double hi = std::max({r.map_k3, r.map_k5, r.map_k9});
  std::ostringstream os;
  os << "eval mAP k=3: " << r.map_k3 << ", k=5: " << r.map_k5 << ", k=9: " << r.map_k9
     << ", spread " << hi - lo;
  return {hi - lo < 0.05 && lo >= 0.90, os.str()};
}

// ---------------------------------------------------------------------------
// 8. Determinism and resume equivalence through the CLI.

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv;
  argv.push_back("atgnn");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(int(argv.size()), argv.data());
}

Outcome criterion_determinism_resume() {
  const fs::path base = work_dir() / "resume";
  fs::create_directories(base);
  const fs::path data_dir = work_dir() / "overfit16";
  load_synthetic(data_dir, 8, 16, 1001);

  Config cfg;
  cfg.model = ModelConfig::tiny();
  cfg.train.lr0 = 1e-3;
  cfg.train.warmup_iters = 4;
  cfg.train.lr_halve_epochs = {6, 8};
  cfg.train.batch_size = 8;
  cfg.train.mixup_ratio = 0.5;
  cfg.train.max_time_mask = 12;
  cfg.train.max_freq_mask = 6;
  cfg.train.seed = 555;
  cfg.data.train_manifest = (data_dir / "manifest.jsonl").string();

  auto write_cfg = [&](const fs::path& path, int epochs, const fs::path& out) {
    Config c = cfg;
    c.train.epochs = epochs;
    c.data.out_dir = out.string();
    std::ofstream f(path);
    f << serialize_config(c);
  };

  // Straight runs with the same seed, twice.
  write_cfg(base / "straight.conf", 10, base / "run_a");
  write_cfg(base / "straight_b.conf", 10, base / "run_b");
  if (run_cli({"train", "--config", (base / "straight.conf").string()}) != 0)
    return {false, "straight run A failed"};
  if (run_cli({"train", "--config", (base / "straight_b.conf").string()}) != 0)
    return {false, "straight run B failed"};
  const bool same_seed_identical =
      read_bytes(base / "run_a" / "final.atgnn") == read_bytes(base / "run_b" / "final.atgnn");

  // Five epochs, then resume to ten.
  write_cfg(base / "first5.conf", 5, base / "run_c");
  write_cfg(base / "resume10.conf", 10, base / "run_c");
  if (run_cli({"train", "--config", (base / "first5.conf").string()}) != 0)
    return {false, "5-epoch run failed"};
  if (run_cli({"train", "--config", (base / "resume10.conf").string(), "--resume",
               (base / "run_c" / "final.atgnn").string()}) != 0)
    return {false, "resume run failed"};
  const bool resume_identical =
      read_bytes(base / "run_a" / "final.atgnn") == read_bytes(base / "run_c" / "final.atgnn");

  std::ostringstream os;
  os << "same-seed checkpoints " << (same_seed_identical ? "identical" : "DIFFER")
     << ", 5+5 vs 10 " << (resume_identical ? "identical" : "DIFFER");
  return {same_seed_identical && resume_identical, os.str()};
}

// ---------------------------------------------------------------------------
// 9. Metric oracle.

double naive_ap(const std::vector<double>& scores, const std::vector<int>& targets) {
  const int n = int(scores.size());
  auto rank_of = [&](int item) {
    int rank = 1;
    for (int j = 0; j < n; ++j) {
      if (j == item) continue;
      if (scores[j] > scores[item] || (scores[j] == scores[item] && j < item)) ++rank;
    }
    return rank;
  };
  double sum = 0.0;
  int positives = 0;
  for (int i = 0; i < n; ++i) {
    if (targets[i] != 1) continue;
    ++positives;
    const int r = rank_of(i);
    int hits = 0;
    for (int j = 0; j < n; ++j)
      if (targets[j] == 1 && rank_of(j) <= r) ++hits;
    sum += double(hits) / double(r);
  }
  return positives > 0 ? sum / positives : 0.0;
}

Outcome criterion_metric_oracle() {
  const ApResult hand = average_precision({0.9, 0.8, 0.7}, {1, 0, 1});
  if (hand.ap != (1.0 / 1.0 + 2.0 / 3.0) / 2.0)
    return {false, "hand-computed AP case does not match exactly"};

  Rng rng(909);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 20, s = 5;
    Tensor scores(n, s), targets(n, s);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < s; ++c) {
        scores.at(i, c) = rng.uniform();
        targets.at(i, c) = rng.uniform() < 0.3 ? 1.0 : 0.0;
      }
    for (int c = 0; c < s; ++c) targets.at(int(rng.below(n)), c) = 1.0;
    const EvalReport got = mean_average_precision(scores, targets);
    double expected = 0.0;
    for (int c = 0; c < s; ++c) {
      std::vector<double> col(n);
      std::vector<int> tgt(n);
      for (int i = 0; i < n; ++i) {
        col[i] = scores.at(i, c);
        tgt[i] = int(targets.at(i, c));
      }
      expected += naive_ap(col, tgt);
    }
    expected /= s;
    worst = std::max(worst, std::fabs(got.map - expected));
  }
  std::ostringstream os;
  os << "100 random batches, max deviation " << worst << ", hand case exact";
  return {worst < 1e-12, os.str()};
}

// ---------------------------------------------------------------------------
// 10. DSP checks.

Outcome criterion_dsp() {
  Waveform sine;
  sine.samples.resize(16000);
  for (int i = 0; i < 16000; ++i)
    sine.samples[i] = std::sin(2.0 * M_PI * 1000.0 * i / kSampleRate);
  const StftResult stft = stft_magnitude(sine);
  bool peak_ok = true;
  for (int f = 0; f < stft.magnitudes.rows(); ++f) {
    int argmax = 0;
    for (int k = 1; k < kSpectrumBins; ++k)
      if (stft.magnitudes.at(f, k) > stft.magnitudes.at(f, argmax)) argmax = k;
    peak_ok = peak_ok && argmax == 32;
  }

  Waveform scaled = sine;
  const double c = 2.3;
  for (double& v : scaled.samples) v *= c;
  const Tensor a = log_mel(stft.magnitudes);
  const Tensor b = log_mel(stft_magnitude(scaled).magnitudes);
  const double floor_log = std::log(1e-10);
  double worst = 0.0;
  int cells = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.data()[i] < floor_log + 5.0 || b.data()[i] < floor_log + 5.0) continue;
    worst = std::max(worst, std::fabs((b.data()[i] - a.data()[i]) - 2.0 * std::log(c)));
    ++cells;
  }
  std::ostringstream os;
  os << "peak bin 32 " << (peak_ok ? "ok" : "WRONG") << ", log-shift deviation " << worst
     << " over " << cells << " cells";
  return {peak_ok && worst <= 1e-9 && cells > 100, os.str()};
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    Outcome (*fn)();
  };
  const Entry entries[] = {
      {1, "gradient integrity (tiny config, eps 1e-5)", criterion_gradient_integrity},
      {2, "dilated k-NN matches naive oracle, d=1 equals k-NN", criterion_graph_oracle},
      {3, "ablation identity: zero label path = sigmoid(patch logits)",
       criterion_ablation_identity},
      {4, "algebraic identities (LLG, residual stack, fuse)", criterion_algebraic_identities},
      {5, "overfit 16 clips within 300 steps", criterion_overfit},
      {6, "generalization smoke test (eval mAP >= 0.90)", criterion_generalization},
      {7, "k-insensitivity across k in {3,5,9}", criterion_k_insensitivity},
      {8, "determinism and resume equivalence", criterion_determinism_resume},
      {9, "mean average precision oracle", criterion_metric_oracle},
      {10, "DSP: sine peak bin and amplitude log-shift", criterion_dsp},
  };

  int failures = 0;
  for (const Entry& e : entries) {
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    std::printf("[%s] criterion %d: %s — %s\n", o.pass ? "PASS" : "FAIL", e.id, e.name,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
