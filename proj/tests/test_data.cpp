#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "atgnn/checkpoint.hpp"
#include "atgnn/cli.hpp"
#include "atgnn/data.hpp"
#include "atgnn/metrics.hpp"
#include "atgnn/network.hpp"

using namespace atgnn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "atgnn_data_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config round trip and validation") {
  Config cfg;
  cfg.model = ModelConfig::tiny();
  cfg.train.epochs = 7;
  cfg.train.lr0 = 3.5e-4;
  cfg.train.lr_halve_epochs = {4, 6};
  cfg.data.train_manifest = "data/manifest.jsonl";

  const std::string text = serialize_config(cfg);
  const Config back = parse_config(text);
  CHECK(back == cfg);
  CHECK(serialize_config(back) == text);

  CHECK_THROWS_WITH_AS(parse_config("bogus-key = 1\n"), doctest::Contains("bogus-key"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("variant = isotropic\nk = 0\n"), doctest::Contains("k"),
                       ConfigError);
}

TEST_CASE("synthetic dataset generation") {
  const fs::path dir = fresh_dir("synth");

  SUBCASE("deterministic in the seed") {
    const fs::path a = dir / "a";
    const fs::path b = dir / "b";
    generate_synthetic(a.string(), 4, 16, 7);
    generate_synthetic(b.string(), 4, 16, 7);
    for (int i = 0; i < 16; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "wavs/clip_%04d.wav", i);
      CHECK(file_bytes(a / name) == file_bytes(b / name));
    }
    CHECK(file_bytes(a / "manifest.jsonl") == file_bytes(b / "manifest.jsonl"));
  }

  SUBCASE("every clip has one to three labels and loads cleanly") {
    const fs::path out = dir / "labels";
    const std::string manifest_path = generate_synthetic(out.string(), 6, 24, 3);
    const Manifest m = load_manifest(manifest_path);
    CHECK(m.classes() == 6);
    REQUIRE(m.entries.size() == 24);
    for (const auto& e : m.entries) {
      CHECK(e.labels.size() >= 1);
      CHECK(e.labels.size() <= 3);
    }
    const Dataset ds = load_dataset(m, 64);
    CHECK(ds.size() == 24);
    CHECK(ds.spec_values[0].rows() == 64);
    CHECK(ds.spec_values[0].cols() == 128);
  }

  SUBCASE("argument validation") {
    CHECK_THROWS_AS(generate_synthetic((dir / "x").string(), 40, 64, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic((dir / "y").string(), 8, 4, 1), ConfigError);
  }
}

TEST_CASE("single-label clips of distant classes are linearly separable") {
  const fs::path dir = fresh_dir("separable");
  const std::string manifest_path = generate_synthetic(dir.string(), 4, 48, 11);
  const Manifest m = load_manifest(manifest_path);
  const Dataset ds = load_dataset(m, 64);

  // Mean log-mel vector per clip, classes 0 vs 3, single-label clips only.
  std::vector<std::vector<double>> feats;
  std::vector<int> ys;
  for (int i = 0; i < ds.size(); ++i) {
    if (ds.label_sets[i].size() != 1) continue;
    const int label = ds.label_sets[i][0];
    if (label != 0 && label != 3) continue;
    std::vector<double> f(128, 0.0);
    for (int t = 0; t < ds.spec_values[i].rows(); ++t)
      for (int b = 0; b < 128; ++b) f[b] += ds.spec_values[i].at(t, b);
    for (double& v : f) v /= ds.spec_values[i].rows();
    feats.push_back(std::move(f));
    ys.push_back(label == 0 ? -1 : 1);
  }
  REQUIRE(feats.size() >= 4);

  // Perceptron with bias; the classes sit in disjoint mel bands.
  std::vector<double> w(129, 0.0);
  bool separated = false;
  for (int pass = 0; pass < 500 && !separated; ++pass) {
    separated = true;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      double act = w[128];
      for (int b = 0; b < 128; ++b) act += w[b] * feats[i][b];
      if (ys[i] * act <= 0.0) {
        separated = false;
        for (int b = 0; b < 128; ++b) w[b] += 0.01 * ys[i] * feats[i][b];
        w[128] += 0.01 * ys[i];
      }
    }
  }
  CHECK(separated);
}

TEST_CASE("manifest error paths") {
  const fs::path dir = fresh_dir("manifest_errors");
  {
    std::ofstream v(dir / "vocab.json");
    v << "[\"a\",\"b\"]";
  }
  {
    std::ofstream m(dir / "manifest.jsonl");
    m << R"({"audio":"missing.wav","labels":[0]})" << "\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "manifest.jsonl").string()), IoError);
  CHECK_THROWS_AS(load_manifest((dir / "nope.jsonl").string()), IoError);

  {
    std::ofstream m(dir / "bad_label.jsonl");
    m << R"({"audio":"missing.wav","labels":[5]})" << "\n";
  }
  CHECK_THROWS_AS(load_manifest((dir / "bad_label.jsonl").string(),
                                (dir / "vocab.json").string()),
                  DataError);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = fresh_dir("ckpt");
  Config cfg;
  cfg.model = ModelConfig::tiny();
  cfg.train.epochs = 3;
  Network net(cfg.model);
  net.init_params(21);
  Adam adam(net.params());

  // Drive one optimizer step so the moments are non-trivial.
  for (int i = 0; i < net.params().count(); ++i) net.params().at(i).grad.fill(0.01);
  adam.step(net.params(), 1e-3);

  const std::string p1 = (dir / "a.atgnn").string();
  save_checkpoint(p1, net, cfg, &adam, 2, 17);

  const LoadedCheckpoint ck = load_checkpoint(p1);
  CHECK(ck.epoch == 2);
  CHECK(ck.global_step == 17);
  CHECK(model_signature(ck.config.model) == model_signature(cfg.model));
  CHECK(ck.has_adam);

  Network net2(ck.config.model);
  Adam adam2(net2.params());
  apply_checkpoint(ck, net2, &adam2);
  for (int i = 0; i < net.params().count(); ++i)
    CHECK(net.params().at(i).value == net2.params().at(i).value);
  CHECK(adam2.steps() == 1);

  // Save of the loaded state is byte-identical.
  const std::string p2 = (dir / "b.atgnn").string();
  save_checkpoint(p2, net2, ck.config, &adam2, ck.epoch, ck.global_step);
  CHECK(file_bytes(p1) == file_bytes(p2));

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.atgnn").string()), IoError);
}

TEST_CASE("checkpoint rejects a mismatched model") {
  const fs::path dir = fresh_dir("ckpt_mismatch");
  Config cfg;
  cfg.model = ModelConfig::tiny();
  Network net(cfg.model);
  net.init_params(1);
  const std::string path = (dir / "tiny.atgnn").string();
  save_checkpoint(path, net, cfg, nullptr, 0, 0);

  ModelConfig other = ModelConfig::tiny();
  other.stage_dims = {16};
  other.stem_channels = {8, 8, 16, 16};
  Network net2(other);
  const LoadedCheckpoint ck = load_checkpoint(path);
  CHECK_THROWS_AS(apply_checkpoint(ck, net2, nullptr), DataError);
}

TEST_CASE("cli gradcheck on a micro config exits 0") {
  const fs::path dir = fresh_dir("cli_gradcheck");
  Config cfg;
  cfg.model.variant = Variant::Isotropic;
  cfg.model.stage_pgn = {1};
  cfg.model.stage_mlg = {1};
  cfg.model.stage_dims = {8};
  cfg.model.base_k = 2;
  cfg.model.k_plg = 2;
  cfg.model.input_freq = 32;
  cfg.model.input_time = 32;
  cfg.model.classes = 3;
  cfg.model.stem_channels = {2, 2, 4, 8};
  const std::string cfg_path = (dir / "micro.conf").string();
  {
    std::ofstream out(cfg_path);
    out << serialize_config(cfg);
  }
  const char* argv[] = {"atgnn", "gradcheck", "--config", cfg_path.c_str(), "--seed", "5"};
  CHECK(cli::run(6, argv) == 0);
}

TEST_CASE("cli rejects a bad config file with exit 2") {
  const fs::path dir = fresh_dir("cli_badcfg");
  const std::string cfg_path = (dir / "bad.conf").string();
  {
    std::ofstream out(cfg_path);
    out << "variant = isotropic\nk = -3\n";
  }
  const char* argv[] = {"atgnn", "gradcheck", "--config", cfg_path.c_str()};
  CHECK(cli::run(4, argv) == 2);

  const std::string missing = (dir / "missing.conf").string();
  const char* argv2[] = {"atgnn", "train", "--config", missing.c_str()};
  CHECK(cli::run(4, argv2) == 3);
}

TEST_CASE("zeroing the label path changes mAP on a trained model") {
  const fs::path dir = fresh_dir("ablation_map");
  const std::string manifest_path = generate_synthetic(dir.string(), 8, 16, 45);
  const Dataset ds = load_dataset(load_manifest(manifest_path), 64);

  Network net(ModelConfig::tiny());
  net.init_params(45);
  TrainConfig tc;
  tc.lr0 = 1e-3;
  tc.warmup_iters = 4;
  tc.lr_halve_epochs = {1000};
  tc.epochs = 5;
  tc.batch_size = 8;
  tc.mixup_ratio = 1.0;
  tc.max_time_mask = 0;
  tc.max_freq_mask = 0;
  tc.seed = 46;
  Adam adam(net.params());
  long step = 0;
  Trainer trainer(net, ds, nullptr, tc);
  trainer.run(0, adam, step);

  const double full = mean_average_precision(predict_scores(net, ds), ds.targets).map;
  for (const StageParams& stage : net.stages())
    for (const MlgBlockParams& blk : stage.mlg) {
      blk.label_update->value.fill(0.0);
      blk.adjacency->value.fill(0.0);
    }
  net.params().find("head.readout")->value.fill(0.0);
  const double ablated = mean_average_precision(predict_scores(net, ds), ds.targets).map;
  CHECK(full != ablated);
}

TEST_CASE("gradcheck exit code signals numeric failure") {
  const fs::path dir = fresh_dir("gradcheck_fail");
  Config cfg;
  cfg.model.variant = Variant::Isotropic;
  cfg.model.stage_pgn = {1};
  cfg.model.stage_mlg = {1};
  cfg.model.stage_dims = {8};
  cfg.model.base_k = 2;
  cfg.model.k_plg = 2;
  cfg.model.input_freq = 32;
  cfg.model.input_time = 32;
  cfg.model.classes = 3;
  cfg.model.stem_channels = {2, 2, 4, 8};
  const std::string cfg_path = (dir / "micro.conf").string();
  {
    std::ofstream out(cfg_path);
    out << serialize_config(cfg);
  }
  // An absurd threshold cannot be met; the command must exit 4.
  const char* argv[] = {"atgnn",  "gradcheck",      "--config",    cfg_path.c_str(),
                        "--seed", "5",              "--threshold", "1e-20"};
  CHECK(cli::run(8, argv) == 4);
}

TEST_CASE("random-init model scores near the chance baseline") {
  const fs::path dir = fresh_dir("chance");
  const std::string manifest_path = generate_synthetic(dir.string(), 8, 32, 5);
  const Dataset ds = load_dataset(load_manifest(manifest_path), 64);

  Network net(ModelConfig::tiny());
  net.init_params(123);
  const Tensor scores = predict_scores(net, ds);
  const double map = mean_average_precision(scores, ds.targets).map;
  CHECK(map >= 0.05);
  CHECK(map <= 0.45);
}

TEST_CASE("train command with zero epochs writes the initialization") {
  const fs::path dir = fresh_dir("train_zero");
  const std::string manifest_path = generate_synthetic((dir / "data").string(), 4, 8, 9);

  Config cfg;
  cfg.model = ModelConfig::tiny();
  cfg.model.classes = 4;
  cfg.train = TrainConfig{};
  cfg.train.epochs = 0;
  cfg.train.seed = 31;
  cfg.train.max_time_mask = 16;
  cfg.train.max_freq_mask = 8;
  cfg.data.train_manifest = manifest_path;
  cfg.data.out_dir = (dir / "run").string();
  const std::string cfg_path = (dir / "run.conf").string();
  {
    std::ofstream out(cfg_path);
    out << serialize_config(cfg);
  }
  const char* argv[] = {"atgnn", "train", "--config", cfg_path.c_str()};
  REQUIRE(cli::run(4, argv) == 0);

  const LoadedCheckpoint ck = load_checkpoint((dir / "run" / "final.atgnn").string());
  Network fresh(cfg.model);
  fresh.init_params(cfg.train.seed);
  REQUIRE(int(ck.params.size()) == fresh.params().count());
  for (std::size_t i = 0; i < ck.params.size(); ++i)
    CHECK(ck.params[i].second == fresh.params().at(int(i)).value);
}

TEST_CASE("train, eval and export-graph work end to end") {
  const fs::path dir = fresh_dir("workflow");
  const std::string manifest_path = generate_synthetic((dir / "data").string(), 4, 8, 13);

  Config cfg;
  cfg.model = ModelConfig::tiny();
  cfg.model.classes = 4;
  cfg.train.lr0 = 1e-3;
  cfg.train.warmup_iters = 2;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 4;
  cfg.train.mixup_ratio = 0.5;
  cfg.train.max_time_mask = 8;
  cfg.train.max_freq_mask = 4;
  cfg.train.seed = 77;
  cfg.data.train_manifest = manifest_path;
  cfg.data.val_manifest = manifest_path;
  cfg.data.out_dir = (dir / "run").string();
  cfg.data.cache_dir = (dir / "cache").string();
  const std::string cfg_path = (dir / "run.conf").string();
  {
    std::ofstream out(cfg_path);
    out << serialize_config(cfg);
  }
  const char* train_argv[] = {"atgnn", "train", "--config", cfg_path.c_str()};
  REQUIRE(cli::run(4, train_argv) == 0);

  // One JSONL record per epoch with the logged fields.
  {
    std::ifstream log(dir / "run" / "train_log.jsonl");
    REQUIRE(log);
    std::string line;
    REQUIRE(std::getline(log, line));
    const auto rec = nlohmann::json::parse(line);
    CHECK(rec.at("epoch").get<int>() == 0);
    CHECK(rec.at("step").get<int>() == 2);  // 8 clips / batch 4
    CHECK(rec.at("lr").get<double>() > 0.0);
    CHECK(rec.at("loss").get<double>() > 0.0);
    CHECK(rec.contains("val_map"));
    CHECK_FALSE(std::getline(log, line));
  }

  const std::string ckpt = (dir / "run" / "final.atgnn").string();
  const std::string report_path = (dir / "report.json").string();
  const char* eval_argv[] = {"atgnn", "eval",       "--ckpt", ckpt.c_str(),
                             "--manifest", manifest_path.c_str(), "--out",  report_path.c_str()};
  REQUIRE(cli::run(8, eval_argv) == 0);
  {
    std::ifstream in(report_path);
    REQUIRE(in);
    nlohmann::json report;
    in >> report;
    CHECK(report.at("mAP").get<double>() >= 0.0);
    CHECK(report.at("mAP").get<double>() <= 1.0);
    CHECK(report.at("per_class_ap").size() == 4);
    CHECK(report.contains("skipped_classes"));
  }

  const std::string graph_dir = (dir / "graphs").string();
  const char* export_argv[] = {"atgnn", "export-graph", "--ckpt", ckpt.c_str(),
                               "--out", graph_dir.c_str()};
  REQUIRE(cli::run(6, export_argv) == 0);
  {
    std::ifstream csv(fs::path(graph_dir) / "s0_mlg0_adj.csv");
    REQUIRE(csv);
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 3);
    }
    CHECK(rows == 4);
  }

  // Cached reload matches the bit pattern the first (cache-writing) run saw.
  const Dataset fresh = load_dataset(load_manifest(manifest_path), 64, cfg.data.cache_dir);
  const Dataset again = load_dataset(load_manifest(manifest_path), 64, cfg.data.cache_dir);
  for (int i = 0; i < fresh.size(); ++i) CHECK(fresh.spec_values[i] == again.spec_values[i]);
}

TEST_CASE("model input pooling and standardization") {
  Rng rng(41);
  Tensor spec(64, 128);
  for (std::size_t i = 0; i < spec.size(); ++i) spec.data()[i] = rng.normal(3.0, 2.0);
  const Tensor input = to_model_input(spec, 64);
  CHECK(input.rows() == 64);
  CHECK(input.cols() == 64);
  CHECK(std::fabs(input.mean()) < 1e-9);

  // Pooled cell = mean of the two adjacent mel bins, then standardized.
  const Tensor raw = to_model_input(spec, 128);
  CHECK_THROWS_AS(to_model_input(spec, 100), ShapeError);
  CHECK(raw.rows() == 128);
}
