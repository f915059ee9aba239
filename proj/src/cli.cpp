#include "atgnn/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "atgnn/checkpoint.hpp"
#include "atgnn/data.hpp"
#include "atgnn/metrics.hpp"
#include "atgnn/network.hpp"
#include "atgnn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace atgnn::cli {

namespace {

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  Config cfg = load_config(config_path);
  if (cfg.data.train_manifest.empty())
    throw ConfigError("train-manifest: required for training");

  const Manifest train_manifest = load_manifest(cfg.data.train_manifest);
  if (train_manifest.classes() != cfg.model.classes)
    throw DataError("vocabulary size " + std::to_string(train_manifest.classes()) +
                    " does not match classes = " + std::to_string(cfg.model.classes));
  const Dataset train_set =
      load_dataset(train_manifest, cfg.model.input_time, cfg.data.cache_dir);

  Dataset val_set;
  bool has_val = false;
  if (!cfg.data.val_manifest.empty()) {
    val_set = load_dataset(load_manifest(cfg.data.val_manifest), cfg.model.input_time,
                           cfg.data.cache_dir);
    has_val = true;
  }

  Network net(cfg.model);
  Adam adam(net.params());
  int start_epoch = 0;
  long global_step = 0;
  if (!resume_path.empty()) {
    const LoadedCheckpoint ck = load_checkpoint(resume_path);
    if (model_signature(ck.config.model) != model_signature(cfg.model))
      throw ConfigError("resume checkpoint was built from a different model configuration");
    apply_checkpoint(ck, net, &adam);
    start_epoch = ck.epoch;
    global_step = ck.global_step;
  } else {
    net.init_params(cfg.train.seed);
  }

  fs::create_directories(cfg.data.out_dir);
  const std::string log_path = (fs::path(cfg.data.out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + log_path);
  const std::string last_path = (fs::path(cfg.data.out_dir) / "last.atgnn").string();

  Trainer trainer(net, train_set, has_val ? &val_set : nullptr, cfg.train);
  trainer.run(start_epoch, adam, global_step, [&](const EpochRecord& rec) {
    json line;
    line["epoch"] = rec.epoch;
    line["step"] = rec.step;
    line["lr"] = rec.lr;
    line["loss"] = rec.mean_loss;
    if (rec.has_val) line["val_map"] = rec.val_map;
    log << line.dump() << "\n";
    log.flush();
    save_checkpoint(last_path, net, cfg, &adam, rec.epoch + 1, rec.step);
  });

  const std::string final_path = (fs::path(cfg.data.out_dir) / "final.atgnn").string();
  save_checkpoint(final_path, net, cfg, &adam, cfg.train.epochs, global_step);
  std::cout << "wrote " << final_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& out_path) {
  const LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  Network net(ck.config.model);
  apply_checkpoint(ck, net, nullptr);

  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.classes() != net.config().classes)
    throw DataError("vocabulary size " + std::to_string(manifest.classes()) +
                    " does not match model classes " + std::to_string(net.config().classes));
  const Dataset ds = load_dataset(manifest, net.config().input_time);

  const Tensor scores = predict_scores(net, ds);
  const EvalReport report = mean_average_precision(scores, ds.targets);

  json out;
  out["mAP"] = report.map;
  out["per_class_ap"] = report.per_class;
  json skipped = json::array();
  for (std::size_t c = 0; c < report.skipped.size(); ++c)
    if (report.skipped[c]) skipped.push_back(int(c));
  out["skipped_classes"] = std::move(skipped);

  const std::string text = out.dump(2);
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write " + out_path);
    f << text << "\n";
  }
  std::cout << "mAP " << report.map << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& config_path, double eps, std::uint64_t seed,
                  double threshold) {
  ModelConfig model = config_path.empty() ? ModelConfig::tiny() : load_config(config_path).model;
  Network net(model);
  net.init_params(seed);

  Rng rng(mix_seed(seed, 0x6EADC0DEULL));
  Tensor input(model.input_freq, model.input_time);
  for (std::size_t i = 0; i < input.size(); ++i) input.data()[i] = rng.normal();
  Tensor targets(1, model.classes);
  for (int c = 0; c < model.classes; ++c) targets.at(0, c) = double(rng.below(2));

  // Capture the graph topologies once, then differentiate at fixed topology;
  // neighbor selection itself is not a differentiable quantity.
  GraphPlan plan;
  net.loss_value(input, targets, &plan, false);
  plan.frozen = true;

  const auto params = net.params().pointers();
  const auto t0 = std::chrono::steady_clock::now();
  const double err = check_gradient(
      params, [&](bool grad) { return net.loss_value(input, targets, &plan, grad); }, eps);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::cout << "parameters checked: " << net.params().total_entries() << "\n";
  std::cout << "max relative gradient error: " << err << " (threshold " << threshold << ", "
            << secs << " s)\n";
  if (!(err < threshold)) {
    std::cerr << "gradient check failed\n";
    return 4;
  }
  return 0;
}

int cmd_gen_data(int classes, int count, std::uint64_t seed, const std::string& out_dir) {
  const std::string manifest = generate_synthetic(out_dir, classes, count, seed);
  std::cout << "wrote " << manifest << "\n";
  return 0;
}

int cmd_export_graph(const std::string& ckpt_path, const std::string& out_dir) {
  const LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  fs::create_directories(out_dir);
  int written = 0;
  for (const auto& [name, value] : ck.params) {
    if (name.find(".adj") == std::string::npos) continue;
    std::string file = name;
    for (char& ch : file)
      if (ch == '.') ch = '_';
    const std::string path = (fs::path(out_dir) / (file + ".csv")).string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);
    for (int i = 0; i < value.rows(); ++i) {
      for (int j = 0; j < value.cols(); ++j) {
        if (j) out << ",";
        out << value.at(i, j);
      }
      out << "\n";
    }
    std::cout << "wrote " << path << "\n";
    ++written;
  }
  if (written == 0) std::cout << "checkpoint has no label adjacency matrices\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"graph neural audio tagger"};
  app.require_subcommand(1);

  std::string config_path, resume_path, ckpt_path, manifest_path, out_path, out_dir = ".";
  double eps = 1e-5, threshold = 1e-4;
  std::uint64_t seed = 8;
  int classes = 8, count = 64;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval->add_option("--manifest", manifest_path, "manifest path")->required();
  eval->add_option("--out", out_path, "report JSON path (default: stdout)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--config", config_path, "config file (default: built-in tiny)");
  gradcheck->add_option("--eps", eps, "central difference step");
  gradcheck->add_option("--seed", seed, "input/init seed");
  gradcheck->add_option("--threshold", threshold, "max relative error to accept");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labelled dataset");
  gen->add_option("--classes", classes, "number of classes")->required();
  gen->add_option("--count", count, "number of clips")->required();
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* exportg = app.add_subcommand("export-graph", "dump learned label adjacency as CSV");
  exportg->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  exportg->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
    if (train->parsed()) return cmd_train(config_path, resume_path);
    if (eval->parsed()) return cmd_eval(ckpt_path, manifest_path, out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(config_path, eps, seed, threshold);
    if (gen->parsed()) return cmd_gen_data(classes, count, seed, out_dir);
    if (exportg->parsed()) return cmd_export_graph(ckpt_path, out_dir);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace atgnn::cli
