#include "atgnn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace atgnn {

namespace {

constexpr char kMagic[8] = {'A', 'T', 'G', 'N', 'N', 'C', 'K', '1'};

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            std::streamsize(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in, int rows, int cols) {
  Tensor t(rows, cols);
  in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(double)));
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, Network& net, const Config& cfg, const Adam* adam,
                     int epoch, long global_step) {
  json header;
  header["version"] = 1;
  header["config"] = model_signature(cfg.model);
  header["epoch"] = epoch;
  header["step"] = global_step;
  header["rng_seed"] = cfg.train.seed;
  json params = json::array();
  ParamStore& store = net.params();
  for (int i = 0; i < store.count(); ++i) {
    const Parameter& p = store.at(i);
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  header["params"] = std::move(params);
  if (adam != nullptr)
    header["adam"] = {{"steps", adam->steps()}};
  else
    header["adam"] = nullptr;

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  const std::uint64_t len = header_text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header_text.data(), std::streamsize(header_text.size()));
  for (int i = 0; i < store.count(); ++i) write_tensor(out, store.at(i).value);
  if (adam != nullptr) {
    for (int i = 0; i < adam->slots(); ++i) write_tensor(out, adam->first_moment(i));
    for (int i = 0; i < adam->slots(); ++i) write_tensor(out, adam->second_moment(i));
  }
  if (!out) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError(path + ": not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string header_text(len, '\0');
  in.read(header_text.data(), std::streamsize(len));
  if (!in) throw DataError(path + ": truncated checkpoint header");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw DataError(path + ": bad checkpoint header: " + e.what());
  }
  if (header.at("version").get<int>() != 1)
    throw DataError(path + ": unsupported checkpoint version");

  LoadedCheckpoint ck;
  ck.config = parse_config(header.at("config").get<std::string>());
  ck.epoch = header.at("epoch").get<int>();
  ck.global_step = header.at("step").get<long>();
  for (const auto& entry : header.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const int rows = entry.at("rows").get<int>();
    const int cols = entry.at("cols").get<int>();
    ck.params.emplace_back(name, read_tensor(in, rows, cols));
  }
  if (!header.at("adam").is_null()) {
    ck.has_adam = true;
    ck.adam_steps = header.at("adam").at("steps").get<long>();
    for (const auto& entry : header.at("params"))
      ck.adam_m.push_back(
          read_tensor(in, entry.at("rows").get<int>(), entry.at("cols").get<int>()));
    for (const auto& entry : header.at("params"))
      ck.adam_v.push_back(
          read_tensor(in, entry.at("rows").get<int>(), entry.at("cols").get<int>()));
  }
  if (!in) throw DataError(path + ": truncated checkpoint payload");
  return ck;
}

void apply_checkpoint(const LoadedCheckpoint& ck, Network& net, Adam* adam) {
  ParamStore& store = net.params();
  if (int(ck.params.size()) != store.count())
    throw DataError("checkpoint parameter count " + std::to_string(ck.params.size()) +
                    " does not match model (" + std::to_string(store.count()) + ")");
  for (int i = 0; i < store.count(); ++i) {
    Parameter& p = store.at(i);
    const auto& [name, value] = ck.params[i];
    if (name != p.name)
      throw DataError("checkpoint parameter '" + name + "' does not match model '" + p.name +
                      "'");
    if (!value.same_shape(p.value))
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(value) +
                      ", model expects " + shape_str(p.value));
    p.value = value;
    p.grad.fill(0.0);
  }
  if (adam != nullptr && ck.has_adam)
    adam->restore(ck.adam_m, ck.adam_v, ck.adam_steps);
}

}  // namespace atgnn
