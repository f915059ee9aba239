#pragma once

#include <string>
#include <utility>
#include <vector>

#include "atgnn/config.hpp"
#include "atgnn/network.hpp"
#include "atgnn/train.hpp"

namespace atgnn {

// Versioned binary container: "ATGNNCK1" magic, u64 header length, JSON
// header (config text, epoch, step, parameter index, optimizer slot), then
// raw little-endian 64-bit float payloads in header order.
void save_checkpoint(const std::string& path, Network& net, const Config& cfg, const Adam* adam,
                     int epoch, long global_step);

struct LoadedCheckpoint {
  Config config;
  int epoch = 0;
  long global_step = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  bool has_adam = false;
  std::vector<Tensor> adam_m, adam_v;
  long adam_steps = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies parameters (and optimizer state, when present and requested) into a
// network built from the same configuration.
void apply_checkpoint(const LoadedCheckpoint& ck, Network& net, Adam* adam);

}  // namespace atgnn
