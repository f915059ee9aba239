#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atgnn/dsp.hpp"
#include "atgnn/tensor.hpp"
#include "atgnn/train.hpp"

namespace atgnn {

struct ManifestEntry {
  std::string audio;  // relative to the manifest directory
  std::vector<int> labels;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> vocab;
  std::string dir;  // directory the audio paths resolve against

  int classes() const { return int(vocab.size()); }
};

// JSON-lines manifest, one {"audio": ..., "labels": [...]} object per clip,
// with the vocabulary as a JSON string array. When vocab_path is empty,
// "vocab.json" next to the manifest is used. Label ids are validated against
// the vocabulary and audio paths against the filesystem.
Manifest load_manifest(const std::string& manifest_path, const std::string& vocab_path = "");
void write_manifest(const std::string& manifest_path, const std::string& vocab_path,
                    const Manifest& manifest);

// Decodes every clip to a padded log-mel grid. When cache_dir is non-empty,
// unpadded grids are cached there as 32-bit floats and reused.
Dataset load_dataset(const Manifest& manifest, int target_frames,
                     const std::string& cache_dir = "");

// Model input from a padded grid: frequency-major transpose, adjacent mel
// bins mean-pooled down to input_freq rows, then per-clip standardization.
Tensor to_model_input(const Tensor& spec_values, int input_freq);

// Writes `count` multi-label clips built from per-class tone signatures plus
// noise, together with manifest.jsonl and vocab.json. Returns the manifest
// path. Deterministic in the seed.
std::string generate_synthetic(const std::string& out_dir, int classes, int count,
                               std::uint64_t seed);

// Signature tone frequency of a synthetic class, in Hz.
double synthetic_tone_hz(int class_id);

}  // namespace atgnn
