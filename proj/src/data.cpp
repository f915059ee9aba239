#include "atgnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "atgnn/parallel.hpp"
#include "atgnn/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace atgnn {

Manifest load_manifest(const std::string& manifest_path, const std::string& vocab_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  Manifest m;
  m.dir = fs::path(manifest_path).parent_path().string();
  if (m.dir.empty()) m.dir = ".";

  const std::string vp =
      vocab_path.empty() ? (fs::path(m.dir) / "vocab.json").string() : vocab_path;
  std::ifstream vin(vp);
  if (!vin) throw IoError("cannot open vocabulary " + vp);
  json vocab_json;
  try {
    vin >> vocab_json;
  } catch (const json::exception& e) {
    throw DataError(vp + ": " + e.what());
  }
  if (!vocab_json.is_array()) throw DataError(vp + ": vocabulary must be a JSON array");
  for (const auto& name : vocab_json) m.vocab.push_back(name.get<std::string>());
  if (m.vocab.empty()) throw DataError(vp + ": empty vocabulary");

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(manifest_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ManifestEntry entry;
    entry.audio = obj.at("audio").get<std::string>();
    for (const auto& l : obj.at("labels")) {
      const int id = l.get<int>();
      if (id < 0 || id >= m.classes())
        throw DataError(manifest_path + ":" + std::to_string(line_no) + ": label id " +
                        std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(m.classes()));
      entry.labels.push_back(id);
    }
    const fs::path full = fs::path(m.dir) / entry.audio;
    if (!fs::exists(full)) throw IoError("missing audio file " + full.string());
    m.entries.push_back(std::move(entry));
  }
  return m;
}

void write_manifest(const std::string& manifest_path, const std::string& vocab_path,
                    const Manifest& manifest) {
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write " + manifest_path);
  for (const auto& entry : manifest.entries) {
    json obj;
    obj["audio"] = entry.audio;
    obj["labels"] = entry.labels;
    out << obj.dump() << "\n";
  }
  std::ofstream vout(vocab_path);
  if (!vout) throw IoError("cannot write " + vocab_path);
  vout << json(manifest.vocab).dump(2) << "\n";
}

Dataset load_dataset(const Manifest& manifest, int target_frames, const std::string& cache_dir) {
  Dataset ds;
  ds.classes = manifest.classes();
  const int n = int(manifest.entries.size());
  ds.spec_values.resize(n);
  ds.targets = Tensor(n, ds.classes);
  ds.label_sets.resize(n);
  if (!cache_dir.empty()) fs::create_directories(cache_dir);

  parallel_for(n, [&](int i) {
    const ManifestEntry& entry = manifest.entries[i];
    const std::string wav_path = (fs::path(manifest.dir) / entry.audio).string();
    Tensor grid;
    bool from_cache = false;
    std::string cache_path;
    if (!cache_dir.empty()) {
      std::string key = entry.audio;
      std::replace(key.begin(), key.end(), '/', '_');
      cache_path = (fs::path(cache_dir) / (key + ".spec")).string();
      if (fs::exists(cache_path)) {
        grid = read_spectrogram_cache(cache_path);
        from_cache = true;
      }
    }
    if (!from_cache) {
      const Waveform w = read_wav(wav_path);
      const StftResult stft = stft_magnitude(w);
      grid = log_mel(stft.magnitudes);
      if (!cache_path.empty()) {
        write_spectrogram_cache(cache_path, grid);
        // Cached grids are 32-bit; truncate now so cached and fresh runs see
        // identical values.
        for (std::size_t j = 0; j < grid.size(); ++j)
          grid.data()[j] = double(float(grid.data()[j]));
      }
    }
    Spectrogram spec;
    spec.values = std::move(grid);
    spec.pad_mask.assign(spec.values.rows(), 0);
    spec = pad_or_trim(std::move(spec), target_frames);
    ds.spec_values[i] = std::move(spec.values);
  });

  for (int i = 0; i < n; ++i) {
    ds.label_sets[i] = manifest.entries[i].labels;
    for (int c : ds.label_sets[i]) ds.targets.at(i, c) = 1.0;
  }
  return ds;
}

Tensor to_model_input(const Tensor& spec_values, int input_freq) {
  const int frames = spec_values.rows();
  const int bins = spec_values.cols();
  if (input_freq <= 0 || bins % input_freq != 0)
    throw ShapeError("to_model_input: " + std::to_string(bins) + " mel bins cannot pool to " +
                     std::to_string(input_freq) + " rows");
  const int pool = bins / input_freq;
  Tensor out(input_freq, frames);
  for (int f = 0; f < input_freq; ++f)
    for (int t = 0; t < frames; ++t) {
      double acc = 0.0;
      for (int p = 0; p < pool; ++p) acc += spec_values.at(t, f * pool + p);
      out.at(f, t) = acc / pool;
    }
  const double mu = out.mean();
  double var = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = out.data()[i] - mu;
    var += d * d;
  }
  var /= double(out.size());
  const double sd = std::max(std::sqrt(var), 1e-6);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = (out.data()[i] - mu) / sd;
  return out;
}

double synthetic_tone_hz(int class_id) {
  // Geometric spacing runs above Nyquist past class 12 at 16 kHz; higher
  // classes fall back to linear spacing below 8 kHz.
  if (class_id <= 12) return 300.0 * std::pow(1.3, class_id);
  return 5000.0 + 135.0 * (class_id - 12);
}

std::string generate_synthetic(const std::string& out_dir, int classes, int count,
                               std::uint64_t seed) {
  if (classes < 1 || classes > 32)
    throw ConfigError("gen-data: classes must be in [1, 32]");
  if (count < classes) throw ConfigError("gen-data: count must be >= classes");

  fs::create_directories(fs::path(out_dir) / "wavs");
  Rng rng(mix_seed(seed, 0xDA7AULL));
  const int samples = 12800;  // 0.8 s at 16 kHz
  const double dt = 1.0 / double(kSampleRate);

  Manifest manifest;
  for (int c = 0; c < classes; ++c) {
    std::ostringstream name;
    name << "class_" << (c < 10 ? "0" : "") << c;
    manifest.vocab.push_back(name.str());
  }

  for (int i = 0; i < count; ++i) {
    const int label_count = 1 + int(rng.below(std::min(3, classes)));
    std::vector<int> labels = rng.sample_distinct(classes, label_count);
    std::sort(labels.begin(), labels.end());

    std::vector<double> signal(samples, 0.0);
    for (int c : labels) {
      const double tone = synthetic_tone_hz(c);
      const double am = 1.5 + 0.9 * c;
      const double amp = rng.uniform(0.5, 1.0);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
      for (int t = 0; t < samples; ++t) {
        const double envelope = 0.55 + 0.45 * std::sin(2.0 * M_PI * am * t * dt + am_phase);
        signal[t] += amp * envelope * std::sin(2.0 * M_PI * tone * t * dt + phase);
      }
    }
    double power = 0.0;
    for (double v : signal) power += v * v;
    const double rms = std::sqrt(power / samples);
    const double snr_db = rng.uniform(10.0, 30.0);
    const double noise_sigma = rms / std::pow(10.0, snr_db / 20.0);
    for (int t = 0; t < samples; ++t) signal[t] += rng.normal(0.0, noise_sigma);

    double peak = 0.0;
    for (double v : signal) peak = std::max(peak, std::fabs(v));
    if (peak > 0.9)
      for (double& v : signal) v *= 0.9 / peak;

    std::ostringstream file;
    file << "wavs/clip_";
    file.width(4);
    file.fill('0');
    file << i << ".wav";
    Waveform w;
    w.samples = std::move(signal);
    write_wav((fs::path(out_dir) / file.str()).string(), w);
    manifest.entries.push_back({file.str(), labels});
  }

  const std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  const std::string vocab_path = (fs::path(out_dir) / "vocab.json").string();
  write_manifest(manifest_path, vocab_path, manifest);
  return manifest_path;
}

}  // namespace atgnn
