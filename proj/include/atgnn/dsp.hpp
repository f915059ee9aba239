#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atgnn/tensor.hpp"

namespace atgnn {

inline constexpr int kSampleRate = 16000;
inline constexpr int kWindowSamples = 400;   // 25 ms
inline constexpr int kHopSamples = 160;      // 10 ms
inline constexpr int kFftSize = 512;         // window zero-padded to next power of two
inline constexpr int kSpectrumBins = kFftSize / 2 + 1;
inline constexpr int kMelBins = 128;
inline constexpr double kMelHighHz = 8000.0;
inline constexpr double kLogFloor = 1e-10;

struct Waveform {
  std::vector<double> samples;  // mono, in [-1, 1]
  int sample_rate = kSampleRate;
};

// Log-mel time-frequency grid: rows are frames, columns are mel bins.
struct Spectrogram {
  Tensor values;                    // [frames x kMelBins]
  double frame_hop = 0.010;         // seconds
  std::vector<std::uint8_t> pad_mask;  // 1 for frames appended by padding
  bool short_input = false;         // input was shorter than one window
};

struct StftResult {
  Tensor magnitudes;  // [frames x kSpectrumBins]
  bool padded_short_input = false;
};

// Hann-windowed magnitude STFT, 25 ms window / 10 ms hop at 16 kHz.
// Inputs shorter than one window are zero-padded to a single frame and
// flagged in the result.
StftResult stft_magnitude(const Waveform& w);

// Triangular mel filterbank on the HTK scale over 0..8 kHz. Weights are the
// triangle averaged over each FFT bin's frequency cell rather than sampled at
// the bin center, so every filter keeps positive mass even where filters are
// narrower than the bin spacing.
const Tensor& mel_filterbank();

// Mel-filtered power spectrum, floored at kLogFloor, natural log.
Tensor log_mel(const Tensor& magnitudes);

// Pads at the end with ln(kLogFloor) (silence in log-energy space) or
// truncates, updating the pad mask.
Spectrogram pad_or_trim(Spectrogram spec, int target_frames);

Spectrogram waveform_to_spectrogram(const Waveform& w, int target_frames);

// Center frequencies of the mel filters, in Hz.
std::vector<double> mel_center_frequencies();
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// PCM WAV input: mono, 16 kHz, 16-bit integer or 32-bit float samples.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

// Flat binary spectrogram cache: "ATSPEC1" magic, u32 frames, u32 bins,
// row-major 32-bit floats, little-endian.
void write_spectrogram_cache(const std::string& path, const Tensor& values);
Tensor read_spectrogram_cache(const std::string& path);

}  // namespace atgnn
