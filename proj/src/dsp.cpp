#include "atgnn/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

namespace atgnn {

namespace {

// Iterative radix-2 Cooley-Tukey; n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / double(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

// Mean of the line through (x0,v0)-(x1,v1) over [a,b] intersected with
// [x0,x1], weighted by the covered fraction of [a,b].
double segment_mean(double a, double b, double x0, double x1, double v0, double v1) {
  const double lo = std::max(a, x0);
  const double hi = std::min(b, x1);
  if (hi <= lo || b <= a) return 0.0;
  auto line = [&](double x) { return v0 + (v1 - v0) * (x - x0) / (x1 - x0); };
  return 0.5 * (line(lo) + line(hi)) * (hi - lo) / (b - a);
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

StftResult stft_magnitude(const Waveform& w) {
  if (w.samples.empty()) throw DomainError("stft_magnitude: empty waveform");
  if (w.sample_rate != kSampleRate)
    throw DataError("stft_magnitude: expected " + std::to_string(kSampleRate) + " Hz, got " +
                    std::to_string(w.sample_rate));

  std::vector<double> samples = w.samples;
  StftResult result;
  if (int(samples.size()) < kWindowSamples) {
    samples.resize(kWindowSamples, 0.0);
    result.padded_short_input = true;
  }
  const int frames = 1 + int((samples.size() - kWindowSamples) / kHopSamples);
  static const std::vector<double> window = hann_window(kWindowSamples);

  result.magnitudes = Tensor(frames, kSpectrumBins);
  std::vector<std::complex<double>> buf(kFftSize);
  for (int f = 0; f < frames; ++f) {
    const double* src = samples.data() + std::size_t(f) * kHopSamples;
    for (int i = 0; i < kWindowSamples; ++i) buf[i] = src[i] * window[i];
    std::fill(buf.begin() + kWindowSamples, buf.end(), std::complex<double>(0.0, 0.0));
    fft_inplace(buf);
    double* out = result.magnitudes.row(f);
    for (int k = 0; k < kSpectrumBins; ++k) out[k] = std::abs(buf[k]);
  }
  return result;
}

const Tensor& mel_filterbank() {
  static const Tensor bank = [] {
    Tensor fb(kMelBins, kSpectrumBins);
    const double mel_hi = hz_to_mel(kMelHighHz);
    std::vector<double> edges(kMelBins + 2);
    for (int i = 0; i < kMelBins + 2; ++i)
      edges[i] = mel_to_hz(mel_hi * double(i) / double(kMelBins + 1));
    const double bin_width = double(kSampleRate) / double(kFftSize);
    for (int m = 0; m < kMelBins; ++m) {
      const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
      for (int k = 0; k < kSpectrumBins; ++k) {
        const double lo = k * bin_width - 0.5 * bin_width;
        const double hi = k * bin_width + 0.5 * bin_width;
        const double wgt = segment_mean(lo, hi, f0, f1, 0.0, 1.0) +
                           segment_mean(lo, hi, f1, f2, 1.0, 0.0);
        fb.at(m, k) = wgt;
      }
    }
    return fb;
  }();
  return bank;
}

Tensor log_mel(const Tensor& magnitudes) {
  const int frames = magnitudes.rows();
  if (magnitudes.cols() != kSpectrumBins)
    throw ShapeError("log_mel: expected " + std::to_string(kSpectrumBins) + " bins, got " +
                     std::to_string(magnitudes.cols()));
  for (std::size_t i = 0; i < magnitudes.size(); ++i)
    if (magnitudes.data()[i] < 0.0) throw DomainError("log_mel: negative magnitude");

  const Tensor& fb = mel_filterbank();
  Tensor out(frames, kMelBins);
  std::vector<double> power(kSpectrumBins);
  for (int f = 0; f < frames; ++f) {
    const double* mag = magnitudes.row(f);
    for (int k = 0; k < kSpectrumBins; ++k) power[k] = mag[k] * mag[k];
    double* dst = out.row(f);
    for (int m = 0; m < kMelBins; ++m) {
      const double* w = fb.row(m);
      double acc = 0.0;
      for (int k = 0; k < kSpectrumBins; ++k) acc += w[k] * power[k];
      dst[m] = std::log(std::max(acc, kLogFloor));
    }
  }
  return out;
}

Spectrogram pad_or_trim(Spectrogram spec, int target_frames) {
  if (target_frames <= 0) throw DomainError("pad_or_trim: target frames must be positive");
  const int frames = spec.values.rows();
  const int bins = spec.values.cols();
  if (frames == target_frames) {
    spec.pad_mask.assign(target_frames, 0);
    return spec;
  }
  Tensor out(target_frames, bins);
  spec.pad_mask.assign(target_frames, 0);
  const double pad_value = std::log(kLogFloor);
  const int keep = std::min(frames, target_frames);
  for (int f = 0; f < keep; ++f)
    std::memcpy(out.row(f), spec.values.row(f), sizeof(double) * bins);
  for (int f = keep; f < target_frames; ++f) {
    double* row = out.row(f);
    for (int b = 0; b < bins; ++b) row[b] = pad_value;
    spec.pad_mask[f] = 1;
  }
  spec.values = std::move(out);
  return spec;
}

Spectrogram waveform_to_spectrogram(const Waveform& w, int target_frames) {
  StftResult stft = stft_magnitude(w);
  Spectrogram spec;
  spec.values = log_mel(stft.magnitudes);
  spec.short_input = stft.padded_short_input;
  spec.pad_mask.assign(spec.values.rows(), 0);
  return pad_or_trim(std::move(spec), target_frames);
}

std::vector<double> mel_center_frequencies() {
  std::vector<double> centers(kMelBins);
  const double mel_hi = hz_to_mel(kMelHighHz);
  for (int m = 0; m < kMelBins; ++m)
    centers[m] = mel_to_hz(mel_hi * double(m + 1) / double(kMelBins + 1));
  return centers;
}

namespace {

struct WavHeader {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return std::uint16_t(b[0] | b[1] << 8);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8),
                              (unsigned char)(v >> 16), (unsigned char)(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {(unsigned char)(v), (unsigned char)(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char tag[4];
  in.read(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) throw DataError(path + ": not a RIFF file");
  read_u32(in);  // total size
  in.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw DataError(path + ": not a WAVE file");

  WavHeader hdr;
  std::vector<char> payload;
  bool have_fmt = false, have_data = false;
  while (in.read(tag, 4)) {
    const std::uint32_t chunk_size = read_u32(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      hdr.format = read_u16(in);
      hdr.channels = read_u16(in);
      hdr.sample_rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      hdr.bits = read_u16(in);
      if (chunk_size > 16) in.seekg(chunk_size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      payload.resize(chunk_size);
      in.read(payload.data(), chunk_size);
      if (in.gcount() != std::streamsize(chunk_size))
        throw DataError(path + ": truncated data chunk");
      if (chunk_size & 1) in.seekg(1, std::ios::cur);
      have_data = true;
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data) throw DataError(path + ": missing fmt or data chunk");
  if (hdr.channels != 1) throw DataError(path + ": expected mono, got " +
                                         std::to_string(hdr.channels) + " channels");
  if (hdr.sample_rate != kSampleRate)
    throw DataError(path + ": expected 16000 Hz, got " + std::to_string(hdr.sample_rate) +
                    " Hz (resample before ingestion)");

  Waveform w;
  w.sample_rate = int(hdr.sample_rate);
  if (hdr.format == 1 && hdr.bits == 16) {
    const std::size_t n = payload.size() / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t s;
      std::memcpy(&s, payload.data() + 2 * i, 2);
      w.samples[i] = double(s) / 32768.0;
    }
  } else if (hdr.format == 3 && hdr.bits == 32) {
    const std::size_t n = payload.size() / 4;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      float s;
      std::memcpy(&s, payload.data() + 4 * i, 4);
      w.samples[i] = double(s);
    }
  } else {
    throw DataError(path + ": unsupported WAV encoding (need 16-bit PCM or 32-bit float)");
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::uint32_t data_bytes = std::uint32_t(w.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // PCM
  write_u16(out, 1);  // mono
  write_u32(out, std::uint32_t(w.sample_rate));
  write_u32(out, std::uint32_t(w.sample_rate * 2));
  write_u16(out, 2);
  write_u16(out, 16);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (double v : w.samples) {
    const double clamped = std::clamp(v, -1.0, 1.0);
    const std::int16_t s = std::int16_t(std::lrint(clamped * 32767.0));
    write_u16(out, std::uint16_t(s));
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_spectrogram_cache(const std::string& path, const Tensor& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write("ATSPEC1", 7);
  write_u32(out, std::uint32_t(values.rows()));
  write_u32(out, std::uint32_t(values.cols()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = float(values.data()[i]);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!out) throw IoError("write failed: " + path);
}

Tensor read_spectrogram_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[7];
  in.read(magic, 7);
  if (!in || std::memcmp(magic, "ATSPEC1", 7) != 0)
    throw DataError(path + ": bad spectrogram cache magic");
  const int frames = int(read_u32(in));
  const int bins = int(read_u32(in));
  Tensor out(frames, bins);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float v;
    in.read(reinterpret_cast<char*>(&v), 4);
    out.data()[i] = double(v);
  }
  if (!in) throw DataError(path + ": truncated spectrogram cache");
  return out;
}

}  // namespace atgnn
