#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "cormult/tensor.hpp"

namespace cormult::audio {

struct Waveform {
  std::vector<float> samples;  // in [-1, 1]
  double sample_rate = 8000.0;
};

// Throws BadRange for an empty waveform or a sample outside [-1, 1] (1e-6 slack).
void validate(const Waveform& w);

enum class WindowKind { Hann, Rectangular };

// Periodic window of length n.
std::vector<double> make_window(WindowKind kind, std::size_t n);

struct StftMatrix {
  std::size_t frames = 0;
  std::size_t bins = 0;  // n_fft / 2 + 1
  std::size_t n_fft = 0;
  std::size_t hop = 0;
  std::vector<std::complex<double>> values;  // [frames, bins] row-major

  const std::complex<double>& at(std::size_t n, std::size_t k) const { return values[n * bins + k]; }
};

// Frame n, bin k is sum_m x(m) w(m - n*hop) e^{-j 2 pi k m / N}; the phase is
// referenced to the start of the signal, not the frame. Trailing samples that
// do not fill a frame are dropped.
StftMatrix stft(const Waveform& w, std::size_t n_fft = 256, std::size_t hop = 128,
                WindowKind window = WindowKind::Hann);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterBank {
  std::size_t n_mels = 0;
  std::size_t bins = 0;
  double sample_rate = 0.0;
  std::size_t n_fft = 0;
  std::vector<double> edges_hz;  // n_mels + 2 frequencies f_0 .. f_{M+1}
  std::vector<double> weights;   // [n_mels, bins] row-major

  double at(std::size_t m, std::size_t k) const { return weights[m * bins + k]; }
  // Triangle of band m (0-based) evaluated at an arbitrary frequency.
  double response(std::size_t m, double hz) const;
  double center_hz(std::size_t m) const { return edges_hz[m + 1]; }
};

// Triangular filters with edges equally spaced on the HTK mel scale.
MelFilterBank mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate,
                             double f_min, double f_max);

struct MelParams {
  std::size_t n_fft = 256;
  std::size_t hop = 128;
  std::size_t n_mels = 32;
  double sample_rate = 8000.0;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 selects sample_rate / 2
  double log_floor = 1e-10;
  WindowKind window = WindowKind::Hann;
};

struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<double> values;  // [frames, n_mels] log-energies
  MelParams params;

  double at(std::size_t n, std::size_t m) const { return values[n * n_mels + m]; }
  Tensor to_tensor() const;
};

// X_mel(n, m) = log(max(sum_k |X(n,k)|^2 H_m(k), log_floor)).
MelSpectrogram log_mel(const StftMatrix& s, const MelFilterBank& fb, double log_floor = 1e-10);

// Waveform to log-mel using `params`; the waveform's own rate is used for
// the filterbank.
MelSpectrogram featurize(const Waveform& w, const MelParams& params = {});

// Mono PCM16 WAV.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);
// Raw little-endian float32 samples.
Waveform read_f32(const std::filesystem::path& path, double sample_rate);
void write_f32(const std::filesystem::path& path, const Waveform& w);
// Dispatches on extension: ".wav" or anything else as raw float32.
Waveform read_audio(const std::filesystem::path& path, double sample_rate);

}  // namespace cormult::audio
