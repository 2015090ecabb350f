#include "cormult/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "cormult/errors.hpp"

namespace cormult::audio {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// One real-to-complex plan with its own aligned buffers. FFTW planning is
// not thread-safe, so construction is serialized; execution is per-thread.
class R2cPlan {
 public:
  explicit R2cPlan(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    static std::mutex planner;
    std::lock_guard lock(planner);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~R2cPlan() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  R2cPlan(const R2cPlan&) = delete;
  R2cPlan& operator=(const R2cPlan&) = delete;

  double* input() { return in_; }
  const fftw_complex* run() {
    fftw_execute(plan_);
    return out_;
  }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

R2cPlan& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<R2cPlan>> plans;
  auto& slot = plans[n];
  if (!slot) slot = std::make_unique<R2cPlan>(n);
  return *slot;
}

std::uint16_t read_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void validate(const Waveform& w) {
  if (w.samples.empty()) throw BadRange("empty waveform");
  if (!(w.sample_rate > 0.0)) throw BadRange("sample rate must be positive");
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const float s = w.samples[i];
    if (!std::isfinite(s) || std::fabs(s) > 1.0f + 1e-6f) {
      throw BadRange("sample " + std::to_string(i) + " outside [-1, 1]");
    }
  }
}

std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::Hann) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return w;
}

StftMatrix stft(const Waveform& w, std::size_t n_fft, std::size_t hop, WindowKind window) {
  if (n_fft < 2 || !std::has_single_bit(n_fft)) {
    throw BadFftSize("n_fft " + std::to_string(n_fft) + " is not a power of two");
  }
  if (hop == 0 || hop > n_fft) throw BadConfig("hop must be in [1, n_fft]");
  if (w.samples.size() < n_fft) {
    throw TooShort(std::to_string(w.samples.size()) + " samples < n_fft " + std::to_string(n_fft));
  }
  StftMatrix out;
  out.n_fft = n_fft;
  out.hop = hop;
  out.bins = n_fft / 2 + 1;
  out.frames = 1 + (w.samples.size() - n_fft) / hop;
  out.values.resize(out.frames * out.bins);

  const auto win = make_window(window, n_fft);
  R2cPlan& plan = plan_for(n_fft);
  double* in = plan.input();
  for (std::size_t n = 0; n < out.frames; ++n) {
    const std::size_t start = n * hop;
    for (std::size_t i = 0; i < n_fft; ++i) in[i] = static_cast<double>(w.samples[start + i]) * win[i];
    const fftw_complex* spec = plan.run();
    for (std::size_t k = 0; k < out.bins; ++k) {
      // Shift from frame-local to absolute sample index.
      const std::size_t turns = (k * start) % n_fft;
      const double phi = -kTwoPi * static_cast<double>(turns) / static_cast<double>(n_fft);
      const std::complex<double> rot(std::cos(phi), std::sin(phi));
      out.values[n * out.bins + k] = rot * std::complex<double>(spec[k][0], spec[k][1]);
    }
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

double MelFilterBank::response(std::size_t m, double f) const {
  const double lo = edges_hz[m], c = edges_hz[m + 1], hi = edges_hz[m + 2];
  if (f < lo) return 0.0;
  if (f < c) return (f - lo) / (c - lo);
  if (f < hi) return (hi - f) / (hi - c);
  return 0.0;
}

MelFilterBank mel_filterbank(std::size_t n_mels, std::size_t n_fft, double sample_rate,
                             double f_min, double f_max) {
  if (n_mels < 1) throw BadRange("n_mels must be at least 1");
  if (n_fft < 2) throw BadRange("n_fft must be at least 2");
  if (!(sample_rate > 0.0)) throw BadRange("sample rate must be positive");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw BadRange("need 0 <= f_min < f_max <= sample_rate/2");
  }
  MelFilterBank fb;
  fb.n_mels = n_mels;
  fb.bins = n_fft / 2 + 1;
  fb.n_fft = n_fft;
  fb.sample_rate = sample_rate;
  const double mlo = hz_to_mel(f_min), mhi = hz_to_mel(f_max);
  fb.edges_hz.resize(n_mels + 2);
  for (std::size_t i = 0; i < n_mels + 2; ++i) {
    fb.edges_hz[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  // Pin the outer edges so rounding in the mel round trip cannot move them.
  fb.edges_hz.front() = f_min;
  fb.edges_hz.back() = f_max;
  fb.weights.assign(n_mels * fb.bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    for (std::size_t k = 0; k < fb.bins; ++k) {
      const double fk = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      fb.weights[m * fb.bins + k] = fb.response(m, fk);
    }
  }
  return fb;
}

Tensor MelSpectrogram::to_tensor() const { return Tensor({frames, n_mels}, values); }

MelSpectrogram log_mel(const StftMatrix& s, const MelFilterBank& fb, double log_floor) {
  if (fb.bins != s.bins) {
    throw ShapeMismatch("filterbank has " + std::to_string(fb.bins) + " bins, stft has " +
                        std::to_string(s.bins));
  }
  MelSpectrogram out;
  out.frames = s.frames;
  out.n_mels = fb.n_mels;
  out.values.resize(s.frames * fb.n_mels);
  out.params.n_fft = s.n_fft;
  out.params.hop = s.hop;
  out.params.n_mels = fb.n_mels;
  out.params.sample_rate = fb.sample_rate;
  out.params.log_floor = log_floor;
  std::vector<double> power(s.bins);
  for (std::size_t n = 0; n < s.frames; ++n) {
    for (std::size_t k = 0; k < s.bins; ++k) power[k] = std::norm(s.at(n, k));
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < s.bins; ++k) e += power[k] * fb.at(m, k);
      out.values[n * fb.n_mels + m] = std::log(std::max(e, log_floor));
    }
  }
  return out;
}

MelSpectrogram featurize(const Waveform& w, const MelParams& params) {
  const double f_max = params.f_max > 0.0 ? params.f_max : w.sample_rate / 2.0;
  const auto fb = mel_filterbank(params.n_mels, params.n_fft, w.sample_rate, params.f_min, f_max);
  auto out = log_mel(stft(w, params.n_fft, params.hop, params.window), fb, params.log_floor);
  out.params = params;
  out.params.sample_rate = w.sample_rate;
  out.params.f_max = f_max;
  return out;
}

Waveform read_wav(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto* p = bytes.data();
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0) {
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  }
  Waveform w;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = read_u32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw FormatError(path.string() + ": truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError(path.string() + ": short fmt chunk");
      const auto format = read_u16(p + body), channels = read_u16(p + body + 2);
      const auto bits = read_u16(p + body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError(path.string() + ": only mono PCM16 is supported");
      }
      w.sample_rate = read_u32(p + body + 4);
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path.string() + ": data before fmt");
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(p + body + 2 * i));
        w.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return w;
    }
    pos = body + len + (len & 1u);
  }
  throw FormatError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  std::string s;
  s.reserve(44 + 2 * n);
  s += "RIFF";
  put_u32(s, 36 + 2 * n);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, 1);
  put_u16(s, 1);
  put_u32(s, rate);
  put_u32(s, rate * 2);
  put_u16(s, 2);
  put_u16(s, 16);
  s += "data";
  put_u32(s, 2 * n);
  for (float x : w.samples) {
    const long v = std::clamp(std::lround(static_cast<double>(x) * 32768.0), -32768L, 32767L);
    put_u16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingFile(path.string());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

Waveform read_f32(const std::filesystem::path& path, double sample_rate) {
  const auto bytes = slurp(path);
  if (bytes.size() % 4 != 0) throw FormatError(path.string() + ": size not a multiple of 4");
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = std::bit_cast<float>(read_u32(bytes.data() + 4 * i));
  }
  return w;
}

void write_f32(const std::filesystem::path& path, const Waveform& w) {
  std::string s;
  s.reserve(4 * w.samples.size());
  for (float x : w.samples) put_u32(s, std::bit_cast<std::uint32_t>(x));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingFile(path.string());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

Waveform read_audio(const std::filesystem::path& path, double sample_rate) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".wav" ? read_wav(path) : read_f32(path, sample_rate);
}

}  // namespace cormult::audio
