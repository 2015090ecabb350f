#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cormult/audio.hpp"
#include "cormult/tensor.hpp"

namespace cormult::data {

struct MultimodalSample {
  std::string id;
  audio::Waveform audio;
  std::string text;
  Tensor frames;  // [f, i]
  double label = 0.0;  // in [-3, 3]
  std::string split;   // "train", "val", "test" or empty
  // Synthetic data only: the class value each modality was generated from,
  // indexed by Modality.
  std::optional<std::array<int, 3>> latent;
};

using Dataset = std::vector<MultimodalSample>;

struct SynthConfig {
  std::size_t n = 1000;
  double rho = 1.0;
  std::uint64_t seed = 0;
  double sample_rate = 8000.0;
  double duration_s = 1.0;
  double tone_amplitude = 0.5;
  double audio_noise = 0.01;  // white-noise standard deviation
  std::size_t frame_count = 16;
  std::size_t frame_dim = 64;
  double frame_noise = 0.05;  // relative to the unit-variance signal matrix
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 20;
  // Relative weight of each class value -3..3; empty means uniform.
  std::vector<double> class_weights;
};

// Throws BadConfig on an invalid configuration.
void validate(const SynthConfig& cfg);

// Each sample draws a class value z. With probability 1 - rho one uniformly
// chosen modality is generated from a different class value instead.
Dataset generate_synthetic(const SynthConfig& cfg);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Seeded shuffle then contiguous cut: train = floor(r0 n), val = floor(r1 n),
// test takes the rest. Throws BadRatios.
SplitIndices split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed);
// Writes the assignment into each sample's split field.
void assign_splits(Dataset& ds, const SplitIndices& s);
std::vector<std::size_t> indices_of_split(const Dataset& ds, const std::string& name);

// Rounds half away from zero and offsets by 3. Throws OutOfRange.
std::size_t label_to_class(double label);

// Little-endian "TEN1" binary: magic, u8 rank, u32 extents, f32 payload.
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes, const std::string& what = "tensor");
void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// One JSON object per line. Audio and frame files are written next to the
// manifest; paths inside it are relative to its directory.
void save_manifest(const Dataset& ds, const std::filesystem::path& path);
Dataset load_manifest(const std::filesystem::path& path);

std::filesystem::path resolve(const std::filesystem::path& manifest, const std::string& relative);

}  // namespace cormult::data
