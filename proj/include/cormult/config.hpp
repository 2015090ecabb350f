#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cormult/data_io.hpp"
#include "cormult/features.hpp"
#include "cormult/fusion.hpp"
#include "cormult/mce.hpp"
#include "cormult/sampling.hpp"

namespace cormult {

struct Paths {
  std::string manifest;
  std::string features;  // optional feature cache
  std::string mce;
  std::string model;
  std::string out;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Paths paths;
  data::SynthConfig synth;
  FeatureConfig features;
  mce::MceConfig mce;
  sampling::Strategy strategy = sampling::Strategy::D;
  sampling::StrategyParams strategy_params;
  fusion::FusionConfig fusion;
};

// Overlays a JSON object onto `base`. Every key must be known; the first
// unknown or ill-typed key raises ConfigError naming its dotted path.
RunConfig merge_config(RunConfig base, const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string to_json(const RunConfig& cfg);

// Runs every component validator, rethrowing BadConfig as ConfigError.
void validate(const RunConfig& cfg);

}  // namespace cormult
