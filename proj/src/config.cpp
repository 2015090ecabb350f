#include "cormult/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cormult/errors.hpp"
#include "json.hpp"

namespace cormult {

namespace {

using nlohmann::json;

// A section maps each key to a reader that stores the value into the config.
using Reader = std::function<void(const json&, const std::string& key)>;
using Section = std::map<std::string, Reader>;

template <class T>
Reader number(T& slot) {
  return [&slot](const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError(key, "expected a number");
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(key, "expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
    }
    slot = v.get<T>();
  };
}

Reader boolean(bool& slot) {
  return [&slot](const json& v, const std::string& key) {
    if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
    slot = v.get<bool>();
  };
}

Reader string(std::string& slot) {
  return [&slot](const json& v, const std::string& key) {
    if (!v.is_string()) throw ConfigError(key, "expected a string");
    slot = v.get<std::string>();
  };
}

template <class E, class Parse>
Reader enumeration(E& slot, Parse parse) {
  return [&slot, parse](const json& v, const std::string& key) {
    if (!v.is_string()) throw ConfigError(key, "expected a string");
    try {
      slot = parse(v.get<std::string>());
    } catch (const Error& e) {
      throw ConfigError(key, e.what());
    }
  };
}

Reader doubles(std::vector<double>& slot) {
  return [&slot](const json& v, const std::string& key) {
    if (!v.is_array()) throw ConfigError(key, "expected an array of numbers");
    slot.clear();
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(key, "expected an array of numbers");
      slot.push_back(x.get<double>());
    }
  };
}

void apply(const json& obj, const Section& section, const std::string& prefix) {
  const std::string where = prefix.empty() ? "<root>" : prefix;
  if (!obj.is_object()) throw ConfigError(where, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = section.find(key);
    if (it == section.end()) throw ConfigError(path, "unknown key");
    it->second(value, path);
  }
}

Reader nested(Section s) {
  return [s = std::move(s)](const json& v, const std::string& key) { apply(v, s, key); };
}

Section schema(RunConfig& c) {
  auto& mel = c.features.mel;
  return {
      {"seed", number(c.seed)},
      {"paths", nested({{"manifest", string(c.paths.manifest)},
                        {"features", string(c.paths.features)},
                        {"mce", string(c.paths.mce)},
                        {"model", string(c.paths.model)},
                        {"out", string(c.paths.out)}})},
      {"synth", nested({{"n", number(c.synth.n)},
                        {"rho", number(c.synth.rho)},
                        {"sample_rate", number(c.synth.sample_rate)},
                        {"duration_s", number(c.synth.duration_s)},
                        {"tone_amplitude", number(c.synth.tone_amplitude)},
                        {"audio_noise", number(c.synth.audio_noise)},
                        {"frame_count", number(c.synth.frame_count)},
                        {"frame_dim", number(c.synth.frame_dim)},
                        {"frame_noise", number(c.synth.frame_noise)},
                        {"min_tokens", number(c.synth.min_tokens)},
                        {"max_tokens", number(c.synth.max_tokens)},
                        {"class_weights", doubles(c.synth.class_weights)}})},
      {"features", nested({{"n_fft", number(mel.n_fft)},
                           {"hop", number(mel.hop)},
                           {"n_mels", number(mel.n_mels)},
                           {"sample_rate", number(mel.sample_rate)},
                           {"f_min", number(mel.f_min)},
                           {"f_max", number(mel.f_max)},
                           {"log_floor", number(mel.log_floor)},
                           {"seq_len", number(c.features.seq_len)},
                           {"target_frames", number(c.features.target_frames)}})},
      {"mce", nested({{"d", number(c.mce.d)},
                      {"layers", number(c.mce.layers)},
                      {"heads", number(c.mce.heads)},
                      {"t", number(c.mce.t)},
                      {"o", number(c.mce.o)},
                      {"margin", number(c.mce.margin)},
                      {"metric", enumeration(c.mce.metric, mce::parse_metric)},
                      {"lr", number(c.mce.lr)},
                      {"epochs", number(c.mce.epochs)},
                      {"batch_size", number(c.mce.batch_size)}})},
      {"sampling", nested({{"strategy", enumeration(c.strategy, sampling::parse_strategy)},
                           {"audio_shift_s", number(c.strategy_params.audio_shift_s)},
                           {"text_shift_tokens", number(c.strategy_params.text_shift_tokens)},
                           {"sigma", number(c.strategy_params.sigma)},
                           {"word_replace_p", number(c.strategy_params.word_replace_p)}})},
      {"fusion", nested({{"d_f", number(c.fusion.d_f)},
                         {"crossmodal_depth", number(c.fusion.crossmodal_depth)},
                         {"heads", number(c.fusion.heads)},
                         {"memory_depth", number(c.fusion.memory_depth)},
                         {"mode", enumeration(c.fusion.mode, fusion::parse_mode)},
                         {"positional", boolean(c.fusion.positional)},
                         {"lr", number(c.fusion.lr)},
                         {"epochs", number(c.fusion.epochs)},
                         {"batch_size", number(c.fusion.batch_size)}})},
  };
}

}  // namespace

RunConfig merge_config(RunConfig base, const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", e.what());
  }
  apply(doc, schema(base), "");
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return merge_config(std::move(base), ss.str());
}

std::string to_json(const RunConfig& c) {
  const auto& mel = c.features.mel;
  json j;
  j["seed"] = c.seed;
  j["paths"] = {{"manifest", c.paths.manifest}, {"features", c.paths.features}, {"mce", c.paths.mce},
                {"model", c.paths.model},       {"out", c.paths.out}};
  j["synth"] = {{"n", c.synth.n},
                {"rho", c.synth.rho},
                {"sample_rate", c.synth.sample_rate},
                {"duration_s", c.synth.duration_s},
                {"tone_amplitude", c.synth.tone_amplitude},
                {"audio_noise", c.synth.audio_noise},
                {"frame_count", c.synth.frame_count},
                {"frame_dim", c.synth.frame_dim},
                {"frame_noise", c.synth.frame_noise},
                {"min_tokens", c.synth.min_tokens},
                {"max_tokens", c.synth.max_tokens},
                {"class_weights", c.synth.class_weights}};
  j["features"] = {{"n_fft", mel.n_fft},       {"hop", mel.hop},
                   {"n_mels", mel.n_mels},     {"sample_rate", mel.sample_rate},
                   {"f_min", mel.f_min},       {"f_max", mel.f_max},
                   {"log_floor", mel.log_floor}, {"seq_len", c.features.seq_len},
                   {"target_frames", c.features.target_frames}};
  j["mce"] = {{"d", c.mce.d},
              {"layers", c.mce.layers},
              {"heads", c.mce.heads},
              {"t", c.mce.t},
              {"o", c.mce.o},
              {"margin", c.mce.margin},
              {"metric", std::string(mce::name_of(c.mce.metric))},
              {"lr", c.mce.lr},
              {"epochs", c.mce.epochs},
              {"batch_size", c.mce.batch_size}};
  j["sampling"] = {{"strategy", std::string(sampling::name_of(c.strategy))},
                   {"audio_shift_s", c.strategy_params.audio_shift_s},
                   {"text_shift_tokens", c.strategy_params.text_shift_tokens},
                   {"sigma", c.strategy_params.sigma},
                   {"word_replace_p", c.strategy_params.word_replace_p}};
  j["fusion"] = {{"d_f", c.fusion.d_f},
                 {"crossmodal_depth", c.fusion.crossmodal_depth},
                 {"heads", c.fusion.heads},
                 {"memory_depth", c.fusion.memory_depth},
                 {"mode", std::string(fusion::name_of(c.fusion.mode))},
                 {"positional", c.fusion.positional},
                 {"lr", c.fusion.lr},
                 {"epochs", c.fusion.epochs},
                 {"batch_size", c.fusion.batch_size}};
  return j.dump(2);
}

void validate(const RunConfig& c) {
  auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const BadConfig& e) {
      throw ConfigError(section, e.what());
    }
  };
  check("synth", [&] { data::validate(c.synth); });
  check("mce", [&] { mce::validate(c.mce); });
  check("sampling", [&] { sampling::validate(c.strategy_params); });
  check("fusion", [&] { fusion::validate(c.fusion); });
  if (c.features.seq_len == 0) throw ConfigError("features.seq_len", "must be >= 1");
  if (c.features.target_frames == 0) throw ConfigError("features.target_frames", "must be >= 1");
}

}  // namespace cormult
