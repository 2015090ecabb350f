#include "cormult/data_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "cormult/errors.hpp"
#include "cormult/rng.hpp"

namespace cormult::data {
namespace {

using json = nlohmann::json;

// Indexed by class value + 3.
const std::array<std::vector<std::vector<std::string>>, 7> kPhrases{{
    {{"absolutely", "terrible"}, {"worst", "film", "ever"}, {"utterly", "awful", "mess"}},
    {{"really", "bad"}, {"very", "disappointing"}, {"poorly", "made", "junk"}},
    {{"somewhat", "boring"}, {"a", "bit", "dull"}, {"not", "great"}},
    {{"just", "average"}, {"neither", "good", "nor", "bad"}, {"totally", "neutral"}},
    {{"fairly", "decent"}, {"quite", "nice"}, {"pretty", "okay", "overall"}},
    {{"really", "good"}, {"very", "enjoyable"}, {"well", "made", "story"}},
    {{"absolutely", "brilliant"}, {"best", "film", "ever"}, {"truly", "amazing", "masterpiece"}},
}};

const std::vector<std::string> kOpeners{"honestly", "well", "so", "overall", "basically", "frankly"};
const std::vector<std::string> kFillers{"the", "movie", "was", "i", "think", "that", "it", "um",
                                        "and", "you", "know", "like", "this", "one", "kind", "of",
                                        "to", "me", "watching", "scene"};

std::string make_sentence(int z, std::size_t length, Rng& rng) {
  const auto& bank = kPhrases[static_cast<std::size_t>(z + 3)];
  const auto& phrase = bank[rng.index(bank.size())];
  std::vector<std::string> words{kOpeners[rng.index(kOpeners.size())]};
  const std::size_t fixed = 1 + phrase.size();
  const std::size_t filler = length > fixed ? length - fixed : 0;
  const std::size_t before = rng.index(filler + 1);
  for (std::size_t i = 0; i < before; ++i) words.push_back(kFillers[rng.index(kFillers.size())]);
  words.insert(words.end(), phrase.begin(), phrase.end());
  for (std::size_t i = before; i < filler; ++i) words.push_back(kFillers[rng.index(kFillers.size())]);
  std::string s;
  for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
  s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s + ".";
}

int draw_class(const std::vector<double>& weights, Rng& rng) {
  if (weights.empty()) return static_cast<int>(rng.index(7)) - 3;
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (std::size_t c = 0; c < 7; ++c) {
    u -= weights[c];
    if (u < 0.0) return static_cast<int>(c) - 3;
  }
  return 3;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingFile(path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void validate(const SynthConfig& cfg) {
  if (cfg.n < 7) throw BadConfig("n must be at least 7");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) throw BadConfig("rho must be in [0, 1]");
  if (!(cfg.sample_rate > 0.0)) throw BadConfig("sample_rate must be positive");
  if (!(cfg.duration_s > 0.0)) throw BadConfig("duration_s must be positive");
  if (!(cfg.tone_amplitude > 0.0 && cfg.tone_amplitude <= 1.0)) throw BadConfig("tone_amplitude must be in (0, 1]");
  if (cfg.audio_noise < 0.0 || cfg.frame_noise < 0.0) throw BadConfig("noise levels must be non-negative");
  if (cfg.frame_count == 0 || cfg.frame_dim == 0) throw BadConfig("frame shape must be positive");
  if (cfg.min_tokens < 3 || cfg.min_tokens > cfg.max_tokens) {
    throw BadConfig("need 3 <= min_tokens <= max_tokens");
  }
  if (!cfg.class_weights.empty()) {
    if (cfg.class_weights.size() != 7) throw BadConfig("class_weights needs 7 entries");
    double total = 0.0;
    for (double w : cfg.class_weights) {
      if (!(w >= 0.0)) throw BadConfig("class_weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw BadConfig("class_weights must not all be zero");
  }
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  Rng rng = Rng::substream(cfg.seed, "data");
  Rng wrng = Rng::substream(cfg.seed, "data.frame_basis");
  Tensor basis({cfg.frame_count, cfg.frame_dim});
  for (auto& v : basis.mutable_data()) v = wrng.normal();

  const auto n_samples = static_cast<std::size_t>(std::lround(cfg.duration_s * cfg.sample_rate));
  Dataset ds;
  ds.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    const int z = draw_class(cfg.class_weights, rng);
    std::array<int, 3> zs{z, z, z};
    if (!rng.bernoulli(cfg.rho)) {
      // A uniformly chosen modality follows one of the six other classes.
      const std::size_t m = rng.index(3);
      const int other = static_cast<int>(rng.index(6)) - 3;
      zs[m] = other >= z ? other + 1 : other;
    }

    MultimodalSample s;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", i);
    s.id = id;
    s.latent = zs;
    s.label = std::clamp(z + rng.uniform(-0.4, 0.4), -3.0, 3.0);

    s.audio.sample_rate = cfg.sample_rate;
    s.audio.samples.resize(n_samples);
    const double hz = 400.0 + 100.0 * (zs[0] + 3);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < n_samples; ++k) {
      const double t = static_cast<double>(k) / cfg.sample_rate;
      const double x = cfg.tone_amplitude * std::sin(2.0 * std::numbers::pi * hz * t + phase) +
                       rng.normal(0.0, cfg.audio_noise);
      s.audio.samples[k] = static_cast<float>(std::clamp(x, -1.0, 1.0));
    }

    const std::size_t len = cfg.min_tokens + rng.index(cfg.max_tokens - cfg.min_tokens + 1);
    s.text = make_sentence(zs[1], len, rng);

    s.frames = Tensor({cfg.frame_count, cfg.frame_dim});
    auto f = s.frames.mutable_data();
    // Stored rounded to float so the file formats round-trip exactly.
    for (std::size_t k = 0; k < f.size(); ++k) {
      f[k] = static_cast<float>(zs[2] * basis[k] + rng.normal(0.0, cfg.frame_noise));
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

SplitIndices split(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw BadRatios("ratios must be non-negative");
    total += r;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw BadRatios("ratios sum to " + std::to_string(total));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::substream(seed, "split");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  // The epsilon keeps products such as 0.7 * 100 from flooring to 69.
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * n + 1e-9));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::floor(ratios[1] * n + 1e-9)));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

void assign_splits(Dataset& ds, const SplitIndices& s) {
  for (auto i : s.train) ds.at(i).split = "train";
  for (auto i : s.val) ds.at(i).split = "val";
  for (auto i : s.test) ds.at(i).split = "test";
}

std::vector<std::size_t> indices_of_split(const Dataset& ds, const std::string& name) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds[i].split == name) out.push_back(i);
  }
  return out;
}

std::size_t label_to_class(double label) {
  if (!(label >= -3.0 && label <= 3.0)) throw OutOfRange("label " + std::to_string(label) + " outside [-3, 3]");
  const double r = std::clamp(std::round(label), -3.0, 3.0);
  return static_cast<std::size_t>(r + 3.0);
}

std::string encode_tensor(const Tensor& t) {
  if (t.rank() == 0) throw FormatError("rank-0 tensors cannot be stored");
  if (t.rank() > 255) throw FormatError("rank exceeds 255");
  std::string s = "TEN1";
  s.push_back(static_cast<char>(t.rank()));
  for (auto e : t.shape()) {
    if (e > 0xffffffffu) throw FormatError("extent exceeds u32");
    put_u32(s, static_cast<std::uint32_t>(e));
  }
  s.reserve(s.size() + 4 * t.size());
  for (double v : t.data()) put_u32(s, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return s;
}

Tensor decode_tensor(const std::string& bytes, const std::string& what) {
  if (bytes.size() < 5 || bytes.compare(0, 4, "TEN1") != 0) throw FormatError(what + ": bad magic");
  const auto rank = static_cast<std::size_t>(static_cast<unsigned char>(bytes[4]));
  if (rank == 0) throw FormatError(what + ": rank-0 tensor");
  if (bytes.size() < 5 + 4 * rank) throw FormatError(what + ": truncated header");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u32(bytes, 5 + 4 * i);
    if (shape[i] == 0) throw FormatError(what + ": zero extent");
    count *= shape[i];
  }
  const std::size_t at = 5 + 4 * rank;
  if (bytes.size() != at + 4 * count) throw FormatError(what + ": payload size mismatch");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(bytes, at + 4 * i));
  return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { spit(path, encode_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(slurp(path), path.string()); }

std::filesystem::path resolve(const std::filesystem::path& manifest, const std::string& relative) {
  const std::filesystem::path p(relative);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

void save_manifest(const Dataset& ds, const std::filesystem::path& path) {
  const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  std::filesystem::create_directories(dir / "audio");
  std::filesystem::create_directories(dir / "frames");
  std::set<std::string> seen;
  std::string out;
  for (const auto& s : ds) {
    if (!seen.insert(s.id).second) throw FormatError("duplicate id '" + s.id + "'");
    const std::string audio_rel = "audio/" + s.id + ".f32";
    const std::string frames_rel = "frames/" + s.id + ".ten";
    audio::write_f32(dir / audio_rel, s.audio);
    write_tensor(dir / frames_rel, s.frames);
    json rec = {{"id", s.id},           {"audio_path", audio_rel}, {"text", s.text},
                {"frames_path", frames_rel}, {"label", s.label},   {"sample_rate", s.audio.sample_rate}};
    if (!s.split.empty()) rec["split"] = s.split;
    if (s.latent) rec["latent"] = *s.latent;
    out += rec.dump() + "\n";
  }
  spit(path, out);
}

Dataset load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path.string());
  Dataset ds;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MultimodalSample s;
    std::string audio_rel, frames_rel;
    double rate = 8000.0;
    try {
      const json rec = json::parse(line);
      if (!rec.is_object()) throw ParseError(lineno, "record is not an object");
      for (const char* key : {"id", "audio_path", "text", "frames_path", "label"}) {
        if (!rec.contains(key)) throw ParseError(lineno, std::string("missing field '") + key + "'");
      }
      s.id = rec.at("id").get<std::string>();
      audio_rel = rec.at("audio_path").get<std::string>();
      s.text = rec.at("text").get<std::string>();
      frames_rel = rec.at("frames_path").get<std::string>();
      s.label = rec.at("label").get<double>();
      if (rec.contains("sample_rate")) rate = rec.at("sample_rate").get<double>();
      if (rec.contains("split")) s.split = rec.at("split").get<std::string>();
      if (rec.contains("latent")) s.latent = rec.at("latent").get<std::array<int, 3>>();
    } catch (const json::exception& e) {
      throw ParseError(lineno, e.what());
    }
    if (!(s.label >= -3.0 && s.label <= 3.0)) throw ParseError(lineno, "label outside [-3, 3]");
    if (!seen.insert(s.id).second) throw ParseError(lineno, "duplicate id '" + s.id + "'");
    s.audio = audio::read_audio(resolve(path, audio_rel), rate);
    s.frames = read_tensor(resolve(path, frames_rel));
    if (s.frames.rank() != 2) throw ParseError(lineno, "frames must be a rank-2 tensor");
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cormult::data
