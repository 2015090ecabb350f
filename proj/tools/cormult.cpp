// Command-line front end for the two-stage pipeline.
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "cormult/config.hpp"
#include "cormult/errors.hpp"
#include "cormult/gradient_suite.hpp"
#include "cormult/metrics.hpp"
#include "cormult/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cormult;

namespace {

// Flags shared by every subcommand; each one overrides its config key.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Root seed for every random substream");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

template <class T>
void set_if(const std::optional<T>& flag, T& slot) {
  if (flag) slot = *flag;
}

std::string require(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(key, "required");
  return value;
}

void check_threads() {
  const char* env = std::getenv("CORMULT_THREADS");
  if (env == nullptr) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) throw ConfigError("CORMULT_THREADS", "expected a positive integer");
}

pipeline::Corpus open_corpus(const RunConfig& cfg) {
  auto corpus = pipeline::load_corpus(require(cfg.paths.manifest, "paths.manifest"), cfg.features, cfg.seed);
  if (!cfg.paths.features.empty()) pipeline::load_features(cfg.paths.features, corpus);
  return corpus;
}

mce::Mce open_mce(const RunConfig& cfg, const pipeline::Corpus& corpus) {
  mce::Mce m = mce::Mce::load(require(cfg.paths.mce, "paths.mce"));
  if (!(m.dims() == corpus.dims())) throw ShapeMismatch("MCE was pre-trained for different input extents");
  return m;
}

std::string csv_beside(const std::string& out, const char* suffix) {
  fs::path p(out);
  p.replace_extension(suffix);
  return p.string();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return v.size() < 2 ? 0.0 : std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---- subcommands ----

struct GenData {
  Common common;
  std::optional<std::size_t> n;
  std::optional<double> rho;
  std::optional<std::string> out;

  int run() const {
    RunConfig cfg = resolve(common);
    set_if(n, cfg.synth.n);
    set_if(rho, cfg.synth.rho);
    set_if(out, cfg.paths.out);
    cfg.synth.seed = cfg.seed;
    validate(cfg);
    const fs::path dir = require(cfg.paths.out, "paths.out");
    fs::create_directories(dir);
    auto ds = data::generate_synthetic(cfg.synth);
    data::assign_splits(ds, data::split(ds.size(), pipeline::kSplitRatios, cfg.seed));
    data::save_manifest(ds, dir / "manifest.jsonl");
    std::map<std::string, std::size_t> per_split;
    std::array<std::size_t, 7> per_class{};
    std::size_t weak = 0;
    for (const auto& s : ds) {
      ++per_split[s.split];
      ++per_class[data::label_to_class(s.label)];
      if (s.latent && !((*s.latent)[0] == (*s.latent)[1] && (*s.latent)[1] == (*s.latent)[2])) ++weak;
    }
    fmt::print("manifest {}\nsamples {} (train {}, val {}, test {})\nrho {} weak {}\nclasses", (dir / "manifest.jsonl").string(),
               ds.size(), per_split["train"], per_split["val"], per_split["test"], cfg.synth.rho, weak);
    for (std::size_t k = 0; k < 7; ++k) fmt::print(" {:+d}:{}", static_cast<int>(k) - 3, per_class[k]);
    fmt::print("\n");
    return 0;
  }
};

struct Featurize {
  Common common;
  std::optional<std::string> manifest, out;

  int run() const {
    RunConfig cfg = resolve(common);
    set_if(manifest, cfg.paths.manifest);
    set_if(out, cfg.paths.out);
    validate(cfg);
    const std::string dest = require(cfg.paths.out, "paths.out");
    cfg.paths.features.clear();
    const auto corpus = open_corpus(cfg);
    pipeline::save_features(dest, corpus);
    const auto dims = corpus.dims();
    fmt::print("features {} samples {} n_mels {} vocab {} frame_dim {}\n", dest, corpus.samples.size(), dims.n_mels,
               dims.vocab, dims.frame_dim);
    return 0;
  }
};

struct Pretrain {
  Common common;
  std::optional<std::string> manifest, out, strategy, metric, loss_csv;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;

  int run() const {
    RunConfig cfg = resolve(common);
    set_if(manifest, cfg.paths.manifest);
    set_if(out, cfg.paths.out);
    set_if(epochs, cfg.mce.epochs);
    set_if(batch_size, cfg.mce.batch_size);
    set_if(lr, cfg.mce.lr);
    if (strategy) cfg.strategy = sampling::parse_strategy(*strategy);
    if (metric) cfg.mce.metric = mce::parse_metric(*metric);
    validate(cfg);
    const std::string dest = require(cfg.paths.out, "paths.out");
    const auto corpus = open_corpus(cfg);
    const auto clips = pipeline::gather<sampling::Clip>(corpus.clips, corpus.splits.train);
    mce::PretrainOptions opt;
    opt.strategy = cfg.strategy;
    opt.strategy_params = cfg.strategy_params;
    opt.strategy_params.vocab_size = corpus.vocab.size();
    opt.features = cfg.features;
    opt.seed = cfg.seed;
    const auto r = mce::pretrain(clips, cfg.mce, corpus.dims(), opt);
    r.model.save(dest);
    const std::string csv = loss_csv.value_or(csv_beside(dest, ".loss.csv"));
    mce::write_loss_csv(csv, r);
    fmt::print("mce {}\nloss_csv {}\nstrategy {} metric {} epochs {}\ninitial_loss {:.6f} final_loss {:.6f} ratio {:.4f}\n",
               dest, csv, sampling::name_of(cfg.strategy), mce::name_of(cfg.mce.metric), cfg.mce.epochs,
               r.loss.front(), r.loss.back(), r.loss.back() / r.loss.front());
    return 0;
  }
};

struct Train {
  Common common;
  std::optional<std::string> manifest, mce_path, out, mode, history_csv;
  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  bool identity = false;

  int run() const {
    RunConfig cfg = resolve(common);
    set_if(manifest, cfg.paths.manifest);
    set_if(mce_path, cfg.paths.mce);
    set_if(out, cfg.paths.out);
    set_if(epochs, cfg.fusion.epochs);
    set_if(batch_size, cfg.fusion.batch_size);
    set_if(lr, cfg.fusion.lr);
    if (mode) cfg.fusion.mode = fusion::parse_mode(*mode);
    validate(cfg);
    const std::string dest = require(cfg.paths.out, "paths.out");
    const auto corpus = open_corpus(cfg);
    const mce::Mce m = open_mce(cfg, corpus);
    const mce::Mce* source = identity ? nullptr : &m;
    const auto train_set = pipeline::labeled(corpus, corpus.splits.train, source);
    const auto val_set = pipeline::labeled(corpus, corpus.splits.val, source);
    const auto r = fusion::train(train_set, val_set, cfg.fusion, corpus.dims(), cfg.seed);
    r.model.save(dest);
    const std::string csv = history_csv.value_or(csv_beside(dest, ".history.csv"));
    fusion::write_history_csv(csv, r.history);
    fmt::print("model {}\nhistory_csv {}\ncoefficients {}\nfinal train_loss {:.6f} val_loss {:.6f} val_acc7 {:.4f}\n", dest,
               csv, identity ? "identity" : "learned", r.history.train_loss.back(), r.history.val_loss.back(),
               r.history.val_acc7.back());
    return 0;
  }
};

struct Eval {
  Common common;
  std::optional<std::string> manifest, mce_path, model_path;
  std::string split = "test";
  bool identity = false;
  bool json = false;

  int run() const {
    RunConfig cfg = resolve(common);
    set_if(manifest, cfg.paths.manifest);
    set_if(mce_path, cfg.paths.mce);
    set_if(model_path, cfg.paths.model);
    validate(cfg);
    const auto corpus = open_corpus(cfg);
    const mce::Mce m = open_mce(cfg, corpus);
    const auto model = fusion::CorMulT::load(require(cfg.paths.model, "paths.model"));
    if (!(model.dims() == corpus.dims())) throw ShapeMismatch("model was trained for different input extents");
    const auto report = pipeline::evaluate(corpus, corpus.split(split), model, identity ? nullptr : &m);
    if (json) {
      fmt::print("{}\n", report.to_json());
    } else {
      fmt::print("split {} n {}\n{}", split, report.n, report.to_table());
    }
    return 0;
  }
};

struct Correlate {
  Common common;
  std::optional<std::string> manifest, mce_path, csv;
  std::vector<std::string> metrics{"euclidean", "manhattan", "chebyshev", "cosine", "mahalanobis"};
  std::string split = "test";

  int run() const {
    RunConfig cfg = resolve(common);
    set_if(manifest, cfg.paths.manifest);
    set_if(mce_path, cfg.paths.mce);
    validate(cfg);
    std::vector<mce::Metric> kinds;
    for (const auto& name : metrics) {
      try {
        kinds.push_back(mce::parse_metric(name));
      } catch (const BadConfig& e) {
        throw ConfigError("--metric", e.what());
      }
    }
    const auto corpus = open_corpus(cfg);
    const mce::Mce m = open_mce(cfg, corpus);
    const auto features = pipeline::gather<Features>(corpus.features, corpus.split(split));
    std::string table = fmt::format("{:<12} {:>12} {:>11} {:>13} {:>12} {:>15}\n", "metric", "aligned_mean",
                                    "aligned_sd", "swapped_mean", "swapped_sd", "separation_auc");
    std::string rows = "metric,aligned_mean,aligned_sd,swapped_mean,swapped_sd,separation_auc\n";
    for (mce::Metric k : kinds) {
      const auto s = mce::pair_scores(m, features, cfg.seed, k);
      const double am = mean_of(s.aligned), as = stddev_of(s.aligned);
      const double sm = mean_of(s.swapped), ss = stddev_of(s.swapped);
      const double auc = metrics::separation_auc(s.aligned, s.swapped);
      table += fmt::format("{:<12} {:>12.4f} {:>11.4f} {:>13.4f} {:>12.4f} {:>15.4f}\n", mce::name_of(k), am, as, sm,
                           ss, auc);
      rows += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", mce::name_of(k), am, as, sm, ss, auc);
    }
    fmt::print("split {} clips {} trained_metric {}\n{}", split, features.size(), mce::name_of(m.config().metric),
               table);
    if (csv) {
      std::ofstream f(*csv);
      if (!f) throw MissingFile(*csv);
      f << rows;
    }
    return 0;
  }
};

struct GradCheck {
  std::size_t seeds = 10;

  int run() const {
    std::size_t failed = 0;
    std::map<std::string, std::pair<double, bool>> worst;
    for (const auto& r : run_gradient_suite(seeds)) {
      auto& w = worst[r.name];
      w.first = std::max(w.first, r.report.max_rel_err);
      w.second = w.second || !r.report.pass;
      if (!r.report.pass) {
        ++failed;
        fmt::print("FAIL {} seed {}: {}\n", r.name, r.seed, describe(r.report));
      }
    }
    for (const auto& [name, w] : worst) fmt::print("{:<18} {} max_rel_err {:.3e}\n", name, w.second ? "FAIL" : "ok", w.first);
    fmt::print("{} units, {} failing checks\n", worst.size(), failed);
    return failed == 0 ? 0 : 1;
  }
};

struct Ablate {
  Common common;
  std::optional<std::string> manifest, mce_path, csv;
  std::optional<std::size_t> epochs;
  std::vector<std::string> modes{"learned", "identity"};
  std::size_t seeds = 3;

  int run() const {
    RunConfig cfg = resolve(common);
    set_if(manifest, cfg.paths.manifest);
    set_if(mce_path, cfg.paths.mce);
    set_if(epochs, cfg.fusion.epochs);
    validate(cfg);
    for (const auto& mode : modes) {
      if (mode != "learned" && mode != "identity") throw ConfigError("--modes", "expected learned or identity");
    }
    if (seeds == 0) throw ConfigError("--seeds", "must be >= 1");
    const auto corpus = open_corpus(cfg);
    const mce::Mce m = open_mce(cfg, corpus);
    std::string table = fmt::format("{:<9} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9}\n", "mode", "seed", "val_acc7",
                                    "test_acc7", "test_f1", "test_mae", "test_corr");
    std::string rows = "mode,seed,val_acc7,test_acc7,test_f1,test_mae,test_corr\n";
    std::map<std::string, std::vector<double>> test_acc;
    for (const auto& mode : modes) {
      const mce::Mce* source = mode == "identity" ? nullptr : &m;
      const auto train_set = pipeline::labeled(corpus, corpus.splits.train, source);
      const auto val_set = pipeline::labeled(corpus, corpus.splits.val, source);
      for (std::size_t k = 0; k < seeds; ++k) {
        const std::uint64_t seed = cfg.seed + k;
        const auto r = fusion::train(train_set, val_set, cfg.fusion, corpus.dims(), seed);
        const auto rep = pipeline::evaluate(corpus, corpus.splits.test, r.model, source);
        test_acc[mode].push_back(rep.acc7);
        table += fmt::format("{:<9} {:>5} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", mode, seed,
                             r.history.val_acc7.back(), rep.acc7, rep.f1_weighted, rep.mae, rep.corr);
        rows += fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", mode, seed, r.history.val_acc7.back(),
                            rep.acc7, rep.f1_weighted, rep.mae, rep.corr);
      }
    }
    fmt::print("{}", table);
    for (const auto& mode : modes) fmt::print("mean test_acc7 {:<9} {:.4f}\n", mode, mean_of(test_acc[mode]));
    if (csv) {
      std::ofstream f(*csv);
      if (!f) throw MissingFile(*csv);
      f << rows;
    }
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cormult: correlation-aware multimodal sentiment pipeline"};
  app.require_subcommand(1);

  GenData gen;
  auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic dataset manifest");
  add_common(c_gen, gen.common);
  c_gen->add_option("--n", gen.n, "Number of samples");
  c_gen->add_option("--rho", gen.rho, "Probability that all modalities share the class");
  c_gen->add_option("--out", gen.out, "Output directory");

  Featurize feat;
  auto* c_feat = app.add_subcommand("featurize", "Cache audio, text and vision features");
  add_common(c_feat, feat.common);
  c_feat->add_option("--manifest", feat.manifest, "Dataset manifest");
  c_feat->add_option("--out", feat.out, "Feature cache file");

  Pretrain pre;
  auto* c_pre = app.add_subcommand("pretrain", "Contrastive pre-training of the correlation evaluator");
  add_common(c_pre, pre.common);
  c_pre->add_option("--manifest", pre.manifest, "Dataset manifest");
  c_pre->add_option("--neg-strategy", pre.strategy, "Negative sampling strategy")
      ->check(CLI::IsMember({"A", "B", "C", "D"}));
  c_pre->add_option("--metric", pre.metric, "Distance metric");
  c_pre->add_option("--epochs", pre.epochs, "Pre-training epochs");
  c_pre->add_option("--batch-size", pre.batch_size, "Clips per batch");
  c_pre->add_option("--lr", pre.lr, "Adam learning rate");
  c_pre->add_option("--out", pre.out, "Output parameter file");
  c_pre->add_option("--loss-csv", pre.loss_csv, "Loss curve CSV (default beside --out)");

  Train tr;
  auto* c_tr = app.add_subcommand("train", "Train the fusion classifier on frozen coefficients");
  add_common(c_tr, tr.common);
  c_tr->add_option("--manifest", tr.manifest, "Dataset manifest");
  c_tr->add_option("--mce", tr.mce_path, "Pre-trained evaluator");
  c_tr->add_option("--mode", tr.mode, "Coefficient mapping")->check(CLI::IsMember({"affine01", "raw", "clamp0"}));
  c_tr->add_flag("--identity", tr.identity, "Use unit coefficients (no-correlation ablation)");
  c_tr->add_option("--epochs", tr.epochs, "Training epochs");
  c_tr->add_option("--batch-size", tr.batch_size, "Clips per batch");
  c_tr->add_option("--lr", tr.lr, "Adam learning rate");
  c_tr->add_option("--out", tr.out, "Output parameter file");
  c_tr->add_option("--history-csv", tr.history_csv, "History CSV (default beside --out)");

  Eval ev;
  auto* c_ev = app.add_subcommand("eval", "Report all metrics on one split");
  add_common(c_ev, ev.common);
  c_ev->add_option("--manifest", ev.manifest, "Dataset manifest");
  c_ev->add_option("--mce", ev.mce_path, "Pre-trained evaluator");
  c_ev->add_option("--model", ev.model_path, "Trained fusion model");
  c_ev->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  c_ev->add_flag("--identity", ev.identity, "Use unit coefficients");
  c_ev->add_flag("--json", ev.json, "Print the report as JSON");

  Correlate cor;
  auto* c_cor = app.add_subcommand("correlate", "Coefficient distributions and separation per metric");
  add_common(c_cor, cor.common);
  c_cor->add_option("--manifest", cor.manifest, "Dataset manifest");
  c_cor->add_option("--mce", cor.mce_path, "Pre-trained evaluator");
  c_cor->add_option("--metric", cor.metrics, "Metrics to score (repeatable)");
  c_cor->add_option("--split", cor.split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));
  c_cor->add_option("--csv", cor.csv, "Also write the rows as CSV");

  GradCheck gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Run the gradient-check suite");
  c_gc->add_option("--seeds", gc.seeds, "Seeds per primitive op");

  Ablate ab;
  auto* c_ab = app.add_subcommand("ablate", "Learned vs identity coefficients over several seeds");
  add_common(c_ab, ab.common);
  c_ab->add_option("--manifest", ab.manifest, "Dataset manifest");
  c_ab->add_option("--mce", ab.mce_path, "Pre-trained evaluator");
  c_ab->add_option("--modes", ab.modes, "Coefficient sources")->delimiter(',');
  c_ab->add_option("--seeds", ab.seeds, "Training seeds per mode");
  c_ab->add_option("--epochs", ab.epochs, "Training epochs");
  c_ab->add_option("--csv", ab.csv, "Also write the rows as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    check_threads();
    if (c_gen->parsed()) return gen.run();
    if (c_feat->parsed()) return feat.run();
    if (c_pre->parsed()) return pre.run();
    if (c_tr->parsed()) return tr.run();
    if (c_ev->parsed()) return ev.run();
    if (c_cor->parsed()) return cor.run();
    if (c_gc->parsed()) return gc.run();
    if (c_ab->parsed()) return ab.run();
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const BadConfig& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
