#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "cormult/errors.hpp"
#include "cormult/grad_check.hpp"
#include "cormult/mce.hpp"
#include "cormult/ops.hpp"
#include "cormult/tape.hpp"
#include "test_util.hpp"

namespace cormult::mce {
namespace {

using testing::random_tensor;

MceConfig small_config() {
  MceConfig c;
  c.d = 8;
  c.layers = 2;
  c.heads = 2;
  c.t = 4;
  c.o = 6;
  c.batch_size = 4;
  return c;
}

const InputDims kSmallDims{5, 9, 3};

FeatureBatch random_batch(std::size_t b, std::uint64_t seed, const InputDims& dims = kSmallDims) {
  Rng rng(seed);
  FeatureBatch fb;
  fb.size = b;
  fb.audio = random_tensor({b, 7, dims.n_mels}, rng);
  fb.frames = random_tensor({b, 3, dims.frame_dim}, rng);
  fb.seq_len = 6;
  for (std::size_t i = 0; i < b * fb.seq_len; ++i) fb.ids.push_back(rng.index(dims.vocab));
  return fb;
}

std::vector<double> row(const Tensor& t, std::size_t i) {
  const std::size_t w = t.size() / t.dim(0);
  return {t.data().begin() + static_cast<std::ptrdiff_t>(i * w),
          t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * w)};
}

// ---- independent scalar helpers for oracles ----

std::vector<double> vec_mat(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = b[j];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w[i * out + j];
    y[j] = s;
  }
  return y;
}

std::vector<double> layer_norm_ref(const std::vector<double>& x, const nn::LayerNorm& ln) {
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + ln.eps) * ln.gain[i] + ln.bias[i];
  return y;
}

double cos_ref(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

// ---- positional encoding and transforms ----

TEST(PositionalEncoding, MatchesClosedFormTable) {
  const Tensor zero = Tensor::zeros({1, 4, 8});
  const Tensor pe = positional_encoding(zero);
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t i = 0; i < 4; ++i) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, 2.0 * i / 8.0);
      EXPECT_NEAR(pe[p * 8 + 2 * i], std::sin(angle), 1e-15);
      EXPECT_NEAR(pe[p * 8 + 2 * i + 1], std::cos(angle), 1e-15);
    }
  }
  for (std::size_t i = 0; i < 8; i += 2) EXPECT_EQ(pe[i], 0.0);
  EXPECT_TRUE(positional_encoding(zero).same_values(pe));
}

TEST(ModalityTransform, ZeroInputGivesPurePositionalSignal) {
  Mce m(small_config(), kSmallDims, 1);
  for (auto& p : m.parameters()) {
    if (p.name == "A.input.bias") {
      EXPECT_EQ(p.tensor->values(), std::vector<double>(8, 0.0));
    }
  }
  FeatureBatch fb = random_batch(2, 2);
  fb.audio = Tensor::zeros({2, 7, kSmallDims.n_mels});
  const Tensor x = m.transform(Modality::Audio, fb);
  const Tensor pe = nn::sinusoidal_table(7, 8);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 56; ++i) EXPECT_DOUBLE_EQ(x[b * 56 + i], pe[i]);
  }
}

TEST(ModalityTransform, PadTokenEmbedsToPadRowAtEveryPosition) {
  Mce m(small_config(), kSmallDims, 3);
  Tensor table;
  for (auto& p : m.parameters()) {
    if (p.name == "T.embed.table") table = *p.tensor;
  }
  FeatureBatch fb = random_batch(1, 4);
  fb.ids.assign(fb.seq_len, text::Vocabulary::kPad);
  const Tensor x = m.transform(Modality::Text, fb);
  const Tensor pe = nn::sinusoidal_table(fb.seq_len, 8);
  for (std::size_t p = 0; p < fb.seq_len; ++p) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(x[p * 8 + j] - pe[p * 8 + j], table[j]);
  }
}

TEST(ModalityTransform, ShapesAndMismatch) {
  Mce m(small_config(), kSmallDims, 5);
  const FeatureBatch fb = random_batch(3, 6);
  EXPECT_EQ(m.transform(Modality::Audio, fb).shape(), (Shape{3, 7, 8}));
  EXPECT_EQ(m.transform(Modality::Text, fb).shape(), (Shape{3, 6, 8}));
  EXPECT_EQ(m.transform(Modality::Vision, fb).shape(), (Shape{3, 3, 8}));
  FeatureBatch bad = fb;
  bad.audio = Tensor::zeros({3, 7, 4});
  EXPECT_THROW(m.transform(Modality::Audio, bad), ShapeMismatch);
}

// ---- encoder block ----

TEST(EncoderBlock, PreservesShape) {
  Rng rng(7);
  EncoderBlock block(8, 4, rng);
  for (Shape s : {Shape{1, 1, 8}, Shape{2, 5, 8}, Shape{3, 16, 8}}) {
    EXPECT_EQ(block.forward(random_tensor(s, 8)).shape(), s);
  }
}

TEST(EncoderBlock, SingleStepReducesToComposedLinearMaps) {
  Rng rng(9);
  EncoderBlock block(8, 2, rng);
  // Give every bias a non-trivial value so the oracle exercises them.
  nn::ParamList params;
  block.collect(params, "b");
  Rng fill(10);
  for (auto& p : params) {
    for (auto& v : p.tensor->mutable_data()) v += fill.normal(0.0, 0.1);
  }
  const Tensor x = random_tensor({1, 1, 8}, 11);
  const Tensor got = block.forward(x);

  const std::vector<double> x0 = x.values();
  const auto x1 = layer_norm_ref(x0, block.ln1);
  const auto& a = block.attention;
  const auto x2 = vec_mat(vec_mat(x1, a.v.weight, a.v.bias), a.o.weight, a.o.bias);
  std::vector<double> r(8);
  for (std::size_t i = 0; i < 8; ++i) r[i] = x1[i] + x2[i];
  const auto x3 = layer_norm_ref(r, block.ln2);
  auto h = vec_mat(x3, block.ff.up.weight, block.ff.up.bias);
  for (auto& v : h) v = std::max(v, 0.0);
  const auto f = vec_mat(h, block.ff.down.weight, block.ff.down.bias);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got[i], x3[i] + f[i], 1e-12);
}

TEST(EncoderBlock, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  EncoderBlock block(8, 2, rng);
  Tensor x = random_tensor({2, 3, 8}, 13);
  const Tensor w = random_tensor({2, 3, 8}, 14);
  nn::ParamList params;
  block.collect(params, "b");
  std::vector<Tensor*> inputs{&x};
  for (const auto& p : params) {
    if (p.name != "b.attention.k.bias") inputs.push_back(p.tensor);
  }
  const auto report = grad_check([&] { return ops::sum(ops::mul(block.forward(x), w)); }, inputs, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << describe(report);
}

// ---- joint projection ----

TEST(ProjectJoint, IdentityWhenLengthEqualsT) {
  Mce m(small_config(), kSmallDims, 15);
  const Tensor x = random_tensor({2, 4, 8}, 16);
  Tensor w, b;
  for (auto& p : m.parameters()) {
    if (p.name == "V.out.weight") w = *p.tensor;
    if (p.name == "V.out.bias") b = *p.tensor;
  }
  testing::expect_near(m.project_joint(Modality::Vision, x), ops::add(ops::matmul(x, w), b), 1e-15);
}

TEST(ProjectJoint, ConstantInTimeStaysConstant) {
  Mce m(small_config(), kSmallDims, 17);
  const Tensor step = random_tensor({1, 1, 8}, 18);
  const Tensor x = ops::add(Tensor::zeros({1, 9, 8}), step);
  const Tensor y = m.project_joint(Modality::Audio, x);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 6}));
  for (std::size_t t = 1; t < 4; ++t) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(y[t * 6 + j], y[j], 1e-12);
  }
}

TEST(ProjectJoint, ShapeSweepAndPooledAgreesWithJointMean) {
  Mce m(small_config(), kSmallDims, 19);
  for (std::size_t len : {1u, 3u, 4u, 12u}) {
    EXPECT_EQ(m.project_joint(Modality::Text, random_tensor({2, len, 8}, len)).shape(), (Shape{2, 4, 6}));
  }
  const FeatureBatch fb = random_batch(3, 20);
  for (Modality mod : kModalities) {
    testing::expect_near(m.pooled(mod, fb), ops::mean(m.joint(mod, fb), 1), 1e-12);
  }
}

// ---- distances and correlation ----

TEST(Distance, ThreeFourFiveHandCase) {
  const std::vector<double> a{0, 0}, b{3, 4};
  EXPECT_EQ(distance(a, b, Metric::Euclidean), 5.0);
  EXPECT_EQ(distance(a, b, Metric::Manhattan), 7.0);
  EXPECT_EQ(distance(a, b, Metric::Chebyshev), 4.0);
}

TEST(Distance, SelfDistanceAndCosine) {
  Rng rng(21);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> x(10);
    for (auto& v : x) v = rng.normal(0, 1);
    EXPECT_EQ(distance(x, x, Metric::Euclidean), 0.0);
    EXPECT_NEAR(distance(x, x, Metric::Cosine), 1.0, 1e-15);
  }
}

TEST(Distance, MahalanobisWithIdentityIsEuclidean) {
  Rng rng(22);
  const auto eye = Covariance::identity(12);
  const auto full_eye = Covariance::full(Tensor::eye(12));
  for (int k = 0; k < 50; ++k) {
    std::vector<double> u(12), v(12);
    for (auto& x : u) x = rng.normal(0, 3);
    for (auto& x : v) x = rng.normal(0, 3);
    const double e = distance(u, v, Metric::Euclidean);
    EXPECT_NEAR(distance(u, v, Metric::Mahalanobis, &eye), e, 1e-12);
    EXPECT_NEAR(distance(u, v, Metric::Mahalanobis, &full_eye), e, 1e-12);
  }
}

TEST(Distance, MahalanobisDiagonalScalesAxes) {
  const auto c = Covariance::diagonal({4.0, 9.0});
  const std::vector<double> a{0, 0}, b{2, 3};
  EXPECT_NEAR(distance(a, b, Metric::Mahalanobis, &c), std::sqrt(2.0), 1e-15);
}

TEST(Distance, Errors) {
  const std::vector<double> a{0, 0}, b{1, 1, 1};
  EXPECT_THROW(distance(a, b, Metric::Euclidean), ShapeMismatch);
  EXPECT_THROW(distance(a, a, Metric::Mahalanobis), NotSPD);
  EXPECT_THROW(Covariance::diagonal({1.0, 0.0}), NotSPD);
  EXPECT_THROW(Covariance::full(Tensor({2, 2}, {1.0, 2.0, 2.0, 1.0})), NotSPD);
  EXPECT_THROW(Covariance::full(Tensor({2, 2}, {1.0, 0.5, 0.0, 1.0})), NotSPD);
}

TEST(Distance, RowWiseMatchesScalarForEveryMetric) {
  const Tensor u = random_tensor({5, 7}, 23), v = random_tensor({5, 7}, 24);
  const auto cov = Covariance::from_rows(ops::concat({u, v}, 0));
  for (Metric m : {Metric::Euclidean, Metric::Manhattan, Metric::Chebyshev, Metric::Cosine, Metric::Mahalanobis}) {
    const Tensor d = distance(u, v, m, &cov);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(d[i], distance(row(u, i), row(v, i), m, &cov), 1e-12);
  }
}

TEST(Distance, ParseNames) {
  for (auto name : {"euclidean", "manhattan", "chebyshev", "cosine", "mahalanobis"}) {
    EXPECT_EQ(name_of(parse_metric(name)), name);
  }
  EXPECT_THROW(parse_metric("hamming"), BadConfig);
}

TEST(Correlation, SelfAndNegation) {
  const Tensor x = random_tensor({4, 6}, 25);
  EXPECT_NEAR(correlation(x, x, Metric::Cosine), 1.0, 1e-15);
  EXPECT_NEAR(correlation(x, ops::neg(x), Metric::Cosine), -1.0, 1e-15);
  EXPECT_NEAR(correlation(x, x, Metric::Euclidean), 1.0, 1e-15);
}

TEST(Correlation, CosineIsScaleInvariantAndBounded) {
  Rng rng(26);
  for (int k = 0; k < 100; ++k) {
    const Tensor a = random_tensor({3, 5}, rng), b = random_tensor({3, 5}, rng);
    const double c = correlation(a, b, Metric::Cosine);
    const double s1 = rng.uniform(0.1, 10.0), s2 = rng.uniform(0.1, 10.0);
    EXPECT_NEAR(correlation(ops::scalar_mul(a, s1), ops::scalar_mul(b, s2), Metric::Cosine), c, 1e-12);
    EXPECT_LE(std::fabs(c), 1.0);
    EXPECT_NEAR(correlation(b, a, Metric::Cosine), c, 1e-15);
  }
}

TEST(Correlation, DistanceMetricsMapToReciprocal) {
  const Tensor a({1, 2}, {0.0, 0.0}), b({1, 2}, {3.0, 4.0});
  EXPECT_NEAR(correlation(a, b, Metric::Euclidean), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(correlation(a, b, Metric::Manhattan), 1.0 / 8.0, 1e-15);
  EXPECT_NEAR(correlation(a, b, Metric::Chebyshev), 1.0 / 5.0, 1e-15);
}

// ---- triplet loss and total ----

TEST(TripletLoss, HingeInactiveIsZero) {
  const Tensor a({1, 2}, {1.0, 0.0}), n({1, 2}, {-1.0, 0.0});
  EXPECT_EQ(triplet_loss(a, a, n, 1.0, Metric::Cosine)[0], 0.0);
  EXPECT_EQ(triplet_loss(a, a, ops::scalar_mul(n, 3.0), 1.0, Metric::Euclidean)[0], 0.0);
}

TEST(TripletLoss, AnchorEqualsNegativeGivesTwiceMargin) {
  const Tensor a({1, 2}, {0.0, 0.0}), p({1, 2}, {0.0, 1.5});
  EXPECT_NEAR(triplet_loss(a, p, a, 1.5, Metric::Euclidean)[0], 3.0, 1e-15);
  const Tensor u({1, 2}, {1.0, 0.0}), q({1, 2}, {0.0, 1.0});
  EXPECT_NEAR(triplet_loss(u, q, u, 1.0, Metric::Cosine)[0], 2.0, 1e-15);
}

TEST(TripletLoss, GradientAwayFromHinge) {
  Tensor a = random_tensor({3, 4, 5}, 27), p = random_tensor({3, 4, 5}, 28), n = random_tensor({3, 4, 5}, 29);
  for (Metric m : {Metric::Cosine, Metric::Euclidean}) {
    const double margin = 5.0;  // keeps every hinge active
    const auto report =
        grad_check([&] { return triplet_loss(a, p, n, margin, m); }, std::vector<Tensor*>{&a, &p, &n}, 1e-5, 1e-5);
    EXPECT_TRUE(report.pass) << name_of(m) << ": " << describe(report);
  }
}

std::vector<DirectedLoss> scalar_terms(const std::array<double, 6>& v) {
  std::vector<DirectedLoss> terms;
  std::size_t k = 0;
  for (Modality a : kModalities) {
    for (Modality p : partners_of(a)) terms.push_back({a, p, Tensor::from({v[k++]})});
  }
  return terms;
}

TEST(MceLoss, TotalIsMeanOfModalityLosses) {
  const auto terms = scalar_terms({0.5, 0.25, 1.0, 0.75, 0.125, 2.0});
  const auto l = mce_loss(terms);
  EXPECT_DOUBLE_EQ(l.per_modality[0][0], 0.75);
  EXPECT_DOUBLE_EQ(l.per_modality[1][0], 1.75);
  EXPECT_DOUBLE_EQ(l.per_modality[2][0], 2.125);
  EXPECT_DOUBLE_EQ(l.total[0], (0.75 + 1.75 + 2.125) / 3.0);
}

TEST(MceLoss, EachModalityWeighsOneThird) {
  const std::array<double, 6> base{0.5, 0.25, 1.0, 0.75, 0.125, 2.0};
  const double t0 = mce_loss(scalar_terms(base)).total[0];
  for (std::size_t k = 0; k < 6; ++k) {
    auto v = base;
    v[k] += 0.375;
    EXPECT_NEAR(mce_loss(scalar_terms(v)).total[0] - t0, 0.125, 1e-15);
  }
}

TEST(MceLoss, HandBatchMatchesDirectEvaluation) {
  // Two triplets per direction with 2-d pooled vectors; margin 1, cosine.
  const std::vector<std::vector<double>> a{{1, 0}, {0, 1}}, t{{1, 1}, {1, -1}}, v{{0, 1}, {-1, 0}};
  const std::vector<std::vector<double>> na{{-1, 0}, {1, 1}}, nt{{0, 1}, {0, -1}}, nv{{1, 0}, {1, 2}};
  auto tensor = [](const std::vector<std::vector<double>>& r) {
    return Tensor({2, 2}, {r[0][0], r[0][1], r[1][0], r[1][1]});
  };
  auto direct = [](const auto& x, const auto& y, const auto& yn) {
    double s = 0.0;
    for (int i = 0; i < 2; ++i) s += std::max(0.0, (1 - cos_ref(x[i], y[i])) - (1 - cos_ref(x[i], yn[i])) + 1.0);
    return s / 2.0;
  };
  const std::array<std::pair<Modality, const std::vector<std::vector<double>>*>, 3> pos{
      {{Modality::Audio, &a}, {Modality::Text, &t}, {Modality::Vision, &v}}};
  const std::array<const std::vector<std::vector<double>>*, 3> neg{&na, &nt, &nv};
  std::vector<DirectedLoss> terms;
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      terms.push_back({pos[i].first, pos[j].first,
                       triplet_loss(tensor(*pos[i].second), tensor(*pos[j].second), tensor(*neg[j]), 1.0,
                                    Metric::Cosine)});
      expected += direct(*pos[i].second, *pos[j].second, *neg[j]);
    }
  }
  EXPECT_NEAR(mce_loss(terms).total[0], expected / 3.0, 1e-14);
}

TEST(MceLoss, Errors) {
  EXPECT_THROW(mce_loss({}), EmptyBatch);
  auto terms = scalar_terms({1, 1, 1, 1, 1, 1});
  terms.pop_back();
  EXPECT_THROW(mce_loss(terms), BadConfig);
}

TEST(MceLoss, NonNegativeAndZeroOnlyWhenAllHingesInactive) {
  Rng rng(30);
  for (int k = 0; k < 30; ++k) {
    const Tensor a = random_tensor({4, 3}, rng), p = random_tensor({4, 3}, rng), n = random_tensor({4, 3}, rng);
    const double l = triplet_loss(a, p, n, 0.5, Metric::Cosine)[0];
    EXPECT_GE(l, 0.0);
    const Tensor dp = triplet_distance(a, p, Metric::Cosine), dn = triplet_distance(a, n, Metric::Cosine);
    bool any_active = false;
    for (std::size_t i = 0; i < 4; ++i) any_active |= dp[i] - dn[i] + 0.5 > 0.0;
    EXPECT_EQ(l > 0.0, any_active);
  }
}

// ---- full model ----

TEST(Mce, FullForwardBackwardPassesGradCheck) {
  MceConfig cfg = small_config();
  Mce m(cfg, kSmallDims, 31);
  const FeatureBatch pos = random_batch(2, 32);
  const FeatureBatch neg = random_batch(2, 33);
  auto loss = [&] {
    std::array<Tensor, 3> p, n;
    for (Modality mod : kModalities) {
      p[index_of(mod)] = m.pooled(mod, pos);
      n[index_of(mod)] = m.pooled(mod, neg);
    }
    std::vector<DirectedLoss> terms;
    for (Modality a : kModalities) {
      for (Modality q : partners_of(a)) {
        terms.push_back({a, q, triplet_loss(p[index_of(a)], p[index_of(q)], n[index_of(q)], 3.0, Metric::Cosine)});
      }
    }
    return mce_loss(terms).total;
  };
  std::vector<Tensor*> inputs;
  for (auto& p : m.parameters()) {
    if (p.name.find("attention.k.bias") == std::string::npos) inputs.push_back(p.tensor);
  }
  const auto report = grad_check(loss, inputs, 1e-5, 1e-4, 6);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(Mce, EvaluateRequiresParametersAndIsSymmetricAndBounded) {
  Mce empty;
  const FeatureBatch fb = random_batch(3, 34);
  EXPECT_THROW(empty.evaluate(fb), NotPretrained);
  Mce m(small_config(), kSmallDims, 35);
  EXPECT_THROW(m.evaluate(fb), NotPretrained);
  m.set_pretrained(true);
  const auto c1 = m.evaluate(fb), c2 = m.evaluate(fb);
  ASSERT_EQ(c1.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c1[i].cor_ta, c2[i].cor_ta);
    for (double c : {c1[i].cor_ta, c1[i].cor_tv, c1[i].cor_av}) EXPECT_LE(std::fabs(c), 1.0);
    EXPECT_EQ(c1[i].of(Modality::Audio, Modality::Text), c1[i].of(Modality::Text, Modality::Audio));
    EXPECT_EQ(c1[i].of(Modality::Vision, Modality::Audio), c1[i].cor_av);
  }
}

TEST(Mce, SaveLoadRoundTripIsBitIdentical) {
  MceConfig cfg = small_config();
  cfg.metric = Metric::Mahalanobis;
  Mce m(cfg, kSmallDims, 36);
  m.covariance = Covariance::diagonal({1, 2, 3, 4, 5, 6});
  m.set_pretrained(true);
  const auto path = std::filesystem::temp_directory_path() / "cormult_mce_roundtrip.bin";
  m.save(path);
  const Mce loaded = Mce::load(path);
  EXPECT_EQ(loaded.encode_bytes(), m.encode_bytes());
  EXPECT_EQ(loaded.config().metric, Metric::Mahalanobis);
  EXPECT_EQ(loaded.dims(), kSmallDims);
  EXPECT_TRUE(loaded.pretrained());
  loaded.save(path);
  EXPECT_EQ(Mce::load(path).encode_bytes(), m.encode_bytes());
  std::filesystem::remove(path);
  EXPECT_THROW(Mce::load(path), MissingFile);

  auto records = m.records();
  records.pop_back();
  records.pop_back();
  EXPECT_THROW(Mce::from_records(records), FormatError);
  EXPECT_THROW(decode_records("MCE1", "CMT1\x00", "x"), FormatError);
}

TEST(MceConfig, Validation) {
  MceConfig c;
  c.d = 10;
  c.heads = 4;
  EXPECT_THROW(validate(c), BadConfig);
  c = MceConfig{};
  c.t = 0;
  EXPECT_THROW(validate(c), BadConfig);
  EXPECT_NO_THROW(validate(MceConfig{}));
}

// ---- pre-training ----

std::vector<sampling::Clip> toy_clips(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<sampling::Clip> clips(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& c = clips[i];
    c.audio.samples.resize(1024);
    const double f = 200.0 + 300.0 * static_cast<double>(i % 3);
    for (std::size_t k = 0; k < c.audio.samples.size(); ++k) {
      c.audio.samples[k] = static_cast<float>(0.5 * std::sin(2 * M_PI * f * static_cast<double>(k) / 8000.0) +
                                              rng.normal(0, 0.01));
    }
    c.tokens.ids.assign(6, text::Vocabulary::kPad);
    c.tokens.true_length = 4;
    for (std::size_t k = 0; k < 4; ++k) c.tokens.ids[k] = 2 + (i % 3) + rng.index(3);
    c.frames = random_tensor({5, 3}, seed + i);
  }
  return clips;
}

PretrainOptions toy_options() {
  PretrainOptions o;
  o.features.mel.n_mels = 5;
  o.features.seq_len = 6;
  o.features.target_frames = 3;
  o.strategy_params.vocab_size = 9;
  o.seed = 37;
  return o;
}

TEST(Pretrain, ZeroLearningRateLeavesParametersAndLossFlat) {
  MceConfig cfg = small_config();
  cfg.lr = 0.0;
  cfg.epochs = 2;
  const auto clips = toy_clips(6, 38);
  const auto r = pretrain(clips, cfg, kSmallDims, toy_options());
  const Mce init(cfg, kSmallDims, toy_options().seed);
  Mce fresh = init;
  fresh.set_pretrained(true);
  EXPECT_EQ(r.model.encode_bytes(), fresh.encode_bytes());
  ASSERT_EQ(r.loss.size(), 3u);
  EXPECT_EQ(r.loss[1], r.loss[0]);
  EXPECT_EQ(r.loss[2], r.loss[0]);
  EXPECT_TRUE(std::isnan(r.train_loss[0]));
}

TEST(Pretrain, SeededRunsAreBitIdenticalAndLossDrops) {
  MceConfig cfg = small_config();
  cfg.epochs = 6;
  cfg.lr = 1e-2;
  const auto clips = toy_clips(8, 39);
  const auto r1 = pretrain(clips, cfg, kSmallDims, toy_options());
  const auto r2 = pretrain(clips, cfg, kSmallDims, toy_options());
  EXPECT_EQ(r1.loss, r2.loss);
  EXPECT_EQ(r1.model.encode_bytes(), r2.model.encode_bytes());
  EXPECT_LT(r1.loss.back(), r1.loss.front());
}

TEST(Pretrain, PairStrategiesNeedTwoClipsPerBatch) {
  MceConfig cfg = small_config();
  cfg.batch_size = 1;
  cfg.epochs = 1;
  const auto clips = toy_clips(4, 40);
  auto opt = toy_options();
  opt.strategy = sampling::Strategy::A;
  EXPECT_THROW(pretrain(clips, cfg, kSmallDims, opt), BatchTooSmall);
  opt.strategy = sampling::Strategy::C;
  EXPECT_NO_THROW(pretrain(clips, cfg, kSmallDims, opt));
}

TEST(PairScores, CountsAndCosineRange) {
  Mce m(small_config(), kSmallDims, 41);
  m.set_pretrained(true);
  const auto clips = toy_clips(5, 42);
  const auto feats = featurize_all(clips, toy_options().features);
  const auto s = pair_scores(m, feats, 43);
  EXPECT_EQ(s.aligned.size(), 15u);
  EXPECT_EQ(s.swapped.size(), 15u);
  for (double v : s.aligned) EXPECT_LE(std::fabs(v), 1.0 + 1e-12);
  EXPECT_EQ(pair_scores(m, feats, 43).swapped, s.swapped);
}

}  // namespace
}  // namespace cormult::mce
