#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mvae/detector.hpp"
#include "test_util.hpp"

using namespace mvae;
using namespace mvae::detector;

namespace {

template <typename T = float>
BasicNormalizedImage<T> random_image(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  BasicNormalizedImage<T> img{w, h, w * h, std::vector<T>(w * h)};
  for (auto& v : img.values) v = static_cast<T>(u(rng));
  return img;
}

const Dims kTiny{8, 2, 3, 3, 8, 4, 2};

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
}

}  // namespace

TEST(PoolCell, PartitionsEveryInputSize) {
  for (std::size_t in : {8u, 13u, 63u, 64u, 65u, 216u, 432u}) {
    std::vector<int> covered(in, 0);
    std::size_t prev_begin = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      const auto [b, e] = pool_cell(i, in, 64);
      ASSERT_LT(b, e);
      ASSERT_LE(e, in);
      ASSERT_GE(b, prev_begin);
      prev_begin = b;
      for (auto k = b; k < e; ++k) covered[k] = 1;
    }
    for (auto c : covered) ASSERT_EQ(c, 1) << in;
  }
  EXPECT_EQ(pool_cell(3, 128, 64), (std::pair<std::size_t, std::size_t>{6, 8}));
  EXPECT_EQ(pool_cell(3, 64, 64), (std::pair<std::size_t, std::size_t>{3, 4}));
}

TEST(Forward, AcceptsMalimgShapesWithOneParameterSet) {
  const auto m = Model::initialized(1);
  std::mt19937_64 rng(2);
  const auto n = m.param_count();
  for (std::size_t h : {8u, 20u, 216u, 432u}) {
    const auto z = m.forward(random_image(rng, h, 64));
    EXPECT_TRUE(std::isfinite(z.benign()) && std::isfinite(z.malware()));
  }
  EXPECT_EQ(m.param_count(), n);
  EXPECT_EQ(m.layout().total, n);
}

TEST(Forward, RejectsInputsBelowEightByEight) {
  const auto m = Model::initialized(1);
  std::mt19937_64 rng(2);
  EXPECT_THROW(m.forward(random_image(rng, 7, 64)), UnsupportedShape);
  EXPECT_THROW(m.forward(random_image(rng, 64, 7)), UnsupportedShape);
}

TEST(Forward, ProbabilitiesSumToOne) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto m = Model::initialized(k);
    const auto z = m.forward(random_image(rng, 8 + k * 10, 64));
    const auto p = z.probabilities();
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-6);
    EXPECT_EQ(z.label(), p[1] > p[0] ? kMalware : kBenign);
  }
  Logits<float> huge{{1000.f, -1000.f}};
  EXPECT_NEAR(huge.probabilities()[0], 1.0, 1e-12);
}

TEST(Forward, DeterministicAndSeedDependent) {
  std::mt19937_64 rng(4);
  const auto img = random_image(rng, 100, 64);
  const auto a = Model::initialized(9).forward(img);
  const auto b = Model::initialized(9).forward(img);
  const auto c = Model::initialized(10).forward(img);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
}

TEST(CwLoss, Examples) {
  EXPECT_DOUBLE_EQ(cw_loss(Logits<double>{{2, 1}}, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(cw_loss(Logits<double>{{1, 2}}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(cw_loss(Logits<double>{{3, 1}}, 1.0), -1.0);
  EXPECT_DOUBLE_EQ(cw_loss(Logits<double>{{1, 1.5}}, 5.0), 0.5);
}

// ReLU on/off states and max-pool winners of one forward pass.
template <typename C>
std::vector<std::uint32_t> activation_pattern(const C& c) {
  std::vector<std::uint32_t> p(c.p1_arg.begin(), c.p1_arg.end());
  p.insert(p.end(), c.p2_arg.begin(), c.p2_arg.end());
  for (const auto* v : {&c.a1, &c.a2, &c.h1, &c.h2})
    for (double x : *v) p.push_back(x > 0);
  return p;
}

// At step 1e-4 the central difference agrees wherever the probe keeps the
// activation pattern; a disagreement must come with a pattern change and
// vanish at step 1e-6.
TEST(GradInput, MatchesCentralDifferencesInDoublePrecision) {
  std::mt19937_64 rng(11);
  std::size_t checked = 0, crossings = 0;
  for (int model = 0; model < 3; ++model) {
    const auto m = Model::initialized(100 + model).cast<double>();
    const auto img = random_image<double>(rng, 80, 64);
    for (const auto& spec : {LossSpec::cross_entropy(kMalware), LossSpec::cw(1e9)}) {
      const auto g = m.grad_input(img, spec);
      for (int t = 0; t < 40; ++t) {
        const std::size_t i = rng() % img.size();
        auto central = [&](double h, bool& same_pattern) {
          auto plus = img, minus = img;
          plus.values[i] += h;
          minus.values[i] -= h;
          CnnModel<double>::Cache cp, cm;
          const double fp = loss_and_grad(m.forward(plus, cp), spec).first;
          const double fm = loss_and_grad(m.forward(minus, cm), spec).first;
          same_pattern = activation_pattern(cp) == activation_pattern(cm);
          return (fp - fm) / (2 * h);
        };
        bool same = false;
        const double fd = central(1e-4, same);
        ++checked;
        if (rel_err(g.grad[i], fd) < 1e-4) continue;
        ++crossings;
        EXPECT_FALSE(same) << "pixel " << i << " analytic " << g.grad[i] << " fd " << fd;
        const double fine = central(1e-6, same);
        EXPECT_LT(rel_err(g.grad[i], fine), 1e-4) << "pixel " << i << " analytic " << g.grad[i] << " fd " << fine;
      }
    }
  }
  EXPECT_LE(crossings * 20, checked);
}

TEST(GradInput, ConstantLossGivesZeroGradient) {
  std::mt19937_64 rng(12);
  const auto img = random_image(rng, 64, 64);
  // Find a model that already calls img benign: the kappa=0 CW loss is then
  // clamped, i.e. locally constant.
  std::uint64_t seed = 0;
  while (Model::initialized(seed).forward(img).label() != kBenign) ++seed;
  for (float v : Model::initialized(seed).grad_input(img, LossSpec::cw(0.0)).grad) ASSERT_EQ(v, 0.0f);

  // Zero output layer: logits are constant, so the input gradient vanishes.
  auto flat = Model::initialized(5);
  const auto& L = flat.layout();
  std::fill(flat.params().begin() + static_cast<std::ptrdiff_t>(L.fc3_w), flat.params().end(), 0.0f);
  for (float v : flat.grad_input(img, LossSpec::cross_entropy(kBenign)).grad) ASSERT_EQ(v, 0.0f);
}

TEST(Backward, ParameterGradientMatchesCentralDifferences) {
  std::mt19937_64 rng(13);
  auto m = CnnModel<double>::initialized(7, kTiny);
  const auto img = random_image<double>(rng, 19, 11);
  const auto spec = LossSpec::cross_entropy(kBenign);
  typename CnnModel<double>::Cache c;
  const auto z = m.forward(img, c);
  std::vector<double> grad(m.param_count(), 0.0);
  m.backward(c, loss_and_grad(z, spec).second, &grad, nullptr);
  for (std::size_t i = 0; i < m.param_count(); ++i) {
    const double keep = m.params()[i];
    m.params()[i] = keep + 1e-5;
    const double fp = loss_and_grad(m.forward(img), spec).first;
    m.params()[i] = keep - 1e-5;
    const double fm = loss_and_grad(m.forward(img), spec).first;
    m.params()[i] = keep;
    EXPECT_LT(rel_err(grad[i], (fp - fm) / 2e-5), 1e-4) << "param " << i;
  }
}

namespace {

std::vector<LabeledImage> toy_set(std::size_t n, std::uint64_t seed) {
  // Dark images are benign, bright ones malware.
  std::mt19937_64 rng(seed);
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    auto img = random_image(rng, 16, 16);
    for (auto& v : img.values) v = 0.3f * v + (label ? 0.5f : -0.5f);
    out.push_back({img, label, std::to_string(i)});
  }
  return out;
}

}  // namespace

TEST(Train, LearnsASeparableToyProblem) {
  auto m = Model::initialized(3, kTiny);
  const auto tr = toy_set(64, 1), va = toy_set(32, 2);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.05;
  const auto rep = train(m, tr, va, cfg);
  ASSERT_EQ(rep.epochs.size(), 30u);
  EXPECT_GE(rep.last().val.accuracy, 0.95);
  EXPECT_TRUE(m.finite());
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto m = Model::initialized(3, kTiny);
  const auto before = m.params();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.learning_rate = 0;
  train(m, toy_set(20, 1), {}, cfg);
  EXPECT_EQ(m.params(), before);
}

TEST(Train, DeterministicUnderSeed) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.01;
  auto a = Model::initialized(3, kTiny), b = Model::initialized(3, kTiny);
  const auto ra = train(a, toy_set(40, 1), toy_set(10, 2), cfg);
  const auto rb = train(b, toy_set(40, 1), toy_set(10, 2), cfg);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_EQ(ra.last().val.loss, rb.last().val.loss);
}

TEST(Train, NeedsBothClasses) {
  auto m = Model::initialized(3, kTiny);
  auto only_benign = toy_set(10, 1);
  std::erase_if(only_benign, [](const LabeledImage& s) { return s.label == kMalware; });
  EXPECT_THROW(train(m, only_benign, {}, {}), ConfigError);
}

TEST(Evaluate, RecallPerClass) {
  auto m = Model::initialized(3, kTiny);
  const auto data = toy_set(10, 4);
  const auto e = evaluate(m, std::span<const LabeledImage>(data));
  EXPECT_EQ(e.count[0] + e.count[1], 10u);
  EXPECT_NEAR(e.accuracy, (e.recall[0] * e.count[0] + e.recall[1] * e.count[1]) / 10.0, 1e-12);
}

TEST(ModelFile, RoundtripIsBitExact) {
  testutil::TempDir dir;
  const auto m = Model::initialized(21);
  save_model(m, dir / "m.mvae");
  const auto back = load_model(dir / "m.mvae");
  EXPECT_EQ(back.dims(), m.dims());
  EXPECT_EQ(back.params(), m.params());
  std::mt19937_64 rng(1);
  const auto img = random_image(rng, 70, 64);
  EXPECT_EQ(back.forward(img).values, m.forward(img).values);
  const auto bytes = serialize_model(m);
  EXPECT_EQ(bytes.size(), 5 + 28 + 4 * m.param_count());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MVAE");
}

TEST(ModelFile, CorruptContainersAreFormatErrors) {
  auto bytes = serialize_model(Model::initialized(1, kTiny));
  EXPECT_NO_THROW(deserialize_model(bytes));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize_model(truncated), FormatError);
  truncated.resize(20);
  EXPECT_THROW(deserialize_model(truncated), FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_model(trailing), FormatError);

  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_model(magic), FormatError);

  auto version = bytes;
  version[4] = 7;
  try {
    deserialize_model(version);
    FAIL();
  } catch (const FormatError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find('7'), std::string::npos) << what;
    EXPECT_NE(what.find('1'), std::string::npos) << what;
  }
  testutil::TempDir dir;
  EXPECT_THROW(load_model(dir / "absent.mvae"), IoError);
}
