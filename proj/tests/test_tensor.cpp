#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "lpie/autodiff.hpp"
#include "lpie/gradcheck.hpp"
#include "lpie/kernels.hpp"
#include "lpie/tensor_io.hpp"
#include "support.hpp"

using namespace lpie;
using D = double;

namespace {

Tensor<D> random_d(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  return uniform_tensor<D>(s, rng, lo, hi);
}

}  // namespace

TEST(Tensor, StorageMatchesShape) {
  Tensor<float> t({2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.numel(), 120u);
  EXPECT_EQ(t.at(1, 2, 3, 4), 1.5f);
  EXPECT_EQ(t.offset(1, 2, 3, 4), 119u);
  EXPECT_THROW(Tensor<float>({1, 1, 2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Tensor, DihedralInverseRestores) {
  const auto x = random_d({1, 2, 5, 7}, 3);
  for (int i = 0; i < kDihedralCount; ++i) {
    const auto y = dihedral(x, i);
    EXPECT_EQ(max_abs_diff(inverse_dihedral(y, i), x), 0.0) << i;
  }
  EXPECT_EQ(max_abs_diff(dihedral(x, 0), x), 0.0);
}

TEST(Conv2d, OnesSumToNine) {
  Tensor<D> x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0);
  const auto y = kernels::conv2d<D>(x, w, nullptr, {1, kernels::Padding::valid, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 9.0);
}

TEST(Conv2d, DiracDepthwiseIsIdentity) {
  const auto x = random_d({2, 5, 6, 7}, 11, -1e6, 1e6);
  Tensor<D> w({5, 1, 3, 3});
  for (std::size_t c = 0; c < 5; ++c) w.at(c, 0, 1, 1) = 1.0;
  const auto y = kernels::conv2d<D>(x, w, nullptr, {1, kernels::Padding::zero_same, 5});
  EXPECT_EQ(max_abs_diff(y, x), 0.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  const auto x = random_d({1, 2, 5, 5}, 1);
  const auto w = random_d({4, 2, 3, 3}, 2);
  const auto b = random_d({1, 4, 1, 1}, 3);
  EXPECT_LT(max_abs_diff(kernels::conv2d<D>(x, w, &b, {}), support::conv2d_loop(x, w, &b, 1, true, 1)), 1e-12);
}

TEST(Conv2d, MatchesLoopOracleStrideGroupsValid) {
  const auto x = random_d({2, 4, 9, 8}, 4);
  const auto w = random_d({6, 2, 3, 3}, 5);
  EXPECT_LT(max_abs_diff(kernels::conv2d<D>(x, w, nullptr, {2, kernels::Padding::zero_same, 2}),
                         support::conv2d_loop(x, w, nullptr, 2, true, 2)),
            1e-12);
  const auto w5 = random_d({3, 4, 5, 5}, 6);
  EXPECT_LT(max_abs_diff(kernels::conv2d<D>(x, w5, nullptr, {1, kernels::Padding::valid, 1}),
                         support::conv2d_loop(x, w5, nullptr, 1, false, 1)),
            1e-12);
}

TEST(Conv2d, Linear) {
  const auto a = random_d({1, 3, 6, 6}, 7), b = random_d({1, 3, 6, 6}, 8), w = random_d({2, 3, 3, 3}, 9);
  Tensor<D> mix(a.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = 0.7 * a[i] - 1.3 * b[i];
  const auto ya = kernels::conv2d<D>(a, w, nullptr, {}), yb = kernels::conv2d<D>(b, w, nullptr, {});
  const auto ym = kernels::conv2d<D>(mix, w, nullptr, {});
  for (std::size_t i = 0; i < ym.numel(); ++i) EXPECT_NEAR(ym[i], 0.7 * ya[i] - 1.3 * yb[i], 1e-10);
}

TEST(Conv2d, ShapeErrorsNameDimension) {
  Tensor<D> x({1, 3, 4, 4}), w({4, 2, 3, 3});
  try {
    kernels::conv2d<D>(x, w, nullptr, {});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("c_in"), std::string::npos) << e.what();
  }
  Tensor<D> even({1, 3, 2, 2});
  EXPECT_THROW(kernels::conv2d<D>(x, even, nullptr, {}), ShapeError);
  Tensor<D> big({1, 3, 5, 5});
  EXPECT_THROW(kernels::conv2d<D>(Tensor<D>({1, 3, 3, 3}), big, nullptr, {1, kernels::Padding::valid, 1}), ShapeError);
  EXPECT_THROW(kernels::conv2d<D>(x, Tensor<D>({1, 3, 3, 3}), nullptr, {3, kernels::Padding::valid, 1}), ShapeError);
}

TEST(MaxPool, WindowMaxAndTies) {
  Tensor<D> x({1, 1, 2, 2}, std::vector<D>{1, 2, 3, 4});
  std::vector<std::uint8_t> arg;
  EXPECT_EQ(kernels::maxpool2x2(x, &arg)[0], 4.0);

  Tensor<D> c({1, 2, 4, 4}, 0.3);
  const auto y = kernels::maxpool2x2(c, &arg);
  for (auto v : y.data()) EXPECT_EQ(v, 0.3);
  const auto g = kernels::maxpool2x2_backward(Tensor<D>(y.shape(), 1.0), arg, c.shape());
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t yy = 0; yy < 4; ++yy)
      for (std::size_t xx = 0; xx < 4; ++xx)
        EXPECT_EQ(g.at(0, ch, yy, xx), (yy % 2 == 0 && xx % 2 == 0) ? 1.0 : 0.0);

  const auto r = random_d({1, 1, 8, 8}, 12);
  EXPECT_EQ(max_abs_diff(kernels::maxpool2x2(r, &arg), support::maxpool_loop(r)), 0.0);
  EXPECT_THROW(kernels::maxpool2x2(Tensor<D>({1, 1, 3, 4}), &arg), ShapeError);
}

TEST(Upsample, HandEvaluatedCoordinates) {
  Tensor<D> x({1, 1, 1, 2}, std::vector<D>{0, 1});
  const auto y = kernels::upsample2x(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 4}));
  const double want[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.at(0, 0, r, i), want[i]);
}

TEST(Upsample, ConstantAndPoolIdentity) {
  Tensor<D> c({1, 3, 3, 5}, 0.42);
  const auto up = kernels::upsample2x(c);
  for (auto v : up.data()) EXPECT_DOUBLE_EQ(v, 0.42);
  std::vector<std::uint8_t> arg;
  EXPECT_EQ(max_abs_diff(kernels::maxpool2x2(up, &arg), c), 0.0);
}

TEST(Upsample, RampThenAverageReproducesRamp) {
  Tensor<D> ramp({1, 1, 8, 8});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) ramp.at(0, 0, y, x) = 0.1 * x + 0.05 * y;
  const auto up = kernels::upsample2x(ramp);
  // Interior only: edge clamping bends the ramp in the outermost samples.
  for (std::size_t y = 1; y < 7; ++y)
    for (std::size_t x = 1; x < 7; ++x) {
      double avg = 0;
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) avg += up.at(0, 0, 2 * y + i, 2 * x + j) / 4;
      EXPECT_NEAR(avg, ramp.at(0, 0, y, x), 1e-6);
    }
}

TEST(Autodiff, ConcatShapesAndSlices) {
  ad::Tape<D> tape;
  const auto a = tape.leaf(random_d({1, 2, 4, 4}, 1)), b = tape.constant(Tensor<D>({1, 3, 4, 4}));
  const auto c = ad::concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 5, 4, 4}));
  EXPECT_EQ(max_abs_diff(slice_channels(c.value(), 0, 2), a.value()), 0.0);
  EXPECT_THROW(ad::concat_channels(a, tape.constant(Tensor<D>({1, 1, 4, 2}))), ShapeError);
}

TEST(Autodiff, ElementwiseExamples) {
  ad::Tape<D> tape;
  const auto x = tape.constant(Tensor<D>({1, 1, 1, 2}, std::vector<D>{-1, 2}));
  const auto r = ad::relu(x);
  EXPECT_EQ(r.value()[0], 0.0);
  EXPECT_EQ(r.value()[1], 2.0);
  EXPECT_EQ(ad::sigmoid(tape.constant(Tensor<D>({1, 1, 1, 1}, 0.0))).value()[0], 0.5);
  const auto s = ad::sigmoid(tape.constant(Tensor<D>({1, 1, 1, 2}, std::vector<D>{-30, 30})));
  EXPECT_GT(s.value()[0], 0.0);
  EXPECT_LT(s.value()[1], 1.0);

  const auto q = tape.constant(Tensor<D>({1, 1, 2, 2}, std::vector<D>{1, 2, 3, 4}));
  EXPECT_EQ(ad::global_avg_pool(q).value()[0], 2.5);
  EXPECT_EQ(ad::global_max_pool(q).value()[0], 4.0);
  EXPECT_THROW(ad::add(q, tape.constant(Tensor<D>({1, 1, 3, 1}))), ShapeError);
}

TEST(Autodiff, SumAndQuadraticGradients) {
  ad::Tape<D> tape;
  const auto xv = random_d({1, 2, 3, 3}, 5);
  auto x = tape.leaf(xv);
  tape.backward(ad::sum(x));
  const auto gx = x.grad();
  for (auto g : gx.data()) EXPECT_EQ(g, 1.0);

  ad::Tape<D> t2;
  auto y = t2.leaf(xv);
  t2.backward(ad::scalar_mul(ad::sum(ad::mul(y, y)), 0.5));
  EXPECT_LT(max_abs_diff(y.grad(), xv), 1e-15);
}

TEST(Autodiff, BackwardAccumulatesUntilReset) {
  ad::Tape<D> tape;
  auto x = tape.leaf(Tensor<D>({1, 1, 2, 2}, 1.0));
  const auto root = ad::sum(ad::scalar_mul(x, 3.0));
  tape.backward(root);
  tape.backward(root);
  const auto twice = x.grad();
  for (auto g : twice.data()) EXPECT_EQ(g, 6.0);
  tape.zero_grad();
  tape.backward(root);
  const auto once = x.grad();
  for (auto g : once.data()) EXPECT_EQ(g, 3.0);
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Autodiff, ForwardFiniteAtExtremeMagnitudes) {
  for (double mag : {1e-6, 1e6}) {
    ad::Tape<D> tape(false);
    const auto x = tape.constant(random_d({1, 4, 8, 8}, 21, -mag, mag));
    const auto w = tape.constant(random_d({4, 4, 3, 3}, 22, -mag, mag));
    auto y = ad::conv2d<D>(x, w, std::nullopt);
    y = ad::mul(ad::sigmoid(y), ad::relu(y));
    y = ad::upsample2x(ad::maxpool2x2(y));
    y = ad::mul(y, ad::sigmoid(ad::channel_max(y)));
    EXPECT_TRUE(y.value().all_finite()) << mag;
    EXPECT_TRUE(ad::mean(ad::global_avg_pool(y)).value().all_finite());
  }
}

TEST(Gradcheck, LinearConvIsExactToRounding) {
  ad::ScalarGraph<D> g = [](ad::Tape<D>&, std::span<const ad::Var<D>> v) {
    return ad::random_projection(ad::conv2d<D>(v[0], v[1], v[2]), 77);
  };
  Rng rng(1);
  std::vector<Tensor<D>> small{uniform_tensor<D>({1, 2, 4, 4}, rng, 0.1, 0.9),
                               uniform_tensor<D>({2, 2, 3, 3}, rng, -1, 1), uniform_tensor<D>({1, 2, 1, 1}, rng, -1, 1)};
  const auto rep = ad::gradcheck(g, small);
  EXPECT_LT(rep.max_relative_error, 1e-9) << rep.worst;
  EXPECT_EQ(rep.checked, 32u + 36u + 2u);

  // Larger outputs: roundoff in f grows with the number of projected terms,
  // and a linear map has no truncation error, so a wider step is exact.
  std::vector<Tensor<D>> big{uniform_tensor<D>({1, 3, 6, 6}, rng, 0.1, 0.9),
                             uniform_tensor<D>({4, 3, 3, 3}, rng, -1, 1), uniform_tensor<D>({1, 4, 1, 1}, rng, -1, 1)};
  ad::GradcheckOptions wide;
  wide.eps = 1e-3;
  const auto rep_big = ad::gradcheck(g, big, wide);
  EXPECT_LT(rep_big.max_relative_error, 1e-9) << rep_big.worst;
}

TEST(Gradcheck, SigmoidChain) {
  ad::ScalarGraph<D> g = [](ad::Tape<D>&, std::span<const ad::Var<D>> v) {
    return ad::random_projection(ad::sigmoid(ad::scalar_mul(ad::sigmoid(v[0]), 3.0)), 5);
  };
  Rng rng(2);
  const auto rep = ad::gradcheck(g, {uniform_tensor<D>({1, 2, 4, 4}, rng, 0.1, 0.9)});
  EXPECT_LT(rep.max_relative_error, 1e-6) << rep.worst;
}

TEST(Gradcheck, CompositeConvReluPoolSum) {
  ad::ScalarGraph<D> g = [](ad::Tape<D>&, std::span<const ad::Var<D>> v) {
    return ad::sum(ad::maxpool2x2(ad::relu(ad::conv2d<D>(v[0], v[1], std::nullopt))));
  };
  Rng rng(3);
  const auto rep =
      ad::gradcheck(g, {uniform_tensor<D>({1, 2, 8, 8}, rng, 0.1, 0.9), uniform_tensor<D>({3, 2, 3, 3}, rng, -1, 1)});
  EXPECT_LT(rep.max_relative_error, 1e-6) << rep.worst;
}

TEST(Gradcheck, SkipsKinkCrossings) {
  // relu at exactly 0 +/- eps always crosses the kink.
  ad::ScalarGraph<D> g = [](ad::Tape<D>&, std::span<const ad::Var<D>> v) { return ad::sum(ad::relu(v[0])); };
  const auto rep = ad::gradcheck(g, {Tensor<D>({1, 1, 2, 2}, std::vector<D>{0.0, 0.5, 0.0, -0.5})});
  EXPECT_EQ(rep.skipped, 2u);
  EXPECT_EQ(rep.checked, 2u);
  EXPECT_LT(rep.max_relative_error, 1e-9);
}

TEST(Gradcheck, ThirtyTwoBitWithinLooseBound) {
  ad::ScalarGraph<float> g = [](ad::Tape<float>&, std::span<const ad::Var<float>> v) {
    return ad::random_projection(ad::sigmoid(ad::conv2d<float>(v[0], v[1], std::nullopt)), 9);
  };
  Rng rng(4);
  ad::GradcheckOptions opt;
  opt.eps = 1e-2;
  const auto rep = ad::gradcheck(
      g, {uniform_tensor<float>({1, 2, 6, 6}, rng, 0.1, 0.9), uniform_tensor<float>({2, 2, 3, 3}, rng, -1, 1)}, opt);
  EXPECT_LT(rep.max_relative_error, 1e-2) << rep.worst;
}

TEST(Lpt1, RoundTripBitExact) {
  Rng rng(5);
  Tensor<float> t = uniform_tensor<float>({2, 3, 4, 5}, rng, -10, 10);
  t[0] = -0.0f;
  t[1] = 1e-40f;  // subnormal
  std::stringstream ss;
  write_lpt1(ss, t);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4 + 16 + 4 * t.numel());
  EXPECT_EQ(bytes.substr(0, 4), "LPT1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
  const auto back = read_lpt1(ss);
  ASSERT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), 4 * t.numel()), 0);
  std::stringstream again;
  write_lpt1(again, back);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Lpt1, RejectsCorruption) {
  std::stringstream ss;
  write_lpt1(ss, Tensor<float>({1, 1, 2, 2}, 1.0f));
  std::string b = ss.str();

  std::string bad = b;
  bad[0] = 'X';
  std::stringstream s1(bad);
  try {
    read_lpt1(s1);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::bad_magic);
  }
  std::stringstream s2(b.substr(0, b.size() - 1));
  try {
    read_lpt1(s2);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::truncated);
  }
  std::string huge = b;
  for (int i = 4; i < 20; ++i) huge[i] = '\xff';
  std::stringstream s3(huge);
  try {
    read_lpt1(s3);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_TRUE(e.kind() == FormatError::Kind::overflow || e.kind() == FormatError::Kind::truncated);
  }
}
