#include "mmga/gradcheck.hpp"
#include "mmga/image_io.hpp"
#include "mmga/ops.hpp"
#include "mmga/tensor_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace mmga;

namespace {

Tensord random(const Shape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Tensord t(s);
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = u(rng);
  return t;
}

// Direct convolution, one output element at a time.
double conv_oracle(const Tensord& x, const Tensord& w, const Tensord& b, Index stride, Index pad, Index n, Index o,
                   Index y, Index xo) {
  double acc = b.defined() ? b.values()[o] : 0.0;
  const Index k = w.shape().h;
  for (Index c = 0; c < x.shape().c; ++c)
    for (Index i = 0; i < k; ++i)
      for (Index j = 0; j < k; ++j) {
        const Index iy = y * stride - pad + i, ix = xo * stride - pad + j;
        if (iy < 0 || ix < 0 || iy >= x.shape().h || ix >= x.shape().w) continue;
        acc += x.at(n, c, iy, ix) * w.at(o, c, i, j);
      }
  return acc;
}

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensorf t(Shape{2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.size(), 120);
  EXPECT_EQ(t.shape().spatial(), 20);
  EXPECT_FLOAT_EQ(t.at(1, 2, 3, 4), 1.5f);
  EXPECT_THROW(Tensorf(Shape{1, 1, 1, 2}, {1.0f}), Error);
}

TEST(Tensor, NonFiniteResultRaises) {
  Tensorf t(Shape{1, 1, 1, 2}, {1.0f, 2.0f});
  try {
    scale(t, std::numeric_limits<float>::infinity());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "numeric");
  }
}

TEST(Conv2d, IdentityOneByOne) {
  std::mt19937_64 rng(1);
  const Tensord x = random({2, 3, 4, 5}, rng);
  Tensord w(Shape{3, 3, 1, 1});
  for (Index i = 0; i < 3; ++i) w.at(i, i) = 1;
  EXPECT_TRUE((conv2d(x, w, Tensord{}).values() == x.values()).all());
}

TEST(Conv2d, AllOnesKernelCountsTaps) {
  const Tensorf x(Shape{1, 1, 3, 3}, 1.0f);
  const Tensorf w(Shape{1, 1, 3, 3}, 1.0f);
  const Tensorf y = conv2d(x, w, Tensorf{}, 1, 1);
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 1), 9.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 1), 6.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 4.0f);
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(2);
  const Tensord x = random({2, 3, 7, 6}, rng), w = random({4, 3, 3, 3}, rng), b = random({1, 4, 1, 1}, rng);
  const Tensord y = conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 3}));
  for (Index n = 0; n < 2; ++n)
    for (Index o = 0; o < 4; ++o)
      for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 3; ++j) EXPECT_NEAR(y.at(n, o, i, j), conv_oracle(x, w, b, 2, 1, n, o, i, j), 1e-12);
}

TEST(Conv2d, ShapeErrors) {
  EXPECT_THROW(conv2d(Tensorf(Shape{1, 3, 4, 4}), Tensorf(Shape{2, 2, 1, 1}), Tensorf{}), Error);
  EXPECT_THROW(conv2d(Tensorf(Shape{1, 1, 2, 2}), Tensorf(Shape{1, 1, 3, 3}), Tensorf{}), Error);
  const Tensorf y = conv2d(Tensorf(Shape{1, 512, 6, 2}), Tensorf(Shape{64, 512, 1, 1}), Tensorf{});
  EXPECT_EQ(y.shape(), (Shape{1, 64, 6, 2}));
}

TEST(Linear, HandComputed) {
  const Tensorf x(Shape{1, 2, 1, 1}, {1, 2});
  const Tensorf w(Shape{2, 2, 1, 1}, {1, 1, 1, -1});
  const Tensorf b(Shape{1, 2, 1, 1}, {0, 0});
  const Tensorf y = linear(x, w, b);
  EXPECT_FLOAT_EQ(y.values()[0], 3);
  EXPECT_FLOAT_EQ(y.values()[1], -1);
  EXPECT_THROW(linear(x, Tensorf(Shape{2, 3, 1, 1})), Error);
}

TEST(Pooling, Means) {
  const Tensorf x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_FLOAT_EQ(global_avg_pool(x).item(), 2.5f);
  const Tensorf block(Shape{1, 1, 2, 2}, {0, 0, 4, 4});
  EXPECT_FLOAT_EQ(avg_pool_2x2(block).item(), 2.0f);
  EXPECT_EQ(avg_pool_2x2(Tensorf(Shape{1, 64, 48, 16})).shape(), (Shape{1, 64, 24, 8}));
  EXPECT_THROW(avg_pool_2x2(Tensorf(Shape{1, 1, 3, 2})), Error);
}

TEST(Pooling, MaxPoolMatchesLoop) {
  std::mt19937_64 rng(3);
  const Tensord x = random({2, 2, 7, 6}, rng);
  const Tensord y = max_pool2d(x, 3, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 4, 3}));
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 2; ++c)
      for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 3; ++j) {
          double best = -1e300;
          for (Index a = 0; a < 3; ++a)
            for (Index b = 0; b < 3; ++b) {
              const Index yy = 2 * i - 1 + a, xx = 2 * j - 1 + b;
              if (yy >= 0 && xx >= 0 && yy < 7 && xx < 6) best = std::max(best, x.at(n, c, yy, xx));
            }
          EXPECT_EQ(y.at(n, c, i, j), best);
        }
}

TEST(Activations, Values) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensord::scalar(0)).item(), 0.5);
  EXPECT_NEAR(sigmoid(Tensord::scalar(std::log(3.0))).item(), 0.75, 1e-15);
  const Tensorf r = relu(Tensorf(Shape{1, 2, 1, 1}, {-3, 3}));
  EXPECT_EQ(r.values()[0], 0);
  EXPECT_EQ(r.values()[1], 3);
}

TEST(BatchNorm, EvalIdentityAndTrainMoments) {
  std::mt19937_64 rng(4);
  Tensord x = random({4, 2, 3, 3}, rng);
  BatchNormStats<double> stats(2);
  const Tensord ones(Shape{1, 2, 1, 1}, 1.0), zeros(Shape{1, 2, 1, 1}, 0.0);
  const Tensord same = batch_norm(x, ones, zeros, stats, Mode::Eval);
  EXPECT_TRUE(((same.values() - x.values()).abs() < 1e-5).all());

  x.values() += 5.0;
  const Tensord gamma(Shape{1, 2, 1, 1}, 2.0), beta(Shape{1, 2, 1, 1}, 1.0);
  const Tensord y = batch_norm(x, gamma, beta, stats, Mode::Train);
  for (Index c = 0; c < 2; ++c) {
    double mean = 0, sq = 0, raw_mean = 0, raw_sq = 0;
    const Index m = 4 * 9;
    for (Index n = 0; n < 4; ++n)
      for (Index p = 0; p < 9; ++p) {
        mean += y.at(n, c, p / 3, p % 3);
        raw_mean += x.at(n, c, p / 3, p % 3);
      }
    mean /= m;
    raw_mean /= m;
    for (Index n = 0; n < 4; ++n)
      for (Index p = 0; p < 9; ++p) {
        sq += std::pow(y.at(n, c, p / 3, p % 3) - mean, 2);
        raw_sq += std::pow(x.at(n, c, p / 3, p % 3) - raw_mean, 2);
      }
    EXPECT_NEAR(mean, 1.0, 1e-9);
    EXPECT_NEAR(std::sqrt(sq / m), 2.0, 1e-4);
    EXPECT_NEAR(stats.mean[c], 0.1 * raw_mean, 1e-12);
    EXPECT_NEAR(stats.var[c], 0.9 + 0.1 * raw_sq / (m - 1), 1e-12);
  }
}

TEST(Mul, BroadcastMatchesLoop) {
  std::mt19937_64 rng(5);
  const Tensord a = random({2, 3, 2, 2}, rng);
  const Tensord same = random({2, 3, 2, 2}, rng), chan = random({2, 1, 2, 2}, rng), spat = random({2, 3, 1, 1}, rng);
  const Tensord p1 = mul(a, same), p2 = mul(a, chan), p3 = mul(spat, a);
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 3; ++c)
      for (Index h = 0; h < 2; ++h)
        for (Index w = 0; w < 2; ++w) {
          EXPECT_EQ(p1.at(n, c, h, w), a.at(n, c, h, w) * same.at(n, c, h, w));
          EXPECT_EQ(p2.at(n, c, h, w), a.at(n, c, h, w) * chan.at(n, 0, h, w));
          EXPECT_EQ(p3.at(n, c, h, w), a.at(n, c, h, w) * spat.at(n, c, 0, 0));
        }
  const Tensorf s(Shape{1, 1, 2, 2}, 1.5f), c(Shape{1, 4, 1, 1}, 0.5f);
  EXPECT_TRUE((mul(s, c).values() == 0.75f).all());
  EXPECT_THROW(mul(Tensorf(Shape{1, 3, 2, 2}), Tensorf(Shape{1, 2, 2, 2})), Error);
}

TEST(ConcatNormalize, Contract) {
  const Tensorf a(Shape{1, 2, 1, 1}, {3, 4});
  const Tensorf n = l2_normalize(a);
  EXPECT_FLOAT_EQ(n.values()[0], 0.6f);
  EXPECT_FLOAT_EQ(n.values()[1], 0.8f);
  EXPECT_TRUE(((l2_normalize(n).values() - n.values()).abs() < 1e-7f).all());
  const Tensorf cat = concat_channels(std::vector{Tensorf(Shape{2, 1024, 1, 1}), Tensorf(Shape{2, 512, 1, 1}),
                                                  Tensorf(Shape{2, 512, 1, 1})});
  EXPECT_EQ(cat.shape(), (Shape{2, 2048, 1, 1}));
  try {
    l2_normalize(Tensorf(Shape{1, 3, 1, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), "degenerate");
  }
}

TEST(Backward, SumAndSquare) {
  Tensord x(Shape{1, 3, 1, 1}, {1, -2, 3});
  x.set_requires_grad();
  sum(x).backward();
  EXPECT_TRUE((x.grad() == 1.0).all());
  x.zero_grad();
  sum(mul(x, x)).backward();
  EXPECT_TRUE((x.grad() == 2.0 * x.values()).all());
  EXPECT_THROW(mul(x, x).backward(), Error);
}

TEST(Backward, AccumulatesAcrossPasses) {
  Tensord x(Shape{1, 2, 1, 1}, {1, 2});
  x.set_requires_grad();
  sum(scale(x, 3.0)).backward();
  sum(x).backward();
  EXPECT_TRUE((x.grad() == 4.0).all());
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Tensord x(Shape{1, 2, 1, 1}, {1, 2});
  x.set_requires_grad();
  NoGradGuard guard;
  const Tensord y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(TensorIO, RoundTripAndMagic) {
  std::mt19937_64 rng(6);
  const Tensorf t = cast<float>(random({2, 3, 4, 1}, rng));
  std::stringstream ss;
  write_tensor(ss, t);
  EXPECT_EQ(ss.str().substr(0, 8), "MMGA-TNS");
  EXPECT_EQ(ss.str().size(), 8u + 16u + 4u * 24u);
  const Tensorf back = read_tensor(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_TRUE((back.values() == t.values()).all());
  std::stringstream bad("NOT-A-TENSOR....");
  EXPECT_THROW(read_tensor(bad), Error);
}

TEST(ImageIO, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "mmga_image_io";
  std::filesystem::create_directories(dir);
  RgbImage img(3, 2);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 13);
  write_ppm(dir / "a.ppm", img);
  EXPECT_EQ(read_ppm(dir / "a.ppm"), img);
  ByteMap map(2, 3);
  map << 0, 1, 2, 17, 18, 19;
  write_pgm(dir / "a.pgm", map);
  EXPECT_TRUE((read_pgm(dir / "a.pgm") == map).all());
  EXPECT_THROW(read_ppm(dir / "a.pgm"), Error);
  EXPECT_THROW(read_pgm(dir / "missing.pgm"), Error);
}

TEST(GradientSuite, EveryOperatorWithinTolerance) {
  const GradcheckReport report = run_gradcheck(1e-3, 1e-4, 11);
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " max rel err " << e.max_rel_error;
  EXPECT_GE(report.entries.size(), 30u);
}
