#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "sponge/errors.hpp"
#include "sponge/metrics.hpp"

using namespace sponge;

namespace {

Image make(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  const Tensor t = fixtures::random_tensor({c, h, w}, seed, lo, hi);
  return Image::from_tensor(t);
}

// Direct per-window formula with explicit loops.
double ssim_direct(const Image& a, const Image& b, std::size_t window) {
  const double c1 = std::pow(0.01 * a.range, 2), c2 = std::pow(0.03 * a.range, 2);
  const std::size_t wh = std::min({window, a.height, a.width}), ww = wh;
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < a.channels; ++c) {
    for (std::size_t y = 0; y + wh <= a.height; ++y) {
      for (std::size_t x = 0; x + ww <= a.width; ++x) {
        std::vector<double> pa, pb;
        for (std::size_t i = 0; i < wh; ++i)
          for (std::size_t j = 0; j < ww; ++j) {
            const std::size_t idx = (c * a.height + y + i) * a.width + x + j;
            pa.push_back(a.values[idx]);
            pb.push_back(b.values[idx]);
          }
        const double m = double(pa.size());
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < pa.size(); ++i) {
          ma += pa[i] / m;
          mb += pb[i] / m;
        }
        double va = 0, vb = 0, cov = 0;
        for (std::size_t i = 0; i < pa.size(); ++i) {
          va += (pa[i] - ma) * (pa[i] - ma) / m;
          vb += (pb[i] - mb) * (pb[i] - mb) / m;
          cov += (pa[i] - ma) * (pb[i] - mb) / m;
        }
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++n;
      }
    }
  }
  return total / double(n);
}

}  // namespace

TEST(Accuracy, Examples) {
  const int p[] = {1, 2, 3, 4}, t[] = {1, 2, 0, 4};
  EXPECT_DOUBLE_EQ(accuracy(p, t), 0.75);
  EXPECT_DOUBLE_EQ(accuracy(t, t), 1.0);
  const int one[] = {1};
  EXPECT_THROW(accuracy(std::span<const int>{}, std::span<const int>{}), DomainError);
  EXPECT_THROW(accuracy(one, t), DomainError);
}

TEST(Accuracy, InvariantUnderLabelPermutation) {
  const std::vector<int> p{0, 1, 2, 2, 1}, t{0, 2, 2, 1, 1};
  const int perm[] = {2, 0, 1};
  std::vector<int> pp, tp;
  for (int v : p) pp.push_back(perm[v]);
  for (int v : t) tp.push_back(perm[v]);
  EXPECT_DOUBLE_EQ(accuracy(pp, tp), accuracy(p, t));
}

TEST(Ssim, IdentityIsOne) {
  const Image a = make(3, 12, 10, 1);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, Symmetric) {
  const Image a = make(1, 16, 16, 2), b = make(1, 16, 16, 3);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 0.5);
}

TEST(Ssim, Bounded) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Image a = make(2, 9, 9, seed), b = make(2, 9, 9, seed * 31);
    EXPECT_LE(std::abs(ssim(a, b)), 1.0);
  }
}

TEST(Ssim, ConstantVersusShifted) {
  Image a = Image::from_tensor(Tensor({1, 8, 8}, 0.0f));
  Image b = Image::from_tensor(Tensor({1, 8, 8}, 1.0f));
  EXPECT_LT(ssim(a, b), 0.2);
}

TEST(Ssim, MatchesDirectFormula) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t h = seed < 4 ? 16 : 5 + seed % 7, w = seed < 4 ? 16 : 6 + seed % 5, c = 1 + seed % 3;
    const Image a = make(c, h, w, seed), b = make(c, h, w, seed + 100);
    for (std::size_t window : {3u, 8u, 20u}) {
      SsimParams p;
      p.window = window;
      EXPECT_NEAR(ssim(a, b, p), ssim_direct(a, b, window), 1e-6);
    }
  }
}

TEST(Ssim, RejectsBadInput) {
  const Image a = make(1, 8, 8, 1), b = make(1, 8, 9, 2);
  EXPECT_THROW(ssim(a, b), DomainError);
  SsimParams p;
  p.window = 0;
  EXPECT_THROW(ssim(a, a, p), DomainError);
}

TEST(Ssim, FromTensorClamps) {
  const Image a = Image::from_tensor(Tensor({2, 2}, std::vector<float>{-1, 0.5f, 2, 1}));
  EXPECT_EQ(a.values, (std::vector<double>{0.0, 0.5, 1.0, 1.0}));
  EXPECT_THROW(Image::from_tensor(Tensor({2, 2, 2, 2}, 0.0f)), DimensionError);
}

TEST(MeanSsim, FourSamples) {
  const ModelGraph ident = ModelBuilder({16}, 1).relu("r").build();
  const ModelGraph scale = ModelBuilder({16}, 1).tanh("t").build();
  const Tensor x = fixtures::random_tensor({4, 16}, 5, 0.0, 1.0);
  const Tensor y = forward(scale, x);
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Image a = Image::from_tensor(slice_rows(x, i, i + 1).reshaped({1, 4, 4}));
    const Image b = Image::from_tensor(slice_rows(y, i, i + 1).reshaped({1, 4, 4}));
    expect += ssim(a, b) / 4.0;
  }
  EXPECT_NEAR(mean_ssim(ident, scale, x, {1, 4, 4}, 1.0, 3), expect, 1e-12);
  EXPECT_NEAR(mean_ssim(ident, ident, x, {1, 4, 4}), 1.0, 1e-12);
  EXPECT_NEAR(mean_ssim_against(scale, x, x, {1, 4, 4}), expect, 1e-12);
  EXPECT_THROW(mean_ssim(ident, scale, x, {1, 5, 4}), DimensionError);
  const Tensor one = slice_rows(x, 2, 3);
  EXPECT_EQ(mean_ssim(ident, scale, one, {1, 4, 4}),
            ssim(Image::from_tensor(one.reshaped({1, 4, 4})), Image::from_tensor(forward(scale, one).reshaped({1, 4, 4}))));
  EXPECT_THROW(mean_ssim(ident, scale, Tensor(), {1, 4, 4}), DomainError);
}
