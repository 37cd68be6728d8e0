#include <gtest/gtest.h>

#include <numbers>

#include "denoise4d/loss_metrics.hpp"
#include "loss_oracle.hpp"
#include "test_util.hpp"

using namespace denoise4d;
using TD = nn::Tensor<double>;

namespace {

// C x N one-hot probabilities of a hard prediction.
TD one_hot(const std::vector<int>& pred, int classes) {
  const int n = static_cast<int>(pred.size());
  std::vector<double> v(static_cast<std::size_t>(classes) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(pred[i]) * n + i] = 1.0;
  return TD::from({classes, n}, v);
}

LabelMask mask(std::vector<std::uint8_t> v) { return LabelMask{std::move(v)}; }

}  // namespace

TEST(CrossEntropy, UniformTwoClassIsLn2) {
  const auto probs = TD::full({1, 2, 2, 2}, 0.5);
  const std::vector<int> t{0, 1, 1, 0};
  EXPECT_NEAR(cross_entropy(probs, std::span<const int>(t)).item(), std::numbers::ln2, 1e-15);
}

TEST(CrossEntropy, WeightsAndIgnore) {
  const auto probs = TD::from({2, 3}, {0.9, 0.2, 0.5, 0.1, 0.8, 0.5});
  const std::vector<int> t{0, 1, kIgnoreTarget};
  const std::vector<double> w{1.0, 3.0};
  const double expected = -(1.0 * std::log(0.9) + 3.0 * std::log(0.8)) / 4.0;
  EXPECT_NEAR(cross_entropy(probs, std::span<const int>(t), std::span<const double>(w)).item(), expected, 1e-14);
  const std::vector<int> bad{0, 2, 0};
  EXPECT_THROW(cross_entropy(probs, std::span<const int>(bad)), Error);
}

TEST(CrossEntropy, ZeroProbabilityIsFloored) {
  const auto probs = TD::from({2, 1}, {0.0, 1.0});
  const std::vector<int> t{0};
  EXPECT_NEAR(cross_entropy(probs, std::span<const int>(t)).item(), -std::log(1e-12), 1e-9);
}

TEST(Lovasz, JaccardGradientSmallCase) {
  // fg sorted = [1, 0, 1]: |fg| = 2.
  const std::vector<std::uint8_t> fg{1, 0, 1};
  const auto g = lovasz_jaccard_gradient<double>(fg);
  // J_1 = 1 - 1/2, J_2 = 1 - 1/3, J_3 = 1 - 0/3.
  EXPECT_NEAR(g[0], 0.5, 1e-15);
  EXPECT_NEAR(g[1], 2.0 / 3 - 0.5, 1e-15);
  EXPECT_NEAR(g[2], 1.0 - 2.0 / 3, 1e-15);
}

TEST(Lovasz, ExtensionMatchesSetFunctionOnBinaryErrors) {
  for (int n = 1; n <= 6; ++n) {
    test::for_each_labeling(n, 2, [&](const std::vector<int>& fg_v) {
      test::for_each_labeling(n, 2, [&](const std::vector<int>& m_v) {
        std::vector<std::uint8_t> fg(fg_v.begin(), fg_v.end());
        std::vector<double> err(m_v.begin(), m_v.end());
        int m = 0, uni = 0;
        for (int i = 0; i < n; ++i) {
          m += m_v[i];
          uni += m_v[i] || fg_v[i];
        }
        const double delta = uni == 0 ? 0.0 : static_cast<double>(m) / uni;
        ASSERT_NEAR(lovasz_extension<double>(err, fg), delta, 1e-12);
      });
    });
  }
}

TEST(Lovasz, HardPredictionsEqualMeanJaccardLoss) {
  for (int n = 1; n <= 5; ++n) {
    test::for_each_labeling(n, 3, [&](const std::vector<int>& truth) {
      test::for_each_labeling(n, 3, [&](const std::vector<int>& pred) {
        const double got = lovasz_softmax(one_hot(pred, 3), std::span<const int>(truth)).item();
        ASSERT_NEAR(got, test::mean_jaccard_loss(pred, truth), 1e-10);
      });
    });
  }
}

TEST(Lovasz, NonNegativeAndBoundedOnSoftInputs) {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(20));
    std::vector<double> v(2 * n);
    std::vector<int> t(n);
    for (int i = 0; i < n; ++i) {
      v[i] = rng.uniform();
      v[n + i] = 1 - v[i];
      t[i] = static_cast<int>(rng.below(2));
    }
    const double l = lovasz_softmax(TD::from({2, n}, v), std::span<const int>(t)).item();
    EXPECT_GE(l, -1e-12);
    EXPECT_LE(l, 1 + 1e-12);
  }
}

TEST(Lovasz, AllIgnoredIsZero) {
  const std::vector<int> t{kIgnoreTarget, kIgnoreTarget};
  EXPECT_EQ(lovasz_softmax(TD::full({2, 2}, 0.5), std::span<const int>(t)).item(), 0.0);
}

TEST(Lovasz, PerfectPredictionIsZero) {
  const std::vector<int> t{0, 1, 1, 0, 1};
  EXPECT_NEAR(total_loss(one_hot(t, 2), std::span<const int>(t)).item(), 0.0, 1e-10);
}

TEST(Metrics, IoUPrecisionRecall) {
  const auto pred = mask({1, 1, 0, 0}), truth = mask({1, 0, 0, 0});
  const auto c = confusion(pred, truth);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_EQ(c.tn, 2u);
  EXPECT_DOUBLE_EQ(iou_noise(pred, truth), 0.5);
  const auto pr = precision_recall(pred, truth);
  EXPECT_DOUBLE_EQ(pr.precision, 0.5);
  EXPECT_DOUBLE_EQ(pr.recall, 1.0);
}

TEST(Metrics, EmptyUnionConventions) {
  const auto none = mask({0, 0, 0});
  EXPECT_DOUBLE_EQ(iou_noise(none, none), 1.0);
  const auto pr = precision_recall(none, none);
  EXPECT_DOUBLE_EQ(pr.precision, 1.0);
  EXPECT_DOUBLE_EQ(pr.recall, 1.0);
  EXPECT_DOUBLE_EQ(iou_noise(mask({}), mask({})), 1.0);
  try {
    confusion(mask({0}), mask({0, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
}

TEST(Metrics, IoUInUnitIntervalAndSymmetric) {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint8_t> a(30), b(30);
    for (auto& x : a) x = rng.bernoulli(0.3);
    for (auto& x : b) x = rng.bernoulli(0.3);
    const double i1 = iou_noise(mask(a), mask(b)), i2 = iou_noise(mask(b), mask(a));
    EXPECT_GE(i1, 0.0);
    EXPECT_LE(i1, 1.0);
    EXPECT_EQ(i1, i2);
    EXPECT_EQ(iou_noise(mask(a), mask(a)), 1.0);
  }
}

TEST(Metrics, PixelConfusionSkipsIgnored) {
  const std::vector<std::uint8_t> pred{1, 1, 0};
  const std::vector<int> t{1, kIgnoreTarget, 0};
  const auto c = pixel_confusion(pred, t);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.total(), 2u);
}
