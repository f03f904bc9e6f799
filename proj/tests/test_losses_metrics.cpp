#include <cmath>

#include "canet/losses_metrics.hpp"
#include "canet/network.hpp"
#include "test_util.hpp"

using namespace canet;
using canet::testing::random_tensor;

namespace {

struct Case {
    ForwardOutputs out;
    Batch batch;
};

Tensor binary(Rng& rng, Shape shape, double density = 0.5) {
    std::bernoulli_distribution coin(density);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = coin(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

Case random_case(Rng& rng) {
    Case c;
    c.batch.masks = binary(rng, {2, 1, 8, 8});
    c.batch.boundaries = binary(rng, {2, 1, 8, 8}, 0.2);
    c.batch.ric = random_tensor({2, 4, 1}, rng, 0, 1, false);
    c.out.mask = random_tensor({2, 1, 8, 8}, rng, 0.01, 0.99);
    c.out.boundary = random_tensor({2, 1, 8, 8}, rng, 0.01, 0.99);
    c.out.ric = random_tensor({2, 4, 1}, rng, 0.01, 0.99);
    return c;
}

// Mirror of the metric definitions, written independently.
double safe_div(double num, double den) { return den == 0.0 ? (num == 0.0 ? 1.0 : 0.0) : num / den; }

}  // namespace

TEST(JointLoss, PerfectPredictionsHitTheClampBound) {
    Rng rng(1);
    Case c = random_case(rng);
    c.out.mask = c.batch.masks.clone();
    c.out.boundary = c.batch.boundaries.clone();
    c.out.ric = c.batch.ric.clone();
    LossWeights w{1.0, 2.0, 3.0};
    LossTerms t = joint_loss(c.out, c.batch, w);
    EXPECT_LE(t.total.item(), 1.0 * 1.7e-6 + 2.0 * 1.7e-6);
    EXPECT_GE(t.total.item(), 0.0);
    EXPECT_EQ(t.ric, 0.0);
}

TEST(JointLoss, HalfProbabilityGivesLn2) {
    Rng rng(2);
    Case c = random_case(rng);
    std::vector<double> half(128, 0.0);
    std::fill(half.begin(), half.begin() + 64, 1.0);
    c.batch.masks = Tensor::from({2, 1, 8, 8}, half);
    c.out.mask = Tensor::full({2, 1, 8, 8}, 0.5);
    LossTerms t = joint_loss(c.out, c.batch, {1.0, 0.0, 0.0});
    EXPECT_NEAR(t.total.item(), std::log(2.0), 1e-15);
}

TEST(JointLoss, SegmentationOnlyEqualsBce) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Case c = random_case(rng);
        LossTerms t = joint_loss(c.out, c.batch, {1.0, 0.0, 0.0});
        EXPECT_EQ(t.total.item(), binary_cross_entropy(c.out.mask, c.batch.masks, kProbabilityClamp).item());
        EXPECT_EQ(t.total.item(), t.segmentation);
    }
}

TEST(JointLoss, WeightedSumOfTermsAndNonnegative) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Case c = random_case(rng);
        const LossWeights w{0.5, 1.5, 2.0};
        LossTerms t = joint_loss(c.out, c.batch, w);
        EXPECT_NEAR(t.total.item(), 0.5 * t.segmentation + 1.5 * t.boundary + 2.0 * t.ric, 1e-14);
        EXPECT_GE(t.total.item(), 0.0);
    }
}

TEST(JointLoss, GradientsMatchFiniteDifferences) {
    Rng rng(5);
    Case c = random_case(rng);
    auto loss = [&] { return joint_loss(c.out, c.batch, {1.0, 0.7, 1.3}).total; };
    EXPECT_GRADS_MATCH(canet::testing::fd_check(loss, {c.out.mask, c.out.boundary, c.out.ric}), 1e-4);
}

TEST(JointLoss, NearStationaryAtTheTarget) {
    // Logits that put every probability on the clamp edge next to its target.
    Rng rng(6);
    Tensor mask = binary(rng, {1, 1, 8, 8});
    const double edge = std::log((1.0 - kProbabilityClamp) / kProbabilityClamp);
    for (double margin : {0.0, 5.0}) {
        std::vector<double> z(64);
        for (std::size_t i = 0; i < 64; ++i) z[i] = (mask[i] > 0.5 ? 1.0 : -1.0) * (edge + margin);
        Tensor logits = Tensor::from({1, 1, 8, 8}, z, true);
        backward(binary_cross_entropy(sigmoid(logits), mask, kProbabilityClamp));
        for (double g : logits.grad()) EXPECT_LE(std::abs(g) * 64, 2e-7);
    }
}

TEST(JointLoss, MisalignedShapesAreContractErrors) {
    Rng rng(7);
    Case c = random_case(rng);
    c.out.ric = Tensor::full({2, 5, 1}, 0.5);
    EXPECT_THROW(joint_loss(c.out, c.batch, {}), ContractError);
    c = random_case(rng);
    c.out.boundary = Tensor();
    EXPECT_THROW(joint_loss(c.out, c.batch, {}), ContractError);
}

TEST(LossWeights, AblationsAndValidation) {
    const LossWeights w{1.0, 2.0, 3.0};
    EXPECT_EQ(w.effective({true, false, false}).boundary, 0.0);
    EXPECT_EQ(w.effective({false, true, false}).ric, 0.0);
    EXPECT_EQ(w.effective({false, false, true}).ric, 3.0);
    EXPECT_THROW((LossWeights{0.0, 0.0, 0.0}.validate()), ConfigError);
    EXPECT_THROW((LossWeights{-1.0, 1.0, 1.0}.validate()), ConfigError);
    EXPECT_THROW((LossWeights{NAN, 1.0, 1.0}.validate()), ConfigError);
}

TEST(Confusion, PerfectAndInvertedPredictions) {
    Rng rng(8);
    Tensor gt = binary(rng, {1, 16, 16});
    ConfusionCounts same = confusion_counts(gt, gt);
    EXPECT_EQ(same.fp + same.fn, 0u);
    EXPECT_EQ(same.total(), 256u);
    std::vector<double> inv(256);
    for (std::size_t i = 0; i < 256; ++i) inv[i] = 1.0 - gt[i];
    ConfusionCounts flipped = confusion_counts(Tensor::from({1, 16, 16}, inv), gt);
    EXPECT_EQ(flipped.tp + flipped.tn, 0u);
}

TEST(Confusion, MatchesPixelLoop) {
    Rng rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor prob = random_tensor({1, 32, 32}, rng, 0, 1, false);
        Tensor gt = binary(rng, {1, 32, 32}, 0.1 + 0.8 * (trial % 10) / 9.0);
        ConfusionCounts want;
        for (std::size_t i = 0; i < 1024; ++i) {
            const int p = prob[i] > 0.5, g = gt[i] == 1.0;
            want.tp += p && g;
            want.tn += !p && !g;
            want.fp += p && !g;
            want.fn += !p && g;
        }
        ASSERT_EQ(confusion_counts(prob, gt), want);
    }
    EXPECT_THROW(confusion_counts(Tensor::zeros({4}), Tensor::zeros({5})), ContractError);
}

TEST(Metrics, WorkedExamples) {
    SegmentationMetrics m = metrics({2, 0, 1, 1});
    EXPECT_DOUBLE_EQ(m.dsc, 4.0 / 6.0);
    EXPECT_EQ(m.miou, 0.5);
    EXPECT_EQ(m.specificity, 0.0);
    SegmentationMetrics perfect = metrics({50, 50, 0, 0});
    for (double v : {perfect.dsc, perfect.sensitivity, perfect.specificity, perfect.accuracy, perfect.miou}) {
        EXPECT_EQ(v, 1.0);
    }
    SegmentationMetrics empty = metrics({0, 10, 0, 0});
    EXPECT_EQ(empty.dsc, 1.0);
    EXPECT_EQ(empty.sensitivity, 1.0);
    EXPECT_THROW(metrics({}), ContractError);
}

TEST(Metrics, MatchIndependentFormulas) {
    Rng rng(10);
    std::uniform_int_distribution<std::uint64_t> count(0, 5000);
    std::bernoulli_distribution zero(0.15);
    for (int trial = 0; trial < 1000; ++trial) {
        ConfusionCounts c{zero(rng) ? 0 : count(rng), zero(rng) ? 0 : count(rng), zero(rng) ? 0 : count(rng),
                          zero(rng) ? 0 : count(rng)};
        if (c.total() == 0) c.tn = 1;
        const double tp = c.tp, tn = c.tn, fp = c.fp, fn = c.fn;
        const SegmentationMetrics m = metrics(c);
        ASSERT_NEAR(m.dsc, safe_div(2 * tp, 2 * tp + fp + fn), 1e-15);
        ASSERT_NEAR(m.sensitivity, safe_div(tp, tp + fn), 1e-15);
        ASSERT_NEAR(m.specificity, safe_div(tn, tn + fp), 1e-15);
        ASSERT_NEAR(m.accuracy, safe_div(tp + tn, tp + tn + fp + fn), 1e-15);
        ASSERT_NEAR(m.miou, safe_div(tp, tp + fp + fn), 1e-15);
        ASSERT_NEAR(m.dsc, 2 * m.miou / (1 + m.miou), 1e-15);
        ASSERT_GE(m.dsc, m.miou);
        ASSERT_EQ(m.dsc == m.miou, c.fp + c.fn == 0 || c.tp == 0);
        for (double v : {m.dsc, m.sensitivity, m.specificity, m.accuracy, m.miou}) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }
}
