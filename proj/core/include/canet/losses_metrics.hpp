#pragma once

#include <cstdint>

#include "canet/data.hpp"
#include "canet/model_config.hpp"
#include "canet/network.hpp"

namespace canet {

struct LossWeights {
    double segmentation = 1.0;  // lambda_1
    double boundary = 1.0;      // lambda_2
    double ric = 1.0;           // lambda_3

    /// Ablations force the weight of a removed module's loss to zero.
    LossWeights effective(const Ablation& ablation) const;
    void validate() const;
};

inline constexpr double kProbabilityClamp = 1e-7;

struct LossTerms {
    Tensor total;
    double segmentation = 0.0;  // unweighted term values
    double boundary = 0.0;
    double ric = 0.0;
};

/// lambda_1 BCE(Y', mask) + lambda_2 BCE(B, boundary) + lambda_3 MSE(RIC, ric).
/// Terms with zero weight are left out of the graph.
LossTerms joint_loss(const ForwardOutputs& outputs, const Batch& batch, const LossWeights& weights);

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::uint64_t total() const { return tp + tn + fp + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Foreground prediction is prob > threshold; gt is foreground when > 0.5.
ConfusionCounts confusion_counts(std::span<const double> prob, std::span<const double> gt, double threshold = 0.5);
ConfusionCounts confusion_counts(const Tensor& prob, const Tensor& gt, double threshold = 0.5);

struct SegmentationMetrics {
    double dsc = 0, sensitivity = 0, specificity = 0, accuracy = 0, miou = 0;
};

/// A ratio whose numerator and denominator are both zero evaluates to 1.
/// Throws ContractError on all-zero counts.
SegmentationMetrics metrics(const ConfusionCounts& counts);

}  // namespace canet
