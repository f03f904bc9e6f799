#include "canet/losses_metrics.hpp"

#include <cmath>

namespace canet {

LossWeights LossWeights::effective(const Ablation& ablation) const {
    LossWeights w = *this;
    if (ablation.no_boundary) w.boundary = 0.0;
    if (ablation.no_transformer) w.ric = 0.0;
    return w;
}

void LossWeights::validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(segmentation) || !ok(boundary) || !ok(ric)) throw ConfigError("loss weights must be finite and nonnegative");
    if (segmentation == 0.0 && boundary == 0.0 && ric == 0.0) throw ConfigError("at least one loss weight must be positive");
}

LossTerms joint_loss(const ForwardOutputs& outputs, const Batch& batch, const LossWeights& weights) {
    weights.validate();
    auto expect = [](const Tensor& a, const Tensor& b, const char* what) {
        if (!a.defined() || !b.defined() || a.shape() != b.shape()) {
            throw ContractError(std::string("joint_loss: misaligned ") + what +
                                (a.defined() && b.defined() ? " " + shape_str(a.shape()) + " vs " + shape_str(b.shape())
                                                            : std::string()));
        }
    };
    expect(outputs.mask, batch.masks, "mask");
    expect(outputs.boundary, batch.boundaries, "boundary");
    expect(outputs.ric, batch.ric, "ric");

    LossTerms terms;
    Tensor total;
    auto accumulate = [&](double weight, const Tensor& term, double& value) {
        value = term.item();
        if (weight == 0.0) return;
        Tensor weighted = scale(term, weight);
        total = total.defined() ? add(total, weighted) : weighted;
    };
    accumulate(weights.segmentation, binary_cross_entropy(outputs.mask, batch.masks, kProbabilityClamp),
               terms.segmentation);
    accumulate(weights.boundary, binary_cross_entropy(outputs.boundary, batch.boundaries, kProbabilityClamp),
               terms.boundary);
    accumulate(weights.ric, mse_loss(outputs.ric, batch.ric), terms.ric);
    terms.total = total;
    return terms;
}

ConfusionCounts confusion_counts(std::span<const double> prob, std::span<const double> gt, double threshold) {
    if (prob.size() != gt.size()) throw ContractError("confusion_counts: prediction and ground truth differ in size");
    ConfusionCounts c;
    for (std::size_t i = 0; i < prob.size(); ++i) {
        const bool pred = prob[i] > threshold;
        const bool truth = gt[i] > 0.5;
        if (pred && truth) ++c.tp;
        else if (!pred && !truth) ++c.tn;
        else if (pred) ++c.fp;
        else ++c.fn;
    }
    return c;
}

ConfusionCounts confusion_counts(const Tensor& prob, const Tensor& gt, double threshold) {
    if (prob.numel() != gt.numel()) {
        throw ContractError("confusion_counts: " + shape_str(prob.shape()) + " vs " + shape_str(gt.shape()));
    }
    return confusion_counts(prob.data(), gt.data(), threshold);
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return num == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

SegmentationMetrics metrics(const ConfusionCounts& c) {
    if (c.total() == 0) throw ContractError("metrics: confusion counts are all zero");
    SegmentationMetrics m;
    m.dsc = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    m.sensitivity = ratio(c.tp, c.tp + c.fn);
    m.specificity = ratio(c.tn, c.tn + c.fp);
    m.accuracy = ratio(c.tp + c.tn, c.total());
    m.miou = ratio(c.tp, c.tp + c.fp + c.fn);
    return m;
}

}  // namespace canet
