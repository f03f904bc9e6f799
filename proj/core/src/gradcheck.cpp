#include "canet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "canet/ops.hpp"

namespace canet {

double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

struct Probe {
    double value;
    std::uint64_t pattern;
};

Probe evaluate(const std::function<Tensor()>& loss_fn) {
    NoGradGuard no_grad;
    ActivationPatternProbe probe;
    const double value = loss_fn().item();
    return {value, probe.fingerprint()};
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Parameter>& tensors,
                                const GradCheckOptions& options) {
    for (const Parameter& p : tensors) p.tensor.impl()->grad.clear();
    std::uint64_t base_pattern;
    {
        ActivationPatternProbe probe;
        Tensor loss = loss_fn();
        base_pattern = probe.fingerprint();
        backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (const Parameter& p : tensors) analytic.push_back(p.tensor.grad());

    GradCheckReport report;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
        Tensor tensor = tensors[t].tensor;
        auto values = tensor.mutable_data();
        const std::size_t n = values.size();
        const std::size_t stride =
            options.max_entries_per_tensor == 0 ? 1 : std::max<std::size_t>(1, n / options.max_entries_per_tensor);
        for (std::size_t i = 0; i < n; i += stride) {
            const double original = values[i];
            double h = options.step;
            double numeric = 0.0;
            bool resolved = false;
            for (int attempt = 0; attempt <= options.max_refinements; ++attempt) {
                values[i] = original + h;
                const Probe plus = evaluate(loss_fn);
                values[i] = original - h;
                const Probe minus = evaluate(loss_fn);
                values[i] = original;
                numeric = (plus.value - minus.value) / (2.0 * h);
                if (plus.pattern == base_pattern && minus.pattern == base_pattern) {
                    resolved = true;
                    if (attempt > 0) ++report.refined;
                    break;
                }
                h /= options.shrink;
            }
            if (!resolved) {
                ++report.unresolved;
                continue;
            }
            const double err = relative_error(analytic[t][i], numeric, options.floor);
            ++report.checked;
            if (err > report.worst.rel_error || report.checked == 1) {
                report.worst = {tensors[t].name, i, analytic[t][i], numeric, err};
            }
        }
    }
    return report;
}

}  // namespace canet
