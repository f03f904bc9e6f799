#pragma once

#include <functional>
#include <string>
#include <vector>

#include "canet/params.hpp"

namespace canet {

struct GradCheckOptions {
    double step = 1e-5;
    /// Denominator floor of the relative error, guarding near-zero gradients.
    double floor = 1e-6;
    /// When a step straddles a ReLU or clamp kink it is shrunk by this factor,
    /// up to `max_refinements` times.
    double shrink = 10.0;
    int max_refinements = 4;
    /// 0 checks every entry; otherwise an evenly spaced subset per tensor.
    std::size_t max_entries_per_tensor = 0;
};

struct GradCheckEntry {
    std::string tensor;
    std::size_t index = 0;
    double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradCheckReport {
    std::size_t checked = 0;
    std::size_t refined = 0;    // entries that needed a smaller step
    std::size_t unresolved = 0;  // entries whose every step straddled a kink
    GradCheckEntry worst;
    double max_rel_error() const { return worst.rel_error; }
};

double relative_error(double analytic, double numeric, double floor);

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences for every entry of `tensors`. `loss_fn` must rebuild the loss
/// from the current tensor values on each call.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Parameter>& tensors,
                                const GradCheckOptions& options = {});

}  // namespace canet
