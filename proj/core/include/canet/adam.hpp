#pragma once

#include <cstdint>
#include <vector>

#include "canet/params.hpp"

namespace canet {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers aligned with the trainable entries of a
/// ParamStore, in registration order.
struct AdamState {
    AdamOptions options;
    std::uint64_t step = 0;
    std::vector<std::string> names;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    static AdamState init(const ParamStore& params, AdamOptions options = {});
};

/// One bias-corrected Adam update from the accumulated gradients. A parameter
/// without a gradient is treated as having a zero gradient. Throws
/// NumericalError naming the first parameter with a non-finite gradient,
/// before anything is modified.
void adam_step(ParamStore& params, AdamState& state, double lr);

}  // namespace canet
