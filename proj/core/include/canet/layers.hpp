#pragma once

#include "canet/ops.hpp"
#include "canet/params.hpp"

namespace canet {

/// conv (no bias) -> batch norm -> ReLU. The bias is omitted because the
/// batch norm that follows removes it.
struct ConvBnRelu {
    Tensor weight;  // [out x in x k x k]
    Tensor gamma, beta;
    BatchNormStats stats;
    std::size_t pad = 0;

    static ConvBnRelu create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                             std::size_t kernel, Rng& rng);
    Tensor operator()(const Tensor& x, Mode mode);
    /// conv + BN without the ReLU.
    Tensor normalized(const Tensor& x, Mode mode);
};

}  // namespace canet
