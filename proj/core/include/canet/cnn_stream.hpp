#pragma once

#include <vector>

#include "canet/layers.hpp"

namespace canet {

struct EncoderStage {
    ConvBnRelu first, second;
};

/// Scratch convolutional encoder plus the boundary head Conv_b.
struct EncoderParams {
    std::vector<EncoderStage> stages;
    Tensor boundary_weight;  // [1 x C_f x 1 x 1]
    Tensor boundary_bias;    // [1]

    std::size_t fusion_channels() const;
};

/// Two stages (C_f/2, C_f) give the fusion feature at 1/4 resolution.
/// Heads start at zero when `zero_head` is set.
EncoderParams init_encoder(ParamStore& store, std::size_t in_channels, std::size_t fusion_channels, Rng& rng,
                           bool zero_head = true);

struct FeaturePyramid {
    std::vector<Tensor> stages;  // per-stage outputs, each at half the previous extent
    Tensor fused;                // f: the last stage, [B x C_f x H/4 x W/4]
};

/// Each stage: conv3x3 -> BN -> ReLU -> conv3x3 -> BN -> ReLU -> 2x2 average pool.
FeaturePyramid encode(const Tensor& x, EncoderParams& params, Mode mode);

/// B = sigmoid(upsample_x4(Conv_b(f))), [B x 1 x H x W].
Tensor boundary_head(const FeaturePyramid& pyramid, const EncoderParams& params);

}  // namespace canet
