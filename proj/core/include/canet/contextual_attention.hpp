#pragma once

#include "canet/layers.hpp"

namespace canet {

/// Four blocks: (x2 up, conv3x3 C->C/2), (x2 up, conv3x3 C/2->C/4),
/// conv3x3 C/4->C/4, then a 1x1 C/4->1 head with sigmoid.
struct DecoderParams {
    ConvBnRelu up1, up2, refine;
    Tensor head_weight;  // [1 x C/4 x 1 x 1]
    Tensor head_bias;    // [1]
};

struct AttentionParams {
    Tensor se_w1;  // [C_f x C_f/r]
    Tensor se_w2;  // [C_f/r x C_f]
    Tensor fuse_weight;  // [C_f x (C_f+1) x 1 x 1], input channel 0 is ICR
    Tensor fuse_bias;    // [C_f]
    Tensor fuse_gamma, fuse_beta;
    BatchNormStats fuse_stats;
    DecoderParams decoder;
};

AttentionParams init_attention(ParamStore& store, std::size_t fusion_channels, std::size_t reduction, Rng& rng,
                               bool zero_head = true);

/// Intermediate tensors of one fusion pass.
struct FusionTrace {
    Tensor channel_weights;  // w_ch [B x C_f]
    Tensor recalibrated;     // f' = w_ch . f
    Tensor boundary_added;   // f~ = f' + B
    Tensor scaled;           // f_sn = RIC . f~
    Tensor fused;            // f~_sn
};

/// w_ch = sigmoid(W2 relu(W1 GAP(f))), [B x C_f]
Tensor channel_weights(const Tensor& f, const AttentionParams& params);

/// f' = w_ch . f (channel broadcast); f~ = f' + B (channel broadcast).
/// `boundary` is [B x 1 x h x w] or undefined (skipped). Returns f~; `scaled`
/// receives f' when given.
Tensor recalibrate(const Tensor& f, const Tensor& weights, const Tensor& boundary, Tensor* scaled = nullptr);

/// f_sn = upsample(RIC on the token grid) . f~. `ric` is [B x N x 1] with
/// N = grid_h * grid_w; the grid must tile f~ by an integer factor.
Tensor spatial_normalize(const Tensor& f, const Tensor& ric, std::size_t grid_h, std::size_t grid_w);

/// f~_sn = ReLU(BN(Conv1x1([ICR, f_sn]))). `icr` is [B x 1 x h x w].
Tensor fuse_icr(const Tensor& f_sn, const Tensor& icr, AttentionParams& params, Mode mode);

/// Y' = D(f~_sn), [B x 1 x 4h x 4w]
Tensor decode(const Tensor& f, AttentionParams& params, Mode mode);

}  // namespace canet
