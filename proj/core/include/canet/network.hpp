#pragma once

#include <cstdint>
#include <vector>

#include "canet/cnn_stream.hpp"
#include "canet/contextual_attention.hpp"
#include "canet/model_config.hpp"
#include "canet/transformer_stream.hpp"

namespace canet {

struct ForwardOutputs {
    Tensor mask;      // Y' [B x 1 x H x W]
    Tensor boundary;  // B  [B x 1 x H x W]
    Tensor icr;       // [B x 1 x H x W]
    Tensor ric;       // [B x N x 1]
    FusionTrace trace;
    std::vector<Tensor> attention;  // per Transformer layer, [(B*M) x N x N]
};

struct InitOptions {
    /// Zero the four prediction heads so every initial output is exactly 0.5.
    bool zero_heads = true;
};

/// CNN stream + Transformer stream fused by the contextual attention module.
class Network {
public:
    Network(const ModelConfig& config, std::uint64_t seed, InitOptions init = {});

    ForwardOutputs forward(const Tensor& images, Mode mode);

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    EncoderParams& encoder() { return encoder_; }
    TransformerParams& transformer() { return transformer_; }
    AttentionParams& attention() { return attention_; }

private:
    ModelConfig config_;
    ParamStore store_;
    EncoderParams encoder_;
    TransformerParams transformer_;
    AttentionParams attention_;
};

}  // namespace canet
