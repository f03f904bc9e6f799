#include "canet/network.hpp"

namespace canet {

Network::Network(const ModelConfig& config, std::uint64_t seed, InitOptions init) : config_(config) {
    config_.validate();
    Rng rng(seed);
    encoder_ = init_encoder(store_, config_.channels, config_.fusion_channels, rng, init.zero_heads);
    transformer_ = init_transformer(store_,
                                    {config_.channels, config_.height, config_.width, config_.patch, config_.embed_dim,
                                     config_.layers, config_.heads},
                                    rng, init.zero_heads);
    attention_ = init_attention(store_, config_.fusion_channels, config_.se_reduction, rng, init.zero_heads);
}

ForwardOutputs Network::forward(const Tensor& images, Mode mode) {
    const ModelConfig& c = config_;
    if (images.rank() != 4 || images.dim(1) != c.channels || images.dim(2) != c.height || images.dim(3) != c.width) {
        throw DimensionError("network expects [B x " + std::to_string(c.channels) + " x " + std::to_string(c.height) +
                             " x " + std::to_string(c.width) + "], got " + shape_str(images.shape()));
    }
    const std::size_t batch = images.dim(0);
    const std::size_t stride = ModelConfig::kFusionStride;
    ForwardOutputs out;

    FeaturePyramid pyramid = encode(images, encoder_, mode);
    const Tensor& f = pyramid.fused;
    out.boundary = boundary_head(pyramid, encoder_);

    if (c.ablation.no_transformer) {
        out.ric = Tensor::full({batch, c.tokens(), 1}, 1.0);
        out.icr = Tensor::full({batch, 1, c.height, c.width}, 0.5);
    } else {
        TokenSequence seq = run_transformer(images, transformer_);
        out.icr = icr_head(seq.last(), transformer_, c.height, c.width);
        out.ric = ric_head(seq.last(), transformer_);
        out.attention = std::move(seq.attention);
    }

    const Tensor boundary_small = c.ablation.no_boundary ? Tensor() : downsample_nearest(out.boundary, stride);
    const Tensor icr_small = downsample_nearest(out.icr, stride);
    FusionTrace& trace = out.trace;
    if (c.ablation.no_ctx_attention) {
        trace.channel_weights = Tensor::full({batch, c.fusion_channels}, 1.0);
        trace.recalibrated = f;
        trace.boundary_added = boundary_small.defined() ? add(f, boundary_small) : f;
        trace.scaled = trace.boundary_added;
        const Tensor parts[] = {icr_small, trace.boundary_added};
        trace.fused = conv2d(concat(parts, 1), attention_.fuse_weight, attention_.fuse_bias);
    } else {
        trace.channel_weights = channel_weights(f, attention_);
        trace.boundary_added = recalibrate(f, trace.channel_weights, boundary_small, &trace.recalibrated);
        trace.scaled = spatial_normalize(trace.boundary_added, out.ric, c.grid_height(), c.grid_width());
        trace.fused = fuse_icr(trace.scaled, icr_small, attention_, mode);
    }
    out.mask = decode(trace.fused, attention_, mode);
    return out;
}

}  // namespace canet
