#include "canet/contextual_attention.hpp"

namespace canet {

AttentionParams init_attention(ParamStore& store, std::size_t fusion_channels, std::size_t reduction, Rng& rng,
                               bool zero_head) {
    const std::size_t c = fusion_channels;
    if (reduction == 0 || c % reduction != 0) {
        throw ConfigError("se_reduction " + std::to_string(reduction) + " must divide " + std::to_string(c));
    }
    if (c % 4 != 0) throw ConfigError("fusion_channels must be divisible by 4");
    const std::size_t squeezed = c / reduction;
    AttentionParams params;
    params.se_w1 = store.add("attention.se.w1", fan_in_uniform({c, squeezed}, c, rng));
    params.se_w2 = store.add("attention.se.w2", fan_in_uniform({squeezed, c}, squeezed, rng));
    params.fuse_weight = store.add("attention.fuse.weight", fan_in_uniform({c, c + 1, 1, 1}, c + 1, rng));
    params.fuse_bias = store.add("attention.fuse.bias", fan_in_uniform({c}, c + 1, rng));
    params.fuse_gamma = store.add("attention.fuse.bn.gamma", Tensor::full({c}, 1.0));
    params.fuse_beta = store.add("attention.fuse.bn.beta", Tensor::zeros({c}));
    params.fuse_stats.running_mean = store.add("attention.fuse.bn.running_mean", Tensor::zeros({c}), false);
    params.fuse_stats.running_var = store.add("attention.fuse.bn.running_var", Tensor::full({c}, 1.0), false);

    DecoderParams& d = params.decoder;
    d.up1 = ConvBnRelu::create(store, "decoder.block1", c, c / 2, 3, rng);
    d.up2 = ConvBnRelu::create(store, "decoder.block2", c / 2, c / 4, 3, rng);
    d.refine = ConvBnRelu::create(store, "decoder.block3", c / 4, c / 4, 3, rng);
    d.head_weight = store.add("decoder.head.weight", zero_head ? Tensor::zeros({1, c / 4, 1, 1})
                                                               : fan_in_uniform({1, c / 4, 1, 1}, c / 4, rng));
    d.head_bias = store.add("decoder.head.bias", zero_head ? Tensor::zeros({1}) : fan_in_uniform({1}, c / 4, rng));
    return params;
}

Tensor channel_weights(const Tensor& f, const AttentionParams& params) {
    Tensor squeezed = global_avg_pool(f);
    return sigmoid(matmul(relu(matmul(squeezed, params.se_w1)), params.se_w2));
}

Tensor recalibrate(const Tensor& f, const Tensor& weights, const Tensor& boundary, Tensor* scaled) {
    if (f.rank() != 4 || weights.shape() != Shape{f.dim(0), f.dim(1)}) {
        throw DimensionError("recalibrate: channel weights " + shape_str(weights.shape()) + " do not match feature " +
                             shape_str(f.shape()));
    }
    Tensor f_prime = mul(f, reshape(weights, {f.dim(0), f.dim(1), 1, 1}));
    if (scaled) *scaled = f_prime;
    if (!boundary.defined()) return f_prime;
    if (boundary.shape() != Shape{f.dim(0), 1, f.dim(2), f.dim(3)}) {
        throw DimensionError("recalibrate: boundary map " + shape_str(boundary.shape()) + " does not match feature " +
                             shape_str(f.shape()));
    }
    return add(f_prime, boundary);
}

Tensor spatial_normalize(const Tensor& f, const Tensor& ric, std::size_t grid_h, std::size_t grid_w) {
    if (f.rank() != 4 || ric.rank() != 3 || ric.dim(0) != f.dim(0) || ric.dim(1) != grid_h * grid_w ||
        ric.dim(2) != 1) {
        throw DimensionError("spatial_normalize: coefficients " + shape_str(ric.shape()) + " do not match feature " +
                             shape_str(f.shape()));
    }
    if (grid_h == 0 || grid_w == 0 || f.dim(2) % grid_h != 0 || f.dim(3) % grid_w != 0 ||
        f.dim(2) / grid_h != f.dim(3) / grid_w) {
        throw ConfigError("spatial_normalize: token grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                          " does not align with feature extent " + std::to_string(f.dim(2)) + "x" +
                          std::to_string(f.dim(3)));
    }
    const std::size_t factor = f.dim(2) / grid_h;
    Tensor map = resize_nearest(reshape(ric, {f.dim(0), 1, grid_h, grid_w}), factor);
    return mul(f, map);
}

Tensor fuse_icr(const Tensor& f_sn, const Tensor& icr, AttentionParams& params, Mode mode) {
    const Tensor parts[] = {icr, f_sn};
    Tensor mixed = conv2d(concat(parts, 1), params.fuse_weight, params.fuse_bias);
    return relu(batch_norm2d(mixed, params.fuse_gamma, params.fuse_beta, params.fuse_stats, mode));
}

Tensor decode(const Tensor& f, AttentionParams& params, Mode mode) {
    DecoderParams& d = params.decoder;
    Tensor h = d.up1(resize_nearest(f, 2), mode);
    h = d.up2(resize_nearest(h, 2), mode);
    // The head sees signed, zero-mean features. Behind a ReLU every channel is
    // nonnegative, so a zero-initialized head on a mostly-background mask
    // drives all its weights negative and can stall with no foreground.
    h = d.refine.normalized(h, mode);
    return sigmoid(conv2d(h, d.head_weight, d.head_bias));
}

}  // namespace canet
