#include "canet/cnn_stream.hpp"

namespace canet {

std::size_t EncoderParams::fusion_channels() const { return boundary_weight.dim(1); }

EncoderParams init_encoder(ParamStore& store, std::size_t in_channels, std::size_t fusion_channels, Rng& rng,
                           bool zero_head) {
    EncoderParams params;
    const std::size_t widths[] = {fusion_channels / 2, fusion_channels};
    std::size_t in = in_channels;
    for (std::size_t s = 0; s < 2; ++s) {
        const std::string prefix = "encoder.stage" + std::to_string(s + 1);
        EncoderStage stage;
        stage.first = ConvBnRelu::create(store, prefix + ".conv1", in, widths[s], 3, rng);
        stage.second = ConvBnRelu::create(store, prefix + ".conv2", widths[s], widths[s], 3, rng);
        params.stages.push_back(std::move(stage));
        in = widths[s];
    }
    params.boundary_weight = store.add("encoder.boundary_head.weight",
                                       zero_head ? Tensor::zeros({1, fusion_channels, 1, 1})
                                                 : fan_in_uniform({1, fusion_channels, 1, 1}, fusion_channels, rng));
    params.boundary_bias = store.add("encoder.boundary_head.bias",
                                     zero_head ? Tensor::zeros({1}) : fan_in_uniform({1}, fusion_channels, rng));
    return params;
}

FeaturePyramid encode(const Tensor& x, EncoderParams& params, Mode mode) {
    if (x.rank() != 4) throw DimensionError("encode: expected [B x C x H x W], got " + shape_str(x.shape()));
    const std::size_t factor = std::size_t{1} << params.stages.size();
    if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
        throw DimensionError("encode: input extents " + shape_str(x.shape()) + " not divisible by " +
                             std::to_string(factor));
    }
    FeaturePyramid pyramid;
    Tensor h = x;
    for (EncoderStage& stage : params.stages) {
        h = avg_pool2d(stage.second(stage.first(h, mode), mode), 2);
        pyramid.stages.push_back(h);
    }
    pyramid.fused = h;
    return pyramid;
}

Tensor boundary_head(const FeaturePyramid& pyramid, const EncoderParams& params) {
    const std::size_t factor = std::size_t{1} << pyramid.stages.size();
    Tensor logits = conv2d(pyramid.fused, params.boundary_weight, params.boundary_bias);
    return sigmoid(resize_nearest(logits, factor));
}

}  // namespace canet
