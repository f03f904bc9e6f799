#include "canet/layers.hpp"

namespace canet {

ConvBnRelu ConvBnRelu::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                              std::size_t kernel, Rng& rng) {
    ConvBnRelu layer;
    layer.weight = store.add(prefix + ".weight", fan_in_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng));
    layer.gamma = store.add(prefix + ".bn.gamma", Tensor::full({out}, 1.0));
    layer.beta = store.add(prefix + ".bn.beta", Tensor::zeros({out}));
    layer.stats.running_mean = store.add(prefix + ".bn.running_mean", Tensor::zeros({out}), false);
    layer.stats.running_var = store.add(prefix + ".bn.running_var", Tensor::full({out}, 1.0), false);
    layer.pad = kernel / 2;
    return layer;
}

Tensor ConvBnRelu::normalized(const Tensor& x, Mode mode) {
    return batch_norm2d(conv2d(x, weight, Tensor(), 1, pad), gamma, beta, stats, mode);
}

Tensor ConvBnRelu::operator()(const Tensor& x, Mode mode) { return relu(normalized(x, mode)); }

}  // namespace canet
