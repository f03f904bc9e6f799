#include "canet/params.hpp"

#include <cmath>

namespace canet {

Tensor ParamStore::add(const std::string& name, Tensor tensor, bool trainable) {
    if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(trainable);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, tensor, trainable});
    return tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

std::size_t ParamStore::scalar_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const Parameter& p : entries_) {
        if (p.trainable || !trainable_only) n += p.tensor.numel();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (Parameter& p : entries_) p.tensor.zero_grad();
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = dist(rng);
    return t;
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) v = dist(rng);
    return t;
}

}  // namespace canet
