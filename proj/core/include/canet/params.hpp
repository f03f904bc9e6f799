#pragma once

#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "canet/tensor.hpp"

namespace canet {

struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;  // false for buffers such as batch-norm running statistics
};

/// Named tensors in registration order. Order is part of the checkpoint
/// format and of the optimizer state layout.
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor tensor, bool trainable = true);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::span<const Parameter> entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count(bool trainable_only = true) const;
    void zero_grad();

private:
    std::vector<Parameter> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using Rng = std::mt19937_64;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual fan-in scaled default.
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

}  // namespace canet
