#include "canet/adam.hpp"

#include <cmath>

namespace canet {

AdamState AdamState::init(const ParamStore& params, AdamOptions options) {
    AdamState state;
    state.options = options;
    for (const Parameter& p : params.entries()) {
        if (!p.trainable) continue;
        state.names.push_back(p.name);
        state.first_moment.emplace_back(p.tensor.numel(), 0.0);
        state.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
    return state;
}

void adam_step(ParamStore& params, AdamState& state, double lr) {
    std::vector<const Parameter*> trainable;
    for (const Parameter& p : params.entries()) {
        if (p.trainable) trainable.push_back(&p);
    }
    if (trainable.size() != state.names.size()) {
        throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.names.size()) +
                            " parameters, store has " + std::to_string(trainable.size()));
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        const Parameter& p = *trainable[i];
        if (p.name != state.names[i] || p.tensor.numel() != state.first_moment[i].size()) {
            throw ContractError("adam_step: optimizer state misaligned at parameter '" + p.name + "'");
        }
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.impl()->grad) {
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
        }
    }

    state.step += 1;
    const auto& o = state.options;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(o.beta1, t);
    const double correction2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        Tensor tensor = trainable[i]->tensor;
        const std::vector<double>& grad = tensor.impl()->grad;
        auto values = tensor.mutable_data();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad.empty() ? 0.0 : grad[j];
            m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
            v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + o.eps);
        }
    }
}

}  // namespace canet
