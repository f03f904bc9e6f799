#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "canet/tensor.hpp"

namespace canet {

// Linear algebra ------------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product over the leading axis: [b x m x k] . [b x k x n] -> [b x m x n]
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[... x in] . w[in x out] + bias[out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Shape manipulation ----------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

// Elementwise -----------------------------------------------------------------

// Binary ops broadcast numpy-style over operands of equal rank: every extent
// must match or be 1 on one side.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

enum class Activation { relu, sigmoid };
Tensor activation(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }

Tensor softmax(const Tensor& x, std::size_t axis);

// Normalization ---------------------------------------------------------------

/// Normalizes over the last axis; eps is added to the variance inside the sqrt.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

enum class Mode { train, eval };

struct BatchNormStats {
    Tensor running_mean;  // [C], starts at 0
    Tensor running_var;   // [C], starts at 1
    static BatchNormStats init(std::size_t channels);
};

/// Train mode normalizes with batch statistics and updates `stats` by an
/// exponential moving average (unbiased variance). Eval mode reads `stats`.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                    double momentum = 0.1, double eps = 1e-5);

// Spatial ---------------------------------------------------------------------

/// Cross-correlation. x[B x C x H x W], w[O x C x k x k], bias[O] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride = 1, std::size_t pad = 0);
/// [B x C x H x W] -> [B x C]
Tensor global_avg_pool(const Tensor& x);
/// Mean over non-overlapping factor x factor windows.
Tensor avg_pool2d(const Tensor& x, std::size_t factor);
/// Replicates each value into a factor x factor block.
Tensor resize_nearest(const Tensor& x, std::size_t factor);
/// Keeps the top-left value of each factor x factor block.
Tensor downsample_nearest(const Tensor& x, std::size_t factor);

// Reductions and losses -------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean binary cross-entropy with predictions clamped to [clamp, 1 - clamp].
Tensor binary_cross_entropy(const Tensor& prob, const Tensor& target, double clamp = 1e-7);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Fingerprints which side of every non-differentiable point (ReLU at 0, the
/// BCE clamp) each evaluated element falls on. Finite-difference checks use it
/// to detect a step that straddles a kink.
class ActivationPatternProbe {
public:
    ActivationPatternProbe();
    ~ActivationPatternProbe();
    ActivationPatternProbe(const ActivationPatternProbe&) = delete;
    ActivationPatternProbe& operator=(const ActivationPatternProbe&) = delete;

    std::uint64_t fingerprint() const { return hash_; }
    void reset() { hash_ = kOffset; }

    static void record(bool side);

private:
    static constexpr std::uint64_t kOffset = 1469598103934665603ULL;
    std::uint64_t hash_ = kOffset;
    ActivationPatternProbe* previous_;
};

}  // namespace canet
