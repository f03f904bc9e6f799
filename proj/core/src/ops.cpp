#include "canet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace canet {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

thread_local ActivationPatternProbe* g_probe = nullptr;

// Gradient buffer of input `i` of `out`, or nullptr when it takes no gradient.
double* input_grad(const TensorImpl& out, std::size_t i) {
    TensorImpl& in = *out.inputs[i];
    return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

const double* input_data(const TensorImpl& out, std::size_t i) { return out.inputs[i]->data.data(); }

void expect_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(x.shape()));
    }
}

// Broadcast layout shared by the binary elementwise ops.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;  // zero on broadcast axes
    bool same = false;
};

Broadcast broadcast_layout(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rank() != b.rank()) {
        throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    Broadcast bc;
    bc.same = a.shape() == b.shape();
    const std::size_t rank = a.rank();
    bc.out.resize(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        const std::size_t ea = a.shape()[d], eb = b.shape()[d];
        if (ea != eb && ea != 1 && eb != 1) {
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                                 shape_str(b.shape()));
        }
        bc.out[d] = std::max(ea, eb);
    }
    bc.stride_a.assign(rank, 0);
    bc.stride_b.assign(rank, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t d = rank; d-- > 0;) {
        if (a.shape()[d] != 1) bc.stride_a[d] = sa;
        if (b.shape()[d] != 1) bc.stride_b[d] = sb;
        sa *= a.shape()[d];
        sb *= b.shape()[d];
    }
    return bc;
}

// Calls f(out_index, a_index, b_index) for every output element in order.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
    const std::size_t n = shape_numel(bc.out);
    if (bc.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t rank = bc.out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += bc.stride_a[d];
            ib += bc.stride_b[d];
            if (idx[d] < bc.out[d]) break;
            ia -= bc.stride_a[d] * idx[d];
            ib -= bc.stride_b[d] * idx[d];
            idx[d] = 0;
        }
    }
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
    Broadcast bc = broadcast_layout(a, b, op);
    std::vector<double> out(shape_numel(bc.out));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        switch (kind) {
            case BinaryKind::add: out[o] = pa[ia] + pb[ib]; break;
            case BinaryKind::sub: out[o] = pa[ia] - pb[ib]; break;
            case BinaryKind::mul: out[o] = pa[ia] * pb[ib]; break;
        }
    });
    Shape shape = bc.out;
    return make_result(op, std::move(shape), std::move(out), {a, b}, [bc, kind](const TensorImpl& res) {
        double* ga = input_grad(res, 0);
        double* gb = input_grad(res, 1);
        const double* xa = input_data(res, 0);
        const double* xb = input_data(res, 1);
        const double* g = res.grad.data();
        for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) {
            switch (kind) {
                case BinaryKind::add:
                    if (ga) ga[ia] += g[o];
                    if (gb) gb[ib] += g[o];
                    break;
                case BinaryKind::sub:
                    if (ga) ga[ia] += g[o];
                    if (gb) gb[ib] -= g[o];
                    break;
                case BinaryKind::mul:
                    if (ga) ga[ia] += g[o] * xb[ib];
                    if (gb) gb[ib] += g[o] * xa[ia];
                    break;
            }
        });
    });
}

}  // namespace

// ---------------------------------------------------------------------------

ActivationPatternProbe::ActivationPatternProbe() : previous_(g_probe) { g_probe = this; }
ActivationPatternProbe::~ActivationPatternProbe() { g_probe = previous_; }

void ActivationPatternProbe::record(bool side) {
    if (!g_probe) return;
    g_probe->hash_ = (g_probe->hash_ ^ (side ? 0x9eULL : 0x3bULL)) * 1099511628211ULL;
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    expect_rank(a, 2, "matmul");
    expect_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    }
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](const TensorImpl& res) {
        ConstMap g(res.grad.data(), m, n);
        if (double* ga = input_grad(res, 0)) {
            MutMap(ga, m, k).noalias() += g * ConstMap(input_data(res, 1), k, n).transpose();
        }
        if (double* gb = input_grad(res, 1)) {
            MutMap(gb, k, n).noalias() += ConstMap(input_data(res, 0), m, k).transpose() * g;
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    expect_rank(a, 3, "bmm");
    expect_rank(b, 3, "bmm");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) {
        throw DimensionError("bmm: incompatible " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    }
    std::vector<double> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        MutMap(out.data() + i * m * n, m, n).noalias() =
            ConstMap(a.data().data() + i * m * k, m, k) * ConstMap(b.data().data() + i * k * n, k, n);
    }
    return make_result("bmm", {batch, m, n}, std::move(out), {a, b}, [batch, m, k, n](const TensorImpl& res) {
        double* ga = input_grad(res, 0);
        double* gb = input_grad(res, 1);
        for (std::size_t i = 0; i < batch; ++i) {
            ConstMap g(res.grad.data() + i * m * n, m, n);
            if (ga) {
                MutMap(ga + i * m * k, m, k).noalias() += g * ConstMap(input_data(res, 1) + i * k * n, k, n).transpose();
            }
            if (gb) {
                MutMap(gb + i * k * n, k, n).noalias() += ConstMap(input_data(res, 0) + i * m * k, m, k).transpose() * g;
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    expect_rank(w, 2, "linear");
    const std::size_t in = w.dim(0), out = w.dim(1);
    if (x.shape().back() != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = out;
    Tensor y = matmul(reshape(x, {x.numel() / in, in}), w);
    if (bias.defined()) y = add(y, reshape(bias, {1, out}));
    return reshape(y, std::move(out_shape));
}

// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<double> data(x.data().begin(), x.data().end());
    return make_result("reshape", std::move(shape), std::move(data), {x}, [](const TensorImpl& res) {
        double* g = input_grad(res, 0);
        for (std::size_t i = 0; i < res.grad.size(); ++i) g[i] += res.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    const std::size_t rank = x.rank();
    if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
    std::vector<bool> seen(rank, false);
    for (std::size_t a : axes) {
        if (a >= rank || seen[a]) throw DimensionError("permute: invalid axis permutation");
        seen[a] = true;
    }
    std::vector<std::size_t> in_stride(rank, 1);
    for (std::size_t d = rank - 1; d-- > 0;) in_stride[d] = in_stride[d + 1] * x.shape()[d + 1];
    Shape out_shape(rank);
    std::vector<std::size_t> src_stride(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        out_shape[d] = x.shape()[axes[d]];
        src_stride[d] = in_stride[axes[d]];
    }
    // gather[o] = source offset of output element o
    const std::size_t n = x.numel();
    auto gather = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
        (*gather)[o] = src;
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            src += src_stride[d];
            if (idx[d] < out_shape[d]) break;
            src -= src_stride[d] * idx[d];
            idx[d] = 0;
        }
    }
    std::vector<double> out(n);
    for (std::size_t o = 0; o < n; ++o) out[o] = x.data()[(*gather)[o]];
    return make_result("permute", std::move(out_shape), std::move(out), {x}, [gather](const TensorImpl& res) {
        double* g = input_grad(res, 0);
        for (std::size_t o = 0; o < res.grad.size(); ++o) g[(*gather)[o]] += res.grad[o];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
        if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
        widths.push_back(s[axis] * inner);
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    const std::size_t row = total * inner;
    std::vector<double> out(outer * row);
    std::size_t col = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const double* src = parts[i].data().data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * widths[i], widths[i], out.data() + o * row + col);
        }
        col += widths[i];
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs),
                       [widths, outer, row](const TensorImpl& res) {
                           std::size_t c = 0;
                           for (std::size_t i = 0; i < widths.size(); ++i) {
                               if (double* g = input_grad(res, i)) {
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       const double* src = res.grad.data() + o * row + c;
                                       for (std::size_t j = 0; j < widths[i]; ++j) g[o * widths[i] + j] += src[j];
                                   }
                               }
                               c += widths[i];
                           }
                       });
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v *= factor;
    return make_result("scale", x.shape(), std::move(out), {x}, [factor](const TensorImpl& res) {
        double* g = input_grad(res, 0);
        for (std::size_t i = 0; i < res.grad.size(); ++i) g[i] += factor * res.grad[i];
    });
}

Tensor activation(const Tensor& x, Activation kind) {
    std::vector<double> out(x.numel());
    const auto in = x.data();
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = in[i] > 0.0 ? in[i] : 0.0;
            ActivationPatternProbe::record(in[i] > 0.0);
        }
        return make_result("relu", x.shape(), std::move(out), {x}, [](const TensorImpl& res) {
            double* g = input_grad(res, 0);
            const double* xin = input_data(res, 0);
            for (std::size_t i = 0; i < res.grad.size(); ++i) {
                if (xin[i] > 0.0) g[i] += res.grad[i];
            }
        });
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
    return make_result("sigmoid", x.shape(), std::move(out), {x}, [](const TensorImpl& res) {
        double* g = input_grad(res, 0);
        for (std::size_t i = 0; i < res.grad.size(); ++i) {
            const double s = res.data[i];
            g[i] += res.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    const std::size_t len = x.shape()[axis];
    for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
    for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    std::vector<double> out(x.numel());
    const double* in = x.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double peak = in[base];
            for (std::size_t j = 1; j < len; ++j) peak = std::max(peak, in[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const double e = std::exp(in[base + j * inner] - peak);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
        }
    }
    return make_result("softmax", x.shape(), std::move(out), {x}, [outer, inner, len](const TensorImpl& res) {
        double* g = input_grad(res, 0);
        const double* y = res.data.data();
        const double* gy = res.grad.data();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) dot += gy[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t k = base + j * inner;
                    g[k] += y[k] * (gy[k] - dot);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) {
        throw DimensionError("layer_norm: affine extent does not match " + shape_str(x.shape()));
    }
    const std::size_t rows = x.numel() / d;
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(x.numel());
    const double* in = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * is;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = gamma[j] * h + beta[j];
        }
    }
    return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                       [xhat, inv_std, rows, d](const TensorImpl& res) {
                           double* gx = input_grad(res, 0);
                           double* gg = input_grad(res, 1);
                           double* gb = input_grad(res, 2);
                           const double* gam = input_data(res, 1);
                           const double* gy = res.grad.data();
                           std::vector<double> dh(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* h = xhat->data() + r * d;
                               const double* g = gy + r * d;
                               double mean_dh = 0.0, mean_dh_h = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   if (gg) gg[j] += g[j] * h[j];
                                   if (gb) gb[j] += g[j];
                                   dh[j] = g[j] * gam[j];
                                   mean_dh += dh[j];
                                   mean_dh_h += dh[j] * h[j];
                               }
                               if (!gx) continue;
                               mean_dh /= static_cast<double>(d);
                               mean_dh_h /= static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                   gx[r * d + j] += (*inv_std)[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                               }
                           }
                       });
}

BatchNormStats BatchNormStats::init(std::size_t channels) {
    return {Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                    double momentum, double eps) {
    expect_rank(x, 4, "batch_norm2d");
    const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (gamma.numel() != channels || beta.numel() != channels || stats.running_mean.numel() != channels ||
        stats.running_var.numel() != channels) {
        throw DimensionError("batch_norm2d: channel extent mismatch for " + shape_str(x.shape()));
    }
    const double count = static_cast<double>(batch * plane);
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(channels);
    std::vector<double> out(x.numel());
    const double* in = x.data().data();
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) {
        double mu, var;
        if (mode == Mode::train) {
            mu = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* p = in + (b * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) mu += p[i];
            }
            mu /= count;
            var = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* p = in + (b * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
            }
            var /= count;
            const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
            rm[c] = (1.0 - momentum) * rm[c] + momentum * mu;
            rv[c] = (1.0 - momentum) * rv[c] + momentum * unbiased;
        } else {
            mu = rm[c];
            var = rv[c];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[c] = is;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double h = (in[off + i] - mu) * is;
                (*xhat)[off + i] = h;
                out[off + i] = gamma[c] * h + beta[c];
            }
        }
    }
    const bool batch_stats = mode == Mode::train;
    return make_result(
        "batch_norm2d", x.shape(), std::move(out), {x, gamma, beta},
        [xhat, inv_std, batch, channels, plane, count, batch_stats](const TensorImpl& res) {
            double* gx = input_grad(res, 0);
            double* gg = input_grad(res, 1);
            double* gb = input_grad(res, 2);
            const double* gam = input_data(res, 1);
            const double* gy = res.grad.data();
            for (std::size_t c = 0; c < channels; ++c) {
                double sum_g = 0.0, sum_gh = 0.0;
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t off = (b * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_g += gy[off + i];
                        sum_gh += gy[off + i] * (*xhat)[off + i];
                    }
                }
                if (gg) gg[c] += sum_gh;
                if (gb) gb[c] += sum_g;
                if (!gx) continue;
                const double k = gam[c] * (*inv_std)[c];
                const double mean_g = sum_g / count, mean_gh = sum_gh / count;
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t off = (b * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        gx[off + i] += batch_stats ? k * (gy[off + i] - mean_g - (*xhat)[off + i] * mean_gh)
                                                   : k * gy[off + i];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------

namespace {

struct ConvGeometry {
    std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;
    std::size_t patch() const { return in_ch * kernel * kernel; }
    std::size_t pixels() const { return out_h * out_w; }
};

// cols[(c*k + ki)*k + kj][oy*out_w + ox] for one batch item.
void im2col(const ConvGeometry& g, const double* x, double* cols) {
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        const double* plane = x + c * g.height * g.width;
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * g.pixels();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    double* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<long>(g.height)) {
                        std::fill_n(dst, g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
    for (std::size_t c = 0; c < g.in_ch; ++c) {
        double* plane = dx + c * g.height * g.width;
        for (std::size_t ki = 0; ki < g.kernel; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                const double* row = cols + ((c * g.kernel + ki) * g.kernel + kj) * g.pixels();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.width;
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
    expect_rank(x, 4, "conv2d");
    expect_rank(w, 4, "conv2d");
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
    if (w.dim(1) != g.in_ch || w.dim(3) != g.kernel) {
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " +
                             shape_str(x.shape()));
    }
    if (bias.defined() && bias.numel() != g.out_ch) throw DimensionError("conv2d: bias extent mismatch");
    if (g.kernel > g.height + 2 * pad || g.kernel > g.width + 2 * pad) {
        throw DimensionError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
    }
    if ((g.height + 2 * pad - g.kernel) % stride != 0 || (g.width + 2 * pad - g.kernel) % stride != 0) {
        throw DimensionError("conv2d: non-integral output extent for input " + shape_str(x.shape()) + ", kernel " +
                             std::to_string(g.kernel) + ", stride " + std::to_string(stride) + ", pad " +
                             std::to_string(pad));
    }
    g.out_h = (g.height + 2 * pad - g.kernel) / stride + 1;
    g.out_w = (g.width + 2 * pad - g.kernel) / stride + 1;

    const std::size_t in_size = g.in_ch * g.height * g.width;
    const std::size_t out_size = g.out_ch * g.pixels();
    std::vector<double> out(g.batch * out_size);
    std::vector<double> cols(g.patch() * g.pixels());
    ConstMap wm(w.data().data(), g.out_ch, g.patch());
    for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(g, x.data().data() + b * in_size, cols.data());
        MutMap y(out.data() + b * out_size, g.out_ch, g.pixels());
        y.noalias() = wm * ConstMap(cols.data(), g.patch(), g.pixels());
        if (bias.defined()) {
            for (std::size_t o = 0; o < g.out_ch; ++o) y.row(o).array() += bias[o];
        }
    }
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_result("conv2d", {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), std::move(inputs),
                       [g, in_size, out_size](const TensorImpl& res) {
                           double* gx = input_grad(res, 0);
                           double* gw = input_grad(res, 1);
                           double* gbias = res.inputs.size() > 2 ? input_grad(res, 2) : nullptr;
                           const double* x_in = input_data(res, 0);
                           ConstMap wm(input_data(res, 1), g.out_ch, g.patch());
                           std::vector<double> cols(g.patch() * g.pixels());
                           for (std::size_t b = 0; b < g.batch; ++b) {
                               ConstMap gy(res.grad.data() + b * out_size, g.out_ch, g.pixels());
                               if (gbias) {
                                   for (std::size_t o = 0; o < g.out_ch; ++o) gbias[o] += gy.row(o).sum();
                               }
                               if (gw) {
                                   im2col(g, x_in + b * in_size, cols.data());
                                   MutMap(gw, g.out_ch, g.patch()).noalias() +=
                                       gy * ConstMap(cols.data(), g.patch(), g.pixels()).transpose();
                               }
                               if (gx) {
                                   MutMap(cols.data(), g.patch(), g.pixels()).noalias() = wm.transpose() * gy;
                                   col2im_add(g, cols.data(), gx + b * in_size);
                               }
                           }
                       });
}

Tensor global_avg_pool(const Tensor& x) {
    expect_rank(x, 4, "global_avg_pool");
    const std::size_t rows = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = x.data().data() + r * plane;
        out[r] = std::accumulate(p, p + plane, 0.0) / static_cast<double>(plane);
    }
    return make_result("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(out), {x}, [rows, plane](const TensorImpl& res) {
        double* g = input_grad(res, 0);
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < plane; ++i) g[r * plane + i] += res.grad[r] * inv;
        }
    });
}

namespace {

void expect_divisible(const Tensor& x, std::size_t factor, const char* op) {
    expect_rank(x, 4, op);
    if (factor == 0) throw DimensionError(std::string(op) + ": factor must be positive");
    if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
        throw DimensionError(std::string(op) + ": extents of " + shape_str(x.shape()) + " not divisible by " +
                             std::to_string(factor));
    }
}

}  // namespace

Tensor avg_pool2d(const Tensor& x, std::size_t factor) {
    expect_divisible(x, factor, "avg_pool2d");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / factor, ow = w / factor;
    const double inv = 1.0 / static_cast<double>(factor * factor);
    std::vector<double> out(planes * oh * ow, 0.0);
    const double* in = x.data().data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) out[(p * oh + i / factor) * ow + j / factor] += in[(p * h + i) * w + j];
        }
    }
    for (double& v : out) v *= inv;
    return make_result("avg_pool2d", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                       [planes, h, w, oh, ow, factor, inv](const TensorImpl& res) {
                           double* g = input_grad(res, 0);
                           for (std::size_t p = 0; p < planes; ++p) {
                               for (std::size_t i = 0; i < h; ++i) {
                                   for (std::size_t j = 0; j < w; ++j) {
                                       g[(p * h + i) * w + j] += inv * res.grad[(p * oh + i / factor) * ow + j / factor];
                                   }
                               }
                           }
                       });
}

Tensor resize_nearest(const Tensor& x, std::size_t factor) {
    expect_rank(x, 4, "resize_nearest");
    if (factor == 0) throw DimensionError("resize_nearest: factor must be positive");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h * factor, ow = w * factor;
    std::vector<double> out(planes * oh * ow);
    const double* in = x.data().data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) out[(p * oh + i) * ow + j] = in[(p * h + i / factor) * w + j / factor];
        }
    }
    return make_result("resize_nearest", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                       [planes, h, w, oh, ow, factor](const TensorImpl& res) {
                           double* g = input_grad(res, 0);
                           for (std::size_t p = 0; p < planes; ++p) {
                               for (std::size_t i = 0; i < oh; ++i) {
                                   for (std::size_t j = 0; j < ow; ++j) {
                                       g[(p * h + i / factor) * w + j / factor] += res.grad[(p * oh + i) * ow + j];
                                   }
                               }
                           }
                       });
}

Tensor downsample_nearest(const Tensor& x, std::size_t factor) {
    expect_divisible(x, factor, "downsample_nearest");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / factor, ow = w / factor;
    std::vector<double> out(planes * oh * ow);
    const double* in = x.data().data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) out[(p * oh + i) * ow + j] = in[(p * h + i * factor) * w + j * factor];
        }
    }
    return make_result("downsample_nearest", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                       [planes, h, w, oh, ow, factor](const TensorImpl& res) {
                           double* g = input_grad(res, 0);
                           for (std::size_t p = 0; p < planes; ++p) {
                               for (std::size_t i = 0; i < oh; ++i) {
                                   for (std::size_t j = 0; j < ow; ++j) {
                                       g[(p * h + i * factor) * w + j * factor] += res.grad[(p * oh + i) * ow + j];
                                   }
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
    return make_result("sum", {1}, {total}, {x}, [](const TensorImpl& res) {
        double* g = input_grad(res, 0);
        const std::size_t n = res.inputs[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) g[i] += res.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor binary_cross_entropy(const Tensor& prob, const Tensor& target, double clamp) {
    if (prob.shape() != target.shape()) {
        throw ContractError("binary_cross_entropy: prediction " + shape_str(prob.shape()) + " vs target " +
                            shape_str(target.shape()));
    }
    const std::size_t n = prob.numel();
    const double lo = clamp, hi = 1.0 - clamp;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = prob[i];
        ActivationPatternProbe::record(p < lo);
        ActivationPatternProbe::record(p > hi);
        const double pc = std::clamp(p, lo, hi);
        const double y = target[i];
        total -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return make_result("binary_cross_entropy", {1}, {total * inv_n}, {prob, target},
                       [lo, hi, inv_n, n](const TensorImpl& res) {
                           // The target is treated as a constant.
                           double* g = input_grad(res, 0);
                           if (!g) return;
                           const double* p = input_data(res, 0);
                           const double* y = input_data(res, 1);
                           const double scale = res.grad[0] * inv_n;
                           for (std::size_t i = 0; i < n; ++i) {
                               if (p[i] < lo || p[i] > hi) continue;
                               g[i] += scale * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]));
                           }
                       });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ContractError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                            shape_str(target.shape()));
    }
    const std::size_t n = pred.numel();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (pred[i] - target[i]) * (pred[i] - target[i]);
    const double inv_n = 1.0 / static_cast<double>(n);
    return make_result("mse_loss", {1}, {total * inv_n}, {pred, target}, [inv_n, n](const TensorImpl& res) {
        const double* p = input_data(res, 0);
        const double* y = input_data(res, 1);
        const double scale = 2.0 * res.grad[0] * inv_n;
        double* gp = input_grad(res, 0);
        double* gy = input_grad(res, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = scale * (p[i] - y[i]);
            if (gp) gp[i] += d;
            if (gy) gy[i] -= d;
        }
    });
}

}  // namespace canet
