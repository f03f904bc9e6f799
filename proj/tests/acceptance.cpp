// Acceptance harness: one PASS/FAIL line per criterion.
//   acceptance            run every criterion
//   acceptance 1 4 5      run a subset
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "canet/checkpoint.hpp"
#include "canet/trainer.hpp"

using namespace canet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor::from(std::move(shape), std::move(v), grad);
}

Tensor binary(Shape shape, Rng& rng, double density) {
    std::bernoulli_distribution coin(density);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = coin(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, uniform(y.shape(), rng, -1.0, 1.0, false)));
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct ScratchDir {
    fs::path path;
    explicit ScratchDir(const std::string& name)
        : path(fs::temp_directory_path() / ("canet_acceptance_" + name + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~ScratchDir() { fs::remove_all(path); }
};

// 1. Gradient suite ------------------------------------------------------------------

Outcome gradient_suite() {
    struct Check {
        std::string name;
        std::function<Tensor()> loss;
        std::vector<Parameter> tensors;
    };
    Rng rng(2024);
    auto in = [&](Shape s, double lo = -1.0, double hi = 1.0) { return uniform(std::move(s), rng, lo, hi); };
    auto P = [](std::initializer_list<Tensor> ts) {
        std::vector<Parameter> out;
        int i = 0;
        for (const Tensor& t : ts) out.push_back({"arg" + std::to_string(i++), t, true});
        return out;
    };
    std::vector<Check> checks;

    {
        Tensor a = in({3, 4}), b = in({4, 5});
        checks.push_back({"matmul", [=] { return weighted_sum(matmul(a, b), 1); }, P({a, b})});
    }
    {
        Tensor a = in({2, 3, 4}), b = in({2, 4, 3});
        checks.push_back({"bmm", [=] { return weighted_sum(bmm(a, b), 2); }, P({a, b})});
    }
    {
        Tensor x = in({2, 3, 4}), w = in({4, 5}), b = in({5});
        checks.push_back({"linear", [=] { return weighted_sum(linear(x, w, b), 3); }, P({x, w, b})});
    }
    {
        Tensor x = in({2, 3, 4});
        checks.push_back(
            {"reshape+permute", [=] { return weighted_sum(permute(reshape(x, {6, 4}), {1, 0}), 4); }, P({x})});
    }
    {
        Tensor a = in({2, 1, 3}), b = in({2, 2, 3});
        checks.push_back({"concat", [=] {
                              const Tensor parts[] = {a, b};
                              return weighted_sum(concat(parts, 1), 5);
                          },
                          P({a, b})});
    }
    {
        Tensor a = in({2, 3, 4}), b = in({1, 3, 1}), c = in({1, 1, 4}, 0.5, 1.5);
        checks.push_back({"add/sub/mul/scale (broadcast)",
                          [=] { return weighted_sum(scale(mul(sub(add(a, b), c), add(b, c)), 1.7), 6); },
                          P({a, b, c})});
    }
    {
        Tensor x = in({3, 7}, -2, 2);
        checks.push_back({"relu", [=] { return weighted_sum(relu(x), 7); }, P({x})});
        checks.push_back({"sigmoid", [=] { return weighted_sum(sigmoid(x), 8); }, P({x})});
    }
    {
        Tensor x = in({2, 3, 4}, -3, 3);
        checks.push_back({"softmax", [=] { return weighted_sum(softmax(x, 2), 9); }, P({x})});
    }
    {
        Tensor x = in({4, 6}, -2, 3), g = in({6}, 0.5, 1.5), b = in({6});
        checks.push_back({"layer_norm", [=] { return weighted_sum(layer_norm(x, g, b), 10); }, P({x, g, b})});
    }
    {
        Tensor x = in({4, 3, 5, 5}), g = in({3}, 0.5, 1.5), b = in({3});
        auto stats = std::make_shared<BatchNormStats>(BatchNormStats::init(3));
        checks.push_back({"batch_norm2d (train)",
                          [=] { return weighted_sum(batch_norm2d(x, g, b, *stats, Mode::train), 11); },
                          P({x, g, b})});
        auto frozen = std::make_shared<BatchNormStats>(BatchNormStats::init(3));
        frozen->running_mean.mutable_data()[1] = 0.3;
        frozen->running_var.mutable_data()[2] = 2.0;
        checks.push_back({"batch_norm2d (eval)",
                          [=] { return weighted_sum(batch_norm2d(x, g, b, *frozen, Mode::eval), 12); },
                          P({x, g, b})});
    }
    {
        Tensor x = in({2, 3, 6, 6}), w = in({4, 3, 3, 3}), b = in({4});
        checks.push_back({"conv2d (pad 1)", [=] { return weighted_sum(conv2d(x, w, b, 1, 1), 13); }, P({x, w, b})});
        Tensor odd = in({2, 3, 7, 7});
        checks.push_back(
            {"conv2d (stride 2)", [=] { return weighted_sum(conv2d(odd, w, b, 2, 0), 14); }, P({odd, w, b})});
    }
    {
        Tensor x = in({2, 3, 4, 4});
        checks.push_back({"global_avg_pool", [=] { return weighted_sum(global_avg_pool(x), 15); }, P({x})});
        checks.push_back({"avg_pool2d", [=] { return weighted_sum(avg_pool2d(x, 2), 16); }, P({x})});
        checks.push_back({"resize_nearest", [=] { return weighted_sum(resize_nearest(x, 3), 17); }, P({x})});
        checks.push_back({"downsample_nearest", [=] { return weighted_sum(downsample_nearest(x, 2), 18); }, P({x})});
        checks.push_back({"sum", [=] { return scale(sum(mul(x, x)), 0.5); }, P({x})});
        checks.push_back({"mean", [=] { return mean(mul(x, x)); }, P({x})});
    }
    {
        Tensor p = in({2, 1, 4, 4}, 0.02, 0.98), t = binary({2, 1, 4, 4}, rng, 0.5);
        checks.push_back({"binary_cross_entropy", [=] { return binary_cross_entropy(p, t); }, P({p})});
        Tensor a = in({2, 5, 1}), b = in({2, 5, 1}, 0, 1);
        checks.push_back({"mse_loss", [=] { return mse_loss(a, b); }, P({a})});
    }

    std::size_t checked = 0, unresolved = 0;
    double worst = 0.0;
    std::string worst_name = "-";
    for (const Check& c : checks) {
        const GradCheckReport r = check_gradients(c.loss, c.tensors);
        checked += r.checked;
        unresolved += r.unresolved;
        if (r.max_rel_error() >= worst) {
            worst = r.max_rel_error();
            worst_name = c.name;
        }
    }
    bool pass = unresolved == 0 && worst <= 1e-4;
    std::string detail = fmt("%zu op checks, %zu entries, worst %.2e (%s)", checks.size(), checked, worst,
                             worst_name.c_str());

    const Ablation ablations[] = {{}, {true, false, false}, {false, true, false}, {false, false, true}};
    const char* labels[] = {"full", "no_boundary", "no_transformer", "no_ctx_attention"};
    for (int i = 0; i < 4; ++i) {
        const GradCheckReport r = check_network_gradients(ablations[i], 11);
        pass = pass && r.unresolved == 0 && r.checked > 0 && r.max_rel_error() <= 1e-4;
        detail += fmt("; network %s %zu entries worst %.2e unresolved %zu", labels[i], r.checked, r.max_rel_error(),
                      r.unresolved);
    }
    return {pass, detail};
}

// 2. Overfit oracle ---------------------------------------------------------------------

Outcome overfit_oracle() {
    ScratchDir dir("overfit");
    TrainConfig config;  // defaults: 8 samples of 64x64, batch 4, lr 1e-4, 100 epochs
    config.output_dir = dir.path.string();
    const DataSplits data = load_data(config);
    TrainOptions options;
    options.data = &data;
    const TrainResult r = train(config, options);
    Network net = load_network(r.last_checkpoint);
    const double dsc = evaluate(net, data.train).mean.dsc;
    return {r.steps == 200 && dsc >= 0.95,
            fmt("%zu samples, %llu Adam steps, lr %g: training-set mean DSC %.4f (need >= 0.95)", data.train.size(),
                static_cast<unsigned long long>(r.steps), config.lr, dsc)};
}

// 3. Ablation analog ---------------------------------------------------------------------

Outcome ablation_analog() {
    ScratchDir dir("ablation");
    TrainConfig base;
    base.samples = 200;
    base.train_count = 160;
    base.val_count = 0;
    base.overlap_probability = 0.6;
    base.epochs = 10;
    const DataSplits data = load_data(base);

    const Ablation ablations[] = {{}, {false, true, false}, {true, false, false}, {false, false, true}};
    const char* labels[] = {"full", "no_transformer", "no_boundary", "no_ctx_attention"};
    double means[4];
    std::string detail;
    for (int a = 0; a < 4; ++a) {
        double total = 0.0;
        std::string per_seed;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            TrainConfig c = base;
            c.seed = seed;
            c.model.ablation = ablations[a];
            c.output_dir = (dir.path / (std::string(labels[a]) + "_" + std::to_string(seed))).string();
            TrainOptions options;
            options.data = &data;
            const TrainResult r = train(c, options);
            Network net = load_network(r.last_checkpoint);
            const double dsc = evaluate(net, data.test).mean.dsc;
            total += dsc;
            per_seed += fmt("%s%.4f", seed ? "/" : "", dsc);
        }
        means[a] = total / 3.0;
        detail += fmt("%s%s %.5f (%s)", a ? "; " : "", labels[a], means[a], per_seed.c_str());
    }
    return {means[0] >= means[1], "mean test DSC over seeds 0-2, full >= no_transformer gated: " + detail};
}

// 4. Metric oracle ----------------------------------------------------------------------

Outcome metric_oracle() {
    Rng rng(4);
    std::size_t count_mismatch = 0, formula_mismatch = 0;
    double identity_gap = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t h = 8 + rng() % 25, w = 8 + rng() % 25;
        Tensor prob = uniform({1, h, w}, rng, 0.0, 1.0, false);
        Tensor gt = binary({1, h, w}, rng, std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < h * w; ++i) {
            const bool p = prob[i] > 0.5, g = gt[i] == 1.0;
            if (p && g) ++tp;
            if (!p && !g) ++tn;
            if (p && !g) ++fp;
            if (!p && g) ++fn;
        }
        const ConfusionCounts c = confusion_counts(prob, gt);
        if (c.tp != tp || c.tn != tn || c.fp != fp || c.fn != fn) ++count_mismatch;

        auto ratio = [](double n, double d) { return d == 0.0 ? (n == 0.0 ? 1.0 : 0.0) : n / d; };
        const double TP = tp, TN = tn, FP = fp, FN = fn;
        const SegmentationMetrics m = metrics(c);
        if (m.dsc != ratio(2 * TP, 2 * TP + FP + FN) || m.sensitivity != ratio(TP, TP + FN) ||
            m.specificity != ratio(TN, TN + FP) || m.accuracy != ratio(TP + TN, TP + TN + FP + FN) ||
            m.miou != ratio(TP, TP + FP + FN)) {
            ++formula_mismatch;
        }
        identity_gap = std::max(identity_gap, std::abs(m.dsc - 2 * m.miou / (1 + m.miou)));
    }
    return {count_mismatch == 0 && formula_mismatch == 0 && identity_gap <= 1e-15,
            fmt("1000 random masks: %zu count mismatches, %zu formula mismatches, max |DSC - 2mIOU/(1+mIOU)| %.1e",
                count_mismatch, formula_mismatch, identity_gap)};
}

// 5. Supervision targets -------------------------------------------------------------------

Outcome supervision_targets() {
    // p*p a power of two makes count / p^2 exact, so the identity holds bit for
    // bit. Other patch sizes round each quotient and are held to 1e-12.
    Rng rng(5);
    std::size_t ric_mismatch = 0, boundary_mismatch = 0, exact_trials = 0;
    double other_gap = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t p = 1 + rng() % 16;
        const std::size_t h = p * (1 + rng() % 5), w = p * (1 + rng() % 5);
        const Tensor m = binary({1, h, w}, rng, std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        double fg = 0.0, weighted = 0.0;
        for (double v : m.data()) fg += v;
        const Tensor ric = ric_gt(m, p);
        for (double v : ric.data()) weighted += v * static_cast<double>(p * p);
        if ((p & (p - 1)) == 0) {
            ++exact_trials;
            if (weighted != fg) ++ric_mismatch;
        } else {
            other_gap = std::max(other_gap, std::abs(weighted - fg) / std::max(fg, 1.0));
        }

        const Tensor b = boundary_gt(m);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                double dil = 0.0, ero = 1.0;
                const long nb[5][2] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
                for (const auto& d : nb) {
                    const long rr = static_cast<long>(r) + d[0], cc = static_cast<long>(c) + d[1];
                    if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                    dil = std::max(dil, m[rr * w + cc]);
                    ero = std::min(ero, m[rr * w + cc]);
                }
                if (b[r * w + c] != dil - ero) {
                    ++boundary_mismatch;
                    r = h;
                    break;
                }
            }
        }
    }
    return {ric_mismatch == 0 && other_gap <= 1e-12 && boundary_mismatch == 0,
            fmt("1000 random masks: %zu/%zu power-of-two patch trials with inexact RIC sum, other sizes max rel gap "
                "%.1e; %zu boundary mismatches vs dilate-minus-erode",
                ric_mismatch, exact_trials, other_gap, boundary_mismatch)};
}

// 6. Structural invariants ------------------------------------------------------------------

Outcome structural_invariants() {
    Rng rng(6);
    const ModelConfig model;  // desk-scale default
    double row_gap = 0.0, mean_gap = 0.0, var_gap = 0.0;
    bool open_unit = true, exact_half = true;

    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Network live(model, seed, {.zero_heads = false});
        Network fresh(model, seed);
        const Tensor images = uniform({2, 3, 64, 64}, rng, 0.0, 1.0, false);
        NoGradGuard no_grad;
        const ForwardOutputs out = live.forward(images, Mode::train);
        for (const Tensor& a : out.attention) {
            const std::size_t n = a.dim(2);
            for (std::size_t row = 0; row < a.numel() / n; ++row) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += a[row * n + j];
                row_gap = std::max(row_gap, std::abs(s - 1.0));
            }
        }
        for (const Tensor* t : {&out.mask, &out.boundary, &out.icr, &out.ric, &out.trace.channel_weights}) {
            for (double v : t->data()) open_unit = open_unit && v > 0.0 && v < 1.0;
        }
        const ForwardOutputs zero = fresh.forward(images, Mode::train);
        for (const Tensor* t : {&zero.mask, &zero.boundary, &zero.icr, &zero.ric}) {
            for (double v : t->data()) exact_half = exact_half && v == 0.5;
        }

        // Layer-norm statistics on real token rows and on rows of widely varying scale.
        const Tensor tokens = patchify_embed(images, live.transformer());
        const std::size_t k = tokens.dim(2);
        std::vector<Tensor> inputs{reshape(tokens, {tokens.numel() / k, k})};
        for (double scale_ : {1e-2, 1.0, 1e3}) inputs.push_back(uniform({64, k}, rng, -scale_, 2 * scale_, false));
        const double eps = 1e-5;
        for (const Tensor& x : inputs) {
            const Tensor y = layer_norm(x, Tensor::full({k}, 1.0), Tensor::zeros({k}), eps);
            for (std::size_t r = 0; r < x.dim(0); ++r) {
                double xm = 0, ym = 0;
                for (std::size_t j = 0; j < k; ++j) {
                    xm += x[r * k + j];
                    ym += y[r * k + j];
                }
                xm /= k;
                ym /= k;
                double xv = 0, yv = 0;
                for (std::size_t j = 0; j < k; ++j) {
                    xv += (x[r * k + j] - xm) * (x[r * k + j] - xm);
                    yv += (y[r * k + j] - ym) * (y[r * k + j] - ym);
                }
                xv /= k;
                yv /= k;
                mean_gap = std::max(mean_gap, std::abs(ym));
                var_gap = std::max(var_gap, std::abs(yv * (xv + eps) / xv - 1.0));
            }
        }
    }
    return {row_gap <= 1e-12 && mean_gap <= 1e-9 && var_gap <= 1e-6 && open_unit && exact_half,
            fmt("attention row-sum error %.1e; layer_norm |mean| %.1e, |var-1| (eps-adjusted) %.1e; outputs in (0,1): "
                "%s; zero heads give exact 0.5: %s",
                row_gap, mean_gap, var_gap, open_unit ? "yes" : "no", exact_half ? "yes" : "no")};
}

// 7. Determinism and persistence --------------------------------------------------------------

Outcome determinism() {
    ScratchDir dir("determinism");
    TrainConfig base;
    base.model.height = base.model.width = 32;
    base.samples = 10;
    base.train_count = 8;
    base.val_count = 2;
    base.epochs = 4;
    base.lr = 1e-3;
    auto run = [&](const std::string& name, std::size_t epochs, std::optional<fs::path> resume = std::nullopt) {
        TrainConfig c = base;
        c.epochs = epochs;
        c.output_dir = (dir.path / name).string();
        TrainOptions options;
        options.resume_from = std::move(resume);
        return train(c, options);
    };
    const TrainResult a = run("a", 4);
    const TrainResult b = run("b", 4);
    const bool logs_equal = slurp(dir.path / "a" / "train_log.csv") == slurp(dir.path / "b" / "train_log.csv");
    const bool ckpt_equal = slurp(a.last_checkpoint / "params.bin") == slurp(b.last_checkpoint / "params.bin") &&
                            slurp(a.last_checkpoint / "optim.bin") == slurp(b.last_checkpoint / "optim.bin");

    // Save/load round trip through a differently seeded model.
    Network other(base.model, 123);
    AdamState adam = AdamState::init(other.params());
    const CheckpointMeta meta = load_checkpoint(a.last_checkpoint, other.params(), adam);
    save_checkpoint(dir.path / "copy", other.params(), adam, meta);
    bool round_trip = true;
    for (const char* f : {"params.bin", "optim.bin", "manifest.json"}) {
        round_trip = round_trip && slurp(a.last_checkpoint / f) == slurp(dir.path / "copy" / f);
    }

    run("resumed", 2);
    run("resumed", 4, dir.path / "resumed" / "last.ckpt");
    const bool resume_equal = slurp(dir.path / "a" / "train_log.csv") == slurp(dir.path / "resumed" / "train_log.csv") &&
                              slurp(a.last_checkpoint / "params.bin") ==
                                  slurp(dir.path / "resumed" / "last.ckpt" / "params.bin");
    auto yn = [](bool v) { return v ? "yes" : "no"; };
    return {logs_equal && ckpt_equal && round_trip && resume_equal,
            fmt("repeated run logs identical: %s, checkpoints identical: %s; save/load bit-exact: %s; resume after "
                "epoch 2 matches uninterrupted run: %s",
                yn(logs_equal), yn(ckpt_equal), yn(round_trip), yn(resume_equal))};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        Outcome (*run)();
    };
    const Criterion criteria[] = {
        {1, "gradient suite", 120, gradient_suite},
        {2, "overfit oracle", 300, overfit_oracle},
        {3, "ablation analog", 1800, ablation_analog},
        {4, "metric oracle", 0, metric_oracle},
        {5, "supervision-target identities", 0, supervision_targets},
        {6, "structural invariants", 0, structural_invariants},
        {7, "determinism and persistence", 0, determinism},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_s > 0 && seconds > c.budget_s) {
            o.pass = false;
            o.detail += fmt(" [over the %.0f s budget]", c.budget_s);
        }
        std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), seconds);
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures == 0 ? 0 : 1;
}
