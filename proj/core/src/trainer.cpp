#include "canet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "canet/image_io.hpp"

namespace canet {

namespace fs = std::filesystem;

// TrainConfig ------------------------------------------------------------------

DatasetSpec TrainConfig::synthetic_spec() const {
    DatasetSpec spec;
    spec.count = samples;
    spec.height = model.height;
    spec.width = model.width;
    spec.channels = model.channels;
    spec.patch = model.patch;
    spec.min_objects = min_objects;
    spec.max_objects = max_objects;
    spec.overlap_probability = overlap_probability;
    spec.noise = noise;
    spec.min_radius = min_radius;
    spec.max_radius = max_radius;
    spec.seed = data_seed;
    return spec;
}

std::vector<std::string> TrainConfig::violations() const {
    std::vector<std::string> out = model.violations();
    if (!(std::isfinite(lr) && lr > 0.0)) out.push_back("lr must be positive");
    if (batch_size == 0) out.push_back("batch_size must be positive");
    auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!nonneg(loss.segmentation) || !nonneg(loss.boundary) || !nonneg(loss.ric)) {
        out.push_back("loss weights must be finite and nonnegative");
    }
    const LossWeights eff = loss.effective(model.ablation);
    if (eff.segmentation == 0.0 && eff.boundary == 0.0 && eff.ric == 0.0) {
        out.push_back("at least one effective loss weight must be positive");
    }
    if (output_dir.empty()) out.push_back("output_dir must not be empty");
    if (dataset_dir.empty()) {
        if (train_count == 0) out.push_back("train_count must be positive");
        if (train_count + val_count > samples) {
            out.push_back("train_count + val_count (" + std::to_string(train_count + val_count) +
                          ") exceeds samples (" + std::to_string(samples) + ")");
        }
        if (model.channels == 1 || model.channels == 3) {
            for (auto& v : synthetic_spec().violations()) {
                if (v.find("patch") == std::string::npos) out.push_back("synthetic data: " + v);
            }
        } else {
            out.push_back("synthetic data needs channels 1 or 3");
        }
    }
    return out;
}

void TrainConfig::validate() const {
    auto problems = violations();
    if (problems.empty()) return;
    std::string msg = "invalid training configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = c.model;
    j.update({{"lambda_seg", c.loss.segmentation},
              {"lambda_boundary", c.loss.boundary},
              {"lambda_ric", c.loss.ric},
              {"lr", c.lr},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"dataset_dir", c.dataset_dir},
              {"samples", c.samples},
              {"train_count", c.train_count},
              {"val_count", c.val_count},
              {"min_objects", c.min_objects},
              {"max_objects", c.max_objects},
              {"overlap_probability", c.overlap_probability},
              {"noise", c.noise},
              {"min_radius", c.min_radius},
              {"max_radius", c.max_radius},
              {"data_seed", c.data_seed},
              {"output_dir", c.output_dir}});
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    static const char* known[] = {"height", "width", "channels", "patch", "embed_dim", "layers", "heads",
                                  "fusion_channels", "se_reduction", "no_boundary", "no_transformer",
                                  "no_ctx_attention", "lambda_seg", "lambda_boundary", "lambda_ric", "lr",
                                  "batch_size", "epochs", "seed", "dataset_dir", "samples", "train_count",
                                  "val_count", "min_objects", "max_objects", "overlap_probability", "noise",
                                  "min_radius", "max_radius", "data_seed", "output_dir"};
    for (const auto& item : j.items()) {
        if (std::find(std::begin(known), std::end(known), item.key()) == std::end(known)) {
            throw ConfigError("unknown configuration key '" + item.key() + "'");
        }
    }
    from_json(j, c.model);
    c.loss.segmentation = j.value("lambda_seg", c.loss.segmentation);
    c.loss.boundary = j.value("lambda_boundary", c.loss.boundary);
    c.loss.ric = j.value("lambda_ric", c.loss.ric);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    c.samples = j.value("samples", c.samples);
    c.train_count = j.value("train_count", c.train_count);
    c.val_count = j.value("val_count", c.val_count);
    c.min_objects = j.value("min_objects", c.min_objects);
    c.max_objects = j.value("max_objects", c.max_objects);
    c.overlap_probability = j.value("overlap_probability", c.overlap_probability);
    c.noise = j.value("noise", c.noise);
    c.min_radius = j.value("min_radius", c.min_radius);
    c.max_radius = j.value("max_radius", c.max_radius);
    c.data_seed = j.value("data_seed", c.data_seed);
    c.output_dir = j.value("output_dir", c.output_dir);
}

// Data -------------------------------------------------------------------------

const std::vector<Sample>& DataSplits::get(const std::string& split) const {
    if (split == "train") return train;
    if (split == "val") return val;
    if (split == "test") return test;
    throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
}

void check_dataset_compatible(const ModelConfig& model, const DatasetSpec& dataset) {
    if (model.patch == 0 || dataset.height % model.patch != 0 || dataset.width % model.patch != 0) {
        throw CheckpointError("checkpoint patch size " + std::to_string(model.patch) + " does not divide dataset extent " +
                              std::to_string(dataset.height) + "x" + std::to_string(dataset.width));
    }
    if (dataset.height != model.height || dataset.width != model.width || dataset.channels != model.channels) {
        throw CheckpointError("dataset extent " + std::to_string(dataset.channels) + "x" + std::to_string(dataset.height) +
                              "x" + std::to_string(dataset.width) + " does not match checkpoint model " +
                              std::to_string(model.channels) + "x" + std::to_string(model.height) + "x" +
                              std::to_string(model.width));
    }
}

namespace {

LoadOptions load_options(const ModelConfig& model) {
    return {model.height, model.width, model.patch, model.channels};
}

std::optional<DatasetSpec> read_spec(const fs::path& root) {
    std::ifstream in(root / "spec.json");
    if (!in) return std::nullopt;
    try {
        nlohmann::json j;
        in >> j;
        return j.get<DatasetSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed '" + (root / "spec.json").string() + "': " + e.what());
    }
}

DataSplits load_directory(const fs::path& root, const ModelConfig& model) {
    if (auto spec = read_spec(root)) check_dataset_compatible(model, *spec);
    const SplitMap split = read_split(root);
    DataSplits data;
    const LoadOptions options = load_options(model);
    for (const char* name : {"train", "val", "test"}) {
        if (!split.count(name)) continue;
        auto samples = load_split(root, name, options);
        (name == std::string("train") ? data.train : name == std::string("val") ? data.val : data.test) =
            std::move(samples);
    }
    return data;
}

}  // namespace

DataSplits load_data(const TrainConfig& config) {
    if (!config.dataset_dir.empty()) return load_directory(config.dataset_dir, config.model);
    std::vector<Sample> all = generate_dataset(config.synthetic_spec());
    DataSplits data;
    for (std::size_t i = 0; i < all.size(); ++i) {
        auto& dst = i < config.train_count ? data.train : (i < config.train_count + config.val_count ? data.val : data.test);
        dst.push_back(std::move(all[i]));
    }
    return data;
}

// Logging ----------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string rng_to_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng rng_from_string(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw CheckpointError("corrupt RNG state in checkpoint");
    return rng;
}

Rng shuffle_rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5348u};
    return Rng(seq);
}

// Rewrites the log keeping the header and rows up to `epoch`.
void truncate_log(const fs::path& path, std::size_t epoch) {
    std::vector<std::string> kept{kTrainLogHeader};
    std::ifstream in(path);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) <= epoch) kept.push_back(line);
    }
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
}

double sample_dsc(std::span<const double> prob, std::span<const double> gt) {
    return metrics(confusion_counts(prob, gt)).dsc;
}

}  // namespace

std::string format_log_row(const EpochLog& r) {
    return std::to_string(r.epoch) + ',' + fmt_double(r.loss) + ',' + fmt_double(r.seg_loss) + ',' +
           fmt_double(r.boundary_loss) + ',' + fmt_double(r.ric_loss) + ',' + fmt_double(r.val_dsc);
}

// Training ---------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    DataSplits owned;
    if (!options.data) owned = load_data(config);
    const DataSplits& data = options.data ? *options.data : owned;
    if (data.train.empty()) throw DataError("training split is empty");

    Network net(config.model, config.seed);
    ParamStore& params = net.params();
    AdamState adam = AdamState::init(params);
    Rng rng = shuffle_rng(config.seed);
    const LossWeights weights = config.loss.effective(config.model.ablation);

    const fs::path out_dir = config.output_dir;
    fs::create_directories(out_dir);
    const fs::path log_path = out_dir / "train_log.csv";

    TrainResult result;
    result.last_checkpoint = out_dir / "last.ckpt";
    result.best_checkpoint = out_dir / "best.ckpt";

    CheckpointMeta meta;
    meta.model = config.model;
    meta.config = config;
    if (options.resume_from) {
        const CheckpointMeta resumed = load_checkpoint(*options.resume_from, params, adam);
        if (!(resumed.model == config.model)) {
            throw ConfigError("checkpoint '" + options.resume_from->string() + "' was trained with a different model");
        }
        meta.epoch = resumed.epoch;
        meta.best_val_dsc = resumed.best_val_dsc;
        rng = rng_from_string(resumed.rng_state);
        truncate_log(log_path, resumed.epoch);
    } else {
        std::ofstream(log_path, std::ios::trunc) << kTrainLogHeader << '\n';
    }

    auto checkpoint = [&](const fs::path& path) {
        meta.rng_state = rng_to_string(rng);
        save_checkpoint(path, params, adam, meta);
    };
    if (meta.epoch >= config.epochs) {
        checkpoint(result.last_checkpoint);
        return result;
    }

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t epoch = meta.epoch + 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog row;
        row.epoch = epoch;
        double train_dsc = 0.0;
        try {
            for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
                const std::size_t stop = std::min(order.size(), start + config.batch_size);
                std::vector<const Sample*> members;
                for (std::size_t i = start; i < stop; ++i) members.push_back(&data.train[order[i]]);
                const Batch batch = make_batch(std::span<const Sample* const>(members));
                const ForwardOutputs out = net.forward(batch.images, Mode::train);
                const LossTerms terms = joint_loss(out, batch, weights);
                const double count = static_cast<double>(members.size());
                row.loss += terms.total.item() * count;
                row.seg_loss += terms.segmentation * count;
                row.boundary_loss += terms.boundary * count;
                row.ric_loss += terms.ric * count;
                const std::size_t pixels = config.model.height * config.model.width;
                for (std::size_t b = 0; b < members.size(); ++b) {
                    train_dsc += sample_dsc(out.mask.data().subspan(b * pixels, pixels),
                                            batch.masks.data().subspan(b * pixels, pixels));
                }
                params.zero_grad();
                backward(terms.total);
                adam_step(params, adam, config.lr);
                ++result.steps;
            }
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " during epoch " + std::to_string(epoch) +
                                 "; last good checkpoint: " + result.last_checkpoint.string());
        }
        const double n = static_cast<double>(order.size());
        row.loss /= n;
        row.seg_loss /= n;
        row.boundary_loss /= n;
        row.ric_loss /= n;
        row.val_dsc = data.val.empty() ? train_dsc / n : evaluate(net, data.val).mean.dsc;

        std::ofstream(log_path, std::ios::app) << format_log_row(row) << '\n';
        meta.epoch = epoch;
        const bool improved = row.val_dsc > meta.best_val_dsc;
        if (improved) meta.best_val_dsc = row.val_dsc;
        checkpoint(result.last_checkpoint);
        if (improved) checkpoint(result.best_checkpoint);
        result.log.push_back(row);
        if (options.on_epoch) options.on_epoch(row);
    }
    return result;
}

// Evaluation ---------------------------------------------------------------------

Network load_network(const fs::path& checkpoint) {
    const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
    Network net(meta.model, 0);
    AdamState scratch = AdamState::init(net.params());
    load_checkpoint(checkpoint, net.params(), scratch);
    return net;
}

EvalReport evaluate(Network& net, std::span<const Sample> samples) {
    if (samples.empty()) throw DataError("evaluation split is empty");
    NoGradGuard no_grad;
    EvalReport report;
    for (const Sample& s : samples) {
        const Sample* one[] = {&s};
        const Batch batch = make_batch(std::span<const Sample* const>(one));
        const ForwardOutputs out = net.forward(batch.images, Mode::eval);
        report.rows.push_back({s.id, metrics(confusion_counts(out.mask, batch.masks))});
    }
    const double n = static_cast<double>(report.rows.size());
    for (const auto& r : report.rows) {
        report.mean.dsc += r.values.dsc / n;
        report.mean.sensitivity += r.values.sensitivity / n;
        report.mean.specificity += r.values.specificity / n;
        report.mean.accuracy += r.values.accuracy / n;
        report.mean.miou += r.values.miou / n;
    }
    return report;
}

std::string EvalReport::to_csv() const {
    std::string out = "id,DSC,SE,SP,ACC,mIOU\n";
    auto line = [&](const std::string& id, const SegmentationMetrics& m) {
        out += id + ',' + fmt_double(m.dsc) + ',' + fmt_double(m.sensitivity) + ',' + fmt_double(m.specificity) + ',' +
               fmt_double(m.accuracy) + ',' + fmt_double(m.miou) + '\n';
    };
    for (const auto& r : rows) line(r.id, r.values);
    line("mean", mean);
    return out;
}

EvalReport evaluate(const fs::path& checkpoint, const std::string& split, const std::optional<fs::path>& dataset_dir) {
    const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
    TrainConfig config;
    if (!meta.config.is_null() && !meta.config.empty()) config = meta.config.get<TrainConfig>();
    config.model = meta.model;
    if (dataset_dir) config.dataset_dir = dataset_dir->string();
    DataSplits data = load_data(config);
    Network net = load_network(checkpoint);
    return evaluate(net, data.get(split));
}

GradCheckReport check_network_gradients(const Ablation& ablation, std::uint64_t seed,
                                        const GradCheckOptions& options) {
    ModelConfig model;
    model.height = model.width = 16;
    model.patch = 4;
    model.embed_dim = 8;
    model.layers = 2;
    model.heads = 2;
    model.fusion_channels = 8;
    model.se_reduction = 4;
    model.ablation = ablation;
    Network net(model, seed, InitOptions{.zero_heads = false});

    DatasetSpec spec;
    spec.count = 2;
    spec.height = spec.width = 16;
    spec.patch = 4;
    spec.seed = seed;
    const std::vector<Sample> samples = generate_dataset(spec);
    const Batch batch = make_batch(std::span<const Sample>(samples));
    const LossWeights weights = LossWeights{}.effective(ablation);

    auto loss_fn = [&] { return joint_loss(net.forward(batch.images, Mode::train), batch, weights).total; };
    std::vector<Parameter> trainable;
    for (const Parameter& p : net.params().entries()) {
        if (p.trainable) trainable.push_back(p);
    }
    return check_gradients(loss_fn, trainable, options);
}

void predict(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out_dir) {
    Network net = load_network(checkpoint);
    const ModelConfig& m = net.config();
    Tensor image = load_image(image_path, load_options(m));
    NoGradGuard no_grad;
    const ForwardOutputs out = net.forward(reshape(image, {1, m.channels, m.height, m.width}), Mode::eval);

    fs::create_directories(out_dir);
    auto to_image = [&](const Tensor& t, bool binarize) {
        Image8 img{m.width, m.height, 1, std::vector<std::uint8_t>(m.height * m.width)};
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            const double v = t[i];
            img.pixels[i] = binarize ? (v > 0.5 ? 255 : 0)
                                     : static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
        return img;
    };
    write_pnm(out_dir / "mask.pgm", to_image(out.mask, true));
    write_pnm(out_dir / "prob.pgm", to_image(out.mask, false));
    write_pnm(out_dir / "boundary.pgm", to_image(out.boundary, false));
    std::ofstream ric(out_dir / "ric.csv");
    ric << "index,ric\n";
    for (std::size_t i = 0; i < out.ric.numel(); ++i) ric << i << ',' << fmt_double(out.ric[i]) << '\n';
    if (!ric) throw DataError("failed writing '" + (out_dir / "ric.csv").string() + "'");
}

}  // namespace canet
