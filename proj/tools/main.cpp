// canet command line: gen-data, train, eval, predict, gradcheck.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "canet/trainer.hpp"

namespace {

using canet::TrainConfig;
namespace fs = std::filesystem;

// Options whose JSON key is the option name with dashes turned into
// underscores. Flags given on the command line override the --config file.
struct ConfigFlags {
    TrainConfig values;
    std::vector<CLI::Option*> options;

    void attach(CLI::App& app) {
        auto& m = values.model;
        auto add = [&](const std::string& name, auto& target, const std::string& help) {
            options.push_back(app.add_option("--" + name, target, help));
        };
        add("height", m.height, "Input height");
        add("width", m.width, "Input width");
        add("channels", m.channels, "Input channels");
        add("patch", m.patch, "Transformer patch size p");
        add("embed-dim", m.embed_dim, "Token width K");
        add("layers", m.layers, "Transformer layers L");
        add("heads", m.heads, "Attention heads M");
        add("fusion-channels", m.fusion_channels, "CNN fusion channels");
        add("se-reduction", m.se_reduction, "Channel-attention reduction r");
        options.push_back(app.add_flag("--no-boundary", m.ablation.no_boundary, "Remove the boundary branch"));
        options.push_back(app.add_flag("--no-transformer", m.ablation.no_transformer, "Remove the Transformer stream"));
        options.push_back(
            app.add_flag("--no-ctx-attention", m.ablation.no_ctx_attention, "Remove the contextual attention"));
        add("lambda-seg", values.loss.segmentation, "Segmentation loss weight");
        add("lambda-boundary", values.loss.boundary, "Boundary loss weight");
        add("lambda-ric", values.loss.ric, "RIC loss weight");
        add("lr", values.lr, "Adam learning rate");
        add("batch-size", values.batch_size, "Mini-batch size");
        add("epochs", values.epochs, "Training epochs");
        add("seed", values.seed, "Initialization and shuffling seed");
        add("dataset-dir", values.dataset_dir, "Dataset directory (empty: synthetic)");
        add("samples", values.samples, "Synthetic dataset size");
        add("train-count", values.train_count, "Synthetic training samples");
        add("val-count", values.val_count, "Synthetic validation samples");
        add("min-objects", values.min_objects, "Synthetic objects per image, minimum");
        add("max-objects", values.max_objects, "Synthetic objects per image, maximum");
        add("overlap-probability", values.overlap_probability, "Probability of overlapping objects");
        add("noise", values.noise, "Synthetic pixel noise std");
        add("min-radius", values.min_radius, "Synthetic ellipse semi-axis, minimum (fraction of extent)");
        add("max-radius", values.max_radius, "Synthetic ellipse semi-axis, maximum (fraction of extent)");
        add("data-seed", values.data_seed, "Synthetic dataset seed");
        add("output-dir", values.output_dir, "Run directory");
    }

    TrainConfig resolve(const std::string& config_file) const {
        nlohmann::json merged = TrainConfig{};
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in) throw canet::ConfigError("cannot open config file '" + config_file + "'");
            nlohmann::json file;
            try {
                in >> file;
            } catch (const nlohmann::json::exception& e) {
                throw canet::ConfigError("malformed config file '" + config_file + "': " + e.what());
            }
            merged.update(file);
        }
        const nlohmann::json given = values;
        for (const CLI::Option* opt : options) {
            if (opt->count() == 0) continue;
            std::string key = opt->get_name().substr(2);
            std::replace(key.begin(), key.end(), '-', '_');
            merged[key] = given.at(key);
        }
        try {
            return merged.get<TrainConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw canet::ConfigError(std::string("bad configuration value: ") + e.what());
        }
    }
};

void print_report(const canet::GradCheckReport& r) {
    std::printf("checked %zu entries, %zu refined, %zu unresolved; worst %s[%zu] rel %.3e (analytic %.9g numeric %.9g)\n",
                r.checked, r.refined, r.unresolved, r.worst.tensor.c_str(), r.worst.index, r.worst.rel_error,
                r.worst.analytic, r.worst.numeric);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contextual attention segmentation network"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset directory");
    canet::DatasetSpec spec;
    std::string gen_out;
    std::size_t gen_train = 0, gen_val = 0;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", spec.count, "Number of samples");
    gen->add_option("--height", spec.height, "Image height");
    gen->add_option("--width", spec.width, "Image width");
    gen->add_option("--channels", spec.channels, "1 or 3");
    gen->add_option("--patch", spec.patch, "Patch size for RIC targets");
    gen->add_option("--min-objects", spec.min_objects, "Objects per image, minimum");
    gen->add_option("--max-objects", spec.max_objects, "Objects per image, maximum");
    gen->add_option("--overlap-probability", spec.overlap_probability, "Probability of overlapping objects");
    gen->add_option("--noise", spec.noise, "Pixel noise std");
    gen->add_option("--min-radius", spec.min_radius, "Ellipse semi-axis, minimum (fraction of extent)");
    gen->add_option("--max-radius", spec.max_radius, "Ellipse semi-axis, maximum (fraction of extent)");
    gen->add_option("--seed", spec.seed, "Dataset seed");
    gen->add_option("--train", gen_train, "Training samples (default: 80%)");
    gen->add_option("--val", gen_val, "Validation samples");

    // train
    auto* tr = app.add_subcommand("train", "Train a model");
    ConfigFlags flags;
    flags.attach(*tr);
    std::string config_file, resume;
    tr->add_option("--config", config_file, "JSON file with TrainConfig fields");
    tr->add_option("--resume", resume, "Checkpoint directory to resume from");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string ev_ckpt, ev_split = "test", ev_dataset, ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required();
    ev->add_option("--split", ev_split, "train, val or test");
    ev->add_option("--dataset-dir", ev_dataset, "Dataset directory (default: the training dataset)");
    ev->add_option("--out", ev_out, "CSV output file (default: stdout)");

    // predict
    auto* pr = app.add_subcommand("predict", "Run a checkpoint on one image");
    std::string pr_ckpt, pr_image, pr_out = "prediction";
    pr->add_option("--checkpoint", pr_ckpt, "Checkpoint directory")->required();
    pr->add_option("--image", pr_image, "PNG or PNM image")->required();
    pr->add_option("--out", pr_out, "Output directory");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the reduced-scale network");
    canet::Ablation gc_ablation;
    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-4;
    gc->add_flag("--no-boundary", gc_ablation.no_boundary);
    gc->add_flag("--no-transformer", gc_ablation.no_transformer);
    gc->add_flag("--no-ctx-attention", gc_ablation.no_ctx_attention);
    gc->add_option("--seed", gc_seed, "Initialization seed");
    gc->add_option("--tolerance", gc_tol, "Maximum relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            const std::size_t train = gen->count("--train") ? gen_train : spec.count * 4 / 5;
            if (train + gen_val > spec.count) throw canet::ConfigError("--train + --val exceeds --count");
            canet::write_synthetic_dataset(gen_out, spec, canet::synthetic_split(spec.count, train, gen_val));
            std::printf("wrote %zu samples to %s\n", spec.count, gen_out.c_str());
        } else if (*tr) {
            const TrainConfig config = flags.resolve(config_file);
            config.validate();
            fs::create_directories(config.output_dir);
            std::ofstream(fs::path(config.output_dir) / "config.json") << nlohmann::json(config).dump(2) << '\n';
            canet::TrainOptions options;
            if (!resume.empty()) options.resume_from = resume;
            options.on_epoch = [](const canet::EpochLog& row) {
                std::printf("%s\n", canet::format_log_row(row).c_str());
                std::fflush(stdout);
            };
            std::printf("%s\n", canet::kTrainLogHeader);
            const auto result = canet::train(config, options);
            std::printf("%llu steps; last checkpoint %s\n", static_cast<unsigned long long>(result.steps),
                        result.last_checkpoint.c_str());
        } else if (*ev) {
            std::optional<fs::path> dataset;
            if (!ev_dataset.empty()) dataset = ev_dataset;
            const std::string csv = canet::evaluate(ev_ckpt, ev_split, dataset).to_csv();
            if (ev_out.empty()) {
                std::cout << csv;
            } else {
                std::ofstream(ev_out) << csv;
            }
        } else if (*pr) {
            canet::predict(pr_ckpt, pr_image, pr_out);
            std::printf("wrote %s/{mask.pgm,prob.pgm,boundary.pgm,ric.csv}\n", pr_out.c_str());
        } else if (*gc) {
            const auto report = canet::check_network_gradients(gc_ablation, gc_seed);
            print_report(report);
            const bool ok = report.unresolved == 0 && report.max_rel_error() <= gc_tol;
            std::printf("%s\n", ok ? "ok" : "FAILED");
            return ok ? 0 : 3;
        }
    } catch (const canet::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const canet::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const canet::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return 2;
    } catch (const canet::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const canet::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    }
    return 0;
}
