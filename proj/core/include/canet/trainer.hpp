#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canet/checkpoint.hpp"
#include "canet/data.hpp"
#include "canet/gradcheck.hpp"
#include "canet/losses_metrics.hpp"
#include "canet/network.hpp"

namespace canet {

/// Every knob of a training run. Serialized flat: one JSON key per field.
struct TrainConfig {
    ModelConfig model;
    LossWeights loss;
    double lr = 1e-4;
    std::size_t batch_size = 4;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;

    /// Dataset directory (images/, masks/, split.json). Empty selects the
    /// synthetic generator below.
    std::string dataset_dir;
    std::size_t samples = 8;  // synthetic dataset size
    std::size_t train_count = 8;
    std::size_t val_count = 0;  // remaining samples form the test split
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    double overlap_probability = 0.5;
    double noise = 0.05;
    double min_radius = 0.12;
    double max_radius = 0.30;
    std::uint64_t data_seed = 0;

    std::string output_dir = "run";

    DatasetSpec synthetic_spec() const;
    std::vector<std::string> violations() const;
    /// Throws ConfigError listing every violated invariant.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct DataSplits {
    std::vector<Sample> train, val, test;
    const std::vector<Sample>& get(const std::string& split) const;
};

DataSplits load_data(const TrainConfig& config);

/// One row of train_log.csv.
struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0, seg_loss = 0, boundary_loss = 0, ric_loss = 0;
    double val_dsc = 0;
};

inline constexpr const char* kTrainLogHeader = "epoch,loss,seg_loss,boundary_loss,ric_loss,val_dsc";

std::string format_log_row(const EpochLog& row);

struct TrainOptions {
    /// Continue from this checkpoint (epoch counter, parameters, optimizer
    /// moments and shuffling RNG are restored).
    std::optional<std::filesystem::path> resume_from;
    /// Use these splits instead of building them from the config.
    const DataSplits* data = nullptr;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochLog> log;  // epochs run by this call
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;
    std::uint64_t steps = 0;
};

/// Runs Adam over shuffled mini-batches. Per epoch: appends to
/// `<output_dir>/train_log.csv` and rewrites `last.ckpt`; `best.ckpt` tracks
/// the best validation DSC (training-batch DSC when there is no val split).
/// A non-finite loss throws NumericalError and leaves the last checkpoint.
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

/// Network reconstructed from a checkpoint directory.
Network load_network(const std::filesystem::path& checkpoint);

struct SampleMetrics {
    std::string id;
    SegmentationMetrics values;
};

struct EvalReport {
    std::vector<SampleMetrics> rows;
    SegmentationMetrics mean;
    /// CSV: header `id,DSC,SE,SP,ACC,mIOU`, one row per sample, final `mean` row.
    std::string to_csv() const;
};

/// Eval-mode forward pass per sample.
EvalReport evaluate(Network& net, std::span<const Sample> samples);
/// Loads `split` of the config's dataset (or the dataset directory given) and
/// checks it against the checkpoint's model dimensions.
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::string& split,
                    const std::optional<std::filesystem::path>& dataset_dir = std::nullopt);

/// Throws CheckpointError when a dataset of the given native extent cannot
/// feed the model.
void check_dataset_compatible(const ModelConfig& model, const DatasetSpec& dataset);

/// Reduced-scale network check: 16x16 inputs, p=4, L=2, C_f=8, randomly
/// initialized heads, joint loss over a synthetic batch of two.
GradCheckReport check_network_gradients(const Ablation& ablation, std::uint64_t seed,
                                        const GradCheckOptions& options = {});

/// Writes mask.pgm (Y' > 0.5 as 0/255), prob.pgm and boundary.pgm (scaled to
/// 8 bits) and ric.csv into `out_dir`.
void predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
             const std::filesystem::path& out_dir);

}  // namespace canet
