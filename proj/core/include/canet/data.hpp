#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canet/params.hpp"
#include "canet/tensor.hpp"

namespace canet {

/// One supervised example.
struct Sample {
    std::string id;
    Tensor image;     // [C x H x W], values in [0,1]
    Tensor mask;      // [1 x H x W], {0,1}
    Tensor boundary;  // [1 x H x W], {0,1}
    Tensor ric;       // [N x 1], foreground fraction per patch, row-major patch order
};

/// Parameters of the synthetic overlapping-ellipse generator.
struct DatasetSpec {
    std::size_t count = 8;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 3;
    std::size_t patch = 8;
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    double overlap_probability = 0.5;
    double noise = 0.05;
    // Ellipse semi-axes as fractions of min(H, W).
    double min_radius = 0.12;
    double max_radius = 0.30;
    std::uint64_t seed = 0;

    std::vector<std::string> violations() const;
    void validate() const;

    bool operator==(const DatasetSpec&) const = default;
};

void to_json(nlohmann::json& j, const DatasetSpec& spec);
void from_json(const nlohmann::json& j, DatasetSpec& spec);

/// Filled ellipse in pixel coordinates; pixel (r, c) has its center at
/// (c + 0.5, r + 0.5).
struct Ellipse {
    double cx = 0, cy = 0;
    double rx = 1, ry = 1;
    double angle = 0;           // radians
    std::vector<double> color;  // one intensity per channel
};

/// Row-major {0,1} indicator of the pixels whose centers lie inside `e`.
std::vector<std::uint8_t> ellipse_indicator(const Ellipse& e, std::size_t height, std::size_t width);

/// Paints `objects` in order over `background`, adds N(0, noise) clipped to
/// [0,1], and derives mask, boundary and RIC targets.
Sample render_sample(std::span<const Ellipse> objects, std::span<const double> background, const DatasetSpec& spec,
                     Rng& rng);

/// Objects and background color of one synthetic image, before rendering.
struct SceneLayout {
    std::vector<Ellipse> objects;
    std::vector<double> background;
};

/// Draws 1..k ellipses; with probability `overlap_probability` at least two of
/// them share a pixel, otherwise all are pairwise disjoint.
SceneLayout generate_layout(Rng& rng, const DatasetSpec& spec);

/// generate_layout followed by render_sample.
Sample generate_sample(Rng& rng, const DatasetSpec& spec);

/// Sample `index` of the dataset described by `spec` (independent per index).
Sample generate_indexed(const DatasetSpec& spec, std::size_t index);
std::vector<Sample> generate_dataset(const DatasetSpec& spec);

/// Morphological gradient with a 3x3 cross: dilation(mask) - erosion(mask).
/// Neighborhoods are clipped at the image border.
Tensor boundary_gt(const Tensor& mask);

/// Foreground fraction of each p x p patch, [N x 1].
Tensor ric_gt(const Tensor& mask, std::size_t patch);

/// Returns violated Sample invariants; empty when the sample is consistent.
std::vector<std::string> sample_violations(const Sample& sample, std::size_t patch);

struct LoadOptions {
    std::size_t target_height = 256;
    std::size_t target_width = 256;
    std::size_t patch = 16;
    std::size_t channels = 3;
};

/// Loads an image/mask pair: bilinear resize of the image, nearest resize of
/// the mask, mask binarized as value > 127.
Sample load_pair(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                 const LoadOptions& options);

/// Image only, resized as in load_pair. Returns [C x H x W].
Tensor load_image(const std::filesystem::path& image_path, const LoadOptions& options);

// Dataset directories -------------------------------------------------------
//
//   <root>/images/<id>.png|pgm|ppm
//   <root>/masks/<id>.png|pgm
//   <root>/split.json   {"train": [ids], "val": [ids], "test": [ids]}
//   <root>/spec.json    (synthetic datasets only)

using SplitMap = std::map<std::string, std::vector<std::string>>;

SplitMap read_split(const std::filesystem::path& root);
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& split, const LoadOptions& options);

/// Splits a synthetic dataset by index: the first `train` samples, then `val`,
/// then the rest as test.
SplitMap synthetic_split(std::size_t count, std::size_t train, std::size_t val);

/// Writes every sample of `spec` as PGM/PPM plus spec.json and split.json.
void write_synthetic_dataset(const std::filesystem::path& root, const DatasetSpec& spec, const SplitMap& split);

/// Stacks samples into [B x ...] tensors.
struct Batch {
    Tensor images;      // [B x C x H x W]
    Tensor masks;       // [B x 1 x H x W]
    Tensor boundaries;  // [B x 1 x H x W]
    Tensor ric;         // [B x N x 1]
};
Batch make_batch(std::span<const Sample* const> samples);
Batch make_batch(std::span<const Sample> samples);

}  // namespace canet
