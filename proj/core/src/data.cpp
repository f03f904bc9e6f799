#include "canet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "canet/image_io.hpp"

namespace canet {

namespace fs = std::filesystem;

// DatasetSpec ----------------------------------------------------------------

std::vector<std::string> DatasetSpec::violations() const {
    std::vector<std::string> out;
    if (count == 0) out.push_back("count must be positive");
    if (height == 0 || width == 0) out.push_back("height and width must be positive");
    if (channels != 1 && channels != 3) out.push_back("channels must be 1 or 3");
    if (patch == 0) {
        out.push_back("patch must be positive");
    } else if (height % patch != 0 || width % patch != 0) {
        out.push_back("patch " + std::to_string(patch) + " must divide " + std::to_string(height) + "x" +
                      std::to_string(width));
    }
    if (min_objects == 0 || min_objects > max_objects) out.push_back("need 1 <= min_objects <= max_objects");
    if (!(overlap_probability >= 0.0 && overlap_probability <= 1.0)) {
        out.push_back("overlap_probability must lie in [0,1]");
    }
    if (overlap_probability > 0.0 && max_objects < 2) out.push_back("overlaps need max_objects >= 2");
    if (!(noise >= 0.0)) out.push_back("noise must be nonnegative");
    if (!(min_radius > 0.0 && min_radius <= max_radius && max_radius <= 0.5)) {
        out.push_back("need 0 < min_radius <= max_radius <= 0.5");
    }
    return out;
}

void DatasetSpec::validate() const {
    auto problems = violations();
    if (problems.empty()) return;
    std::string msg = "invalid dataset spec:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
    j = {{"count", s.count},
         {"height", s.height},
         {"width", s.width},
         {"channels", s.channels},
         {"patch", s.patch},
         {"min_objects", s.min_objects},
         {"max_objects", s.max_objects},
         {"overlap_probability", s.overlap_probability},
         {"noise", s.noise},
         {"min_radius", s.min_radius},
         {"max_radius", s.max_radius},
         {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
    DatasetSpec d;
    s.count = j.value("count", d.count);
    s.height = j.value("height", d.height);
    s.width = j.value("width", d.width);
    s.channels = j.value("channels", d.channels);
    s.patch = j.value("patch", d.patch);
    s.min_objects = j.value("min_objects", d.min_objects);
    s.max_objects = j.value("max_objects", d.max_objects);
    s.overlap_probability = j.value("overlap_probability", d.overlap_probability);
    s.noise = j.value("noise", d.noise);
    s.min_radius = j.value("min_radius", d.min_radius);
    s.max_radius = j.value("max_radius", d.max_radius);
    s.seed = j.value("seed", d.seed);
}

// Rendering --------------------------------------------------------------------

std::vector<std::uint8_t> ellipse_indicator(const Ellipse& e, std::size_t height, std::size_t width) {
    std::vector<std::uint8_t> out(height * width, 0);
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t col = 0; col < width; ++col) {
            const double dx = static_cast<double>(col) + 0.5 - e.cx;
            const double dy = static_cast<double>(r) + 0.5 - e.cy;
            const double u = (c * dx + s * dy) / e.rx;
            const double v = (-s * dx + c * dy) / e.ry;
            out[r * width + col] = u * u + v * v <= 1.0 ? 1 : 0;
        }
    }
    return out;
}

Tensor boundary_gt(const Tensor& mask) {
    if (mask.rank() != 3 || mask.dim(0) != 1) {
        throw DimensionError("boundary_gt: expected [1 x H x W], got " + shape_str(mask.shape()));
    }
    const long h = static_cast<long>(mask.dim(1)), w = static_cast<long>(mask.dim(2));
    std::vector<double> out(mask.numel(), 0.0);
    const long dr[] = {0, -1, 1, 0, 0};
    const long dc[] = {0, 0, 0, -1, 1};
    for (long r = 0; r < h; ++r) {
        for (long c = 0; c < w; ++c) {
            double hi = 0.0, lo = 1.0;
            for (int k = 0; k < 5; ++k) {
                const long rr = r + dr[k], cc = c + dc[k];
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                const double v = mask[static_cast<std::size_t>(rr * w + cc)];
                hi = std::max(hi, v);
                lo = std::min(lo, v);
            }
            out[static_cast<std::size_t>(r * w + c)] = hi - lo;
        }
    }
    return Tensor::from(mask.shape(), std::move(out));
}

Tensor ric_gt(const Tensor& mask, std::size_t patch) {
    if (mask.rank() != 3 || mask.dim(0) != 1) {
        throw DimensionError("ric_gt: expected [1 x H x W], got " + shape_str(mask.shape()));
    }
    const std::size_t h = mask.dim(1), w = mask.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ConfigError("ric_gt: patch " + std::to_string(patch) + " does not divide " + std::to_string(h) + "x" +
                          std::to_string(w));
    }
    const std::size_t gh = h / patch, gw = w / patch;
    std::vector<std::size_t> counts(gh * gw, 0);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (mask[r * w + c] > 0.5) ++counts[(r / patch) * gw + c / patch];
        }
    }
    std::vector<double> out(counts.size());
    const double area = static_cast<double>(patch * patch);
    for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<double>(counts[i]) / area;
    return Tensor::from({counts.size(), 1}, std::move(out));
}

namespace {

Sample finish_sample(std::string id, Tensor image, Tensor mask, std::size_t patch) {
    Sample s;
    s.id = std::move(id);
    s.boundary = boundary_gt(mask);
    s.ric = ric_gt(mask, patch);
    s.image = std::move(image);
    s.mask = std::move(mask);
    return s;
}

}  // namespace

Sample render_sample(std::span<const Ellipse> objects, std::span<const double> background, const DatasetSpec& spec,
                     Rng& rng) {
    const std::size_t h = spec.height, w = spec.width, ch = spec.channels;
    if (background.size() != ch) throw ContractError("render_sample: background needs one value per channel");
    std::vector<double> image(ch * h * w);
    for (std::size_t c = 0; c < ch; ++c) std::fill_n(image.begin() + static_cast<long>(c * h * w), h * w, background[c]);
    std::vector<double> mask(h * w, 0.0);
    for (const Ellipse& e : objects) {
        if (e.color.size() != ch) throw ContractError("render_sample: ellipse color needs one value per channel");
        const auto inside = ellipse_indicator(e, h, w);
        for (std::size_t i = 0; i < h * w; ++i) {
            if (!inside[i]) continue;
            mask[i] = 1.0;
            for (std::size_t c = 0; c < ch; ++c) image[c * h * w + i] = e.color[c];
        }
    }
    if (spec.noise > 0.0) {
        std::normal_distribution<double> gauss(0.0, spec.noise);
        for (double& v : image) v = std::clamp(v + gauss(rng), 0.0, 1.0);
    }
    return finish_sample("", Tensor::from({ch, h, w}, std::move(image)), Tensor::from({1, h, w}, std::move(mask)),
                         spec.patch);
}

SceneLayout generate_layout(Rng& rng, const DatasetSpec& spec) {
    spec.validate();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
    const double extent = std::min(h, w);

    auto random_ellipse = [&] {
        Ellipse e;
        const double span = spec.max_radius - spec.min_radius;
        e.rx = extent * (spec.min_radius + span * unit(rng));
        e.ry = extent * (spec.min_radius + span * unit(rng));
        e.angle = std::numbers::pi * unit(rng);
        e.cx = w * (0.15 + 0.7 * unit(rng));
        e.cy = h * (0.15 + 0.7 * unit(rng));
        e.color.resize(spec.channels);
        for (double& v : e.color) v = 0.55 + 0.45 * unit(rng);
        return e;
    };
    auto pick_count = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };

    const bool overlap = spec.max_objects >= 2 && unit(rng) < spec.overlap_probability;
    const std::size_t count =
        overlap ? pick_count(std::max<std::size_t>(2, spec.min_objects), spec.max_objects)
                : pick_count(spec.min_objects, spec.max_objects);

    std::vector<double> background(spec.channels);
    for (double& v : background) v = 0.05 + 0.25 * unit(rng);

    std::vector<Ellipse> objects;
    std::vector<std::uint8_t> occupied(spec.height * spec.width, 0);
    auto claim = [&](const std::vector<std::uint8_t>& inside) {
        for (std::size_t i = 0; i < inside.size(); ++i) occupied[i] |= inside[i];
    };
    if (overlap) {
        // The second object is centered on a pixel of the first, so they share it.
        Ellipse first = random_ellipse();
        const auto inside = ellipse_indicator(first, spec.height, spec.width);
        std::vector<std::size_t> pixels;
        for (std::size_t i = 0; i < inside.size(); ++i) {
            if (inside[i]) pixels.push_back(i);
        }
        objects.push_back(first);
        Ellipse second = random_ellipse();
        const std::size_t anchor = pixels[std::uniform_int_distribution<std::size_t>(0, pixels.size() - 1)(rng)];
        second.cx = static_cast<double>(anchor % spec.width) + 0.5;
        second.cy = static_cast<double>(anchor / spec.width) + 0.5;
        objects.push_back(second);
        while (objects.size() < count) objects.push_back(random_ellipse());
    } else {
        constexpr int kAttempts = 64;
        for (std::size_t k = 0; k < count; ++k) {
            for (int attempt = 0; attempt < kAttempts; ++attempt) {
                Ellipse e = random_ellipse();
                const auto inside = ellipse_indicator(e, spec.height, spec.width);
                bool clash = false;
                for (std::size_t i = 0; i < inside.size() && !clash; ++i) clash = inside[i] && occupied[i];
                if (clash) continue;
                claim(inside);
                objects.push_back(std::move(e));
                break;
            }
        }
    }
    return {std::move(objects), std::move(background)};
}

Sample generate_sample(Rng& rng, const DatasetSpec& spec) {
    const SceneLayout layout = generate_layout(rng, spec);
    return render_sample(layout.objects, layout.background, spec, rng);
}

Sample generate_indexed(const DatasetSpec& spec, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    Rng rng(seq);
    Sample s = generate_sample(rng, spec);
    s.id = "synth_" + std::to_string(index);
    return s;
}

std::vector<Sample> generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    std::vector<Sample> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_indexed(spec, i));
    return out;
}

std::vector<std::string> sample_violations(const Sample& s, std::size_t patch) {
    std::vector<std::string> out;
    if (s.image.rank() != 3 || s.mask.shape() != Shape{1, s.image.dim(1), s.image.dim(2)}) {
        out.push_back("mask shape does not match image");
        return out;
    }
    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        out.push_back("patch does not divide image extent");
        return out;
    }
    for (double v : s.image.data()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            out.push_back("image value outside [0,1]");
            break;
        }
    }
    std::size_t foreground = 0;
    for (double v : s.mask.data()) {
        if (v != 0.0 && v != 1.0) {
            out.push_back("mask is not binary");
            break;
        }
        foreground += v == 1.0;
    }
    for (double v : s.boundary.data()) {
        if (v != 0.0 && v != 1.0) {
            out.push_back("boundary is not binary");
            break;
        }
    }
    const std::size_t n = (h / patch) * (w / patch);
    if (s.ric.shape() != Shape{n, 1}) {
        out.push_back("ric has shape " + shape_str(s.ric.shape()) + ", expected [" + std::to_string(n) + "x1]");
        return out;
    }
    double total = 0.0;
    for (double v : s.ric.data()) {
        if (v < 0.0 || v > 1.0) out.push_back("ric value outside [0,1]");
        total += v * static_cast<double>(patch * patch);
    }
    if (std::llround(total) != static_cast<long long>(foreground)) {
        out.push_back("sum(ric) * p^2 differs from foreground count");
    }
    // boundary must stay within one pixel of the mask's level-set edge
    const Tensor edge = boundary_gt(s.mask);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (s.boundary[r * w + c] == 0.0) continue;
            bool near = false;
            for (std::size_t rr = r ? r - 1 : 0; rr <= std::min(h - 1, r + 1) && !near; ++rr) {
                for (std::size_t cc = c ? c - 1 : 0; cc <= std::min(w - 1, c + 1) && !near; ++cc) {
                    near = edge[rr * w + cc] != 0.0;
                }
            }
            if (!near) {
                out.push_back("boundary pixel away from mask edge");
                return out;
            }
        }
    }
    return out;
}

// Ingestion --------------------------------------------------------------------

namespace {

// Half-pixel-centered bilinear resize of one 8-bit channel into [0,1].
void resize_bilinear(const Image8& img, std::size_t ch, std::size_t out_h, std::size_t out_w, double* dst) {
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    for (std::size_t r = 0; r < out_h; ++r) {
        const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t c = 0; c < out_w; ++c) {
            const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = (1.0 - tx) * img.at(y0, x0, ch) + tx * img.at(y0, x1, ch);
            const double bottom = (1.0 - tx) * img.at(y1, x0, ch) + tx * img.at(y1, x1, ch);
            dst[r * out_w + c] = ((1.0 - ty) * top + ty * bottom) / 255.0;
        }
    }
}

Tensor image_tensor(const Image8& img, const fs::path& path, const LoadOptions& options) {
    if (img.channels != options.channels) {
        throw DataError("image '" + path.string() + "' has " + std::to_string(img.channels) + " channel(s), expected " +
                        std::to_string(options.channels));
    }
    const std::size_t h = options.target_height, w = options.target_width;
    std::vector<double> data(img.channels * h * w);
    for (std::size_t c = 0; c < img.channels; ++c) {
        if (img.height == h && img.width == w) {
            for (std::size_t i = 0; i < h * w; ++i) data[c * h * w + i] = img.pixels[i * img.channels + c] / 255.0;
        } else {
            resize_bilinear(img, c, h, w, data.data() + c * h * w);
        }
    }
    return Tensor::from({img.channels, h, w}, std::move(data));
}

}  // namespace

Tensor load_image(const fs::path& image_path, const LoadOptions& options) {
    return image_tensor(read_image(image_path), image_path, options);
}

Sample load_pair(const fs::path& image_path, const fs::path& mask_path, const LoadOptions& options) {
    Tensor image = load_image(image_path, options);
    const Image8 m = read_image(mask_path);
    if (m.channels != 1) {
        throw DataError("mask '" + mask_path.string() + "' must be single-channel, has " + std::to_string(m.channels));
    }
    const std::size_t h = options.target_height, w = options.target_width;
    std::vector<double> mask(h * w);
    for (std::size_t r = 0; r < h; ++r) {
        const std::size_t sr = std::min(m.height - 1, (2 * r + 1) * m.height / (2 * h));
        for (std::size_t c = 0; c < w; ++c) {
            const std::size_t sc = std::min(m.width - 1, (2 * c + 1) * m.width / (2 * w));
            mask[r * w + c] = m.at(sr, sc, 0) > 127 ? 1.0 : 0.0;
        }
    }
    return finish_sample(image_path.stem().string(), std::move(image), Tensor::from({1, h, w}, std::move(mask)),
                         options.patch);
}

SplitMap read_split(const fs::path& root) {
    const fs::path file = root / "split.json";
    std::ifstream in(file);
    if (!in) throw DataError("cannot read '" + file.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
        return j.get<SplitMap>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed '" + file.string() + "': " + e.what());
    }
}

namespace {

fs::path find_with_extension(const fs::path& dir, const std::string& id, std::initializer_list<const char*> exts) {
    for (const char* ext : exts) {
        fs::path candidate = dir / (id + ext);
        if (fs::exists(candidate)) return candidate;
    }
    throw DataError("no file for id '" + id + "' in '" + dir.string() + "'");
}

}  // namespace

std::vector<Sample> load_split(const fs::path& root, const std::string& split, const LoadOptions& options) {
    const SplitMap splits = read_split(root);
    auto it = splits.find(split);
    if (it == splits.end()) throw DataError("split '" + split + "' not listed in '" + (root / "split.json").string() + "'");
    std::vector<Sample> out;
    for (const std::string& id : it->second) {
        const fs::path image = find_with_extension(root / "images", id, {".png", ".ppm", ".pgm"});
        const fs::path mask = find_with_extension(root / "masks", id, {".png", ".pgm"});
        Sample s = load_pair(image, mask, options);
        s.id = id;
        out.push_back(std::move(s));
    }
    return out;
}

SplitMap synthetic_split(std::size_t count, std::size_t train, std::size_t val) {
    if (train + val > count) throw ConfigError("split sizes exceed the dataset size " + std::to_string(count));
    SplitMap split{{"train", {}}, {"val", {}}, {"test", {}}};
    for (std::size_t i = 0; i < count; ++i) {
        const char* name = i < train ? "train" : (i < train + val ? "val" : "test");
        split[name].push_back("synth_" + std::to_string(i));
    }
    return split;
}

void write_synthetic_dataset(const fs::path& root, const DatasetSpec& spec, const SplitMap& split) {
    spec.validate();
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    auto to_byte = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    for (std::size_t i = 0; i < spec.count; ++i) {
        const Sample s = generate_indexed(spec, i);
        const std::size_t h = spec.height, w = spec.width, ch = spec.channels;
        Image8 img{w, h, ch, std::vector<std::uint8_t>(h * w * ch)};
        for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t p = 0; p < h * w; ++p) img.pixels[p * ch + c] = to_byte(s.image[c * h * w + p]);
        }
        Image8 mask{w, h, 1, std::vector<std::uint8_t>(h * w)};
        for (std::size_t p = 0; p < h * w; ++p) mask.pixels[p] = s.mask[p] > 0.5 ? 255 : 0;
        write_pnm(root / "images" / (s.id + (ch == 1 ? ".pgm" : ".ppm")), img);
        write_pnm(root / "masks" / (s.id + ".pgm"), mask);
    }
    std::ofstream(root / "spec.json") << nlohmann::json(spec).dump(2) << '\n';
    std::ofstream(root / "split.json") << nlohmann::json(split).dump(2) << '\n';
}

// Batching ---------------------------------------------------------------------

Batch make_batch(std::span<const Sample* const> samples) {
    if (samples.empty()) throw ContractError("make_batch: no samples");
    auto stack = [&](auto member) {
        const Tensor& first = samples.front()->*member;
        Shape shape = first.shape();
        shape.insert(shape.begin(), samples.size());
        std::vector<double> data;
        data.reserve(shape_numel(shape));
        for (const Sample* s : samples) {
            const Tensor& t = s->*member;
            if (t.shape() != first.shape()) throw DimensionError("make_batch: samples differ in shape");
            data.insert(data.end(), t.data().begin(), t.data().end());
        }
        return Tensor::from(std::move(shape), std::move(data));
    };
    return {stack(&Sample::image), stack(&Sample::mask), stack(&Sample::boundary), stack(&Sample::ric)};
}

Batch make_batch(std::span<const Sample> samples) {
    std::vector<const Sample*> ptrs;
    for (const Sample& s : samples) ptrs.push_back(&s);
    return make_batch(std::span<const Sample* const>(ptrs));
}

}  // namespace canet
