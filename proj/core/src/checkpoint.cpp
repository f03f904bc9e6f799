#include "canet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace canet {

namespace fs = std::filesystem;

namespace {

void append_le(std::vector<char>& out, std::span<const double> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * sizeof(double));
    char* dst = out.data() + start;
    for (double v : values) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
}

void read_le(const std::vector<char>& blob, std::size_t offset, std::span<double> out) {
    const char* src = blob.data() + offset * sizeof(double);
    for (double& v : out) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(*src++)) << (8 * b);
        v = std::bit_cast<double>(bits);
    }
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read '" + path.string() + "'");
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

nlohmann::json read_manifest(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot read '" + path.string() + "'");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed manifest '" + path.string() + "': " + e.what());
    }
    const std::string format = manifest.value("format", std::string("<missing>"));
    if (format != kCheckpointFormat) {
        throw CheckpointError("checkpoint format '" + format + "' in '" + path.string() + "' is not supported (expected '" +
                              kCheckpointFormat + "')");
    }
    return manifest;
}

// Blob range [offset, offset+count) in doubles, checked against the file size.
void check_range(const std::vector<char>& blob, std::size_t offset, std::size_t count, const std::string& file,
                 const std::string& name) {
    if ((offset + count) * sizeof(double) > blob.size()) {
        throw CheckpointError(file + " is truncated: data for '" + name + "' needs bytes up to " +
                              std::to_string((offset + count) * sizeof(double)) + ", file has " +
                              std::to_string(blob.size()));
    }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamStore& params, const AdamState& optim, const CheckpointMeta& meta) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["model"] = meta.model;
    manifest["training"] = {{"epoch", meta.epoch}, {"best_val_dsc", meta.best_val_dsc}, {"rng_state", meta.rng_state}};
    manifest["config"] = meta.config;

    std::vector<char> param_blob;
    nlohmann::json entries = nlohmann::json::array();
    std::size_t offset = 0;
    for (const Parameter& p : params.entries()) {
        entries.push_back({{"name", p.name},
                           {"shape", p.tensor.shape()},
                           {"offset", offset},
                           {"count", p.tensor.numel()},
                           {"trainable", p.trainable}});
        append_le(param_blob, p.tensor.data());
        offset += p.tensor.numel();
    }
    manifest["params"] = entries;

    std::vector<char> optim_blob;
    nlohmann::json moments = nlohmann::json::array();
    offset = 0;
    for (std::size_t i = 0; i < optim.names.size(); ++i) {
        const std::size_t n = optim.first_moment[i].size();
        moments.push_back({{"name", optim.names[i]}, {"first_offset", offset}, {"second_offset", offset + n}, {"count", n}});
        append_le(optim_blob, optim.first_moment[i]);
        append_le(optim_blob, optim.second_moment[i]);
        offset += 2 * n;
    }
    manifest["optimizer"] = {{"step", optim.step},
                             {"beta1", optim.options.beta1},
                             {"beta2", optim.options.beta2},
                             {"eps", optim.options.eps},
                             {"moments", moments}};

    write_file(dir / "params.bin", param_blob);
    write_file(dir / "optim.bin", optim_blob);
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
    const nlohmann::json manifest = read_manifest(dir);
    CheckpointMeta meta;
    try {
        meta.model = manifest.at("model").get<ModelConfig>();
        const auto& training = manifest.at("training");
        meta.epoch = training.at("epoch").get<std::uint64_t>();
        meta.best_val_dsc = training.at("best_val_dsc").get<double>();
        meta.rng_state = training.at("rng_state").get<std::string>();
        meta.config = manifest.value("config", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("incomplete manifest in '" + dir.string() + "': " + e.what());
    }
    return meta;
}

CheckpointMeta load_checkpoint(const fs::path& dir, ParamStore& params, AdamState& optim) {
    const nlohmann::json manifest = read_manifest(dir);
    CheckpointMeta meta = read_checkpoint_meta(dir);
    const std::vector<char> param_blob = read_file(dir / "params.bin");
    const std::vector<char> optim_blob = read_file(dir / "optim.bin");
    try {
        const auto& entries = manifest.at("params");
        if (entries.size() != params.size()) {
            throw CheckpointError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model has " +
                                  std::to_string(params.size()));
        }
        std::vector<std::vector<double>> staged;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            const Parameter& p = params.entries()[i];
            const std::string name = e.at("name").get<std::string>();
            if (name != p.name || e.at("shape").get<Shape>() != p.tensor.shape()) {
                throw CheckpointError("checkpoint tensor '" + name + "' does not match model tensor '" + p.name + "' " +
                                      shape_str(p.tensor.shape()));
            }
            const std::size_t offset = e.at("offset").get<std::size_t>();
            const std::size_t count = e.at("count").get<std::size_t>();
            if (count != p.tensor.numel()) throw CheckpointError("size mismatch for parameter '" + name + "'");
            check_range(param_blob, offset, count, "params.bin", name);
            staged.emplace_back(count);
            read_le(param_blob, offset, staged.back());
        }

        const auto& opt = manifest.at("optimizer");
        AdamState restored = AdamState::init(params, {opt.at("beta1").get<double>(), opt.at("beta2").get<double>(),
                                                      opt.at("eps").get<double>()});
        restored.step = opt.at("step").get<std::uint64_t>();
        const auto& moments = opt.at("moments");
        if (moments.size() != restored.names.size()) {
            throw CheckpointError("optimizer state tracks " + std::to_string(moments.size()) + " tensors, model has " +
                                  std::to_string(restored.names.size()));
        }
        for (std::size_t i = 0; i < moments.size(); ++i) {
            const auto& m = moments[i];
            const std::string name = m.at("name").get<std::string>();
            const std::size_t count = m.at("count").get<std::size_t>();
            if (name != restored.names[i] || count != restored.first_moment[i].size()) {
                throw CheckpointError("optimizer moment '" + name + "' does not match parameter '" + restored.names[i] + "'");
            }
            const std::size_t first = m.at("first_offset").get<std::size_t>();
            const std::size_t second = m.at("second_offset").get<std::size_t>();
            check_range(optim_blob, first, count, "optim.bin", name + " (first moment)");
            check_range(optim_blob, second, count, "optim.bin", name + " (second moment)");
            read_le(optim_blob, first, restored.first_moment[i]);
            read_le(optim_blob, second, restored.second_moment[i]);
        }

        // Nothing is modified until every entry has been validated.
        for (std::size_t i = 0; i < staged.size(); ++i) {
            Tensor t = params.entries()[i].tensor;
            std::copy(staged[i].begin(), staged[i].end(), t.mutable_data().begin());
        }
        optim = std::move(restored);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("incomplete manifest in '" + dir.string() + "': " + e.what());
    }
    return meta;
}

}  // namespace canet
