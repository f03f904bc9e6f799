#include <fstream>
#include <sstream>

#include "canet/checkpoint.hpp"
#include "canet/image_io.hpp"
#include "canet/trainer.hpp"
#include "test_util.hpp"

using namespace canet;
using canet::testing::TempDir;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(const fs::path& out) {
    TrainConfig c;
    c.model.height = c.model.width = 16;
    c.model.patch = 4;
    c.model.embed_dim = 8;
    c.model.layers = 1;
    c.model.heads = 2;
    c.model.fusion_channels = 8;
    c.samples = 7;
    c.train_count = 5;
    c.val_count = 1;
    c.batch_size = 2;
    c.epochs = 3;
    c.lr = 1e-3;
    c.output_dir = out.string();
    return c;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST(Trainer, ZeroEpochsWritesInitialCheckpointAndHeader) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 0;
    TrainResult r = train(c);
    EXPECT_EQ(r.steps, 0u);
    EXPECT_EQ(slurp(dir.path() / "train_log.csv"), std::string(kTrainLogHeader) + "\n");
    Network fresh(c.model, c.seed);
    Network loaded = load_network(r.last_checkpoint);
    const auto a = fresh.params().entries(), b = loaded.params().entries();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_EQ(std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(), a[i].tensor.numel() * 8), 0)
            << a[i].name;
    }
}

TEST(Trainer, StepCountIncludesPartialBatches) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    EXPECT_EQ(train(c).steps, 9u);  // ceil(5 / 2) per epoch
    EXPECT_EQ(lines(slurp(dir.path() / "train_log.csv")).size(), 4u);
}

TEST(Trainer, RepeatedRunsAreBitIdentical) {
    TempDir a, b;
    train(tiny_config(a.path()));
    train(tiny_config(b.path()));
    EXPECT_EQ(slurp(a.path() / "train_log.csv"), slurp(b.path() / "train_log.csv"));
    for (const char* file : {"params.bin", "optim.bin"}) {
        EXPECT_EQ(slurp(a.path() / "last.ckpt" / file), slurp(b.path() / "last.ckpt" / file)) << file;
    }
    TempDir other;
    TrainConfig c = tiny_config(other.path());
    c.seed = 1;
    train(c);
    EXPECT_NE(slurp(a.path() / "train_log.csv"), slurp(other.path() / "train_log.csv"));
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
    TempDir full, split;
    TrainConfig c = tiny_config(full.path());
    c.epochs = 4;
    train(c);

    TrainConfig first = tiny_config(split.path());
    first.epochs = 2;
    train(first);
    TrainConfig rest = first;
    rest.epochs = 4;
    TrainOptions options;
    options.resume_from = split.path() / "last.ckpt";
    TrainResult r = train(rest, options);
    EXPECT_EQ(r.log.size(), 2u);
    EXPECT_EQ(slurp(full.path() / "train_log.csv"), slurp(split.path() / "train_log.csv"));
    EXPECT_EQ(slurp(full.path() / "last.ckpt" / "params.bin"), slurp(split.path() / "last.ckpt" / "params.bin"));
    EXPECT_EQ(slurp(full.path() / "last.ckpt" / "optim.bin"), slurp(split.path() / "last.ckpt" / "optim.bin"));
}

TEST(Trainer, ResumeRejectsDifferentModel) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 1;
    train(c);
    c.model.fusion_channels = 12;
    c.epochs = 2;
    TrainOptions options;
    options.resume_from = dir.path() / "last.ckpt";
    EXPECT_ANY_THROW(train(c, options));
}

TEST(Trainer, BestCheckpointTracksValidation) {
    TempDir dir;
    TrainResult r = train(tiny_config(dir.path()));
    ASSERT_EQ(r.log.size(), 3u);
    double best = -1.0;
    for (const EpochLog& row : r.log) best = std::max(best, row.val_dsc);
    EXPECT_EQ(read_checkpoint_meta(r.best_checkpoint).best_val_dsc, best);
    EXPECT_EQ(read_checkpoint_meta(r.last_checkpoint).epoch, 3u);
}

TEST(Trainer, InvalidConfigListsEveryViolation) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.model.patch = 5;
    c.model.heads = 3;
    c.lr = -1.0;
    try {
        train(c);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("lr"), std::string::npos);
        EXPECT_NE(what.find("heads"), std::string::npos);
        EXPECT_NE(what.find("patch"), std::string::npos);
    }
}

TEST(Trainer, NonFiniteUpdateStopsWithNumericalError) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.lr = 1e308;
    EXPECT_THROW(train(c), NumericalError);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
    TrainConfig c = tiny_config("somewhere");
    c.model.ablation.no_boundary = true;
    c.loss.ric = 0.25;
    const nlohmann::json j = c;
    const TrainConfig back = j.get<TrainConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    nlohmann::json bad = j;
    bad["learning_rate"] = 0.1;
    EXPECT_THROW(bad.get<TrainConfig>(), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 1;
    TrainResult r = train(c);

    Network net(c.model, 99);
    AdamState adam = AdamState::init(net.params());
    const CheckpointMeta meta = load_checkpoint(r.last_checkpoint, net.params(), adam);
    EXPECT_EQ(meta.epoch, 1u);
    EXPECT_EQ(adam.step, r.steps);
    save_checkpoint(dir.path() / "copy", net.params(), adam, meta);
    for (const char* file : {"params.bin", "optim.bin", "manifest.json"}) {
        EXPECT_EQ(slurp(r.last_checkpoint / file), slurp(dir.path() / "copy" / file)) << file;
    }
}

TEST(Checkpoint, TruncatedBlobNamesTheParameter) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 0;
    const fs::path ckpt = train(c).last_checkpoint;
    const fs::path blob = ckpt / "params.bin";
    fs::resize_file(blob, fs::file_size(blob) - 8);
    Network net(c.model, 0);
    const std::string last_name = net.params().entries().back().name;
    AdamState adam = AdamState::init(net.params());
    const std::vector<double> before(net.params().entries()[0].tensor.data().begin(),
                                     net.params().entries()[0].tensor.data().end());
    Network other(c.model, 5);
    AdamState other_adam = AdamState::init(other.params());
    const Tensor first = other.params().entries()[0].tensor;
    const std::vector<double> untouched(first.data().begin(), first.data().end());
    try {
        load_checkpoint(ckpt, other.params(), other_adam);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find(last_name), std::string::npos) << e.what();
    }
    EXPECT_TRUE(std::equal(untouched.begin(), untouched.end(), first.data().begin()));
}

TEST(Checkpoint, VersionMismatchIsRejected) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 0;
    const fs::path ckpt = train(c).last_checkpoint;
    nlohmann::json manifest = nlohmann::json::parse(slurp(ckpt / "manifest.json"));
    manifest["format"] = "canet-checkpoint/0";
    std::ofstream(ckpt / "manifest.json") << manifest.dump();
    EXPECT_THROW(load_network(ckpt), CheckpointError);
}

TEST(Evaluate, CsvIsDeterministic) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 1;
    const fs::path ckpt = train(c).last_checkpoint;
    const std::string a = evaluate(ckpt, "test").to_csv();
    const std::string b = evaluate(ckpt, "test").to_csv();
    EXPECT_EQ(a, b);
    const auto rows = lines(a);
    ASSERT_EQ(rows.size(), 3u);  // header, one test sample, mean
    EXPECT_EQ(rows[0], "id,DSC,SE,SP,ACC,mIOU");
    EXPECT_EQ(rows[2].rfind("mean,", 0), 0u);
    EXPECT_THROW(evaluate(ckpt, "nonexistent"), Error);
}

TEST(Evaluate, PatchMustDivideDatasetExtent) {
    ModelConfig model;
    model.patch = 16;
    DatasetSpec data;
    data.height = 40;
    data.width = 64;
    try {
        check_dataset_compatible(model, data);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("16"), std::string::npos) << what;
        EXPECT_NE(what.find("40"), std::string::npos) << what;
    }
}

TEST(Predict, UntrainedOutputsAreHalfAndMaskIsBinary) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 0;
    const fs::path ckpt = train(c).last_checkpoint;
    Image8 img{16, 16, 3, std::vector<std::uint8_t>(768)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
    write_pnm(dir.path() / "in.ppm", img);
    predict(ckpt, dir.path() / "in.ppm", dir.path() / "pred");
    const Image8 prob = read_image(dir.path() / "pred" / "prob.pgm");
    for (auto v : prob.pixels) EXPECT_EQ(v, 128);
    const Image8 mask = read_image(dir.path() / "pred" / "mask.pgm");
    for (auto v : mask.pixels) EXPECT_TRUE(v == 0 || v == 255);
    EXPECT_TRUE(fs::exists(dir.path() / "pred" / "boundary.pgm"));
    const auto ric = lines(slurp(dir.path() / "pred" / "ric.csv"));
    EXPECT_EQ(ric.size(), 17u);
    EXPECT_THROW(predict(ckpt, dir.path() / "missing.png", dir.path() / "pred"), DataError);
}

TEST(Predict, TrainedMaskIsBinary) {
    TempDir dir;
    TrainConfig c = tiny_config(dir.path());
    c.epochs = 2;
    const fs::path ckpt = train(c).last_checkpoint;
    write_pnm(dir.path() / "x.ppm", Image8{16, 16, 3, std::vector<std::uint8_t>(768, 90)});
    predict(ckpt, dir.path() / "x.ppm", dir.path() / "out");
    const Image8 mask = read_image(dir.path() / "out" / "mask.pgm");
    for (auto v : mask.pixels) EXPECT_TRUE(v == 0 || v == 255);
}

// Command line -------------------------------------------------------------------------

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CANET_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kTinyFlags =
    "--height 16 --width 16 --patch 4 --embed-dim 8 --layers 1 --heads 2 --fusion-channels 8 --samples 4 "
    "--train-count 3 --batch-size 2";

}  // namespace

TEST(Cli, ExitCodes) {
    TempDir dir;
    const std::string out = (dir.path() / "run").string();
    EXPECT_EQ(run_cli("train " + kTinyFlags + " --epochs 1 --output-dir " + out), 0);
    EXPECT_TRUE(fs::exists(fs::path(out) / "config.json"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "last.ckpt" / "manifest.json"));
    EXPECT_EQ(run_cli("eval --checkpoint " + out + "/last.ckpt --split test"), 0);
    EXPECT_EQ(run_cli("train " + kTinyFlags + " --patch 5 --output-dir " + out), 1);
    EXPECT_EQ(run_cli("train --no-such-flag"), 1);
    EXPECT_EQ(run_cli("train " + kTinyFlags + " --dataset-dir " + (dir.path() / "nothing").string() +
                      " --output-dir " + out),
              2);
    EXPECT_EQ(run_cli("eval --checkpoint " + (dir.path() / "missing.ckpt").string()), 2);
    EXPECT_EQ(run_cli("train " + kTinyFlags + " --lr 1e308 --epochs 1 --output-dir " + out), 3);
}

TEST(Cli, ConfigFileWithFlagOverride) {
    TempDir dir;
    const fs::path out = dir.path() / "run";
    TrainConfig c = tiny_config(out);
    c.epochs = 5;
    std::ofstream(dir.path() / "cfg.json") << nlohmann::json(c).dump();
    EXPECT_EQ(run_cli("train --config " + (dir.path() / "cfg.json").string() + " --epochs 1"), 0);
    const TrainConfig used = nlohmann::json::parse(slurp(out / "config.json")).get<TrainConfig>();
    EXPECT_EQ(used.epochs, 1u);
    EXPECT_EQ(used.model.fusion_channels, 8u);
    EXPECT_EQ(lines(slurp(out / "train_log.csv")).size(), 2u);
}

TEST(Cli, GenDataThenTrainOnDirectory) {
    TempDir dir;
    const std::string data = (dir.path() / "data").string();
    ASSERT_EQ(run_cli("gen-data --out " + data + " --count 5 --height 16 --width 16 --patch 4 --train 3 --val 1"), 0);
    EXPECT_TRUE(fs::exists(fs::path(data) / "split.json"));
    const std::string out = (dir.path() / "run").string();
    EXPECT_EQ(run_cli("train --dataset-dir " + data +
                      " --height 16 --width 16 --patch 4 --embed-dim 8 --layers 1 --heads 2 --fusion-channels 8 "
                      "--epochs 1 --output-dir " + out),
              0);
    EXPECT_EQ(run_cli("eval --checkpoint " + out + "/last.ckpt --split val --out " + (dir.path() / "e.csv").string()),
              0);
    EXPECT_EQ(lines(slurp(dir.path() / "e.csv")).size(), 3u);
    EXPECT_EQ(run_cli("predict --checkpoint " + out + "/last.ckpt --image " + data + "/images/synth_0.ppm --out " +
                      (dir.path() / "p").string()),
              0);
}
