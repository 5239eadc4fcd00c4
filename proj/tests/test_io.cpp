#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_util.hpp"
#include "viewset/checkpoint.hpp"
#include "viewset/config.hpp"
#include "viewset/data.hpp"
#include "viewset/error.hpp"
#include "viewset/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace viewset;
using namespace viewset::testutil;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string u32le(std::uint32_t v) {
    std::string b(4, '\0');
    for (int i = 0; i < 4; ++i) b[std::size_t(i)] = char((v >> (8 * i)) & 0xff);
    return b;
}

std::string u64le(std::uint64_t v) {
    std::string b(8, '\0');
    for (int i = 0; i < 8; ++i) b[std::size_t(i)] = char((v >> (8 * i)) & 0xff);
    return b;
}

ModelConfig conv_model_cfg() {
    ModelConfig mc;
    mc.initializer.kind = InitializerKind::ShallowConv1;
    mc.initializer.output_dim = 16;
    mc.initializer.image_size = 8;
    mc.initializer.in_channels = 3;
    mc.encoder.view_dim = 16;
    mc.encoder.num_blocks = 1;
    mc.encoder.num_heads = 2;
    mc.encoder.dropout_rate = 0.0;
    mc.head.transition_kind = TransitionKind::Mean;
    mc.head.descriptor_dim = 16;
    mc.head.decoder_layers = {16, 3};
    mc.head.num_classes = 3;
    return mc;
}

void write_config(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

} // namespace

TEST_CASE("tensor archives round-trip awkward doubles bitwise") {
    std::map<std::string, Tensor> entries;
    Tensor a({2, 3});
    a.at(0, 0) = 1.0 / 3.0;
    a.at(0, 1) = -0.0;
    a.at(0, 2) = 1e-300;
    a.at(1, 0) = -1e300;
    a.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
    a.at(1, 2) = 5e-324; // smallest denormal
    entries["block0.wq"] = a;
    entries["init.w"] = Tensor::filled({4}, -2.5);
    const std::string path = "archive_roundtrip.bin";
    save_archive(path, entries);
    std::map<std::string, Tensor> back = load_archive(path);
    REQUIRE(back.size() == 2);
    CHECK(back.at("block0.wq").shape() == a.shape());
    CHECK(bitwise_equal(back.at("block0.wq"), a));
    CHECK(bitwise_equal(back.at("init.w"), entries.at("init.w")));
    std::remove(path.c_str());
}

TEST_CASE("identical contents produce byte-identical archives") {
    std::map<std::string, Tensor> entries;
    Rng rng = Rng::substream(60, "input");
    entries["w"] = random_tensor({3, 4}, rng);
    entries["b"] = random_tensor({4}, rng);
    save_archive("archive_a.bin", entries);
    save_archive("archive_b.bin", entries);
    CHECK(read_bytes("archive_a.bin") == read_bytes("archive_b.bin"));
    std::remove("archive_a.bin");
    std::remove("archive_b.bin");
}

TEST_CASE("archive loading rejects damage with a parse error") {
    const std::string path = "archive_bad.bin";

    write_bytes(path, "definitely not an archive");
    CHECK_THROWS_AS(load_archive(path), ParseError);

    std::map<std::string, Tensor> entries;
    entries["w"] = Tensor::filled({8}, 1.5);
    save_archive(path, entries);
    std::string whole = read_bytes(path);
    write_bytes(path, whole.substr(0, whole.size() - 10));
    try {
        load_archive(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    // rank 0 entry, hand-assembled
    write_bytes(path, std::string("VSARCH01") + u64le(1) + u32le(1) + "a" + u32le(0));
    try {
        load_archive(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("bad rank") != std::string::npos);
    }

    std::remove(path.c_str());
    CHECK_THROWS_AS(load_archive("archive_missing.bin"), InputError);
}

TEST_CASE("checkpoints restore parameters and running statistics exactly") {
    const std::string path = "checkpoint_roundtrip.bin";
    Model a(conv_model_cfg(), 1);
    // Give the batch-norm running stats a non-default value so the state
    // round-trip is observable.
    Rng rng = Rng::substream(61, "input");
    for (auto& [key, tensor] : a.state())
        for (std::size_t i = 0; i < tensor->size(); ++i) (*tensor)[i] = rng.uniform(0.5, 2.0);
    save_checkpoint(path, a);

    Model b(conv_model_cfg(), 2); // different seed: different weights
    bool some_param_differs = false;
    std::map<std::string, Tensor> want = snapshot(a), have = snapshot(b);
    for (const auto& [key, tensor] : want)
        if (!bitwise_equal(tensor, have.at(key))) some_param_differs = true;
    REQUIRE(some_param_differs);

    load_checkpoint(path, b);
    std::map<std::string, Tensor> restored = snapshot(b);
    REQUIRE(restored.size() == want.size());
    for (const auto& [key, tensor] : want) CHECK(bitwise_equal(tensor, restored.at(key)));
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loading names the offending key") {
    const std::string path = "checkpoint_damaged.bin";
    Model model(conv_model_cfg(), 3);
    std::map<std::string, Tensor> entries = snapshot(model);

    std::map<std::string, Tensor> missing = entries;
    missing.erase("decoder.b0");
    save_archive(path, missing);
    try {
        load_checkpoint(path, model);
        FAIL("expected StateError");
    } catch (const StateError& e) {
        CHECK(std::string(e.what()).find("decoder.b0") != std::string::npos);
    }

    std::map<std::string, Tensor> extra = entries;
    extra["leftover.key"] = Tensor::filled({1}, 0.0);
    save_archive(path, extra);
    try {
        load_checkpoint(path, model);
        FAIL("expected StateError");
    } catch (const StateError& e) {
        CHECK(std::string(e.what()).find("leftover.key") != std::string::npos);
    }

    std::map<std::string, Tensor> reshaped = entries;
    reshaped["block0.wq"] = Tensor::zeros({2, 2});
    save_archive(path, reshaped);
    try {
        load_checkpoint(path, model);
        FAIL("expected StateError");
    } catch (const StateError& e) {
        std::string what = e.what();
        CHECK(what.find("block0.wq") != std::string::npos);
        CHECK(what.find("shape") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("config files parse comments, blanks and every field family") {
    const std::string path = "config_ok.cfg";
    write_config(path,
                 "# run settings\n"
                 "seed = 42\n"
                 "\n"
                 "data.classes = 5\n"
                 "data.shapes_per_class = 12   # per class\n"
                 "data.mode = feature\n"
                 "model.dim = 64\n"
                 "model.blocks = 3\n"
                 "model.transition = mean\n"
                 "model.descriptor_dim = 64\n"
                 "model.decoder_hidden = 48,24\n"
                 "schedule.peak_lr = 0.002\n"
                 "schedule.interval = 10\n"
                 "schedule.warmup = 2\n"
                 "schedule.total = 20\n"
                 "train.stage1_epochs = 7\n"
                 "train.freeze_initializer = true\n"
                 "split.train = 0.7\n"
                 "split.val = 0.2\n"
                 "split.test = 0.1\n"
                 "paths.dataset = runs/foo.txt\n");
    RunConfig cfg = load_config(path);
    CHECK(cfg.seed == 42);
    CHECK(cfg.data.num_classes == 5);
    CHECK(cfg.data.shapes_per_class == 12);
    CHECK(cfg.encoder.view_dim == 64);
    CHECK(cfg.encoder.num_blocks == 3);
    CHECK(cfg.transition == TransitionKind::Mean);
    CHECK(cfg.descriptor_dim == 64);
    CHECK(cfg.decoder_hidden == std::vector<std::size_t>{48, 24});
    CHECK(cfg.train.schedule.peak_lr == 0.002);
    CHECK(cfg.train.schedule.interval_epochs == 10);
    CHECK(cfg.train.stage1_epochs == 7);
    CHECK(cfg.train.freeze_initializer);
    CHECK(cfg.train_ratio == 0.7);
    CHECK(cfg.val_ratio == 0.2);
    CHECK(cfg.test_ratio == 0.1);
    CHECK(cfg.dataset_path == "runs/foo.txt");
    CHECK(cfg.resolved_split_path() == "runs/foo.txt.split");
    CHECK_NOTHROW(cfg.validate());
    std::remove(path.c_str());
}

TEST_CASE("config errors carry the file, line and key") {
    const std::string path = "config_bad.cfg";
    write_config(path, "seed = 1\ndata.classes = 4\nmodel.boguskey = 3\n");
    try {
        load_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string what = e.what();
        CHECK(what.find(path + ":3") != std::string::npos);
        CHECK(what.find("unknown config key") != std::string::npos);
        CHECK(what.find("model.boguskey") != std::string::npos);
    }

    write_config(path, "model.blocks = banana\n");
    try {
        load_config(path);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string what = e.what();
        CHECK(what.find(path + ":1") != std::string::npos);
        CHECK(what.find("model.blocks") != std::string::npos);
    }

    write_config(path, "no equals sign here\n");
    CHECK_THROWS_AS(load_config(path), ConfigError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_config("config_missing.cfg"), InputError);

    RunConfig cfg;
    CHECK_THROWS_AS(apply_config_entry(cfg, "retrieve.n", "0x"), ConfigError);
    CHECK_THROWS_AS(apply_config_entry(cfg, "", "1"), ConfigError);
}

TEST_CASE("the key catalog covers the documented families") {
    std::vector<std::string> keys = config_keys();
    auto has = [&](const std::string& k) {
        return std::find(keys.begin(), keys.end(), k) != keys.end();
    };
    CHECK(has("seed"));
    CHECK(has("data.noise"));
    CHECK(has("model.transition"));
    CHECK(has("model.pos_enc"));
    CHECK(has("schedule.peak_decay"));
    CHECK(has("train.batch_size"));
    CHECK(has("retrieve.n"));
    CHECK(has("paths.logs"));
}

TEST_CASE("the run configuration assembles a coherent model") {
    RunConfig cfg;
    cfg.encoder.view_dim = 32;
    cfg.transition = TransitionKind::Mean;
    cfg.descriptor_dim = 32;
    cfg.decoder_hidden = {16};
    ModelConfig mc = cfg.make_model(4, 20);
    CHECK(mc.initializer.kind == InitializerKind::Precomputed);
    CHECK(mc.initializer.feature_dim == 20);
    CHECK(mc.initializer.output_dim == 32);
    CHECK(mc.encoder.view_dim == 32);
    CHECK(mc.head.num_classes == 4);
    CHECK(mc.head.decoder_layers == std::vector<std::size_t>{32, 16, 4});

    // mismatched descriptor width is caught at assembly time
    RunConfig bad = cfg;
    bad.descriptor_dim = 64; // mean transition of a 32-wide encoder
    CHECK_THROWS_AS(bad.make_model(4, 20), ConfigError);

    RunConfig invalid;
    invalid.rank_n = 0;
    CHECK_THROWS_AS(invalid.validate(), ConfigError);
}

TEST_CASE("split files round-trip through the sidecar format") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.subclasses_per_class = 1;
    spec.shapes_per_class = 5;
    spec.views_per_shape = 2;
    spec.feature_dim = 4;
    spec.seed = 62;
    FeatureFile data = generate_synthetic(spec);
    DatasetSplit split = split_dataset(data, 0.6, 0.2, 0.2, 62);
    const std::string path = "split_roundtrip.txt";
    save_split(path, data, split);
    DatasetSplit back = load_split(path, data);
    CHECK(back.train == split.train);
    CHECK(back.val == split.val);
    CHECK(back.test == split.test);
    std::remove(path.c_str());

    write_config(path, "train: 0 1 2\nlunch: 3\n");
    CHECK_THROWS_AS(load_split(path, data), ParseError);
    write_config(path, "train: 0 999\n");
    try {
        load_split(path, data);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("999") != std::string::npos);
    }
    std::remove(path.c_str());
}
