#pragma once

#include "viewset/data.hpp"
#include "viewset/head.hpp"
#include "viewset/model.hpp"
#include "viewset/training.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace viewset {

// Everything a run needs, with a default for every field. Loaded from a flat
// key=value file; command-line flags are applied on top and win.
struct RunConfig {
    std::uint64_t seed = 0;

    SyntheticSpec data; // data.* keys (its seed field follows the global seed)
    double train_ratio = 0.8, val_ratio = 0.1, test_ratio = 0.1;

    InitializerKind initializer = InitializerKind::Precomputed;
    EncoderConfig encoder;
    TransitionKind transition = TransitionKind::ConcatMaxMean;
    std::size_t descriptor_dim = 1024;
    std::vector<std::size_t> decoder_hidden = {512};
    double label_smoothing = 0.1;

    std::string target = "class"; // or "subclass": train on subcategory labels
    TrainOptions train;           // schedule.* keys live in train.schedule
    std::size_t rank_n = 1000;

    std::string dataset_path = "data/synthetic.txt";
    std::string split_path; // empty: dataset_path + ".split"
    std::string checkpoint_dir = "runs/checkpoints";
    std::string log_dir = "runs/logs";

    std::string resolved_split_path() const;
    void validate() const; // throws ConfigError

    // Assembles the model configuration for a K-way target. input_dim is the
    // feature width consumed by a precomputed-feature initializer; image
    // geometry comes from data.*.
    ModelConfig make_model(std::size_t num_classes, std::size_t input_dim) const;
};

// Sets one key (the file syntax's left-hand side) on cfg; unknown keys and
// unparseable values throw ConfigError naming the key.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses a flat key=value file ('#' comments, blank lines allowed). Errors
// name path:line.
RunConfig load_config(const std::string& path);

// All recognized keys, for diagnostics.
std::vector<std::string> config_keys();

} // namespace viewset
