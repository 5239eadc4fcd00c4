#include "viewset/config.hpp"

#include "viewset/error.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace viewset {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    double d = std::strtod(v.c_str(), &end);
    if (errno != 0 || end == v.c_str() || *end != '\0')
        throw ConfigError(key + ": not a number: '" + v + "'");
    return d;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    unsigned long long u = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end == v.c_str() || *end != '\0' || v.find('-') != std::string::npos)
        throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
    return static_cast<std::size_t>(u);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": not a boolean (true/false): '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(key + ": empty element in list '" + v + "'");
        out.push_back(parse_size(key, item));
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"seed",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.seed = static_cast<std::uint64_t>(parse_size(k, v));
         }},
        {"data.classes",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.num_classes = parse_size(k, v);
         }},
        {"data.subclasses",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.subclasses_per_class = parse_size(k, v);
         }},
        {"data.shapes_per_class",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.shapes_per_class = parse_size(k, v);
         }},
        {"data.views",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.views_per_shape = parse_size(k, v);
         }},
        {"data.mode",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v == "feature") c.data.mode = SyntheticMode::Feature;
             else if (v == "pixel") c.data.mode = SyntheticMode::Pixel;
             else throw ConfigError(k + ": expected feature or pixel, got '" + v + "'");
         }},
        {"data.feature_dim",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.feature_dim = parse_size(k, v);
         }},
        {"data.image_size",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.image_size = parse_size(k, v);
         }},
        {"data.image_channels",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.image_channels = parse_size(k, v);
         }},
        {"data.margin",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.margin = parse_double(k, v);
         }},
        {"data.noise",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.noise = parse_double(k, v);
         }},
        {"data.view_angle",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.data.view_angle = parse_double(k, v);
         }},
        {"split.train",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train_ratio = parse_double(k, v);
         }},
        {"split.val",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.val_ratio = parse_double(k, v);
         }},
        {"split.test",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.test_ratio = parse_double(k, v);
         }},
        {"model.initializer",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.initializer = initializer_kind_from_string(v); // throws ConfigError itself
         }},
        {"model.dim",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.view_dim = parse_size(k, v);
         }},
        {"model.blocks",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.num_blocks = parse_size(k, v);
         }},
        {"model.heads",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.num_heads = parse_size(k, v);
         }},
        {"model.mlp_ratio",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.mlp_ratio = parse_size(k, v);
         }},
        {"model.dropout",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.dropout_rate = parse_double(k, v);
         }},
        {"model.pos_enc",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.use_position_encoding = parse_bool(k, v);
         }},
        {"model.cls_token",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.use_class_token = parse_bool(k, v);
         }},
        {"model.temperature",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.temperature = parse_double(k, v);
         }},
        {"model.max_views",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.encoder.max_views = parse_size(k, v);
         }},
        {"model.transition",
         [](RunConfig& c, const std::string&, const std::string& v) {
             c.transition = transition_kind_from_string(v); // throws ConfigError itself
         }},
        {"model.descriptor_dim",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.descriptor_dim = parse_size(k, v);
         }},
        {"model.decoder_hidden",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.decoder_hidden = parse_size_list(k, v);
         }},
        {"model.label_smoothing",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.label_smoothing = parse_double(k, v);
         }},
        {"train.target",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             if (v != "class" && v != "subclass")
                 throw ConfigError(k + ": expected class or subclass, got '" + v + "'");
             c.target = v;
         }},
        {"train.stage1_epochs",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.stage1_epochs = parse_size(k, v);
         }},
        {"train.stage1_lr",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.stage1_lr = parse_double(k, v);
         }},
        {"train.stage1_momentum",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.stage1_momentum = parse_double(k, v);
         }},
        {"train.stage2_epochs",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.stage2_epochs = parse_size(k, v);
         }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.batch_size = parse_size(k, v);
         }},
        {"train.weight_decay",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.weight_decay = parse_double(k, v);
         }},
        {"train.views",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.train_views = parse_size(k, v);
         }},
        {"train.permute_views",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.permute_views = parse_bool(k, v);
         }},
        {"train.freeze_initializer",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.freeze_initializer = parse_bool(k, v);
         }},
        {"schedule.peak_lr",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.schedule.peak_lr = parse_double(k, v);
         }},
        {"schedule.interval",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.schedule.interval_epochs = parse_size(k, v);
         }},
        {"schedule.warmup",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.schedule.warmup_epochs = parse_size(k, v);
         }},
        {"schedule.peak_decay",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.schedule.peak_decay = parse_double(k, v);
         }},
        {"schedule.total",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.schedule.total_epochs = parse_size(k, v);
         }},
        {"retrieve.n",
         [](RunConfig& c, const std::string& k, const std::string& v) {
             c.rank_n = parse_size(k, v);
         }},
        {"paths.dataset",
         [](RunConfig& c, const std::string&, const std::string& v) { c.dataset_path = v; }},
        {"paths.split",
         [](RunConfig& c, const std::string&, const std::string& v) { c.split_path = v; }},
        {"paths.checkpoints",
         [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint_dir = v; }},
        {"paths.logs",
         [](RunConfig& c, const std::string&, const std::string& v) { c.log_dir = v; }},
    };
    return table;
}

} // namespace

std::string RunConfig::resolved_split_path() const {
    return split_path.empty() ? dataset_path + ".split" : split_path;
}

void RunConfig::validate() const {
    data.validate();
    encoder.validate();
    train.schedule.validate();
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0)
        throw ConfigError("split ratios must be non-negative");
    if (decoder_hidden.empty()) throw ConfigError("model.decoder_hidden must not be empty");
    if (rank_n == 0) throw ConfigError("retrieve.n must be positive");
}

ModelConfig RunConfig::make_model(std::size_t num_classes, std::size_t input_dim) const {
    ModelConfig m;
    m.initializer.kind = initializer;
    m.initializer.output_dim = encoder.view_dim;
    m.initializer.image_size = data.image_size;
    m.initializer.in_channels = data.image_channels;
    m.initializer.feature_dim = input_dim;
    m.encoder = encoder;
    m.head.transition_kind = transition;
    m.head.descriptor_dim = descriptor_dim;
    m.head.label_smoothing = label_smoothing;
    m.head.num_classes = num_classes;
    m.head.decoder_layers.clear();
    m.head.decoder_layers.push_back(descriptor_dim);
    for (std::size_t h : decoder_hidden) m.head.decoder_layers.push_back(h);
    m.head.decoder_layers.push_back(num_classes);
    m.validate();
    return m;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key: '" + key + "'");
    it->second(cfg, key, value);
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                              line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        try {
            apply_config_entry(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    out.reserve(setters().size());
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
}

} // namespace viewset
