#include "viewset/initializer.hpp"

#include "viewset/encoder.hpp"
#include "viewset/error.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace viewset {

namespace {
constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;
} // namespace

InitializerKind initializer_kind_from_string(const std::string& s) {
    if (s == "shallow_conv_1") return InitializerKind::ShallowConv1;
    if (s == "shallow_conv_2") return InitializerKind::ShallowConv2;
    if (s == "precomputed") return InitializerKind::Precomputed;
    throw ConfigError("unknown initializer kind: " + s);
}

std::string to_string(InitializerKind k) {
    switch (k) {
    case InitializerKind::ShallowConv1: return "shallow_conv_1";
    case InitializerKind::ShallowConv2: return "shallow_conv_2";
    case InitializerKind::Precomputed: return "precomputed";
    }
    throw ConfigError("unknown initializer kind value");
}

void InitializerConfig::validate() const {
    if (output_dim == 0) throw ConfigError("initializer: output_dim must be positive");
    if (kind == InitializerKind::Precomputed) {
        if (feature_dim == 0)
            throw ConfigError("initializer: precomputed path needs feature_dim > 0");
    } else {
        if (in_channels == 0 || image_size == 0)
            throw ConfigError("initializer: image geometry must be positive");
    }
}

Initializer::Initializer(InitializerConfig cfg, Rng& init_rng) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.kind == InitializerKind::Precomputed) {
        flat_dim_ = cfg_.feature_dim;
    } else {
        // conv(3->64, k7, s2, p3) + BN + ReLU + maxpool(k3, s2, p1)
        std::size_t s1 = conv_out_extent(cfg_.image_size, 7, 2, 3);
        std::size_t s2 = conv_out_extent(s1, 3, 2, 1);
        std::size_t channels = 64;
        std::size_t side = s2;
        conv1_k = std::make_unique<Parameter>(
            "init.conv1.k", xavier_uniform({64, cfg_.in_channels, 7, 7},
                                           cfg_.in_channels * 49, 64 * 49, init_rng));
        conv1_b = std::make_unique<Parameter>("init.conv1.b", Tensor::zeros({64}));
        bn1_g = std::make_unique<Parameter>("init.bn1.g", Tensor::filled({64}, 1.0));
        bn1_b = std::make_unique<Parameter>("init.bn1.b", Tensor::zeros({64}));
        bn1_rm = Tensor::zeros({64});
        bn1_rv = Tensor::filled({64}, 1.0);
        if (cfg_.kind == InitializerKind::ShallowConv2) {
            // conv(64->32, k3, s2, p1) + BN + ReLU
            std::size_t s3 = conv_out_extent(s2, 3, 2, 1);
            conv2_k = std::make_unique<Parameter>(
                "init.conv2.k", xavier_uniform({32, 64, 3, 3}, 64 * 9, 32 * 9, init_rng));
            conv2_b = std::make_unique<Parameter>("init.conv2.b", Tensor::zeros({32}));
            bn2_g = std::make_unique<Parameter>("init.bn2.g", Tensor::filled({32}, 1.0));
            bn2_b = std::make_unique<Parameter>("init.bn2.b", Tensor::zeros({32}));
            bn2_rm = Tensor::zeros({32});
            bn2_rv = Tensor::filled({32}, 1.0);
            channels = 32;
            side = s3;
        }
        flat_dim_ = channels * side * side;
    }
    fc_w = std::make_unique<Parameter>(
        "init.fc.w", xavier_uniform({flat_dim_, cfg_.output_dim}, flat_dim_, cfg_.output_dim,
                                    init_rng));
    fc_b = std::make_unique<Parameter>("init.fc.b", Tensor::zeros({cfg_.output_dim}));
}

std::vector<Parameter*> Initializer::params() {
    std::vector<Parameter*> out;
    for (Parameter* p : {conv1_k.get(), conv1_b.get(), bn1_g.get(), bn1_b.get(), conv2_k.get(),
                         conv2_b.get(), bn2_g.get(), bn2_b.get(), fc_w.get(), fc_b.get()})
        if (p) out.push_back(p);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> Initializer::state() {
    std::vector<std::pair<std::string, Tensor*>> out;
    if (bn1_g) {
        out.emplace_back("init.bn1.rm", &bn1_rm);
        out.emplace_back("init.bn1.rv", &bn1_rv);
    }
    if (bn2_g) {
        out.emplace_back("init.bn2.rm", &bn2_rm);
        out.emplace_back("init.bn2.rv", &bn2_rv);
    }
    return out;
}

std::size_t Initializer::param_count() const {
    std::size_t n = 0;
    for (Parameter* p : const_cast<Initializer*>(this)->params()) n += p->size();
    return n;
}

Val Initializer::forward_image(Graph& g, const Tensor& image) {
    if (cfg_.kind == InitializerKind::Precomputed)
        throw StateError("initializer: precomputed path cannot take images");
    if (image.rank() != 3 || image.extent(0) != cfg_.in_channels ||
        image.extent(1) != cfg_.image_size || image.extent(2) != cfg_.image_size)
        throw InputError("initializer: view geometry " + image.shape_str() +
                         " does not match configured " + std::to_string(cfg_.in_channels) + "x" +
                         std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size));
    for (std::size_t i = 0; i < image.size(); ++i)
        if (image[i] < 0.0 || image[i] > 1.0)
            throw InputError("initializer: pixel values must lie in [0, 1]");

    Val x = g.constant(image);
    x = g.conv2d(x, g.param(*conv1_k), g.param(*conv1_b), 2, 3);
    x = g.batch_norm2d(x, g.param(*bn1_g), g.param(*bn1_b), bn1_rm, bn1_rv, kBnMomentum, kBnEps);
    x = g.relu(x);
    x = g.max_pool2d(x, 3, 2, 1);
    if (cfg_.kind == InitializerKind::ShallowConv2) {
        x = g.conv2d(x, g.param(*conv2_k), g.param(*conv2_b), 2, 1);
        x = g.batch_norm2d(x, g.param(*bn2_g), g.param(*bn2_b), bn2_rm, bn2_rv, kBnMomentum,
                           kBnEps);
        x = g.relu(x);
    }
    x = g.reshape(x, {std::size_t{1}, flat_dim_});
    return g.add_row_bias(g.matmul(x, g.param(*fc_w)), g.param(*fc_b));
}

Val Initializer::forward_images(Graph& g, const std::vector<Tensor>& images) {
    if (images.empty()) throw InputError("initializer: empty view set");
    for (const Tensor& im : images)
        if (!im.same_shape(images.front()))
            throw InputError("initializer: views have inconsistent geometry: " +
                             images.front().shape_str() + " vs " + im.shape_str());
    std::vector<Val> rows;
    rows.reserve(images.size());
    for (const Tensor& im : images) rows.push_back(forward_image(g, im));
    return g.concat_rows(rows);
}

Val Initializer::forward_features(Graph& g, Val rows) {
    if (cfg_.kind != InitializerKind::Precomputed)
        throw StateError("initializer: conv paths cannot take precomputed features");
    const Tensor& r = g.value(rows);
    if (r.cols() != cfg_.feature_dim)
        throw InputError("initializer: feature width " + std::to_string(r.cols()) +
                         " does not match configured " + std::to_string(cfg_.feature_dim));
    return g.add_row_bias(g.matmul(rows, g.param(*fc_w)), g.param(*fc_b));
}

// --- feature file codec -------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& what) {
    throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

} // namespace

FeatureFile load_features(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open feature file: " + path);
    std::string line;
    std::size_t lineno = 0;

    auto next_line = [&](const char* expect) {
        if (!std::getline(in, line)) parse_fail(path, lineno + 1, std::string("expected ") + expect);
        ++lineno;
    };

    next_line("header `dim=<D> shapes=<N>`");
    FeatureFile file;
    std::size_t n_shapes = 0;
    if (std::sscanf(line.c_str(), "dim=%zu shapes=%zu", &file.dim, &n_shapes) != 2)
        parse_fail(path, lineno, "malformed header, expected `dim=<D> shapes=<N>`");
    if (file.dim == 0) parse_fail(path, lineno, "dim must be positive");

    file.shapes.reserve(n_shapes);
    for (std::size_t s = 0; s < n_shapes; ++s) {
        next_line("shape line");
        ShapeRecord rec;
        std::size_t n_views = 0;
        if (std::sscanf(line.c_str(), "shape %ld label=%d sublabel=%d views=%zu", &rec.id,
                        &rec.label, &rec.sublabel, &n_views) != 4)
            parse_fail(path, lineno,
                       "malformed shape line, expected `shape <id> label=<int> sublabel=<int> "
                       "views=<M>`");
        if (n_views == 0) parse_fail(path, lineno, "shape " + std::to_string(rec.id) + " has no views");
        rec.views = Tensor({n_views, file.dim});
        for (std::size_t v = 0; v < n_views; ++v) {
            next_line("view feature row");
            const char* p = line.c_str();
            char* end = nullptr;
            for (std::size_t j = 0; j < file.dim; ++j) {
                errno = 0;
                double val = std::strtod(p, &end);
                if (end == p)
                    parse_fail(path, lineno,
                               "shape " + std::to_string(rec.id) + " view " + std::to_string(v) +
                                   " has " + std::to_string(j) + " values, expected " +
                                   std::to_string(file.dim));
                rec.views.at(v, j) = val;
                p = end;
            }
            while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
            if (*p != '\0')
                parse_fail(path, lineno,
                           "shape " + std::to_string(rec.id) + " view " + std::to_string(v) +
                               " has more than " + std::to_string(file.dim) + " values");
        }
        file.shapes.push_back(std::move(rec));
    }
    return file;
}

void save_features(const std::string& path, const FeatureFile& file) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write feature file: " + path);
    char buf[40];
    out << "dim=" << file.dim << " shapes=" << file.shapes.size() << "\n";
    for (const ShapeRecord& rec : file.shapes) {
        if (rec.views.cols() != file.dim)
            throw DimensionError("save_features: shape " + std::to_string(rec.id) +
                                 " has width " + std::to_string(rec.views.cols()) +
                                 ", expected " + std::to_string(file.dim));
        out << "shape " << rec.id << " label=" << rec.label << " sublabel=" << rec.sublabel
            << " views=" << rec.views.rows() << "\n";
        for (std::size_t v = 0; v < rec.views.rows(); ++v) {
            for (std::size_t j = 0; j < file.dim; ++j) {
                // %.17g round-trips doubles exactly through strtod.
                std::snprintf(buf, sizeof buf, "%.17g", rec.views.at(v, j));
                if (j) out << ' ';
                out << buf;
            }
            out << "\n";
        }
    }
    if (!out) throw InputError("write failed for feature file: " + path);
}

} // namespace viewset
