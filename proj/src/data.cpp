#include "viewset/data.hpp"

#include "viewset/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace viewset {

void SyntheticSpec::validate() const {
    if (num_classes == 0 || subclasses_per_class == 0 || shapes_per_class == 0)
        throw ConfigError("synthetic: class/subclass/shape counts must be positive");
    if (views_per_shape == 0) throw ConfigError("synthetic: views_per_shape must be positive");
    if (margin <= 0.0) throw ConfigError("synthetic: margin must be positive");
    if (noise < 0.0) throw ConfigError("synthetic: noise must be nonnegative");
    if (view_angle < 0.0) throw ConfigError("synthetic: view_angle must be nonnegative");
    if (mode == SyntheticMode::Feature) {
        if (feature_dim < 2) throw ConfigError("synthetic: feature_dim must be at least 2");
    } else {
        if (image_size == 0 || image_channels == 0)
            throw ConfigError("synthetic: image geometry must be positive");
        if (image_channels * image_size * image_size < 2)
            throw ConfigError("synthetic: pixel views need at least 2 values");
    }
}

void DatasetSplit::validate(std::size_t n_shapes) const {
    std::vector<bool> seen(n_shapes, false);
    auto mark = [&](const std::vector<std::size_t>& part, const char* name) {
        for (std::size_t idx : part) {
            if (idx >= n_shapes)
                throw ContractError(std::string("split: ") + name + " index out of range");
            if (seen[idx])
                throw ContractError(std::string("split: shape appears twice (") + name + ")");
            seen[idx] = true;
        }
    };
    mark(train, "train");
    mark(val, "val");
    mark(test, "test");
    for (std::size_t i = 0; i < n_shapes; ++i)
        if (!seen[i]) throw ContractError("split: shape " + std::to_string(i) + " unassigned");
}

namespace {

// Unit vector from iid normals.
std::vector<double> random_unit(std::size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

// Rotates x by angle theta in the plane spanned by two random orthonormal
// directions: exactly orthogonal, identity at theta = 0.
std::vector<double> rotate_in_random_plane(const std::vector<double>& x, double theta, Rng& rng) {
    std::size_t d = x.size();
    std::vector<double> u = random_unit(d, rng);
    std::vector<double> w = random_unit(d, rng);
    // Gram-Schmidt: make w orthonormal to u.
    double dot_uw = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot_uw += u[i] * w[i];
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        w[i] -= dot_uw * u[i];
        norm += w[i] * w[i];
    }
    if (norm < 1e-12) return x; // degenerate draw; keep the vector unchanged
    norm = std::sqrt(norm);
    for (auto& wi : w) wi /= norm;

    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        a += u[i] * x[i];
        b += w[i] * x[i];
    }
    double c = std::cos(theta), s = std::sin(theta);
    double a2 = a * c - b * s, b2 = a * s + b * c;
    std::vector<double> out = x;
    for (std::size_t i = 0; i < d; ++i) out[i] += (a2 - a) * u[i] + (b2 - b) * w[i];
    return out;
}

} // namespace

FeatureFile generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::size_t dim = spec.mode == SyntheticMode::Feature
                          ? spec.feature_dim
                          : spec.image_channels * spec.image_size * spec.image_size;
    Rng rng = Rng::substream(spec.seed, "data");

    // Class prototypes and subclass offsets.
    std::vector<std::vector<double>> proto(spec.num_classes);
    std::vector<std::vector<std::vector<double>>> sub_off(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        proto[c] = random_unit(dim, rng);
        for (auto& x : proto[c]) x *= spec.margin;
        sub_off[c].resize(spec.subclasses_per_class);
        for (std::size_t s = 0; s < spec.subclasses_per_class; ++s) {
            if (spec.subclasses_per_class == 1) {
                sub_off[c][s].assign(dim, 0.0);
            } else {
                sub_off[c][s] = random_unit(dim, rng);
                for (auto& x : sub_off[c][s]) x *= spec.margin / 2.0;
            }
        }
    }

    FeatureFile file;
    file.dim = dim;
    long next_id = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c)
        for (std::size_t n = 0; n < spec.shapes_per_class; ++n) {
            std::size_t s = n % spec.subclasses_per_class;
            std::vector<double> shape_vec(dim);
            std::vector<double> jitter = random_unit(dim, rng);
            for (std::size_t i = 0; i < dim; ++i)
                shape_vec[i] = proto[c][i] + sub_off[c][s][i] + spec.margin / 8.0 * jitter[i];

            ShapeRecord rec;
            rec.id = next_id++;
            rec.label = static_cast<int>(c);
            rec.sublabel = static_cast<int>(c * spec.subclasses_per_class + s);
            rec.views = Tensor({spec.views_per_shape, dim});
            for (std::size_t v = 0; v < spec.views_per_shape; ++v) {
                double theta = spec.view_angle > 0.0 ? rng.uniform(0.0, spec.view_angle) : 0.0;
                std::vector<double> view =
                    theta > 0.0 ? rotate_in_random_plane(shape_vec, theta, rng) : shape_vec;
                for (std::size_t i = 0; i < dim; ++i) {
                    double val = view[i] + (spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0);
                    if (spec.mode == SyntheticMode::Pixel)
                        val = 0.5 + 0.5 * std::tanh(val / spec.margin); // squash into (0,1)
                    rec.views.at(v, i) = val;
                }
            }
            file.shapes.push_back(std::move(rec));
        }
    return file;
}

Tensor subset_views(const Tensor& views, std::size_t count, std::uint64_t seed) {
    std::size_t m = views.rows();
    if (count == 0 || count > m)
        throw InputError("subset_views: cannot take " + std::to_string(count) + " of " +
                         std::to_string(m) + " views");
    Rng rng = Rng::substream(seed, "view-subset");
    std::vector<std::size_t> pick = rng.sample_without_replacement(m, count);
    Tensor out({count, views.cols()});
    for (std::size_t i = 0; i < count; ++i) {
        auto src = views.row(pick[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

DatasetSplit split_dataset(const FeatureFile& data, double train_ratio, double val_ratio,
                           double test_ratio, std::uint64_t seed) {
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 ||
        std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw InputError("split: ratios must be nonnegative and sum to 1");
    if (data.shapes.empty()) throw InputError("split: empty dataset");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.shapes.size(); ++i)
        by_class[data.shapes[i].label].push_back(i);

    Rng rng = Rng::substream(seed, "split");
    DatasetSplit out;
    for (auto& [label, members] : by_class) {
        std::vector<std::size_t> order = rng.permutation(members.size());
        std::size_t n = members.size();
        std::size_t n_val = static_cast<std::size_t>(std::floor(val_ratio * n));
        std::size_t n_test = static_cast<std::size_t>(std::floor(test_ratio * n));
        std::size_t n_train = n - n_val - n_test;
        if (n_train == 0)
            throw InputError("split: class " + std::to_string(label) +
                             " has no shapes left for train");
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t idx = members[order[i]];
            if (i < n_train)
                out.train.push_back(idx);
            else if (i < n_train + n_val)
                out.val.push_back(idx);
            else
                out.test.push_back(idx);
        }
    }
    out.validate(data.shapes.size());
    return out;
}

namespace {

std::map<long, std::size_t> id_index(const FeatureFile& data) {
    std::map<long, std::size_t> m;
    for (std::size_t i = 0; i < data.shapes.size(); ++i) {
        if (!m.emplace(data.shapes[i].id, i).second)
            throw InputError("dataset has duplicate shape id " +
                             std::to_string(data.shapes[i].id));
    }
    return m;
}

} // namespace

void save_split(const std::string& path, const FeatureFile& data, const DatasetSplit& split) {
    split.validate(data.shapes.size());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write split file: " + path);
    auto emit = [&](const char* name, const std::vector<std::size_t>& part) {
        out << name << ":";
        for (std::size_t idx : part) out << ' ' << data.shapes[idx].id;
        out << "\n";
    };
    emit("train", split.train);
    emit("val", split.val);
    emit("test", split.test);
    if (!out) throw InputError("write failed for split file: " + path);
}

DatasetSplit load_split(const std::string& path, const FeatureFile& data) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open split file: " + path);
    std::map<long, std::size_t> index = id_index(data);
    DatasetSplit split;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string head;
        ss >> head;
        std::vector<std::size_t>* part = nullptr;
        if (head == "train:")
            part = &split.train;
        else if (head == "val:")
            part = &split.val;
        else if (head == "test:")
            part = &split.test;
        else
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected `train:`, `val:` or `test:`");
        long id;
        while (ss >> id) {
            auto it = index.find(id);
            if (it == index.end())
                throw ParseError(path + ":" + std::to_string(lineno) + ": unknown shape id " +
                                 std::to_string(id));
            part->push_back(it->second);
        }
        if (ss.fail() && !ss.eof())
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed id list");
    }
    split.validate(data.shapes.size());
    return split;
}

std::size_t count_classes(const FeatureFile& data) {
    std::set<int> labels;
    for (const ShapeRecord& rec : data.shapes) labels.insert(rec.label);
    if (labels.empty()) throw InputError("dataset has no shapes");
    std::size_t k = labels.size();
    if (*labels.begin() != 0 || *labels.rbegin() != static_cast<int>(k - 1))
        throw InputError("dataset labels must be exactly 0..K-1");
    return k;
}

} // namespace viewset
