#include "viewset/cli.hpp"

#include "viewset/checkpoint.hpp"
#include "viewset/config.hpp"
#include "viewset/data.hpp"
#include "viewset/error.hpp"
#include "viewset/graph.hpp"
#include "viewset/head.hpp"
#include "viewset/model.hpp"
#include "viewset/retrieval.hpp"
#include "viewset/training.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace viewset {
namespace {

namespace fs = std::filesystem;

void ensure_parent_dir(const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Options every subcommand shares: a config file plus repeatable key=value
// overrides. Overrides (and the dedicated flags, which are sugar for them)
// win over the file.
struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path, "key=value config file");
    cmd->add_option("--set", c.overrides,
                    "config override key=value (repeatable, wins over --config)");
    c.seed_opt = cmd->add_option("--seed", c.seed, "global random seed (default 0)");
}

// Dedicated flags append to the override list so the usual precedence holds.
auto alias_for(CommonOpts& c, const char* key) {
    return [&c, key](const std::string& v) { c.overrides.push_back(std::string(key) + "=" + v); };
}

RunConfig resolve_config(const CommonOpts& c) {
    RunConfig cfg;
    if (!c.config_path.empty()) cfg = load_config(c.config_path);
    for (const std::string& ov : c.overrides) {
        std::size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + ov + "'");
        apply_config_entry(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }
    if (c.seed_opt != nullptr && c.seed_opt->count() > 0) cfg.seed = c.seed;
    cfg.data.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

struct LoadedData {
    FeatureFile data;
    DatasetSplit split;
};

LoadedData load_dataset(const RunConfig& cfg) {
    LoadedData out;
    out.data = load_features(cfg.dataset_path);
    out.split = load_split(cfg.resolved_split_path(), out.data);
    return out;
}

// Relabels in place when training against subcategories; returns the number
// of target classes.
std::size_t apply_target(FeatureFile& data, const std::string& target) {
    if (target == "subclass")
        for (ShapeRecord& s : data.shapes) s.label = s.sublabel;
    return count_classes(data);
}

Model build_model(const RunConfig& cfg, const FeatureFile& data, std::size_t num_classes) {
    if (cfg.initializer != InitializerKind::Precomputed) {
        std::size_t flat =
            cfg.data.image_channels * cfg.data.image_size * cfg.data.image_size;
        if (flat != data.dim)
            throw ConfigError("image geometry " + std::to_string(cfg.data.image_channels) + "x" +
                              std::to_string(cfg.data.image_size) + "x" +
                              std::to_string(cfg.data.image_size) + " does not flatten to the " +
                              "dataset width " + std::to_string(data.dim));
    }
    return Model(cfg.make_model(num_classes, data.dim), cfg.seed);
}

std::string checkpoint_name(const std::string& target) {
    return target == "class" ? "category.ckpt" : "subcategory.ckpt";
}

// ---------------------------------------------------------------------------

int cmd_gen(const CommonOpts& common) {
    RunConfig cfg = resolve_config(common);
    double sum = cfg.train_ratio + cfg.val_ratio + cfg.test_ratio;
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split.train/split.val/split.test must sum to 1, got " +
                          std::to_string(sum));
    FeatureFile data = generate_synthetic(cfg.data);
    DatasetSplit split =
        split_dataset(data, cfg.train_ratio, cfg.val_ratio, cfg.test_ratio, cfg.seed);
    ensure_parent_dir(cfg.dataset_path);
    save_features(cfg.dataset_path, data);
    ensure_parent_dir(cfg.resolved_split_path());
    save_split(cfg.resolved_split_path(), data, split);
    std::printf("wrote %zu shapes (%zu classes x %zu subclasses, %zu views, width %zu) to %s\n",
                data.shapes.size(), cfg.data.num_classes, cfg.data.subclasses_per_class,
                cfg.data.views_per_shape, data.dim, cfg.dataset_path.c_str());
    std::printf("split %zu/%zu/%zu (train/val/test) to %s\n", split.train.size(),
                split.val.size(), split.test.size(), cfg.resolved_split_path().c_str());
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& stage, bool skip_stage1,
              bool resume) {
    if (stage != "1" && stage != "2" && stage != "both")
        throw ConfigError("--stage must be 1, 2, or both, got '" + stage + "'");
    RunConfig cfg = resolve_config(common);
    LoadedData ld = load_dataset(cfg);
    std::size_t num_classes = apply_target(ld.data, cfg.target);
    Model model = build_model(cfg, ld.data, num_classes);

    fs::create_directories(cfg.checkpoint_dir);
    fs::create_directories(cfg.log_dir);
    std::string ckpt = (fs::path(cfg.checkpoint_dir) / checkpoint_name(cfg.target)).string();
    if (resume) {
        if (!fs::exists(ckpt)) throw InputError("--resume: no checkpoint at " + ckpt);
        load_checkpoint(ckpt, model);
        std::printf("resumed weights from %s\n", ckpt.c_str());
    }

    bool run1 = (stage == "1" || stage == "both") && !skip_stage1 && cfg.train.stage1_epochs > 0;
    bool run2 = stage == "2" || stage == "both";
    if (run1) {
        Stage1Result r1 = train_stage1(model, ld.data, ld.split.train, cfg.train);
        std::printf("stage 1 (%zu epochs): loss %.6f, train acc %.4f\n", cfg.train.stage1_epochs,
                    r1.final_loss, r1.train_acc);
    }
    if (run2) {
        TrainLog log = train_stage2(model, ld.data, ld.split, cfg.train);
        std::string log_path =
            (fs::path(cfg.log_dir) / ("train_" + cfg.target + ".csv")).string();
        log.save(log_path);
        if (!log.rows.empty()) {
            const EpochRow& last = log.rows.back();
            std::printf("stage 2 (%zu epochs): train loss %.6f, val class acc %.4f, "
                        "val inst acc %.4f\n",
                        log.rows.size(), last.train_loss, last.val_class_acc, last.val_inst_acc);
        }
        std::printf("log written to %s\n", log_path.c_str());
    }
    save_checkpoint(ckpt, model);
    std::printf("checkpoint written to %s\n", ckpt.c_str());
    return 0;
}

const std::vector<std::size_t>& split_indices(const DatasetSplit& split,
                                              const std::string& name) {
    if (name == "train") return split.train;
    if (name == "val") return split.val;
    if (name == "test") return split.test;
    throw ConfigError("--split must be train, val, or test, got '" + name + "'");
}

int cmd_eval(const CommonOpts& common, const std::string& ckpt, const std::string& split_name,
             const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    LoadedData ld = load_dataset(cfg);
    std::size_t num_classes = apply_target(ld.data, cfg.target);
    Model model = build_model(cfg, ld.data, num_classes);
    load_checkpoint(ckpt, model);

    const std::vector<std::size_t>& idx = split_indices(ld.split, split_name);
    if (idx.empty()) throw InputError("split '" + split_name + "' is empty");
    EvalResult r = evaluate(model, ld.data, idx, cfg.train);
    std::printf("%s: %zu shapes, instance acc %.6f, class acc %.6f\n", split_name.c_str(),
                idx.size(), r.instance_acc, r.class_acc);

    if (!out_path.empty()) {
        ensure_parent_dir(out_path);
        std::ofstream f(out_path);
        if (!f) throw InputError("cannot open for writing: " + out_path);
        f << "shape_id,predicted_class,confidence\n";
        char buf[128];
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const ShapeRecord& rec = ld.data.shapes[idx[k]];
            Tensor dist = model.predict_distribution(eval_views(rec, cfg.train));
            std::size_t pred = r.predictions[k];
            std::snprintf(buf, sizeof buf, "%ld,%zu,%.17g\n", rec.id, pred, dist.at(0, pred));
            f << buf;
        }
        if (!f.good()) throw InputError("write failed: " + out_path);
        std::printf("predictions written to %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_retrieve(const CommonOpts& common, const std::string& cat_ckpt,
                 const std::string& sub_ckpt, bool no_subcat, std::size_t rank_n_flag,
                 const std::string& out_dir) {
    RunConfig cfg = resolve_config(common);
    if (rank_n_flag > 0) cfg.rank_n = rank_n_flag;
    LoadedData ld = load_dataset(cfg);

    std::size_t num_classes = count_classes(ld.data);
    Model cat_model = build_model(cfg, ld.data, num_classes);
    load_checkpoint(cat_ckpt, cat_model);

    std::unique_ptr<Model> sub_model;
    if (!no_subcat) {
        if (sub_ckpt.empty() || !fs::exists(sub_ckpt))
            throw InputError("subcategory checkpoint '" + sub_ckpt +
                             "' not found; train one with train.target=subclass or rerun "
                             "with --no-subcat for single-pass ranking");
        FeatureFile relabeled = ld.data;
        std::size_t num_sub = apply_target(relabeled, "subclass");
        sub_model = std::make_unique<Model>(cfg.make_model(num_sub, ld.data.dim), cfg.seed);
        load_checkpoint(sub_ckpt, *sub_model);
    }

    if (ld.split.test.empty()) throw InputError("test split is empty");
    std::vector<ShapePrediction> shapes;
    shapes.reserve(ld.split.test.size());
    for (std::size_t i : ld.split.test) {
        const ShapeRecord& rec = ld.data.shapes[i];
        Tensor views = eval_views(rec, cfg.train);
        ShapePrediction p;
        p.shape_id = rec.id;
        p.true_label = rec.label;
        p.true_sublabel = rec.sublabel;
        Tensor dist = cat_model.predict_distribution(views);
        p.pred_class = argmax_row(dist);
        p.pred_class_prob = dist.at(0, p.pred_class);
        if (sub_model) {
            p.pred_subclass = sub_model->predict_class(views);
            p.has_subclass = true;
        }
        shapes.push_back(p);
    }

    RetrievalResult res = evaluate_retrieval(shapes, cfg.rank_n, !no_subcat);
    fs::create_directories(out_dir);
    std::string lists_path = (fs::path(out_dir) / "rank_lists.txt").string();
    std::string report_path = (fs::path(out_dir) / "retrieval_metrics.csv").string();
    save_rank_lists(lists_path, res.lists);
    save_metric_report(report_path, res.report);
    std::printf("%zu queries at N=%zu (%s)\n", shapes.size(), cfg.rank_n,
                no_subcat ? "single-pass" : "two-pass");
    std::printf("micro: mAP %.6f, NDCG %.6f, P@N %.6f, R@N %.6f, F1@N %.6f\n",
                res.report.micro.ap, res.report.micro.ndcg, res.report.micro.p_at_n,
                res.report.micro.r_at_n, res.report.micro.f1_at_n);
    std::printf("macro: mAP %.6f, NDCG %.6f\n", res.report.macro.ap, res.report.macro.ndcg);
    std::printf("rank lists written to %s, metrics to %s\n", lists_path.c_str(),
                report_path.c_str());
    return 0;
}

// One training run for an ablation variant; returns test-split accuracies.
EvalResult fit_and_test(const RunConfig& cfg, const LoadedData& ld_in) {
    LoadedData ld = ld_in;
    std::size_t num_classes = apply_target(ld.data, cfg.target);
    Model model = build_model(cfg, ld.data, num_classes);
    if (cfg.train.stage1_epochs > 0) train_stage1(model, ld.data, ld.split.train, cfg.train);
    train_stage2(model, ld.data, ld.split, cfg.train);
    return evaluate(model, ld.data, ld.split.test, cfg.train);
}

int cmd_ablate(const CommonOpts& common, const std::string& axis, const std::string& values_csv,
               const std::string& out_flag) {
    static const std::vector<std::string> kAxes = {"blocks",     "pos-enc", "cls-token",
                                                   "transition", "decoder", "views"};
    if (std::find(kAxes.begin(), kAxes.end(), axis) == kAxes.end()) {
        std::string all;
        for (const std::string& a : kAxes) all += (all.empty() ? "" : ", ") + a;
        throw ConfigError("unknown ablation axis '" + axis + "'; valid axes: " + all);
    }
    RunConfig base = resolve_config(common);
    LoadedData ld = load_dataset(base);

    std::vector<std::string> values;
    if (!values_csv.empty()) {
        std::stringstream ss(values_csv);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) values.push_back(item);
    } else if (axis == "blocks") {
        values = {"1", "2", "3", "4"};
    } else if (axis == "pos-enc" || axis == "cls-token") {
        values = {"off", "on"};
    } else if (axis == "transition") {
        values = {"max", "mean", "concat_max_mean"};
    } else if (axis == "decoder") {
        values = {"512", "256", "512-256"};
    } else { // views
        values = {"1", "4", "8", "20"};
    }

    std::string out_path = out_flag.empty()
                               ? (fs::path(base.log_dir) / ("ablate_" + axis + ".csv")).string()
                               : out_flag;
    ensure_parent_dir(out_path);
    std::ofstream f(out_path);
    if (!f) throw InputError("cannot open for writing: " + out_path);
    f << "axis,value,test_inst_acc,test_class_acc\n";
    std::printf("axis,value,test_inst_acc,test_class_acc\n");
    for (const std::string& v : values) {
        RunConfig cfg = base;
        if (axis == "blocks") {
            apply_config_entry(cfg, "model.blocks", v);
        } else if (axis == "pos-enc" || axis == "cls-token") {
            const char* key = axis == "pos-enc" ? "model.pos_enc" : "model.cls_token";
            apply_config_entry(cfg, key, v == "on" ? "true" : v == "off" ? "false" : v);
        } else if (axis == "transition") {
            apply_config_entry(cfg, "model.transition", v);
            TransitionKind k = transition_kind_from_string(v);
            std::size_t dim = cfg.encoder.view_dim;
            cfg.descriptor_dim = k == TransitionKind::ConcatMaxMean ? 2 * dim : dim;
        } else if (axis == "decoder") {
            std::string hidden = v;
            std::replace(hidden.begin(), hidden.end(), '-', ',');
            apply_config_entry(cfg, "model.decoder_hidden", hidden);
        } else { // views
            apply_config_entry(cfg, "train.views", v);
        }
        cfg.validate();
        EvalResult r = fit_and_test(cfg, ld);
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g\n", axis.c_str(), v.c_str(),
                      r.instance_acc, r.class_acc);
        f << buf;
        std::printf("%s,%s,%.6f,%.6f\n", axis.c_str(), v.c_str(), r.instance_acc, r.class_acc);
    }
    if (!f.good()) throw InputError("write failed: " + out_path);
    std::printf("ablation table written to %s\n", out_path.c_str());
    return 0;
}

struct GradcheckOpts {
    std::size_t views = 4, dim = 16, heads = 2, blocks = 2, classes = 3, feature_dim = 8;
    double step = 1e-5, tolerance = 1e-4;
    std::uint64_t seed = 0;
    bool corrupt_backward = false;
};

int cmd_gradcheck(const GradcheckOpts& o) {
    ModelConfig mc;
    mc.initializer.kind = InitializerKind::Precomputed;
    mc.initializer.output_dim = o.dim;
    mc.initializer.feature_dim = o.feature_dim;
    mc.encoder.view_dim = o.dim;
    mc.encoder.num_heads = o.heads;
    mc.encoder.num_blocks = o.blocks;
    mc.encoder.dropout_rate = 0.0; // the check runs the deterministic eval path
    mc.head.transition_kind = TransitionKind::ConcatMaxMean;
    mc.head.descriptor_dim = 2 * o.dim;
    mc.head.decoder_layers = {2 * o.dim, o.dim, o.classes};
    mc.head.num_classes = o.classes;
    mc.validate();
    Model model(mc, o.seed);

    Rng rng = Rng::substream(o.seed, "gradcheck-input");
    Tensor views = Tensor::zeros({o.views, o.feature_dim});
    for (std::size_t i = 0; i < views.size(); ++i) views[i] = rng.normal();
    std::size_t label = rng.index(o.classes);

    auto build = [&](bool with_grad) {
        Graph g(with_grad);
        Val logits = model.logits(g, views);
        Val loss = model.head().loss(g, logits, label);
        double value = g.value(loss).scalar_value();
        if (with_grad) g.backward(loss);
        return value;
    };
    std::vector<Parameter*> params = model.params();
    std::function<void()> hook;
    if (o.corrupt_backward)
        hook = [&params] { params.front()->grad[0] += 1.0; };

    double err = grad_check(build, params, o.step, hook);
    bool ok = err <= o.tolerance;
    std::printf("max relative error %.3e over %zu parameters (step %.1e): %s\n", err,
                params.size(), o.step, ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_dump_attention(const CommonOpts& common, const std::string& ckpt, long shape_id,
                       bool shape_given, const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    LoadedData ld = load_dataset(cfg);
    std::size_t num_classes = apply_target(ld.data, cfg.target);
    Model model = build_model(cfg, ld.data, num_classes);
    load_checkpoint(ckpt, model);

    const ShapeRecord* rec = nullptr;
    if (shape_given) {
        for (const ShapeRecord& s : ld.data.shapes)
            if (s.id == shape_id) rec = &s;
        if (rec == nullptr)
            throw InputError("no shape with id " + std::to_string(shape_id) + " in " +
                             cfg.dataset_path);
    } else {
        rec = &ld.data.shapes.front();
    }

    AttentionTrace trace;
    Tensor dist = model.predict_distribution(eval_views(*rec, cfg.train), &trace);
    fs::create_directories(out_path);
    char buf[64];
    for (std::size_t b = 0; b < trace.block_heads.size(); ++b) {
        Tensor mean = trace.head_mean(b);
        std::string block_path =
            (fs::path(out_path) / ("block" + std::to_string(b) + ".csv")).string();
        std::ofstream f(block_path);
        if (!f) throw InputError("cannot open for writing: " + block_path);
        for (std::size_t i = 0; i < mean.rows(); ++i) {
            for (std::size_t j = 0; j < mean.cols(); ++j) {
                std::snprintf(buf, sizeof buf, "%s%.17g", j == 0 ? "" : ",", mean.at(i, j));
                f << buf;
            }
            f << '\n';
        }
        if (!f.good()) throw InputError("write failed: " + block_path);
    }
    std::size_t pred = argmax_row(dist);
    std::printf("shape %ld: predicted class %zu (confidence %.4f); %zu blocks of row-stochastic "
                "weights written under %s\n",
                rec->id, pred, dist.at(0, pred), trace.block_heads.size(), out_path.c_str());
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"multi-view shape classification and retrieval over view sets"};
    app.require_subcommand(1);

    // gen ---------------------------------------------------------------
    CommonOpts gen_common;
    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic multi-view dataset + split");
    add_common(gen, gen_common);
    gen->add_option_function<std::string>("--classes", alias_for(gen_common, "data.classes"),
                                          "number of categories");
    gen->add_option_function<std::string>(
        "--subclasses", alias_for(gen_common, "data.subclasses"), "subcategories per category");
    gen->add_option_function<std::string>(
        "--shapes", alias_for(gen_common, "data.shapes_per_class"), "shapes per category");
    gen->add_option_function<std::string>("--views", alias_for(gen_common, "data.views"),
                                          "views per shape");
    gen->add_option_function<std::string>("--mode", alias_for(gen_common, "data.mode"),
                                          "feature or pixel");
    gen->add_option_function<std::string>(
        "--feature-dim", alias_for(gen_common, "data.feature_dim"), "feature-mode view width");
    gen->add_option_function<std::string>("--margin", alias_for(gen_common, "data.margin"),
                                          "category prototype separation");
    gen->add_option_function<std::string>("--noise", alias_for(gen_common, "data.noise"),
                                          "per-view noise scale");
    gen->add_option_function<std::string>("--out", alias_for(gen_common, "paths.dataset"),
                                          "dataset output path");

    // train -------------------------------------------------------------
    CommonOpts train_common;
    std::string stage = "both";
    bool skip_stage1 = false, resume = false;
    CLI::App* train = app.add_subcommand("train", "two-stage training run");
    add_common(train, train_common);
    train->add_option("--stage", stage, "which stage to run: 1, 2, or both (default both)");
    train->add_flag("--skip-stage1", skip_stage1, "single-stage baseline: stage 2 only");
    train->add_flag("--resume", resume, "load the existing checkpoint before training");
    train->add_option_function<std::string>("--target", alias_for(train_common, "train.target"),
                                            "class or subclass");
    train->add_option_function<std::string>("--dataset", alias_for(train_common, "paths.dataset"),
                                            "dataset path");

    // eval --------------------------------------------------------------
    CommonOpts eval_common;
    std::string eval_ckpt, eval_split = "test", eval_out;
    CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy of a checkpoint on a split");
    add_common(eval_cmd, eval_common);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--split", eval_split, "train, val, or test (default test)");
    eval_cmd->add_option("--out", eval_out, "per-shape prediction CSV path");
    eval_cmd->add_option_function<std::string>(
        "--target", alias_for(eval_common, "train.target"), "class or subclass");
    eval_cmd->add_option_function<std::string>(
        "--dataset", alias_for(eval_common, "paths.dataset"), "dataset path");

    // retrieve ----------------------------------------------------------
    CommonOpts ret_common;
    std::string ret_ckpt, ret_sub_ckpt, ret_out = "runs/retrieval";
    bool no_subcat = false;
    std::size_t ret_n = 0;
    CLI::App* retrieve = app.add_subcommand("retrieve", "rank the gallery for every test query");
    add_common(retrieve, ret_common);
    retrieve->add_option("--checkpoint", ret_ckpt, "category model checkpoint")->required();
    retrieve->add_option("--subcat-checkpoint", ret_sub_ckpt,
                         "subcategory model checkpoint (second ranking pass)");
    retrieve->add_flag("--no-subcat", no_subcat, "single-pass ranking without the re-rank");
    retrieve->add_option("--n", ret_n, "metric cutoff N (default retrieve.n)");
    retrieve->add_option("--out-dir", ret_out, "output directory (default runs/retrieval)");
    retrieve->add_option_function<std::string>(
        "--dataset", alias_for(ret_common, "paths.dataset"), "dataset path");

    // ablate --------------------------------------------------------------
    CommonOpts abl_common;
    std::string axis, values_csv, abl_out;
    CLI::App* ablate = app.add_subcommand("ablate", "compare model variants along one axis");
    add_common(ablate, abl_common);
    ablate->add_option("--axis", axis, "blocks, pos-enc, cls-token, transition, decoder, or views")
        ->required();
    ablate->add_option("--values", values_csv, "comma-separated variant values");
    ablate->add_option("--out", abl_out, "output CSV path");
    ablate->add_option_function<std::string>(
        "--dataset", alias_for(abl_common, "paths.dataset"), "dataset path");

    // gradcheck ---------------------------------------------------------
    GradcheckOpts gc;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "compare backward pass against central differences");
    gradcheck->add_option("--views", gc.views, "views M (default 4)");
    gradcheck->add_option("--dim", gc.dim, "model width D (default 16)");
    gradcheck->add_option("--heads", gc.heads, "attention heads (default 2)");
    gradcheck->add_option("--blocks", gc.blocks, "attention blocks (default 2)");
    gradcheck->add_option("--classes", gc.classes, "target classes (default 3)");
    gradcheck->add_option("--feature-dim", gc.feature_dim, "input view width (default 8)");
    gradcheck->add_option("--step", gc.step, "finite-difference step (default 1e-5)");
    gradcheck->add_option("--tolerance", gc.tolerance, "max relative error (default 1e-4)");
    gradcheck->add_option("--seed", gc.seed, "global random seed (default 0)");
    gradcheck->add_flag("--corrupt-backward", gc.corrupt_backward,
                        "negative control: perturb one gradient after backward");

    // dump-attention ------------------------------------------------------
    CommonOpts dump_common;
    std::string dump_ckpt, dump_out = "runs/attention";
    long dump_shape = 0;
    CLI::App* dump = app.add_subcommand(
        "dump-attention", "export per-block head-averaged attention for one shape");
    add_common(dump, dump_common);
    dump->add_option("--checkpoint", dump_ckpt, "model checkpoint")->required();
    CLI::Option* shape_opt = dump->add_option("--shape", dump_shape,
                                              "shape id (default: first shape in the dataset)");
    dump->add_option("--out-dir", dump_out, "output directory, one CSV per block (default runs/attention)");
    dump->add_option_function<std::string>("--dataset", alias_for(dump_common, "paths.dataset"),
                                           "dataset path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_common);
        if (train->parsed()) return cmd_train(train_common, stage, skip_stage1, resume);
        if (eval_cmd->parsed()) return cmd_eval(eval_common, eval_ckpt, eval_split, eval_out);
        if (retrieve->parsed())
            return cmd_retrieve(ret_common, ret_ckpt, ret_sub_ckpt, no_subcat, ret_n, ret_out);
        if (ablate->parsed()) return cmd_ablate(abl_common, axis, values_csv, abl_out);
        if (gradcheck->parsed()) return cmd_gradcheck(gc);
        if (dump->parsed())
            return cmd_dump_attention(dump_common, dump_ckpt, dump_shape,
                                      shape_opt->count() > 0, dump_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

} // namespace viewset
