#include "viewset/training.hpp"

#include "viewset/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace viewset {

void ScheduleConfig::validate() const {
    if (peak_lr <= 0.0) throw ConfigError("schedule: peak_lr must be positive");
    if (warmup_epochs == 0 || warmup_epochs >= interval_epochs)
        throw ConfigError("schedule: need 0 < warmup_epochs < interval_epochs");
    if (peak_decay < 0.0 || peak_decay >= 1.0)
        throw ConfigError("schedule: peak_decay must lie in [0, 1)");
    if (total_epochs == 0) throw ConfigError("schedule: total_epochs must be positive");
}

double lr_at(double epoch_fraction, const ScheduleConfig& cfg) {
    cfg.validate();
    if (epoch_fraction < 0.0 || epoch_fraction > static_cast<double>(cfg.total_epochs))
        throw InputError("lr_at: epoch " + std::to_string(epoch_fraction) +
                         " outside [0, " + std::to_string(cfg.total_epochs) + "]");
    double interval = static_cast<double>(cfg.interval_epochs);
    double i = std::floor(epoch_fraction / interval);
    double u = epoch_fraction - i * interval;
    double peak = cfg.peak_lr * std::pow(1.0 - cfg.peak_decay, i);
    double warm = static_cast<double>(cfg.warmup_epochs);
    if (u <= warm) return peak * (u / warm);
    double s = (u - warm) / (interval - warm);
    return peak * 0.5 * (1.0 + std::cos(s * std::acos(-1.0)));
}

Sgd::Sgd(std::vector<Parameter*> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
    if (momentum_ < 0.0 || momentum_ >= 1.0)
        throw ConfigError("sgd: momentum must lie in [0, 1)");
    velocity_.reserve(params_.size());
    for (Parameter* p : params_) velocity_.emplace_back(p->value.shape());
}

void Sgd::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& v = velocity_[i];
        Parameter& p = *params_[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = momentum_ * v[j] + p.grad[j];
            p.value[j] -= lr * v[j];
        }
        p.value.ensure_finite("sgd step");
    }
}

AdamW::AdamW(std::vector<Parameter*> params, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
    if (beta1_ < 0 || beta1_ >= 1 || beta2_ < 0 || beta2_ >= 1)
        throw ConfigError("adamw: betas must lie in [0, 1)");
    if (eps_ <= 0) throw ConfigError("adamw: eps must be positive");
    if (weight_decay_ < 0) throw ConfigError("adamw: weight_decay must be nonnegative");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void AdamW::step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            double g = p.grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p.value[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.value[j]);
        }
        p.value.ensure_finite("adamw step");
    }
}

namespace {

// Deterministic per-shape stream for evaluation-time subsetting.
std::uint64_t shape_subset_seed(std::uint64_t seed, long shape_id) {
    return seed ^ (static_cast<std::uint64_t>(shape_id) * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
}

Tensor permute_view_rows(const Tensor& views, Rng& rng) {
    std::vector<std::size_t> perm = rng.permutation(views.rows());
    Tensor out({views.rows(), views.cols()});
    for (std::size_t i = 0; i < perm.size(); ++i) {
        auto src = views.row(perm[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

// The training-time view tensor for one shape this epoch.
Tensor train_views_for(const ShapeRecord& rec, const TrainOptions& options, Rng& perm_rng) {
    Tensor views = rec.views;
    if (options.train_views > 0 && options.train_views < views.rows()) {
        // A fresh subset each epoch, drawn from the view-permutation stream.
        std::vector<std::size_t> pick =
            perm_rng.sample_without_replacement(views.rows(), options.train_views);
        Tensor sub({options.train_views, views.cols()});
        for (std::size_t i = 0; i < pick.size(); ++i) {
            auto src = views.row(pick[i]);
            std::copy(src.begin(), src.end(), sub.row(i).begin());
        }
        views = std::move(sub);
    }
    if (options.permute_views) views = permute_view_rows(views, perm_rng);
    return views;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

} // namespace

Tensor eval_views(const ShapeRecord& rec, const TrainOptions& options) {
    if (options.train_views > 0 && options.train_views < rec.views.rows())
        return subset_views(rec.views, options.train_views,
                            shape_subset_seed(options.seed, rec.id));
    return rec.views;
}

EvalResult evaluate(Model& model, const FeatureFile& data,
                    const std::vector<std::size_t>& indices, const TrainOptions& options) {
    EvalResult out;
    if (indices.empty()) return out;
    std::map<int, std::pair<std::size_t, std::size_t>> per_class; // label -> (correct, total)
    std::size_t correct = 0;
    out.predictions.reserve(indices.size());
    for (std::size_t idx : indices) {
        const ShapeRecord& rec = data.shapes.at(idx);
        std::size_t pred = model.predict_class(eval_views(rec, options));
        out.predictions.push_back(pred);
        bool hit = pred == static_cast<std::size_t>(rec.label);
        correct += hit;
        auto& [c, t] = per_class[rec.label];
        c += hit;
        t += 1;
    }
    out.instance_acc = static_cast<double>(correct) / static_cast<double>(indices.size());
    double acc_sum = 0.0;
    for (auto& [label, ct] : per_class)
        acc_sum += static_cast<double>(ct.first) / static_cast<double>(ct.second);
    out.class_acc = acc_sum / static_cast<double>(per_class.size());
    return out;
}

Stage1Result train_stage1(Model& model, const FeatureFile& data,
                          const std::vector<std::size_t>& train_indices,
                          const TrainOptions& options) {
    if (train_indices.empty()) throw InputError("stage 1: empty training set");
    if (options.stage1_epochs == 0) throw ConfigError("stage 1: epochs must be positive");

    std::size_t k = model.config().head.num_classes;
    std::size_t d = model.config().encoder.view_dim;
    double smoothing = model.config().head.label_smoothing;

    // Throwaway head: one affine map per view, then mean pooling of logits.
    Rng head_rng = Rng::substream(options.seed, "stage1-head");
    Parameter head_w("stage1.w", xavier_uniform({d, k}, d, k, head_rng));
    Parameter head_b("stage1.b", Tensor::zeros({k}));

    std::vector<Parameter*> trained = model.initializer().params();
    trained.push_back(&head_w);
    trained.push_back(&head_b);
    Sgd opt(trained, options.stage1_momentum);

    Rng order_rng = Rng::substream(options.seed, "stage1-order");
    Rng perm_rng = Rng::substream(options.seed, "stage1-view-perm");

    std::size_t e_total = options.stage1_epochs;
    Stage1Result result;
    for (std::size_t e = 0; e < e_total; ++e) {
        // Cosine anneal from stage1_lr to 0 over the stage.
        double lr = options.stage1_lr * 0.5 *
                    (1.0 + std::cos(std::acos(-1.0) * static_cast<double>(e) /
                                    static_cast<double>(e_total)));
        std::vector<std::size_t> order = order_rng.permutation(train_indices.size());
        std::vector<double> losses;
        std::size_t correct = 0;
        std::size_t in_batch = 0;
        for (Parameter* p : trained) p->zero_grad();
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const ShapeRecord& rec = data.shapes.at(train_indices[order[oi]]);
            Tensor views = train_views_for(rec, options, perm_rng);
            Graph g;
            g.training = true;
            Val z0 = model.embed(g, views);
            Val per_view = g.add_row_bias(g.matmul(z0, g.param(head_w)), g.param(head_b));
            Val logits = g.mean_rows(per_view);
            Val loss = g.cross_entropy_smoothed(logits, static_cast<std::size_t>(rec.label),
                                                smoothing);
            losses.push_back(g.value(loss).scalar_value());
            correct += argmax_row(g.value(logits)) == static_cast<std::size_t>(rec.label);
            g.backward(loss);
            if (++in_batch == options.batch_size || oi + 1 == order.size()) {
                if (in_batch > 1)
                    for (Parameter* p : trained)
                        for (std::size_t j = 0; j < p->grad.size(); ++j)
                            p->grad[j] /= static_cast<double>(in_batch);
                opt.step(lr);
                for (Parameter* p : trained) p->zero_grad();
                in_batch = 0;
            }
        }
        result.final_loss = mean_of(losses);
        result.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    }
    return result;
}

TrainLog train_stage2(Model& model, const FeatureFile& data, const DatasetSplit& split,
                      const TrainOptions& options) {
    if (split.train.empty()) throw InputError("stage 2: empty training split");
    options.schedule.validate();
    std::size_t epochs =
        options.stage2_epochs > 0 ? options.stage2_epochs : options.schedule.total_epochs;
    if (epochs > options.schedule.total_epochs)
        throw ConfigError("stage 2: epochs exceed the schedule's total_epochs");

    std::vector<Parameter*> all_params = model.params();
    std::vector<Parameter*> params;
    if (options.freeze_initializer) {
        for (Parameter* p : model.encoder().params()) params.push_back(p);
        for (Parameter* p : model.head().params()) params.push_back(p);
    } else {
        params = all_params;
    }
    AdamW opt(params, options.beta1, options.beta2, options.adam_eps, options.weight_decay);

    Rng order_rng = Rng::substream(options.seed, "train-order");
    Rng perm_rng = Rng::substream(options.seed, "view-perm");
    Rng dropout_rng = Rng::substream(options.seed, "dropout");

    TrainLog log;
    std::size_t n = split.train.size();
    std::size_t steps_per_epoch = (n + options.batch_size - 1) / options.batch_size;
    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order = order_rng.permutation(n);
        std::vector<double> losses;
        std::size_t correct = 0;
        std::size_t in_batch = 0, step_idx = 0;
        for (Parameter* p : all_params) p->zero_grad();
        for (std::size_t oi = 0; oi < n; ++oi) {
            const ShapeRecord& rec = data.shapes.at(split.train[order[oi]]);
            Tensor views = train_views_for(rec, options, perm_rng);
            Graph g;
            g.training = true;
            Val logits = model.logits(g, views, &dropout_rng);
            Val loss = model.head().loss(g, logits, static_cast<std::size_t>(rec.label));
            losses.push_back(g.value(loss).scalar_value());
            correct += argmax_row(g.value(logits)) == static_cast<std::size_t>(rec.label);
            g.backward(loss);
            if (++in_batch == options.batch_size || oi + 1 == n) {
                if (in_batch > 1)
                    for (Parameter* p : params)
                        for (std::size_t j = 0; j < p->grad.size(); ++j)
                            p->grad[j] /= static_cast<double>(in_batch);
                double lr = lr_at(static_cast<double>(e) +
                                      static_cast<double>(step_idx) /
                                          static_cast<double>(steps_per_epoch),
                                  options.schedule);
                opt.step(lr);
                for (Parameter* p : all_params) p->zero_grad();
                in_batch = 0;
                ++step_idx;
            }
        }
        EpochRow row;
        row.epoch = e;
        row.lr = lr_at(static_cast<double>(e), options.schedule);
        row.train_loss = mean_of(losses);
        row.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        if (!split.val.empty()) {
            EvalResult val = evaluate(model, data, split.val, options);
            row.val_class_acc = val.class_acc;
            row.val_inst_acc = val.instance_acc;
        }
        log.rows.push_back(row);
    }
    return log;
}

void TrainLog::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write training log: " + path);
    out << "epoch,lr,train_loss,train_acc,val_class_acc,val_inst_acc\n";
    char buf[40];
    for (const EpochRow& r : rows) {
        out << r.epoch;
        for (double v : {r.lr, r.train_loss, r.train_acc, r.val_class_acc, r.val_inst_acc}) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!out) throw InputError("write failed for training log: " + path);
}

} // namespace viewset
