#pragma once

#include "viewset/data.hpp"
#include "viewset/graph.hpp"
#include "viewset/model.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace viewset {

// Warmup-restart schedule: within each interval the rate climbs linearly from
// 0 to the interval's peak over the warmup epochs, then follows a half-cosine
// back to 0; each restart multiplies the peak by (1 - peak_decay).
struct ScheduleConfig {
    double peak_lr = 1e-3;
    std::size_t interval_epochs = 100;
    std::size_t warmup_epochs = 5;
    double peak_decay = 0.4;
    std::size_t total_epochs = 300;

    void validate() const; // throws ConfigError
};

double lr_at(double epoch_fraction, const ScheduleConfig& cfg);

class Sgd {
public:
    Sgd(std::vector<Parameter*> params, double momentum);
    void step(double lr);

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> velocity_;
    double momentum_;
};

class AdamW {
public:
    AdamW(std::vector<Parameter*> params, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8, double weight_decay = 0.05);
    void step(double lr);
    std::size_t steps_taken() const { return t_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    double beta1_, beta2_, eps_, weight_decay_;
    std::size_t t_ = 0;
};

struct TrainOptions {
    std::size_t stage1_epochs = 30;
    double stage1_lr = 0.01;
    double stage1_momentum = 0.9;
    ScheduleConfig schedule; // stage 2
    std::size_t stage2_epochs = 0; // 0 = schedule.total_epochs
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, weight_decay = 0.05;
    std::size_t batch_size = 1;
    // Random per-shape view permutation, redrawn each epoch.
    bool permute_views = true;
    // 0 = use all views; otherwise train on a fresh random subset of this
    // size each epoch, and evaluate on a per-shape subset fixed by seed.
    std::size_t train_views = 0;
    // Stage 2 only: keep the initializer's weights fixed and optimize just
    // the attention blocks and the decoder.
    bool freeze_initializer = false;
    std::uint64_t seed = 0;
};

struct EpochRow {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_class_acc = 0.0;
    double val_inst_acc = 0.0;
};

struct TrainLog {
    std::vector<EpochRow> rows;
    // CSV: epoch,lr,train_loss,train_acc,val_class_acc,val_inst_acc
    void save(const std::string& path) const;
};

struct Stage1Result {
    double final_loss = 0.0;
    double train_acc = 0.0;
};

struct EvalResult {
    double instance_acc = 0.0;
    double class_acc = 0.0;
    std::vector<std::size_t> predictions; // one per evaluated shape
};

// The evaluation-time view subset for one shape (all views when
// options.train_views is 0), fixed by (options.seed, shape id).
Tensor eval_views(const ShapeRecord& rec, const TrainOptions& options);

// Accuracy of the full model over the given shape indices (eval mode).
EvalResult evaluate(Model& model, const FeatureFile& data,
                    const std::vector<std::size_t>& indices, const TrainOptions& options);

// Stage 1: trains the initializer plus a throwaway per-view-affine/mean-pool
// classification head with SGD and a cosine-annealed rate; the head is
// dropped, the initializer weights stay.
Stage1Result train_stage1(Model& model, const FeatureFile& data,
                          const std::vector<std::size_t>& train_indices,
                          const TrainOptions& options);

// Stage 2: joint optimization of the full model under the warmup-restart
// schedule, decoupled-weight-decay Adam, per-epoch random view permutations.
TrainLog train_stage2(Model& model, const FeatureFile& data, const DatasetSplit& split,
                      const TrainOptions& options);

} // namespace viewset
