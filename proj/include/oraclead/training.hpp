#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oraclead/model.hpp"
#include "oraclead/rng.hpp"
#include "oraclead/series.hpp"
#include "oraclead/structure.hpp"

namespace oraclead {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 1024;
    double lr = 5e-4;  // 5e-5 is the documented choice for PSM-scale data
    double lambda_recon = 0.1;
    double lambda_dev = 3.0;
    DistanceMetric metric = DistanceMetric::l2;
    std::uint64_t seed = 0;
    bool refit_sls = false;
    int threads = 0;

    void validate() const;
};

struct LossBreakdown {
    double prediction = 0.0;
    double reconstruction = 0.0;
    double deviation = 0.0;
    double total = 0.0;
};

/// Composite loss of one window given its forward pass. The deviation term is
/// the mean squared gap between the window's dissimilarity matrix and the
/// SLS; it is zero while no SLS exists (first epoch). The SLS is a constant
/// with respect to gradients.
LossBreakdown compute_loss(const ForwardOutput& out, const Window& win, const StableLatentStructure* sls,
                           const TrainConfig& cfg);

/// Batch-mean loss and its gradient w.r.t. every parameter, accumulated into
/// `grad` (which is zeroed first). Optionally returns the dissimilarity
/// matrix of every window from this pass. This is the training core and also
/// what the finite-difference tests probe.
LossBreakdown loss_and_gradients(const OracleModel& m, std::span<const Window> batch,
                                 const StableLatentStructure* sls, const TrainConfig& cfg,
                                 std::vector<double>& grad, std::vector<Mat>* d_mats = nullptr);

/// AdamW with decoupled weight decay. Moment constants follow the usual
/// defaults (0.9 / 0.999, eps 1e-8, weight decay 0.01).
struct AdamWState {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t step_count = 0;
    std::vector<double> m, v;

    AdamWState() = default;
    AdamWState(double learning_rate, std::size_t n_params)
        : lr(learning_rate), m(n_params, 0.0), v(n_params, 0.0) {}
    void step(std::vector<double>& params, const std::vector<double>& grad);
};

struct EpochStats {
    std::size_t epoch = 0;
    LossBreakdown mean;                       // over all windows of the epoch
    std::vector<LossBreakdown> batch_losses;  // one record per optimizer step
    double d_variance = 0.0;
    double wall_ms = 0.0;
};

struct EpochResult {
    std::vector<Mat> d_mats;  // one per window, training-pass order
    EpochStats stats;
};

/// One pass over all windows in shuffled order: batches of cfg.batch_size
/// (final partial batch included), one AdamW step per batch. Collects every
/// window's dissimilarity matrix for SLS aggregation. Throws on a non-finite
/// batch loss, naming the batch.
EpochResult train_epoch(OracleModel& model, std::span<const Window> windows, AdamWState& opt,
                        const StableLatentStructure* sls, const TrainConfig& cfg, Rng& rng);

struct TrainedModel {
    OracleModel model;
    StableLatentStructure sls;
    Standardizer standardizer;
    DistanceMetric metric = DistanceMetric::l2;
    std::vector<EpochStats> history;
};

/// Full training schedule: epoch 1 runs without a deviation target, the SLS
/// aggregated at the end of each epoch is used by the next one, and the
/// returned SLS is the final epoch's (or a frozen-parameter recomputation
/// when cfg.refit_sls is set).
TrainedModel fit(const RawSeries& train, const ModelConfig& mcfg, const TrainConfig& tcfg);

}  // namespace oraclead
