#pragma once

// Batched forward/backward kernels shared by training, scoring and the public
// forward(). Windows are processed in fixed-size micro-batches; per-variable
// work may run on worker threads, with all cross-variable reductions done in
// variable order on the calling thread so results never depend on the thread
// count.

#include <span>
#include <vector>

#include "oraclead/mat.hpp"
#include "oraclead/model.hpp"
#include "oraclead/structure.hpp"

namespace oraclead::detail {

struct LossSums {
    double prediction = 0.0;
    double reconstruction = 0.0;
    double deviation = 0.0;
};

/// Forward-only pass. Any of the sinks may be null. `d_mats`/`preds` are
/// resized to windows.size(); `preds` gets one row per window.
void run_forward(const OracleModel& m, std::span<const Window> windows, int threads,
                 std::vector<ForwardOutput>* outputs, std::vector<Mat>* d_mats,
                 const DistanceMetric* metric, Mat* preds = nullptr);

/// Forward + backward over one optimizer batch. Accumulates d(batch-mean
/// total loss)/d(theta) into `grad` (caller zeroes it) and returns the summed
/// per-window loss components (divide by windows.size() for the mean).
/// `sls` may be null (deviation term off). `d_mats`, if given, receives the
/// dissimilarity matrix of every window from this training-time pass.
LossSums batch_loss_and_grad(const OracleModel& m, std::span<const Window> windows, const Mat* sls,
                             double lambda_recon, double lambda_dev, DistanceMetric metric,
                             std::vector<double>& grad, std::vector<Mat>* d_mats, int threads);

int resolve_threads(int threads);

}  // namespace oraclead::detail
