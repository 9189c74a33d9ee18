#include "oraclead/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "kernels.hpp"

namespace oraclead {

void TrainConfig::validate() const {
    require(epochs >= 1, "train config: epochs must be >= 1");
    require(batch_size >= 1, "train config: batch_size must be >= 1");
    require(lambda_recon >= 0.0 && lambda_dev >= 0.0, "train config: lambdas must be >= 0");
}

LossBreakdown compute_loss(const ForwardOutput& out, const Window& win, const StableLatentStructure* sls,
                           const TrainConfig& cfg) {
    const std::size_t n = win.target.size();
    require(out.pred.size() == n && out.recon.same_shape(win.past), "compute_loss: shape mismatch");

    LossBreakdown lb;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = out.pred[i] - win.target[i];
        lb.prediction += e * e;
    }
    for (std::size_t k = 0; k < out.recon.v.size(); ++k) {
        const double e = out.recon.v[k] - win.past.v[k];
        lb.reconstruction += e * e;
    }
    if (sls) {
        require(sls->values.rows == n && sls->values.cols == n, "compute_loss: SLS dimension mismatch");
        const Mat d = pairwise_dissimilarity(out.refined, cfg.metric);
        double acc = 0.0;
        for (std::size_t k = 0; k < d.v.size(); ++k) {
            const double diff = d.v[k] - sls->values.v[k];
            acc += diff * diff;
        }
        lb.deviation = acc / static_cast<double>(n * n);
    }
    lb.total = lb.prediction + cfg.lambda_recon * lb.reconstruction + cfg.lambda_dev * lb.deviation;
    return lb;
}

LossBreakdown loss_and_gradients(const OracleModel& m, std::span<const Window> batch,
                                 const StableLatentStructure* sls, const TrainConfig& cfg,
                                 std::vector<double>& grad, std::vector<Mat>* d_mats) {
    require(!batch.empty(), "loss_and_gradients: empty batch");
    grad.assign(m.param_count(), 0.0);
    const detail::LossSums sums =
        detail::batch_loss_and_grad(m, batch, sls ? &sls->values : nullptr, cfg.lambda_recon, cfg.lambda_dev,
                                    cfg.metric, grad, d_mats, cfg.threads);
    const double inv = 1.0 / static_cast<double>(batch.size());
    LossBreakdown lb;
    lb.prediction = sums.prediction * inv;
    lb.reconstruction = sums.reconstruction * inv;
    lb.deviation = sums.deviation * inv;
    lb.total = lb.prediction + cfg.lambda_recon * lb.reconstruction + cfg.lambda_dev * lb.deviation;
    return lb;
}

void AdamWState::step(std::vector<double>& params, const std::vector<double>& grad) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * params[i]);
    }
}

EpochResult train_epoch(OracleModel& model, std::span<const Window> windows, AdamWState& opt,
                        const StableLatentStructure* sls, const TrainConfig& cfg, Rng& rng) {
    require(!windows.empty(), "train_epoch: no windows");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<Window> shuffled(windows.begin(), windows.end());
    rng.shuffle(shuffled);

    EpochResult res;
    res.d_mats.reserve(shuffled.size());
    std::vector<double> grad(model.param_count());
    LossBreakdown sum;
    std::size_t batch_index = 0;

    for (std::size_t b0 = 0; b0 < shuffled.size(); b0 += cfg.batch_size, ++batch_index) {
        const std::size_t count = std::min(cfg.batch_size, shuffled.size() - b0);
        std::span<const Window> batch(shuffled.data() + b0, count);
        std::vector<Mat> batch_d;
        const LossBreakdown lb = loss_and_gradients(model, batch, sls, cfg, grad, &batch_d);
        if (!std::isfinite(lb.total))
            throw std::runtime_error("train_epoch: non-finite loss in batch " + std::to_string(batch_index));
        opt.step(model.params(), grad);

        res.stats.batch_losses.push_back(lb);
        const double w = static_cast<double>(count);
        sum.prediction += lb.prediction * w;
        sum.reconstruction += lb.reconstruction * w;
        sum.deviation += lb.deviation * w;
        sum.total += lb.total * w;
        for (Mat& d : batch_d) res.d_mats.push_back(std::move(d));
    }

    const double inv = 1.0 / static_cast<double>(shuffled.size());
    res.stats.mean.prediction = sum.prediction * inv;
    res.stats.mean.reconstruction = sum.reconstruction * inv;
    res.stats.mean.deviation = sum.deviation * inv;
    res.stats.mean.total = sum.total * inv;
    res.stats.d_variance = dissimilarity_variance(res.d_mats);
    res.stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

TrainedModel fit(const RawSeries& train, const ModelConfig& mcfg, const TrainConfig& tcfg) {
    mcfg.validate();
    tcfg.validate();
    require(train.n_vars() == mcfg.n_vars, "fit: series has " + std::to_string(train.n_vars()) +
                                               " variables but the model expects " +
                                               std::to_string(mcfg.n_vars));
    require(train.timesteps() >= mcfg.window, "fit: training series shorter than one window");

    TrainedModel tm;
    tm.standardizer = fit_standardizer(train);
    tm.metric = tcfg.metric;
    const RawSeries std_train = apply_standardizer(tm.standardizer, train);
    const std::vector<Window> windows = make_windows(std_train, mcfg.window, 1);

    tm.model = OracleModel::init(mcfg);
    AdamWState opt(tcfg.lr, tm.model.param_count());
    Rng rng(tcfg.seed);

    StableLatentStructure sls;
    bool have_sls = false;
    for (std::size_t e = 1; e <= tcfg.epochs; ++e) {
        EpochResult res = train_epoch(tm.model, windows, opt, have_sls ? &sls : nullptr, tcfg, rng);
        res.stats.epoch = e;
        sls = aggregate_sls(res.d_mats, e);
        have_sls = true;
        tm.history.push_back(std::move(res.stats));
    }

    if (tcfg.refit_sls) {
        // frozen-parameter pass over the training windows
        std::vector<Mat> d_mats;
        const DistanceMetric metric = tcfg.metric;
        detail::run_forward(tm.model, windows, tcfg.threads, nullptr, &d_mats, &metric);
        sls = aggregate_sls(d_mats, tcfg.epochs);
    }
    tm.sls = std::move(sls);
    return tm;
}

}  // namespace oraclead
