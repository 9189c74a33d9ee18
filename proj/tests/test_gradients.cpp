#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oraclead/structure.hpp"
#include "oraclead/training.hpp"
#include "support.hpp"

using namespace oraclead;

namespace {

Window random_window(std::mt19937& gen, const ModelConfig& cfg) {
    Window w;
    w.past = testsupport::random_mat(gen, cfg.window - 1, cfg.n_vars, -1.5, 1.5);
    w.target.resize(cfg.n_vars);
    std::uniform_real_distribution<double> dist(-1.5, 1.5);
    for (auto& t : w.target) t = dist(gen);
    w.origin_index = cfg.window - 1;
    return w;
}

StableLatentStructure random_sls(std::mt19937& gen, std::size_t n) {
    StableLatentStructure sls;
    sls.values = Mat(n, n, 0.0);
    std::uniform_real_distribution<double> dist(0.1, 2.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) sls.values.at(i, j) = sls.values.at(j, i) = dist(gen);
    sls.n_windows = 1;
    sls.epoch = 1;
    return sls;
}

// forward-only batch-mean loss, the quantity finite differences probe
double mean_loss(const OracleModel& m, const std::vector<Window>& windows,
                 const StableLatentStructure* sls, const TrainConfig& cfg) {
    const auto outs = forward(m, windows, 1);
    double acc = 0.0;
    for (std::size_t w = 0; w < windows.size(); ++w) acc += compute_loss(outs[w], windows[w], sls, cfg).total;
    return acc / static_cast<double>(windows.size());
}

struct TensorError {
    std::string name;
    double rel = 0.0;
};

// central finite differences per tensor, reported as worst relative error
std::vector<TensorError> fd_check(OracleModel m, const std::vector<Window>& windows,
                                  const StableLatentStructure* sls, const TrainConfig& cfg,
                                  double step = 1e-4) {
    std::vector<double> grad(m.param_count());
    loss_and_gradients(m, windows, sls, cfg, grad);

    std::vector<TensorError> report;
    for (const TensorInfo& t : m.tensors()) {
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < t.size; ++k) {
            const std::size_t p = t.offset + k;
            const double saved = m.params()[p];
            m.params()[p] = saved + step;
            const double up = mean_loss(m, windows, sls, cfg);
            m.params()[p] = saved - step;
            const double down = mean_loss(m, windows, sls, cfg);
            m.params()[p] = saved;
            const double fd = (up - down) / (2.0 * step);
            num = std::max(num, std::abs(grad[p] - fd));
            den = std::max({den, std::abs(fd), std::abs(grad[p])});
        }
        report.push_back({t.name, num / std::max(den, 1e-10)});
    }
    return report;
}

ModelConfig grad_cfg() {
    ModelConfig cfg;
    cfg.n_vars = 3;
    cfg.window = 5;
    cfg.hidden_dim = 4;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.seed = 77;
    return cfg;
}

TrainConfig default_train_cfg() {
    TrainConfig cfg;
    cfg.lambda_recon = 0.1;
    cfg.lambda_dev = 3.0;
    cfg.threads = 1;
    return cfg;
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences (full composite loss)") {
    const ModelConfig mcfg = grad_cfg();
    const TrainConfig tcfg = default_train_cfg();
    OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(1);
    std::vector<Window> windows;
    for (int k = 0; k < 2; ++k) windows.push_back(random_window(gen, mcfg));
    const StableLatentStructure sls = random_sls(gen, mcfg.n_vars);

    for (const auto& te : fd_check(m, windows, &sls, tcfg)) {
        INFO("tensor ", te.name, " rel err ", te.rel);
        CHECK(te.rel <= 1e-3);
    }
}

TEST_CASE("gradients stay correct without an SLS (first-epoch loss)") {
    const ModelConfig mcfg = grad_cfg();
    const TrainConfig tcfg = default_train_cfg();
    OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(2);
    const std::vector<Window> windows = {random_window(gen, mcfg)};
    for (const auto& te : fd_check(m, windows, nullptr, tcfg)) {
        INFO("tensor ", te.name, " rel err ", te.rel);
        CHECK(te.rel <= 1e-3);
    }
}

TEST_CASE("gradients hold for stacked layers and per-variable pooling") {
    ModelConfig mcfg = grad_cfg();
    mcfg.n_layers = 2;
    mcfg.per_variable_pooling = true;
    const TrainConfig tcfg = default_train_cfg();
    OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(3);
    std::vector<Window> windows;
    for (int k = 0; k < 2; ++k) windows.push_back(random_window(gen, mcfg));
    const StableLatentStructure sls = random_sls(gen, mcfg.n_vars);
    for (const auto& te : fd_check(m, windows, &sls, tcfg)) {
        INFO("tensor ", te.name, " rel err ", te.rel);
        CHECK(te.rel <= 1e-3);
    }
}

TEST_CASE("gradients hold for the l1 and cosine deviation metrics") {
    const ModelConfig mcfg = grad_cfg();
    OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(4);
    const std::vector<Window> windows = {random_window(gen, mcfg)};
    const StableLatentStructure sls = random_sls(gen, mcfg.n_vars);

    for (const auto metric : {DistanceMetric::l1, DistanceMetric::cosine}) {
        TrainConfig tcfg = default_train_cfg();
        tcfg.metric = metric;
        for (const auto& te : fd_check(m, windows, &sls, tcfg)) {
            INFO("metric ", metric_name(metric), " tensor ", te.name, " rel err ", te.rel);
            CHECK(te.rel <= 2e-3);  // l1 kinks make fd slightly noisier
        }
    }
}

TEST_CASE("loss_and_gradients agrees with per-window compute_loss") {
    const ModelConfig mcfg = grad_cfg();
    const TrainConfig tcfg = default_train_cfg();
    const OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(5);
    std::vector<Window> windows;
    for (int k = 0; k < 7; ++k) windows.push_back(random_window(gen, mcfg));
    const StableLatentStructure sls = random_sls(gen, mcfg.n_vars);

    std::vector<double> grad(m.param_count());
    const LossBreakdown lb = loss_and_gradients(m, windows, &sls, tcfg, grad);

    const auto outs = forward(m, windows, 1);
    LossBreakdown expect;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const LossBreakdown one = compute_loss(outs[w], windows[w], &sls, tcfg);
        expect.prediction += one.prediction;
        expect.reconstruction += one.reconstruction;
        expect.deviation += one.deviation;
        expect.total += one.total;
    }
    const double inv = 1.0 / static_cast<double>(windows.size());
    CHECK(testsupport::close(lb.prediction, expect.prediction * inv, 1e-10));
    CHECK(testsupport::close(lb.reconstruction, expect.reconstruction * inv, 1e-10));
    CHECK(testsupport::close(lb.deviation, expect.deviation * inv, 1e-10));
    CHECK(testsupport::close(lb.total, expect.total * inv, 1e-10));
}

TEST_CASE("batch gradient is the mean of per-window gradients") {
    const ModelConfig mcfg = grad_cfg();
    const TrainConfig tcfg = default_train_cfg();
    const OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(6);
    std::vector<Window> windows;
    for (int k = 0; k < 3; ++k) windows.push_back(random_window(gen, mcfg));
    const StableLatentStructure sls = random_sls(gen, mcfg.n_vars);

    std::vector<double> batch_grad(m.param_count());
    loss_and_gradients(m, windows, &sls, tcfg, batch_grad);

    std::vector<double> mean_grad(m.param_count(), 0.0);
    std::vector<double> one(m.param_count());
    for (const Window& w : windows) {
        loss_and_gradients(m, std::span<const Window>(&w, 1), &sls, tcfg, one);
        for (std::size_t p = 0; p < one.size(); ++p) mean_grad[p] += one[p] / 3.0;
    }
    for (std::size_t p = 0; p < batch_grad.size(); ++p)
        CHECK(testsupport::close(batch_grad[p], mean_grad[p], 1e-12));
}

TEST_CASE("gradients are identical across thread counts") {
    const ModelConfig mcfg = grad_cfg();
    const OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(7);
    std::vector<Window> windows;
    for (int k = 0; k < 9; ++k) windows.push_back(random_window(gen, mcfg));
    const StableLatentStructure sls = random_sls(gen, mcfg.n_vars);

    TrainConfig one_thread = default_train_cfg();
    one_thread.threads = 1;
    TrainConfig four_threads = default_train_cfg();
    four_threads.threads = 4;

    std::vector<double> g1(m.param_count()), g4(m.param_count());
    loss_and_gradients(m, windows, &sls, one_thread, g1);
    loss_and_gradients(m, windows, &sls, four_threads, g4);
    CHECK(g1 == g4);
}

TEST_CASE("the SLS is a constant, not a parameter") {
    const ModelConfig mcfg = grad_cfg();
    const TrainConfig tcfg = default_train_cfg();
    const OracleModel m = OracleModel::init(mcfg);
    std::mt19937 gen(8);
    const std::vector<Window> windows = {random_window(gen, mcfg)};
    StableLatentStructure sls = random_sls(gen, mcfg.n_vars);

    for (const TensorInfo& t : m.tensors()) CHECK(t.name.find("sls") == std::string::npos);

    const double base = mean_loss(m, windows, &sls, tcfg);
    sls.values.at(0, 1) += 0.25;
    sls.values.at(1, 0) += 0.25;
    const double perturbed = mean_loss(m, windows, &sls, tcfg);
    CHECK(base != perturbed);  // the loss sees the SLS, the parameter set does not
}
