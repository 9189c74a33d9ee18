#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <json.hpp>
#include <sstream>

#include "oraclead/csv.hpp"
#include "oraclead/synthetic.hpp"
#include "support.hpp"

using nlohmann::json;
using testsupport::TempDir;

namespace {

struct CmdResult {
    int code = -1;
    std::string output;
};

std::string cli_path() {
    const char* p = std::getenv("ORACLEAD_CLI");
    REQUIRE_MESSAGE(p != nullptr, "ORACLEAD_CLI must point at the CLI binary");
    return p;
}

CmdResult run_cli(const std::string& args, const std::string& capture_file) {
    const std::string cmd = cli_path() + " " + args + " > " + capture_file + " 2>&1";
    const int raw = std::system(cmd.c_str());
    CmdResult res;
    res.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    res.output = testsupport::read_file(capture_file);
    return res;
}

// strips the wall-clock field so reruns compare structurally
std::string log_without_wall(const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        j.erase("wall_ms");
        out += j.dump() + "\n";
    }
    return out;
}

// one tiny shared dataset + the flags that train quickly on it
struct Fixture {
    TempDir dir{"cli"};
    std::string data;

    Fixture() {
        testsupport::write_file(dir.path("spec.json"),
                                R"({"n_vars": 3, "length_train": 120, "length_test": 80, "seed": 3,
                                    "anomaly_ratio": 0.08, "segment_length_range": [3, 8]})");
        const auto res = run_cli("synth --spec " + dir.path("spec.json") + " --out " + dir.path("data"),
                                 dir.path("synth.out"));
        REQUIRE(res.code == 0);
        data = dir.path("data");
    }

    std::string train_flags() const {
        return " --epochs 2 --batch-size 32 --hidden-dim 4 --heads 2 --layers 1 ";
    }
};

}  // namespace

TEST_CASE("train reports a missing input file as a config error") {
    TempDir dir("cli");
    const auto res = run_cli("train --train " + dir.path("absent.csv") + " --checkpoint " +
                                 dir.path("m.ckpt"),
                             dir.path("out.txt"));
    CHECK(res.code == 2);
    CHECK(res.output.find("absent.csv") != std::string::npos);
}

TEST_CASE("unknown flags are usage errors") {
    TempDir dir("cli");
    const auto res = run_cli("train --definitely-not-a-flag 1", dir.path("out.txt"));
    CHECK(res.code == 2);
}

TEST_CASE("single-epoch training logs zero deviation loss") {
    Fixture fx;
    const auto res = run_cli("train --train " + fx.data + "/train.csv --checkpoint " +
                                 fx.dir.path("m.ckpt") + " --epochs 1 --batch-size 32 --hidden-dim 4 "
                                 "--heads 2 --layers 1",
                             fx.dir.path("out.txt"));
    REQUIRE(res.code == 0);
    const std::string log = testsupport::read_file(fx.dir.path("m.ckpt.log.jsonl"));
    const json first = json::parse(log.substr(0, log.find('\n')));
    CHECK(first["epoch"] == 1);
    CHECK(first["dev_loss"] == 0.0);
}

TEST_CASE("training reruns with the same seed produce byte-identical checkpoints") {
    Fixture fx;
    const std::string flags = " --train " + fx.data + "/train.csv" + fx.train_flags() + "--seed 11";
    REQUIRE(run_cli("train" + flags + " --checkpoint " + fx.dir.path("a.ckpt"), fx.dir.path("o1")).code == 0);
    REQUIRE(run_cli("train" + flags + " --checkpoint " + fx.dir.path("b.ckpt"), fx.dir.path("o2")).code == 0);
    CHECK(testsupport::read_file(fx.dir.path("a.ckpt")) == testsupport::read_file(fx.dir.path("b.ckpt")));
    CHECK(log_without_wall(testsupport::read_file(fx.dir.path("a.ckpt.log.jsonl"))) ==
          log_without_wall(testsupport::read_file(fx.dir.path("b.ckpt.log.jsonl"))));
}

TEST_CASE("score emits the documented header and the fusion identities") {
    Fixture fx;
    REQUIRE(run_cli("train --train " + fx.data + "/train.csv" + fx.train_flags() + "--checkpoint " +
                        fx.dir.path("m.ckpt"),
                    fx.dir.path("o")).code == 0);

    REQUIRE(run_cli("score --checkpoint " + fx.dir.path("m.ckpt") + " --test " + fx.data +
                        "/test.csv --out " + fx.dir.path("scores.csv"),
                    fx.dir.path("o")).code == 0);
    const std::string text = testsupport::read_file(fx.dir.path("scores.csv"));
    CHECK(text.substr(0, text.find('\n')) == "timestep,p_score,d_score,a_score");

    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++rows;
        std::size_t t;
        double p, d, a;
        REQUIRE(std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &t, &p, &d, &a) == 4);
        CHECK(testsupport::close(a, p * d, 1e-9));
    }
    CHECK(rows == 80 - 9);

    // additive fusion: a = p + d row-wise
    REQUIRE(run_cli("score --checkpoint " + fx.dir.path("m.ckpt") + " --test " + fx.data +
                        "/test.csv --out " + fx.dir.path("scores_add.csv") + " --fusion additive",
                    fx.dir.path("o")).code == 0);
    std::istringstream in2(testsupport::read_file(fx.dir.path("scores_add.csv")));
    std::getline(in2, line);
    while (std::getline(in2, line)) {
        if (line.empty()) continue;
        std::size_t t;
        double p, d, a;
        REQUIRE(std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &t, &p, &d, &a) == 4);
        CHECK(testsupport::close(a, p + d, 1e-9));
    }
}

TEST_CASE("a test series exactly one window long scores one row") {
    Fixture fx;
    REQUIRE(run_cli("train --train " + fx.data + "/train.csv" + fx.train_flags() + "--checkpoint " +
                        fx.dir.path("m.ckpt"),
                    fx.dir.path("o")).code == 0);

    // cut the test file down to exactly L = 10 rows (plus header)
    std::istringstream in(testsupport::read_file(fx.data + "/test.csv"));
    std::string line, cut;
    for (int k = 0; k < 11 && std::getline(in, line); ++k) cut += line + "\n";
    testsupport::write_file(fx.dir.path("tiny.csv"), cut);

    REQUIRE(run_cli("score --checkpoint " + fx.dir.path("m.ckpt") + " --test " + fx.dir.path("tiny.csv") +
                        " --out " + fx.dir.path("one.csv"),
                    fx.dir.path("o")).code == 0);
    const std::string text = testsupport::read_file(fx.dir.path("one.csv"));
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);  // header + one row
}

TEST_CASE("evaluate produces a complete report and honors perfect scores") {
    Fixture fx;
    // hand-built scores equal to the labels over the scored suffix
    const auto labels = oraclead::load_labels(fx.data + "/labels.csv");
    std::string scores = "timestep,p_score,d_score,a_score\n";
    for (std::size_t t = 9; t < labels.size(); ++t) {
        const double v = labels[t] ? 1.0 : 0.0;
        scores += std::to_string(t) + "," + oraclead::format_double(v) + ",1," +
                  oraclead::format_double(v) + "\n";
    }
    testsupport::write_file(fx.dir.path("scores.csv"), scores);

    const auto res = run_cli("evaluate --scores " + fx.dir.path("scores.csv") + " --labels " + fx.data +
                                 "/labels.csv --out " + fx.dir.path("report.json"),
                             fx.dir.path("o"));
    REQUIRE(res.code == 0);
    const json rep = json::parse(testsupport::read_file(fx.dir.path("report.json")));
    for (const char* key : {"f1", "r_f1", "aff_f1", "auc_roc", "auc_pr", "vus_roc", "vus_pr"}) {
        REQUIRE(rep.contains(key));
        CHECK(rep[key].get<double>() >= 0.0);
        CHECK(rep[key].get<double>() <= 1.0);
    }
    CHECK(rep["f1"] == 1.0);
    CHECK(rep["auc_roc"] == 1.0);
    CHECK(rep["config"]["n_bins"] == 200);
    CHECK(rep["config"]["omega_set"].size() == 11);
}

TEST_CASE("evaluate reports both lengths on misaligned input") {
    Fixture fx;
    std::string scores = "timestep,p_score,d_score,a_score\n";
    for (std::size_t t = 9; t < 30; ++t) scores += std::to_string(t) + ",0.1,0.2,0.02\n";
    testsupport::write_file(fx.dir.path("scores.csv"), scores);
    const auto res = run_cli("evaluate --scores " + fx.dir.path("scores.csv") + " --labels " + fx.data +
                                 "/labels.csv --out " + fx.dir.path("report.json"),
                             fx.dir.path("o"));
    CHECK(res.code == 1);
    CHECK(res.output.find("80") != std::string::npos);  // label count
    CHECK(res.output.find("21") != std::string::npos);  // score rows
}

TEST_CASE("diagnose validates timesteps and writes sorted rankings") {
    Fixture fx;
    REQUIRE(run_cli("train --train " + fx.data + "/train.csv" + fx.train_flags() + "--checkpoint " +
                        fx.dir.path("m.ckpt"),
                    fx.dir.path("o")).code == 0);

    const auto bad = run_cli("diagnose --checkpoint " + fx.dir.path("m.ckpt") + " --test " + fx.data +
                                 "/test.csv --timesteps 8 --out " + fx.dir.path("diag"),
                             fx.dir.path("o"));
    CHECK(bad.code == 1);
    CHECK(bad.output.find("scorable") != std::string::npos);

    const auto good = run_cli("diagnose --checkpoint " + fx.dir.path("m.ckpt") + " --test " + fx.data +
                                  "/test.csv --timesteps 20,40 --out " + fx.dir.path("diag"),
                              fx.dir.path("o"));
    REQUIRE(good.code == 0);

    const oraclead::RawSeries dev = oraclead::load_csv(fx.dir.path("diag/deviation_t20.csv"), true);
    REQUIRE(dev.n_vars() == 3);
    REQUIRE(dev.timesteps() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(dev.values.at(i, i) == 0.0);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(dev.values.at(i, j) >= 0.0);
            CHECK(testsupport::close(dev.values.at(i, j), dev.values.at(j, i), 1e-9));
        }
    }

    const json ranking = json::parse(testsupport::read_file(fx.dir.path("diag/ranking.json")));
    REQUIRE(ranking.size() == 2);
    for (const auto& entry : ranking) {
        const auto& rk = entry["ranking"];
        REQUIRE(rk.size() == 3);
        for (std::size_t k = 1; k < rk.size(); ++k)
            CHECK(rk[k - 1]["aggregate"].get<double>() >= rk[k]["aggregate"].get<double>());
    }
}

TEST_CASE("synth outputs round-trip losslessly and replay identically") {
    Fixture fx;

    // repeat into a second directory: byte-identical files
    REQUIRE(run_cli("synth --spec " + fx.dir.path("spec.json") + " --out " + fx.dir.path("data2"),
                    fx.dir.path("o")).code == 0);
    for (const char* f : {"train.csv", "test.csv", "labels.csv"})
        CHECK(testsupport::read_file(fx.data + "/" + f) ==
              testsupport::read_file(fx.dir.path("data2") + "/" + f));

    // round-trip: the CSVs parse back to the exact generated values
    oraclead::SyntheticSpec spec;
    spec.n_vars = 3;
    spec.length_train = 120;
    spec.length_test = 80;
    spec.seed = 3;
    spec.anomaly_ratio = 0.08;
    spec.segment_length_range = {3, 8};
    const oraclead::SyntheticData direct = oraclead::gen_synthetic(spec);

    const oraclead::RawSeries train = oraclead::load_csv(fx.data + "/train.csv", true);
    REQUIRE(train.values.v.size() == direct.train.values.v.size());
    for (std::size_t k = 0; k < train.values.v.size(); ++k)
        CHECK(testsupport::close(train.values.v[k], direct.train.values.v[k], 1e-12));

    const auto labels = oraclead::load_labels(fx.data + "/labels.csv");
    CHECK(labels.size() == 80);
    CHECK(labels == *direct.test.labels);
}

TEST_CASE("infeasible synth specs exit with the config code") {
    TempDir dir("cli");
    testsupport::write_file(dir.path("bad.json"),
                            R"({"n_vars": 3, "length_train": 50, "length_test": 20,
                                "segment_length_range": [30, 40]})");
    const auto res = run_cli("synth --spec " + dir.path("bad.json") + " --out " + dir.path("x"),
                             dir.path("o"));
    CHECK(res.code == 2);
}

TEST_CASE("config precedence: defaults, then file, then flags") {
    TempDir dir("cli");
    testsupport::write_file(dir.path("cfg.json"), R"({"epochs": 5, "hidden_dim": 16})");

    // built-in default
    auto res = run_cli("train --print-config", dir.path("o"));
    REQUIRE(res.code == 0);
    json j = json::parse(res.output);
    CHECK(j["epochs"] == 20);
    CHECK(j["hidden_dim"] == 32);

    // config file layer
    res = run_cli("train --print-config --config " + dir.path("cfg.json"), dir.path("o"));
    REQUIRE(res.code == 0);
    j = json::parse(res.output);
    CHECK(j["epochs"] == 5);
    CHECK(j["hidden_dim"] == 16);

    // explicit flag wins
    res = run_cli("train --print-config --config " + dir.path("cfg.json") + " --epochs 2", dir.path("o"));
    REQUIRE(res.code == 0);
    j = json::parse(res.output);
    CHECK(j["epochs"] == 2);
    CHECK(j["hidden_dim"] == 16);
}

TEST_CASE("score and evaluate are idempotent byte for byte") {
    Fixture fx;
    REQUIRE(run_cli("train --train " + fx.data + "/train.csv" + fx.train_flags() + "--checkpoint " +
                        fx.dir.path("m.ckpt"),
                    fx.dir.path("o")).code == 0);
    for (int round = 0; round < 2; ++round) {
        REQUIRE(run_cli("score --checkpoint " + fx.dir.path("m.ckpt") + " --test " + fx.data +
                            "/test.csv --out " + fx.dir.path("s" + std::to_string(round) + ".csv"),
                        fx.dir.path("o")).code == 0);
        REQUIRE(run_cli("evaluate --scores " + fx.dir.path("s" + std::to_string(round) + ".csv") +
                            " --labels " + fx.data + "/labels.csv --out " +
                            fx.dir.path("r" + std::to_string(round) + ".json"),
                        fx.dir.path("o")).code == 0);
    }
    CHECK(testsupport::read_file(fx.dir.path("s0.csv")) == testsupport::read_file(fx.dir.path("s1.csv")));
    CHECK(testsupport::read_file(fx.dir.path("r0.json")) == testsupport::read_file(fx.dir.path("r1.json")));
}
