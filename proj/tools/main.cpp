// Command-line front end: synth, train, score, evaluate, diagnose.
// Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "oraclead/checkpoint.hpp"
#include "oraclead/csv.hpp"
#include "oraclead/evaluation.hpp"
#include "oraclead/scoring.hpp"
#include "oraclead/synthetic.hpp"
#include "oraclead/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace oraclead;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    // paths
    std::string config_path;
    std::string spec_path;
    std::string train_csv;
    std::string test_csv;
    std::string labels_csv;
    std::string scores_csv;
    std::string checkpoint;
    std::string out;
    std::string log_path;
    // model
    std::size_t window = 10;
    std::size_t hidden_dim = 32;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    bool per_variable_pooling = false;
    // training
    std::size_t epochs = 20;
    std::size_t batch_size = 1024;
    double lr = 5e-4;
    double lambda_recon = 0.1;
    double lambda_dev = 3.0;
    std::string metric = "l2";
    bool refit_sls = false;
    // scoring
    std::string fusion = "multiplicative";
    bool normalize_components = false;
    // evaluation
    std::size_t n_bins = 200;
    std::size_t omega_max = 10;
    double alpha_recall = 0.0;
    double delta = 10.0;
    std::size_t top_k = 3;
    // misc
    std::uint64_t seed = 0;
    int threads = 0;
    bool has_header = true;
    std::vector<std::size_t> timesteps;
};

json config_to_json(const RunConfig& rc) {
    return json{{"window", rc.window},
                {"hidden_dim", rc.hidden_dim},
                {"n_heads", rc.n_heads},
                {"n_layers", rc.n_layers},
                {"per_variable_pooling", rc.per_variable_pooling},
                {"epochs", rc.epochs},
                {"batch_size", rc.batch_size},
                {"lr", rc.lr},
                {"lambda_recon", rc.lambda_recon},
                {"lambda_dev", rc.lambda_dev},
                {"metric", rc.metric},
                {"refit_sls", rc.refit_sls},
                {"fusion", rc.fusion},
                {"normalize_components", rc.normalize_components},
                {"n_bins", rc.n_bins},
                {"omega_max", rc.omega_max},
                {"alpha_recall", rc.alpha_recall},
                {"delta", rc.delta},
                {"top_k", rc.top_k},
                {"seed", rc.seed},
                {"threads", rc.threads},
                {"has_header", rc.has_header}};
}

// Config file layer: JSON object whose keys mirror the long flag names.
void apply_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config: " + path + " must hold a JSON object");

    const auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            try {
                field = j.at(key).get<std::decay_t<decltype(field)>>();
            } catch (const json::exception&) {
                throw ConfigError(std::string("config: bad value for '") + key + "'");
            }
        }
    };
    get("window", rc.window);
    get("hidden_dim", rc.hidden_dim);
    get("n_heads", rc.n_heads);
    get("n_layers", rc.n_layers);
    get("per_variable_pooling", rc.per_variable_pooling);
    get("epochs", rc.epochs);
    get("batch_size", rc.batch_size);
    get("lr", rc.lr);
    get("lambda_recon", rc.lambda_recon);
    get("lambda_dev", rc.lambda_dev);
    get("metric", rc.metric);
    get("refit_sls", rc.refit_sls);
    get("fusion", rc.fusion);
    get("normalize_components", rc.normalize_components);
    get("n_bins", rc.n_bins);
    get("omega_max", rc.omega_max);
    get("alpha_recall", rc.alpha_recall);
    get("delta", rc.delta);
    get("top_k", rc.top_k);
    get("seed", rc.seed);
    get("threads", rc.threads);
    get("has_header", rc.has_header);
    get("train_csv", rc.train_csv);
    get("test_csv", rc.test_csv);
    get("labels_csv", rc.labels_csv);
    get("scores_csv", rc.scores_csv);
    get("checkpoint", rc.checkpoint);
    get("out", rc.out);
    get("log", rc.log_path);
    get("spec", rc.spec_path);
}

// Tracks which flags the user passed so they can override the config file.
struct FlagLayer {
    CLI::App* cmd;
    RunConfig flags;  // values parsed from the command line
    std::vector<std::function<void(RunConfig&)>> setters;
    bool print_config = false;

    explicit FlagLayer(CLI::App* app) : cmd(app) {
        cmd->add_option("--config", flags.config_path, "JSON config file (flags override it)");
        cmd->add_flag("--print-config", print_config, "Print the effective config as JSON and exit");
    }

    template <typename T>
    CLI::Option* opt(const std::string& name, T RunConfig::*field, const std::string& help) {
        CLI::Option* o = cmd->add_option(name, flags.*field, help);
        setters.push_back([this, o, field](RunConfig& rc) {
            if (o->count() > 0) rc.*field = flags.*field;
        });
        return o;
    }
    CLI::Option* flag(const std::string& name, bool RunConfig::*field, const std::string& help) {
        CLI::Option* o = cmd->add_flag(name, flags.*field, help);
        setters.push_back([this, o, field](RunConfig& rc) {
            if (o->count() > 0) rc.*field = flags.*field;
        });
        return o;
    }

    // defaults -> config file -> explicit flags
    RunConfig resolve() const {
        RunConfig rc;
        if (!flags.config_path.empty()) apply_config_file(rc, flags.config_path);
        for (const auto& s : setters) s(rc);
        return rc;
    }
};

void add_model_train_options(FlagLayer& fl) {
    fl.opt("--window", &RunConfig::window, "Window length L");
    fl.opt("--hidden-dim", &RunConfig::hidden_dim, "Hidden dimension d");
    fl.opt("--heads", &RunConfig::n_heads, "Attention heads");
    fl.opt("--layers", &RunConfig::n_layers, "Encoder/decoder stack depth");
    fl.flag("--per-variable-pooling", &RunConfig::per_variable_pooling,
            "Separate pooling (w, b) per variable");
    fl.opt("--epochs", &RunConfig::epochs, "Training epochs");
    fl.opt("--batch-size", &RunConfig::batch_size, "Windows per optimizer step");
    fl.opt("--lr", &RunConfig::lr, "AdamW learning rate");
    fl.opt("--lambda-recon", &RunConfig::lambda_recon, "Reconstruction loss weight");
    fl.opt("--lambda-dev", &RunConfig::lambda_dev, "Deviation loss weight");
    fl.opt("--metric", &RunConfig::metric, "Dissimilarity metric: l2, l1 or cosine");
    fl.flag("--refit-sls", &RunConfig::refit_sls, "Recompute the SLS with frozen final parameters");
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError(what + " not set");
    if (!fs::exists(path)) throw ConfigError(what + " does not exist: " + path);
}

bool maybe_print_config(const FlagLayer& fl, const RunConfig& rc) {
    if (!fl.print_config) return false;
    std::cout << config_to_json(rc).dump(2) << '\n';
    return true;
}

ModelConfig model_config(const RunConfig& rc, std::size_t n_vars) {
    ModelConfig mcfg;
    mcfg.n_vars = n_vars;
    mcfg.window = rc.window;
    mcfg.hidden_dim = rc.hidden_dim;
    mcfg.n_heads = rc.n_heads;
    mcfg.n_layers = rc.n_layers;
    mcfg.per_variable_pooling = rc.per_variable_pooling;
    mcfg.seed = rc.seed;
    return mcfg;
}

TrainConfig train_config(const RunConfig& rc) {
    TrainConfig tcfg;
    tcfg.epochs = rc.epochs;
    tcfg.batch_size = rc.batch_size;
    tcfg.lr = rc.lr;
    tcfg.lambda_recon = rc.lambda_recon;
    tcfg.lambda_dev = rc.lambda_dev;
    tcfg.metric = parse_metric(rc.metric);
    tcfg.seed = rc.seed;
    tcfg.refit_sls = rc.refit_sls;
    tcfg.threads = rc.threads;
    return tcfg;
}

// ---- commands -------------------------------------------------------------

int cmd_synth(const RunConfig& rc) {
    require_file(rc.spec_path, "--spec");
    if (rc.out.empty()) throw ConfigError("--out directory not set");

    std::ifstream in(rc.spec_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("spec: invalid JSON: " + std::string(e.what()));
    }

    SyntheticSpec spec;
    try {
        if (j.contains("n_vars")) spec.n_vars = j.at("n_vars").get<std::size_t>();
        if (j.contains("length_train")) spec.length_train = j.at("length_train").get<std::size_t>();
        if (j.contains("length_test")) spec.length_test = j.at("length_test").get<std::size_t>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("base_signal")) spec.base_signal = parse_base_signal(j.at("base_signal"));
        if (j.contains("anomaly_types")) {
            spec.anomaly_types.clear();
            for (const auto& t : j.at("anomaly_types")) spec.anomaly_types.push_back(parse_anomaly_type(t));
        }
        if (j.contains("anomaly_ratio")) spec.anomaly_ratio = j.at("anomaly_ratio").get<double>();
        if (j.contains("segment_length_range")) {
            const auto& r = j.at("segment_length_range");
            spec.segment_length_range = {r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
        }
        if (j.contains("break_vars"))
            spec.break_vars = j.at("break_vars").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw ConfigError("spec: bad field: " + std::string(e.what()));
    }

    SyntheticData data;
    try {
        data = gen_synthetic(spec);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());  // infeasible spec is a configuration problem
    }

    fs::create_directories(rc.out);
    write_csv((fs::path(rc.out) / "train.csv").string(), data.train.values, data.train.variable_names);
    write_csv((fs::path(rc.out) / "test.csv").string(), data.test.values, data.test.variable_names);
    write_labels((fs::path(rc.out) / "labels.csv").string(), *data.test.labels);

    std::size_t labeled = 0;
    for (const auto l : *data.test.labels) labeled += l;
    std::cout << "synth: wrote train.csv (" << data.train.timesteps() << " rows), test.csv ("
              << data.test.timesteps() << " rows), labels.csv (" << labeled << " anomalous steps, "
              << data.segments.size() << " segments) to " << rc.out << '\n';
    return 0;
}

int cmd_train(const RunConfig& rc) {
    require_file(rc.train_csv, "--train");
    if (rc.checkpoint.empty()) throw ConfigError("--checkpoint output path not set");

    const RawSeries train = load_csv(rc.train_csv, rc.has_header);
    const TrainedModel tm = fit(train, model_config(rc, train.n_vars()), train_config(rc));
    save_checkpoint(rc.checkpoint, tm);

    const std::string log_path = rc.log_path.empty() ? rc.checkpoint + ".log.jsonl" : rc.log_path;
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("train: cannot write " + log_path);
    for (const EpochStats& e : tm.history) {
        const json line = {{"epoch", e.epoch},
                           {"pred_loss", e.mean.prediction},
                           {"recon_loss", e.mean.reconstruction},
                           {"dev_loss", e.mean.deviation},
                           {"total", e.mean.total},
                           {"d_variance", e.d_variance},
                           {"wall_ms", e.wall_ms}};
        log << line.dump() << '\n';
    }
    std::cout << "train: " << tm.history.size() << " epochs, final total loss "
              << tm.history.back().mean.total << ", checkpoint " << rc.checkpoint << '\n';
    return 0;
}

int cmd_score(const RunConfig& rc) {
    require_file(rc.checkpoint, "--checkpoint");
    require_file(rc.test_csv, "--test");
    if (rc.out.empty()) throw ConfigError("--out scores path not set");

    const TrainedModel tm = load_checkpoint(rc.checkpoint);
    const RawSeries test = load_csv(rc.test_csv, rc.has_header);
    ScoreOptions opts;
    opts.fusion = parse_fusion(rc.fusion);
    opts.normalize_components = rc.normalize_components;
    opts.threads = rc.threads;
    const ScoreSeries ss = score_series(tm, test, opts);

    std::ofstream out(rc.out);
    if (!out) throw std::runtime_error("score: cannot write " + rc.out);
    out << "timestep,p_score,d_score,a_score\n";
    for (std::size_t k = 0; k < ss.timesteps.size(); ++k)
        out << ss.timesteps[k] << ',' << format_double(ss.p_score[k]) << ','
            << format_double(ss.d_score[k]) << ',' << format_double(ss.a_score[k]) << '\n';
    std::cout << "score: wrote " << ss.timesteps.size() << " rows to " << rc.out << '\n';
    return 0;
}

struct ScoresFile {
    std::vector<std::size_t> timesteps;
    std::vector<double> p, d, a;
};

ScoresFile read_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("scores: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "timestep,p_score,d_score,a_score")
        throw std::runtime_error("scores: bad header in " + path);
    ScoresFile sf;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t t;
        double p, d, a;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &t, &p, &d, &a) != 4)
            throw std::runtime_error("scores: cannot parse line '" + line + "'");
        sf.timesteps.push_back(t);
        sf.p.push_back(p);
        sf.d.push_back(d);
        sf.a.push_back(a);
    }
    if (sf.timesteps.empty()) throw std::runtime_error("scores: no rows in " + path);
    return sf;
}

int cmd_evaluate(const RunConfig& rc) {
    require_file(rc.scores_csv, "--scores");
    require_file(rc.labels_csv, "--labels");
    if (rc.out.empty()) throw ConfigError("--out report path not set");

    const ScoresFile sf = read_scores(rc.scores_csv);
    const std::vector<std::uint8_t> full_labels = load_labels(rc.labels_csv);

    // the first L-1 test steps are unscored; the first timestep tells the trim
    const std::size_t trim = sf.timesteps.front();
    if (full_labels.size() < trim || full_labels.size() - trim != sf.timesteps.size())
        throw std::runtime_error("evaluate: " + std::to_string(full_labels.size()) + " labels vs " +
                                 std::to_string(sf.timesteps.size()) + " score rows (after dropping " +
                                 std::to_string(trim) + " warmup labels)");
    const std::vector<std::uint8_t> labels(full_labels.begin() + static_cast<std::ptrdiff_t>(trim),
                                           full_labels.end());

    ScoreSeries ss;
    ss.timesteps = sf.timesteps;
    ss.p_score = sf.p;
    ss.d_score = sf.d;
    ss.a_score = sf.a;

    EvalConfig cfg;
    cfg.omega_set.clear();
    for (std::size_t w = 0; w <= rc.omega_max; ++w) cfg.omega_set.push_back(w);
    cfg.n_bins = rc.n_bins;
    cfg.range.alpha_recall = rc.alpha_recall;
    cfg.delta = rc.delta;

    const EvalReport rep = evaluate_all(ss, labels, cfg);

    json j = {{"f1", rep.f1},
              {"r_f1", rep.r_f1},
              {"aff_f1", rep.aff_f1},
              {"auc_roc", rep.auc_roc},
              {"auc_pr", rep.auc_pr},
              {"vus_roc", rep.vus_roc},
              {"vus_pr", rep.vus_pr},
              {"tau_star", rep.tau_star},
              {"config",
               {{"omega_set", rep.omega_set},
                {"n_bins", rc.n_bins},
                {"alpha_recall", rc.alpha_recall},
                {"alpha_precision", 0.0},
                {"delta", rc.delta},
                {"fusion", rc.fusion},
                {"seed", rc.seed}}}};
    std::ofstream out(rc.out);
    if (!out) throw std::runtime_error("evaluate: cannot write " + rc.out);
    out << j.dump(2) << '\n';
    std::cout << "evaluate: f1 " << rep.f1 << ", auc_roc " << rep.auc_roc << ", vus_pr " << rep.vus_pr
              << " -> " << rc.out << '\n';
    return 0;
}

int cmd_diagnose(const RunConfig& rc) {
    require_file(rc.checkpoint, "--checkpoint");
    require_file(rc.test_csv, "--test");
    if (rc.out.empty()) throw ConfigError("--out directory not set");
    if (rc.timesteps.empty()) throw ConfigError("--timesteps not set");

    const TrainedModel tm = load_checkpoint(rc.checkpoint);
    const RawSeries test = load_csv(rc.test_csv, rc.has_header);
    fs::create_directories(rc.out);

    json rankings = json::array();
    for (const std::size_t t : rc.timesteps) {
        const Mat dev = deviation_matrix_at(tm, test, t);
        write_csv((fs::path(rc.out) / ("deviation_t" + std::to_string(t) + ".csv")).string(), dev,
                  test.variable_names);
        const RootCauseRanking ranking = rank_root_causes(dev, t, std::min(rc.top_k, test.n_vars()));
        json entries = json::array();
        for (const auto& [var, agg] : ranking.ranked)
            entries.push_back({{"variable", var}, {"name", test.variable_names[var]}, {"aggregate", agg}});
        rankings.push_back({{"timestep", t}, {"ranking", entries}});
    }
    std::ofstream out(fs::path(rc.out) / "ranking.json");
    out << rankings.dump(2) << '\n';
    std::cout << "diagnose: wrote " << rc.timesteps.size() << " deviation matrices and ranking.json to "
              << rc.out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OracleAD: unsupervised multivariate time-series anomaly detection"};
    app.require_subcommand(1);

    // synth
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic benchmark from a spec JSON");
    FlagLayer fl_synth(synth);
    fl_synth.opt("--spec", &RunConfig::spec_path, "SyntheticSpec JSON file");
    fl_synth.opt("--out", &RunConfig::out, "Output directory");

    // train
    CLI::App* train = app.add_subcommand("train", "Fit a model on a training CSV");
    FlagLayer fl_train(train);
    fl_train.opt("--train", &RunConfig::train_csv, "Training CSV");
    fl_train.opt("--checkpoint", &RunConfig::checkpoint, "Checkpoint output path");
    fl_train.opt("--log", &RunConfig::log_path, "Training log (JSON lines); default <checkpoint>.log.jsonl");
    fl_train.opt("--seed", &RunConfig::seed, "Run seed");
    fl_train.opt("--threads", &RunConfig::threads, "Worker thread cap (0 = hardware)");
    fl_train.flag("--no-header,!--header", &RunConfig::has_header, "CSV has no header row");
    add_model_train_options(fl_train);

    // score
    CLI::App* score = app.add_subcommand("score", "Score a test CSV with a trained checkpoint");
    FlagLayer fl_score(score);
    fl_score.opt("--checkpoint", &RunConfig::checkpoint, "Trained checkpoint");
    fl_score.opt("--test", &RunConfig::test_csv, "Test CSV");
    fl_score.opt("--out", &RunConfig::out, "scores.csv output path");
    fl_score.opt("--fusion", &RunConfig::fusion, "multiplicative or additive");
    fl_score.flag("--normalize-components", &RunConfig::normalize_components,
                  "z-normalize p and d before fusing");
    fl_score.opt("--threads", &RunConfig::threads, "Worker thread cap");
    fl_score.flag("--no-header,!--header", &RunConfig::has_header, "CSV has no header row");

    // evaluate
    CLI::App* evaluate = app.add_subcommand("evaluate", "Compute the metric suite from scores + labels");
    FlagLayer fl_eval(evaluate);
    fl_eval.opt("--scores", &RunConfig::scores_csv, "scores.csv from the score command");
    fl_eval.opt("--labels", &RunConfig::labels_csv, "Label CSV (one 0/1 per line, full test length)");
    fl_eval.opt("--out", &RunConfig::out, "report.json output path");
    fl_eval.opt("--n-bins", &RunConfig::n_bins, "Threshold grid size");
    fl_eval.opt("--omega-max", &RunConfig::omega_max, "VUS lag set is {0..omega_max}");
    fl_eval.opt("--alpha-recall", &RunConfig::alpha_recall, "Range-F1 existence weight");
    fl_eval.opt("--delta", &RunConfig::delta, "Affiliation decay horizon");
    fl_eval.opt("--fusion", &RunConfig::fusion, "Fusion mode echoed into the report");
    fl_eval.opt("--seed", &RunConfig::seed, "Seed echoed into the report");

    // diagnose
    CLI::App* diagnose = app.add_subcommand("diagnose", "Export deviation matrices and root-cause ranks");
    FlagLayer fl_diag(diagnose);
    fl_diag.opt("--checkpoint", &RunConfig::checkpoint, "Trained checkpoint");
    fl_diag.opt("--test", &RunConfig::test_csv, "Test CSV");
    fl_diag.opt("--timesteps", &RunConfig::timesteps, "Timesteps to diagnose")->delimiter(',');
    fl_diag.opt("--out", &RunConfig::out, "Output directory");
    fl_diag.opt("--top-k", &RunConfig::top_k, "Ranking depth");
    fl_diag.flag("--no-header,!--header", &RunConfig::has_header, "CSV has no header row");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems are configuration errors
    }

    const auto dispatch = [&](CLI::App* cmd, FlagLayer& fl, int (*run)(const RunConfig&)) -> int {
        if (!cmd->parsed()) return -1;
        RunConfig rc = fl.resolve();
        if (maybe_print_config(fl, rc)) return 0;
        return run(rc);
    };

    try {
        for (auto [cmd, fl, run] : {std::tuple{synth, &fl_synth, &cmd_synth},
                                    std::tuple{train, &fl_train, &cmd_train},
                                    std::tuple{score, &fl_score, &cmd_score},
                                    std::tuple{evaluate, &fl_eval, &cmd_evaluate},
                                    std::tuple{diagnose, &fl_diag, &cmd_diagnose}}) {
            const int code = dispatch(cmd, *fl, run);
            if (code >= 0) return code;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
