#pragma once

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <map>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "data.hpp"
#include "detector.hpp"
#include "fedcore.hpp"
#include "metrics.hpp"
#include "simnet.hpp"

namespace fedvision {

// Seed offsets from the single root seed. Every module derives its stream
// from here; nothing else draws randomness.
inline constexpr std::uint64_t kSeedData = 0;
inline constexpr std::uint64_t kSeedSplit = 1;
inline constexpr std::uint64_t kSeedPartition = 2;
inline constexpr std::uint64_t kSeedModelInit = 3;
inline constexpr std::uint64_t kSeedTrain = 4;
inline constexpr std::uint64_t kSeedDropout = 5;

struct DatasetParams {
    std::size_t count = 2460;
    int image_size = 64;
    int max_objects = 3;
    SplitRatios ratios;
    GeneratorOptions generator;
};

enum class Mode { Centralized, Federated };

/// Desk-scale experiment description. `model.seed` and `train.seed` are
/// overwritten from `seed` by the runners.
struct ExperimentSpec {
    Mode mode = Mode::Centralized;
    std::vector<int> epochs{8, 15, 30, 45, 60};
    std::vector<int> rounds;
    std::vector<Strategy> methods;
    DatasetParams dataset;
    ModelConfig model{64, 4, kNumClasses, 64, 1, 0};
    TrainConfig train{1, 10, 0.05, 0};
    FedOptConfig fedopt;
    int clients = 3;
    double drop_prob = 0.0;
    EvalThresholds thresholds;
    std::uint64_t seed = 1;

    void validate() const {
        require(!epochs.empty(), "ExperimentSpec: epochs sweep must be nonempty");
        for (int e : epochs) require(e >= 1, "ExperimentSpec: every epoch setting must be >= 1");
        if (mode == Mode::Federated) {
            require(!rounds.empty(), "ExperimentSpec: federated mode requires a rounds sweep");
            require(!methods.empty(), "ExperimentSpec: federated mode requires at least one method");
            for (int r : rounds) require(r >= 1, "ExperimentSpec: every round setting must be >= 1");
            require(clients >= 1, "ExperimentSpec: clients must be >= 1");
        }
        require(dataset.image_size == model.image_size, "ExperimentSpec: dataset and model image sizes differ");
        model.validate();
        TrainConfig t = train;
        t.epochs = 1;
        t.validate();
        fedopt.validate();
        DropoutPolicy{drop_prob, 0}.validate();
    }

    ModelConfig seeded_model() const {
        ModelConfig m = model;
        m.seed = seed + kSeedModelInit;
        return m;
    }

    TrainConfig seeded_train(int epochs_count) const {
        TrainConfig t = train;
        t.epochs = epochs_count;
        t.seed = seed + kSeedTrain;
        return t;
    }
};

struct MetricsReport {
    int epochs = 0;
    int rounds = 0;  ///< 0 for centralized rows
    std::string method;
    EvalResult eval;
    double train_seconds = 0.0;
};

inline constexpr const char* kMetricsCsvHeader =
    "epochs,rounds,method,map50,map50_95,recall,precision,loss,train_seconds";

inline std::string csv_row(const MetricsReport& r, bool with_timing = true) {
    char line[256];
    std::snprintf(line, sizeof line, "%d,%d,%s,%.6f,%.6f,%.6f,%.6f,%.6f,", r.epochs, r.rounds, r.method.c_str(),
                  r.eval.map50, r.eval.map50_95, r.eval.recall, r.eval.precision, r.eval.mean_loss);
    std::string out = line;
    if (with_timing) {
        std::snprintf(line, sizeof line, "%.3f", r.train_seconds);
        out += line;
    }
    return out;
}

/// Full table. Without timing the last column is left empty, which makes the
/// text a deterministic function of the spec.
inline std::string metrics_csv(const std::vector<MetricsReport>& rows, bool with_timing = true) {
    std::string out = std::string(kMetricsCsvHeader) + "\n";
    for (const auto& r : rows) out += csv_row(r, with_timing) + "\n";
    return out;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    return {{"epochs", r.epochs},       {"rounds", r.rounds},
            {"method", r.method},       {"map50", r.eval.map50},
            {"map50_95", r.eval.map50_95}, {"recall", r.eval.recall},
            {"precision", r.eval.precision}, {"loss", r.eval.mean_loss},
            {"train_seconds", r.train_seconds}, {"empty_prediction", r.eval.empty_prediction}};
}

inline DatasetSplit prepare_data(const ExperimentSpec& spec) {
    auto samples = generate_dataset(spec.dataset.count, spec.dataset.image_size, spec.dataset.max_objects,
                                    spec.seed + kSeedData, spec.dataset.generator);
    return split_dataset(std::move(samples), spec.dataset.ratios, spec.seed + kSeedSplit);
}

namespace detail {

/// Process CPU time in seconds (all threads).
inline double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

inline std::vector<int> sorted_unique(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Centralized baseline

struct LossCurve {
    int epochs = 0;                   ///< sweep setting the curve belongs to
    std::vector<double> train_loss;   ///< per-epoch mean training loss
    std::vector<double> val_loss;     ///< per-epoch mean validation loss
};

struct BaselineResult {
    std::vector<MetricsReport> reports;  ///< one per epoch setting, in sweep order
    LossCurve curve;                     ///< curve of the longest setting (shorter ones are its prefixes)
};

/// Trains from a fresh init on the whole training set for each epoch count.
/// Epoch e always shuffles with seed+e, so an E-epoch run is a prefix of the
/// longest run; one incremental run is snapshotted at every requested E.
inline BaselineResult run_baseline(const ExperimentSpec& spec, const DatasetSplit& data) {
    spec.validate();
    require(spec.mode == Mode::Centralized, "run_baseline: spec must be in centralized mode");
    require(!data.train.empty() && !data.test.empty(), "run_baseline: train and test splits must be nonempty");
    const ModelConfig mc = spec.seeded_model();
    const auto settings = detail::sorted_unique(spec.epochs);

    ParamVector params = init_model(mc);
    std::map<int, MetricsReport> by_epochs;
    BaselineResult res;
    res.curve.epochs = settings.back();
    double cpu = 0.0;
    for (int e = 0; e < settings.back(); ++e) {
        TrainConfig tc = spec.seeded_train(1);
        tc.seed += static_cast<std::uint64_t>(e);
        const double t0 = detail::cpu_seconds();
        TrainResult r = train_local(std::move(params), data.train, tc, mc);
        cpu += detail::cpu_seconds() - t0;
        params = std::move(r.params);
        res.curve.train_loss.push_back(r.epoch_loss.front());
        res.curve.val_loss.push_back(data.val.empty() ? 0.0 : mean_loss(params, data.val, mc));
        if (std::binary_search(settings.begin(), settings.end(), e + 1)) {
            MetricsReport row;
            row.epochs = e + 1;
            row.method = "centralized";
            row.eval = evaluate(params, data.test, mc, spec.thresholds);
            row.train_seconds = cpu;
            by_epochs[e + 1] = row;
        }
    }
    for (int e : spec.epochs) res.reports.push_back(by_epochs.at(e));
    return res;
}

inline std::string loss_curve_csv(const LossCurve& c) {
    std::string out = "epoch,train_loss,val_loss\n";
    char line[96];
    for (std::size_t i = 0; i < c.train_loss.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f\n", i + 1, c.train_loss[i], c.val_loss[i]);
        out += line;
    }
    return out;
}

/// Trains a centralized model for a fixed number of epochs (no evaluation).
inline ParamVector train_centralized(const ExperimentSpec& spec, const DatasetSplit& data, int epochs) {
    return train_local(init_model(spec.seeded_model()), data.train, spec.seeded_train(epochs),
                       spec.seeded_model())
        .params;
}

// ---------------------------------------------------------------------------
// Federated sweeps

struct FederatedCell {
    int epochs = 0;
    Strategy method = Strategy::FedAvg;
    int rounds = 0;
};

/// Every (epochs, rounds, method) cell; partitions the training set among
/// spec.clients participants and evaluates the global model on the test
/// split. Rounds of one (epochs, method) pair share a single simulation run,
/// snapshotted after each requested round count (round seeds depend only on
/// the round index, so a shorter run is a prefix of a longer one).
inline std::vector<MetricsReport> run_federated(const ExperimentSpec& spec, const DatasetSplit& data) {
    spec.validate();
    require(spec.mode == Mode::Federated, "run_federated: spec must be in federated mode");
    const ModelConfig mc = spec.seeded_model();
    const Partition partition = partition_iid(data.train, spec.clients, spec.seed + kSeedPartition);
    const auto round_settings = detail::sorted_unique(spec.rounds);
    const DropoutPolicy dropout{spec.drop_prob, spec.seed + kSeedDropout};

    std::map<std::tuple<int, int, int>, MetricsReport> cells;  // (epochs, method, rounds)
    for (int e : detail::sorted_unique(spec.epochs)) {
        for (Strategy m : spec.methods) {
            if (cells.count({e, static_cast<int>(m), round_settings.front()})) continue;
            FlConfig fl;
            fl.rounds = round_settings.back();
            fl.strategy = m;
            fl.fedopt = spec.fedopt;
            double cpu = 0.0;
            double t0 = detail::cpu_seconds();
            simulate_training(mc, spec.seeded_train(e), fl, dropout, partition, init_model(mc),
                              [&](const ServerState& s, const RoundReport& rep) {
                                  cpu += detail::cpu_seconds() - t0;
                                  if (std::binary_search(round_settings.begin(), round_settings.end(), rep.round)) {
                                      MetricsReport row;
                                      row.epochs = e;
                                      row.rounds = rep.round;
                                      row.method = to_string(m);
                                      row.eval = evaluate(s.global_params, data.test, mc, spec.thresholds);
                                      row.train_seconds = cpu;
                                      cells[{e, static_cast<int>(m), rep.round}] = row;
                                  }
                                  t0 = detail::cpu_seconds();
                              });
        }
    }
    std::vector<MetricsReport> rows;
    for (int e : spec.epochs)
        for (int r : spec.rounds)
            for (Strategy m : spec.methods) rows.push_back(cells.at({e, static_cast<int>(m), r}));
    return rows;
}

struct MethodComparison {
    std::vector<MetricsReport> rows;  ///< grouped by method, then epoch setting
    /// Per epoch setting and metric: name of the better method ("tie" if equal).
    std::vector<std::map<std::string, std::string>> better;
    int rounds = 0;
};

/// Side-by-side FedAvg/FedOpt at the largest round setting of the spec.
inline MethodComparison compare_methods(const ExperimentSpec& spec, const DatasetSplit& data) {
    std::set<Strategy> distinct(spec.methods.begin(), spec.methods.end());
    require(distinct.count(Strategy::FedAvg) && distinct.count(Strategy::FedOpt),
            "compare_methods: the spec must include both fedavg and fedopt");
    ExperimentSpec s = spec;
    s.mode = Mode::Federated;
    require(!s.rounds.empty(), "compare_methods: rounds must be nonempty");
    const int rounds = *std::max_element(s.rounds.begin(), s.rounds.end());
    s.rounds = {rounds};
    s.methods = {Strategy::FedAvg, Strategy::FedOpt};
    const auto rows = run_federated(s, data);

    MethodComparison out;
    out.rounds = rounds;
    for (const char* name : {"fedavg", "fedopt"})
        for (const auto& r : rows)
            if (r.method == name) out.rows.push_back(r);
    const std::size_t n = s.epochs.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& a = out.rows[i];
        const auto& b = out.rows[n + i];
        auto pick = [&](double va, double vb, bool higher_better) -> std::string {
            if (va == vb) return "tie";
            return (va > vb) == higher_better ? "fedavg" : "fedopt";
        };
        out.better.push_back({{"map50", pick(a.eval.map50, b.eval.map50, true)},
                              {"map50_95", pick(a.eval.map50_95, b.eval.map50_95, true)},
                              {"recall", pick(a.eval.recall, b.eval.recall, true)},
                              {"precision", pick(a.eval.precision, b.eval.precision, true)},
                              {"loss", pick(a.eval.mean_loss, b.eval.mean_loss, false)}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Presets

struct SweepPreset {
    std::string name;
    ExperimentSpec baseline;     ///< centralized epoch sweep
    ExperimentSpec round_sweep;  ///< rounds sweep at fixed epochs and method
    ExperimentSpec methods;      ///< FedAvg vs FedOpt over epochs at fixed rounds
};

inline SweepPreset make_preset(const std::string& name, std::uint64_t seed) {
    SweepPreset p;
    p.name = name;
    ExperimentSpec base;
    base.seed = seed;
    if (name == "paper-shape") {
        p.baseline = base;
        p.baseline.epochs = {8, 15, 30, 45, 60};
        p.round_sweep = base;
        p.round_sweep.mode = Mode::Federated;
        p.round_sweep.epochs = {5};
        p.round_sweep.rounds = {3, 4, 5, 6, 7, 8};
        p.round_sweep.methods = {Strategy::FedAvg};
        p.methods = base;
        p.methods.mode = Mode::Federated;
        p.methods.epochs = {2, 3, 5, 8, 10};
        p.methods.rounds = {8};
        p.methods.methods = {Strategy::FedAvg, Strategy::FedOpt};
    } else if (name == "smoke") {
        base.dataset.count = 240;
        base.model.hidden_units = 8;
        p.baseline = base;
        p.baseline.epochs = {1, 2, 3, 4, 5};
        p.round_sweep = base;
        p.round_sweep.mode = Mode::Federated;
        p.round_sweep.epochs = {1};
        p.round_sweep.rounds = {3, 4, 5, 6, 7, 8};
        p.round_sweep.methods = {Strategy::FedAvg};
        p.methods = base;
        p.methods.mode = Mode::Federated;
        p.methods.epochs = {1, 2, 3, 4, 5};
        p.methods.rounds = {8};
        p.methods.methods = {Strategy::FedAvg, Strategy::FedOpt};
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected paper-shape or smoke)");
    }
    return p;
}

struct SweepResult {
    BaselineResult baseline;
    std::vector<MetricsReport> rounds;
    MethodComparison methods;

    std::vector<MetricsReport> all_rows() const {
        std::vector<MetricsReport> rows = baseline.reports;
        rows.insert(rows.end(), rounds.begin(), rounds.end());
        rows.insert(rows.end(), methods.rows.begin(), methods.rows.end());
        return rows;
    }
};

/// Runs the three tables of a preset on one shared dataset/split.
inline SweepResult run_sweep(const SweepPreset& preset, const DatasetSplit& data) {
    SweepResult r;
    r.baseline = run_baseline(preset.baseline, data);
    r.rounds = run_federated(preset.round_sweep, data);
    r.methods = compare_methods(preset.methods, data);
    return r;
}

inline nlohmann::ordered_json to_json(const SweepResult& r, const std::string& preset) {
    nlohmann::ordered_json j;
    j["preset"] = preset;
    auto rows = [](const std::vector<MetricsReport>& v) {
        auto a = nlohmann::ordered_json::array();
        for (const auto& x : v) a.push_back(to_json(x));
        return a;
    };
    j["baseline"] = rows(r.baseline.reports);
    j["rounds"] = rows(r.rounds);
    j["methods"] = rows(r.methods.rows);
    j["methods_rounds"] = r.methods.rounds;
    j["methods_better"] = r.methods.better;
    j["loss_curve"] = {{"epochs", r.baseline.curve.epochs},
                       {"train_loss", r.baseline.curve.train_loss},
                       {"val_loss", r.baseline.curve.val_loss}};
    return j;
}

}  // namespace fedvision
