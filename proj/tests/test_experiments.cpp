#include <gtest/gtest.h>

#include <fedvision/experiments.hpp>

#include "test_support.hpp"

using namespace fedvision;

namespace {

ExperimentSpec small_spec() {
    ExperimentSpec s;
    s.dataset.count = 150;
    s.dataset.image_size = 32;
    s.model.image_size = 32;
    s.model.hidden_units = 6;
    s.seed = 3;
    return s;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Spec, Validation) {
    ExperimentSpec s = small_spec();
    EXPECT_NO_THROW(s.validate());
    s.epochs = {0};
    EXPECT_THROW(s.validate(), ConfigError);
    s.epochs = {};
    EXPECT_THROW(s.validate(), ConfigError);
    s = small_spec();
    s.mode = Mode::Federated;
    EXPECT_THROW(s.validate(), ConfigError);  // rounds and methods missing
    s.rounds = {2};
    s.methods = {Strategy::FedAvg};
    EXPECT_NO_THROW(s.validate());
}

TEST(Baseline, OneRowPerEpochSettingAndSnapshotsMatchFreshRuns) {
    ExperimentSpec s = small_spec();
    s.epochs = {3, 1, 2};
    const DatasetSplit data = prepare_data(s);
    const BaselineResult r = run_baseline(s, data);
    ASSERT_EQ(r.reports.size(), 3u);
    EXPECT_EQ(r.reports[0].epochs, 3);
    EXPECT_EQ(r.reports[1].epochs, 1);
    EXPECT_EQ(r.curve.train_loss.size(), 3u);
    EXPECT_EQ(r.curve.val_loss.size(), 3u);
    for (const auto& row : r.reports) {
        const ParamVector fresh = train_centralized(s, data, row.epochs);
        const EvalResult e = evaluate(fresh, data.test, s.seeded_model(), s.thresholds);
        EXPECT_EQ(e.map50, row.eval.map50);
        EXPECT_EQ(e.mean_loss, row.eval.mean_loss);
        EXPECT_GE(row.train_seconds, 0.0);
    }
    EXPECT_EQ(count_lines(loss_curve_csv(r.curve)), 4u);
}

TEST(Baseline, PaperEpochSweepGivesFiveRows) {
    ExperimentSpec s = small_spec();
    s.dataset.count = 60;
    s.model.hidden_units = 2;
    s.epochs = {25, 50, 100, 150, 200};
    s.train.batch_size = 40;
    const BaselineResult r = run_baseline(s, prepare_data(s));
    EXPECT_EQ(r.reports.size(), 5u);
    EXPECT_EQ(r.curve.epochs, 200);
}

TEST(Federated, RoundSweepRowsAndSnapshotEquivalence) {
    ExperimentSpec s = small_spec();
    s.mode = Mode::Federated;
    s.epochs = {1};
    s.rounds = {3, 4, 5, 6, 7, 8};
    s.methods = {Strategy::FedAvg};
    const DatasetSplit data = prepare_data(s);
    const auto rows = run_federated(s, data);
    ASSERT_EQ(rows.size(), 6u);
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].rounds, static_cast<int>(i) + 3);

    // the round-4 snapshot equals an independent 4-round simulation
    FlConfig fl;
    fl.rounds = 4;
    const ModelConfig mc = s.seeded_model();
    const SimulationResult sim =
        simulate_training(mc, s.seeded_train(1), fl, DropoutPolicy{0.0, s.seed + kSeedDropout},
                          partition_iid(data.train, s.clients, s.seed + kSeedPartition), init_model(mc));
    EXPECT_EQ(evaluate(sim.state.global_params, data.test, mc).map50, rows[1].eval.map50);
    EXPECT_EQ(evaluate(sim.state.global_params, data.test, mc).mean_loss, rows[1].eval.mean_loss);
}

TEST(Federated, DeterministicCsvModuloTiming) {
    ExperimentSpec s = small_spec();
    s.mode = Mode::Federated;
    s.epochs = {1, 2};
    s.rounds = {2};
    s.methods = {Strategy::FedAvg, Strategy::FedOpt};
    const DatasetSplit data = prepare_data(s);
    const std::string a = metrics_csv(run_federated(s, data), false);
    const std::string b = metrics_csv(run_federated(s, prepare_data(s)), false);
    EXPECT_EQ(a, b);
    EXPECT_EQ(count_lines(a), 5u);
    EXPECT_EQ(a.substr(0, a.find('\n')), "epochs,rounds,method,map50,map50_95,recall,precision,loss,train_seconds");
}

TEST(Methods, GroupedRowsAndBetterFlags) {
    ExperimentSpec s = small_spec();
    s.mode = Mode::Federated;
    s.epochs = {1, 2};
    s.rounds = {1, 2};
    s.methods = {Strategy::FedOpt, Strategy::FedAvg};
    const MethodComparison c = compare_methods(s, prepare_data(s));
    ASSERT_EQ(c.rows.size(), 4u);
    EXPECT_EQ(c.rounds, 2);
    EXPECT_EQ(c.rows[0].method, "fedavg");
    EXPECT_EQ(c.rows[1].method, "fedavg");
    EXPECT_EQ(c.rows[2].method, "fedopt");
    ASSERT_EQ(c.better.size(), 2u);
    for (const auto& m : c.better) {
        EXPECT_EQ(m.size(), 5u);
        for (const auto& [metric, who] : m) EXPECT_TRUE(who == "fedavg" || who == "fedopt" || who == "tie") << metric;
    }
}

TEST(Methods, SingleMethodRejected) {
    ExperimentSpec s = small_spec();
    s.mode = Mode::Federated;
    s.rounds = {1};
    s.methods = {Strategy::FedAvg};
    EXPECT_THROW(compare_methods(s, prepare_data(s)), ConfigError);
}

TEST(Presets, PaperShapeStructure) {
    const SweepPreset p = make_preset("paper-shape", 1);
    EXPECT_EQ(p.baseline.epochs.size(), 5u);
    EXPECT_EQ(p.round_sweep.rounds.size() * p.round_sweep.epochs.size() * p.round_sweep.methods.size(), 6u);
    EXPECT_EQ(p.methods.epochs.size() * 2, 10u);
    EXPECT_EQ(p.baseline.dataset.count, 2460u);
    EXPECT_EQ(split_sizes(p.baseline.dataset.count, p.baseline.dataset.ratios), (std::array<std::size_t, 3>{1200, 320, 940}));
    EXPECT_THROW(make_preset("nope", 1), ConfigError);
}

TEST(Presets, SmokeSweepEndToEnd) {
    const SweepPreset p = make_preset("smoke", 2);
    const DatasetSplit data = prepare_data(p.baseline);
    const SweepResult r = run_sweep(p, data);
    const auto rows = r.all_rows();
    EXPECT_EQ(rows.size(), 5u + 6u + 10u);
    for (const auto& row : rows) {
        for (double v : {row.eval.map50, row.eval.map50_95, row.eval.recall, row.eval.precision}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        EXPECT_GE(row.eval.map50 + 1e-12, row.eval.map50_95);
        EXPECT_GE(row.train_seconds, 0.0);
    }
    const auto j = to_json(r, p.name);
    EXPECT_EQ(j["methods"].size(), 10u);
    EXPECT_EQ(j["loss_curve"]["train_loss"].size(), 5u);
}
