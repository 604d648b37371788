#include <gtest/gtest.h>

#include <fedvision/simnet.hpp>

#include "test_support.hpp"

using namespace fedvision;

namespace {

ModelConfig tiny_model() {
    ModelConfig c;
    c.image_size = 32;
    c.grid_s = 4;
    c.hidden_units = 4;
    c.seed = 2;
    return c;
}

struct Fixture {
    ModelConfig mc = tiny_model();
    TrainConfig tc{1, 5, 0.05, 70};
    std::vector<Sample> data = generate_dataset(30, 32, 2, 6);
    Partition part = partition_iid(data, 3, 1);
};

}  // namespace

TEST(Message, SizeFormula) {
    const ParamVector p(134800);
    EXPECT_EQ((Message{BroadcastPayload{1, 0, &p}}.size_bytes()), 24u + 8u * 134800u);
    ClientUpdate u;
    u.params = ParamVector(10);
    EXPECT_EQ((Message{UpdatePayload{&u}}.size_bytes()), 104u);
    EXPECT_EQ((Message{SkipPayload{3, "no clients"}}.size_bytes()), 0u);
}

TEST(Participation, ZeroDropIsAllTrueAndDeterministic) {
    const DropoutPolicy none{0.0, 4};
    for (int r = 1; r <= 20; ++r) {
        const auto m = participation_mask(none, r, 5);
        EXPECT_TRUE(std::all_of(m.begin(), m.end(), [](bool b) { return b; }));
    }
    const DropoutPolicy half{0.5, 4};
    EXPECT_EQ(participation_mask(half, 3, 7), participation_mask(half, 3, 7));
    EXPECT_THROW(participation_mask(DropoutPolicy{1.5, 0}, 1, 3), ConfigError);
    EXPECT_THROW(participation_mask(half, 0, 3), ConfigError);
}

TEST(Participation, MonteCarloRate) {
    for (double p : {0.2, 0.5, 0.8}) {
        const DropoutPolicy pol{p, 11};
        std::size_t present = 0, total = 0;
        for (int r = 1; r <= 10000; ++r)
            for (bool b : participation_mask(pol, r, 3)) {
                present += b ? 1 : 0;
                ++total;
            }
        EXPECT_NEAR(static_cast<double>(present) / static_cast<double>(total), 1.0 - p, 0.02);
    }
}

TEST(Ledger, TotalsConservedAndCsv) {
    CommLedger l;
    l.record({1, 0, Direction::Downlink, 100, 0, 0});
    l.record({1, 0, Direction::Uplink, 100, 0.5, 1.25});
    l.record({1, 1, Direction::Uplink, 40, 0.5, 2});
    EXPECT_EQ(l.uplink_bytes(), 140u);
    EXPECT_EQ(l.downlink_bytes(), 100u);
    EXPECT_EQ(l.total_bytes(), 240u);
    EXPECT_EQ(l.bytes_for(1, 1, Direction::Uplink), 40u);
    EXPECT_TRUE(l.consistent());
    const std::string csv = l.to_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "round,client_id,direction,bytes,seconds,loss");
    EXPECT_NE(csv.find("1,0,uplink,100,0.500000,1.25"), std::string::npos);
    EXPECT_EQ(to_json(l)["entries"].size(), 3u);
}

TEST(Simulate, UplinkBytesForDeskModel) {
    // 3 clients, 5 rounds of a 134,800-parameter model: 5 * 3 * (24 + 8 * 134800)
    ModelConfig mc;
    mc.hidden_units = 32;
    EXPECT_EQ(param_count(mc), 134800u);
    const auto data = generate_dataset(6, 64, 1, 1);
    const Partition part = partition_iid(data, 3, 1);
    FlConfig fl;
    fl.rounds = 5;
    TrainConfig tc{1, 2, 0.01, 1};
    const SimulationResult r = simulate_training(mc, tc, fl, DropoutPolicy{}, part, init_model(mc));
    EXPECT_EQ(r.ledger.uplink_bytes(), 16176360u);
    EXPECT_EQ(r.ledger.uplink_messages(), 15u);
    EXPECT_EQ(r.ledger.downlink_bytes(), 16176360u);
    EXPECT_TRUE(r.ledger.consistent());
}

TEST(Simulate, TotalDropoutKeepsInitialParams) {
    Fixture f;
    FlConfig fl;
    fl.rounds = 4;
    const ParamVector init = init_model(f.mc);
    const SimulationResult r = simulate_training(f.mc, f.tc, fl, DropoutPolicy{1.0, 3}, f.part, init);
    EXPECT_TRUE(r.state.global_params.bit_equal(init));
    EXPECT_EQ(r.skip_events.size(), 4u);
    EXPECT_EQ(r.ledger.total_bytes(), 0u);
    for (const auto& rep : r.reports) EXPECT_TRUE(rep.skipped);
}

TEST(Simulate, MatchesDirectRoundLoop) {
    Fixture f;
    for (Strategy s : {Strategy::FedAvg, Strategy::FedOpt}) {
        FlConfig fl;
        fl.rounds = 3;
        fl.strategy = s;
        const SimulationResult r = simulate_training(f.mc, f.tc, fl, DropoutPolicy{}, f.part, init_model(f.mc));
        ServerState direct = ServerState::initial(init_model(f.mc), s);
        for (int k = 0; k < 3; ++k) direct = run_round(std::move(direct), f.part, f.tc, f.mc, {true, true, true}, fl).state;
        EXPECT_TRUE(r.state.global_params.bit_equal(direct.global_params));
        EXPECT_EQ(r.ledger.uplink_messages(), 9u);
        EXPECT_EQ(r.state.round, 4);
    }
}

TEST(Simulate, ReproducibleWithDropout) {
    Fixture f;
    FlConfig fl;
    fl.rounds = 6;
    const DropoutPolicy pol{0.4, 21};
    const SimulationResult a = simulate_training(f.mc, f.tc, fl, pol, f.part, init_model(f.mc));
    const SimulationResult b = simulate_training(f.mc, f.tc, fl, pol, f.part, init_model(f.mc));
    EXPECT_TRUE(a.state.global_params.bit_equal(b.state.global_params));
    EXPECT_EQ(a.ledger.to_csv().size(), b.ledger.to_csv().size());
    std::size_t expected_up = 0;
    for (int r = 1; r <= 6; ++r) {
        const auto mask = participation_mask(pol, r, 3);
        expected_up += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
        for (int k = 0; k < 3; ++k)
            EXPECT_EQ(a.ledger.bytes_for(r, k, Direction::Uplink),
                      mask[static_cast<std::size_t>(k)] ? serialized_size(param_count(f.mc)) : 0u);
    }
    EXPECT_EQ(a.ledger.uplink_messages(), expected_up);
    EXPECT_EQ(a.reports.size(), 6u);
    EXPECT_NO_THROW(to_json(a.reports.front()).dump());
}

TEST(Simulate, RejectsInconsistentConfig) {
    Fixture f;
    FlConfig fl;
    fl.rounds = 0;
    EXPECT_THROW(simulate_training(f.mc, f.tc, fl, {}, f.part, init_model(f.mc)), ConfigError);
    fl.rounds = 1;
    EXPECT_THROW(simulate_training(f.mc, f.tc, fl, {}, f.part, ParamVector(5)), ConfigError);
    EXPECT_THROW(simulate_training(f.mc, f.tc, fl, {}, Partition{}, init_model(f.mc)), ConfigError);
}
