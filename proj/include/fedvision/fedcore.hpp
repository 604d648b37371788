#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "detector.hpp"

namespace fedvision {

/// A participant's contribution to one round: full post-training weights.
struct ClientUpdate {
    int client_id = 0;
    int round = 1;
    ParamVector params;
    std::size_t num_examples = 0;
    double train_seconds = 0.0;
    double local_loss = 0.0;
};

enum class Strategy { FedAvg, FedOpt };

inline const char* to_string(Strategy s) { return s == Strategy::FedAvg ? "fedavg" : "fedopt"; }

inline Strategy parse_strategy(const std::string& name) {
    if (name == "fedavg") return Strategy::FedAvg;
    if (name == "fedopt") return Strategy::FedOpt;
    throw ConfigError("unknown aggregation method '" + name + "' (expected fedavg or fedopt)");
}

/// Server-side Adam (FedAdam) hyperparameters. The defaults are tuned for
/// the desk-scale detector; eta=1, beta1=0.9, tau=1e-3 diverges there.
struct FedOptConfig {
    double server_lr = 0.02;
    double beta1 = 0.5;
    double beta2 = 0.99;
    double tau = 0.01;

    void validate() const {
        require(server_lr > 0.0, "FedOptConfig: server_lr must be positive");
        require(beta1 >= 0.0 && beta1 < 1.0, "FedOptConfig: beta1 must be in [0,1)");
        require(beta2 >= 0.0 && beta2 < 1.0, "FedOptConfig: beta2 must be in [0,1)");
        require(tau > 0.0, "FedOptConfig: tau must be positive");
    }
};

struct AdamMoments {
    ParamVector m;
    ParamVector v;
};

struct ServerState {
    ParamVector global_params;
    int round = 1;  ///< the round about to be played
    Strategy strategy = Strategy::FedAvg;
    std::optional<AdamMoments> opt_state;  ///< engaged iff strategy == FedOpt

    static ServerState initial(ParamVector params, Strategy strategy) {
        ServerState s;
        s.strategy = strategy;
        if (strategy == Strategy::FedOpt)
            s.opt_state = AdamMoments{ParamVector(params.size(), 0.0), ParamVector(params.size(), 0.0)};
        s.global_params = std::move(params);
        return s;
    }
};

namespace detail {

inline void check_updates(std::span<const ClientUpdate> updates) {
    require(!updates.empty(), "aggregate: at least one client update is required");
    const std::size_t n = updates.front().params.size();
    const int round = updates.front().round;
    for (const auto& u : updates) {
        require(u.params.size() == n, "aggregate: client updates have mismatched parameter lengths");
        require(u.round == round, "aggregate: client updates come from different rounds");
        require(u.num_examples >= 1, "aggregate: num_examples must be >= 1");
    }
}

}  // namespace detail

/// Example-weighted coordinate-wise mean. Updates are visited in client_id
/// order so the floating-point summation order (and thus the result bits)
/// does not depend on arrival order.
inline ParamVector fedavg_aggregate(std::span<const ClientUpdate> updates) {
    detail::check_updates(updates);
    std::vector<const ClientUpdate*> sorted;
    sorted.reserve(updates.size());
    for (const auto& u : updates) sorted.push_back(&u);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });

    double total = 0.0;
    for (const auto* u : sorted) total += static_cast<double>(u->num_examples);
    ParamVector out(sorted.front()->params.size(), 0.0);
    for (const auto* u : sorted) {
        const double w = static_cast<double>(u->num_examples) / total;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * u->params[i];
    }
    return out;
}

/// FedAdam step on the pseudo-gradient (global - weighted mean of clients).
inline ServerState fedopt_aggregate(ServerState state, std::span<const ClientUpdate> updates,
                                    const FedOptConfig& cfg) {
    cfg.validate();
    detail::check_updates(updates);
    require(state.opt_state.has_value(), "fedopt_aggregate: server state carries no optimizer moments");
    require(updates.front().round == state.round, "fedopt_aggregate: updates are not for the current round");
    require(updates.front().params.size() == state.global_params.size(),
            "fedopt_aggregate: update length differs from the global model");
    auto& [m, v] = *state.opt_state;
    require(m.size() == state.global_params.size() && v.size() == state.global_params.size(),
            "fedopt_aggregate: optimizer moments have the wrong length");

    const ParamVector avg = fedavg_aggregate(updates);
    auto& g = state.global_params;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double delta = g[i] - avg[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * delta;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * delta * delta;
        g[i] -= cfg.server_lr * m[i] / (std::sqrt(v[i]) + cfg.tau);
    }
    ++state.round;
    return state;
}

// ---------------------------------------------------------------------------
// Round state machine

struct FlConfig {
    int rounds = 1;
    Strategy strategy = Strategy::FedAvg;
    FedOptConfig fedopt;
    int min_fit_clients = 1;

    void validate() const {
        require(rounds >= 1, "FlConfig: rounds must be >= 1");
        require(min_fit_clients >= 1, "FlConfig: min_fit_clients must be >= 1");
        if (strategy == Strategy::FedOpt) fedopt.validate();
    }
};

/// Seed used by client `client_id` in `round` (1-based). Each client walks its
/// own contiguous run of epoch seeds, so a lone client over R rounds of E
/// epochs visits exactly the seeds base+0 .. base+R*E-1 of a centralized run.
inline std::uint64_t client_round_seed(std::uint64_t base_seed, int round, int client_id, int epochs_per_round) {
    return base_seed + 1000003ULL * static_cast<std::uint64_t>(client_id) +
           static_cast<std::uint64_t>(round - 1) * static_cast<std::uint64_t>(epochs_per_round);
}

struct ClientRoundStat {
    int client_id = 0;
    bool participated = false;
    std::size_t num_examples = 0;
    double local_loss = 0.0;
    double train_seconds = 0.0;
    std::size_t downlink_bytes = 0;
    std::size_t uplink_bytes = 0;
};

struct RoundReport {
    int round = 1;
    bool skipped = false;
    std::string skip_reason;
    std::vector<ClientRoundStat> clients;
    double aggregate_seconds = 0.0;
};

struct RoundOutcome {
    ServerState state;
    RoundReport report;
    std::vector<ClientUpdate> updates;  ///< sorted by client_id
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Produces one client's update from the broadcast global model.
inline ClientUpdate client_train(const ParamVector& global, std::span<const Sample> shard, int client_id,
                                 int round, const TrainConfig& tc, const ModelConfig& mc) {
    TrainConfig local = tc;
    local.seed = client_round_seed(tc.seed, round, client_id, tc.epochs);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train_local(global, shard, local, mc);
    ClientUpdate u;
    u.client_id = client_id;
    u.round = round;
    u.params = std::move(r.params);
    u.num_examples = shard.size();
    u.train_seconds = detail::seconds_since(t0);
    u.local_loss = r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back();
    return u;
}

inline ServerState aggregate(ServerState state, std::span<const ClientUpdate> updates, const FlConfig& fl) {
    if (state.strategy == Strategy::FedOpt) return fedopt_aggregate(std::move(state), updates, fl.fedopt);
    require(updates.front().round == state.round, "aggregate: updates are not for the current round");
    state.global_params = fedavg_aggregate(updates);
    ++state.round;
    return state;
}

/// One synchronous round: broadcast, local training on participating shards
/// (possibly in parallel), aggregation. With fewer than min_fit_clients
/// participants the round is skipped: the state is returned unchanged and
/// the report says why.
inline RoundOutcome run_round(ServerState state, const Partition& shards, const TrainConfig& tc,
                              const ModelConfig& mc, const std::vector<bool>& participation,
                              const FlConfig& fl = {}) {
    tc.validate();
    mc.validate();
    require(participation.size() == shards.shards.size(), "run_round: participation mask must have one entry per shard");
    require((state.strategy == Strategy::FedOpt) == state.opt_state.has_value(),
            "run_round: optimizer state must be present exactly for FedOpt");

    RoundOutcome out;
    out.report.round = state.round;
    std::vector<int> active;
    for (std::size_t k = 0; k < participation.size(); ++k) {
        ClientRoundStat st;
        st.client_id = static_cast<int>(k);
        st.participated = participation[k];
        out.report.clients.push_back(st);
        if (participation[k]) active.push_back(static_cast<int>(k));
    }
    if (static_cast<int>(active.size()) < fl.min_fit_clients) {
        out.report.skipped = true;
        out.report.skip_reason = "only " + std::to_string(active.size()) + " of " +
                                 std::to_string(fl.min_fit_clients) + " required clients participated";
        for (auto& c : out.report.clients) c.participated = false;
        out.state = std::move(state);
        return out;
    }

    out.updates.resize(active.size());
    parallel_for(active.size(), [&](std::size_t i) {
        const int k = active[i];
        out.updates[i] = client_train(state.global_params, shards.shards[static_cast<std::size_t>(k)], k,
                                      state.round, tc, mc);
    });

    const std::size_t payload = serialized_size(state.global_params.size());
    for (const auto& u : out.updates) {
        auto& st = out.report.clients[static_cast<std::size_t>(u.client_id)];
        st.num_examples = u.num_examples;
        st.local_loss = u.local_loss;
        st.train_seconds = u.train_seconds;
        st.downlink_bytes = payload;
        st.uplink_bytes = serialized_size(u.params.size());
    }

    const auto t0 = std::chrono::steady_clock::now();
    out.state = aggregate(std::move(state), out.updates, fl);
    out.report.aggregate_seconds = detail::seconds_since(t0);
    return out;
}

}  // namespace fedvision
