#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "data.hpp"
#include "detector.hpp"
#include "fedcore.hpp"

namespace fedvision {

// ---------------------------------------------------------------------------
// Message envelopes. Delivery is in-process; the envelope carries what a
// transport would need (payload kind and its serialized size).

struct BroadcastPayload {
    int round = 1;
    int client_id = 0;
    const ParamVector* params = nullptr;  ///< borrowed from the server state
};

struct UpdatePayload {
    const ClientUpdate* update = nullptr;
};

struct SkipPayload {
    int round = 1;
    std::string reason;
};

struct Message {
    std::variant<BroadcastPayload, UpdatePayload, SkipPayload> kind;

    /// Header (24 bytes) plus 8 bytes per parameter for parameter-bearing
    /// messages; Skip is a coordinator-local event and carries no payload.
    std::size_t size_bytes() const {
        if (const auto* b = std::get_if<BroadcastPayload>(&kind)) return serialized_size(b->params->size());
        if (const auto* u = std::get_if<UpdatePayload>(&kind)) return serialized_size(u->update->params.size());
        return 0;
    }
};

struct DropoutPolicy {
    double per_round_drop_prob = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(per_round_drop_prob >= 0.0 && per_round_drop_prob <= 1.0,
                "DropoutPolicy: per_round_drop_prob must be in [0,1]");
    }
};

/// Client k is present in `round` iff its (seed, round, client) draw u in
/// [0,1) satisfies u >= drop_prob. Draws are independent across clients.
inline std::vector<bool> participation_mask(const DropoutPolicy& policy, int round, int num_clients) {
    policy.validate();
    require(round >= 1, "participation_mask: round must be >= 1");
    require(num_clients >= 0, "participation_mask: num_clients must be >= 0");
    std::vector<bool> mask(static_cast<std::size_t>(num_clients));
    for (int k = 0; k < num_clients; ++k) {
        const std::uint64_t bits =
            mix_seed(mix_seed(policy.seed, static_cast<std::uint64_t>(round)), static_cast<std::uint64_t>(k));
        mask[static_cast<std::size_t>(k)] = unit_real(bits) >= policy.per_round_drop_prob;
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Communication ledger

enum class Direction { Downlink, Uplink };

inline const char* to_string(Direction d) { return d == Direction::Downlink ? "downlink" : "uplink"; }

struct LedgerEntry {
    int round = 1;
    int client_id = 0;
    Direction direction = Direction::Downlink;
    std::size_t bytes = 0;
    double seconds = 0.0;  ///< client training time (uplink rows only)
    double loss = 0.0;     ///< client final local loss (uplink rows only)
};

class CommLedger {
public:
    void record(const LedgerEntry& e) {
        entries_.push_back(e);
        (e.direction == Direction::Uplink ? uplink_total_ : downlink_total_) += e.bytes;
        ++(e.direction == Direction::Uplink ? uplink_messages_ : downlink_messages_);
    }

    const std::vector<LedgerEntry>& entries() const { return entries_; }
    std::size_t uplink_bytes() const { return uplink_total_; }
    std::size_t downlink_bytes() const { return downlink_total_; }
    std::size_t total_bytes() const { return uplink_total_ + downlink_total_; }
    std::size_t uplink_messages() const { return uplink_messages_; }
    std::size_t downlink_messages() const { return downlink_messages_; }

    std::size_t bytes_for(int round, int client_id, Direction d) const {
        std::size_t sum = 0;
        for (const auto& e : entries_)
            if (e.round == round && e.client_id == client_id && e.direction == d) sum += e.bytes;
        return sum;
    }

    /// Recomputes totals from entries (conservation check).
    bool consistent() const {
        std::size_t up = 0, down = 0;
        for (const auto& e : entries_) (e.direction == Direction::Uplink ? up : down) += e.bytes;
        return up == uplink_total_ && down == downlink_total_;
    }

    std::string to_csv() const {
        std::string out = "round,client_id,direction,bytes,seconds,loss\n";
        char line[160];
        for (const auto& e : entries_) {
            std::snprintf(line, sizeof line, "%d,%d,%s,%zu,%.6f,%.9g\n", e.round, e.client_id,
                          to_string(e.direction), e.bytes, e.seconds, e.loss);
            out += line;
        }
        return out;
    }

private:
    std::vector<LedgerEntry> entries_;
    std::size_t uplink_total_ = 0;
    std::size_t downlink_total_ = 0;
    std::size_t uplink_messages_ = 0;
    std::size_t downlink_messages_ = 0;
};

inline nlohmann::ordered_json to_json(const RoundReport& r) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["skipped"] = r.skipped;
    if (r.skipped) j["skip_reason"] = r.skip_reason;
    auto clients = nlohmann::ordered_json::array();
    for (const auto& c : r.clients) {
        clients.push_back({{"client_id", c.client_id},
                           {"participated", c.participated},
                           {"num_examples", c.num_examples},
                           {"local_loss", c.local_loss},
                           {"train_seconds", c.train_seconds},
                           {"downlink_bytes", c.downlink_bytes},
                           {"uplink_bytes", c.uplink_bytes}});
    }
    j["clients"] = clients;
    j["aggregate_seconds"] = r.aggregate_seconds;
    return j;
}

inline nlohmann::ordered_json to_json(const CommLedger& l) {
    nlohmann::ordered_json j;
    j["uplink_bytes"] = l.uplink_bytes();
    j["downlink_bytes"] = l.downlink_bytes();
    j["total_bytes"] = l.total_bytes();
    j["uplink_messages"] = l.uplink_messages();
    j["downlink_messages"] = l.downlink_messages();
    auto rows = nlohmann::ordered_json::array();
    for (const auto& e : l.entries())
        rows.push_back({{"round", e.round},
                        {"client_id", e.client_id},
                        {"direction", to_string(e.direction)},
                        {"bytes", e.bytes},
                        {"seconds", e.seconds},
                        {"loss", e.loss}});
    j["entries"] = rows;
    return j;
}

// ---------------------------------------------------------------------------
// Simulation driver

struct SimulationResult {
    ServerState state;
    CommLedger ledger;
    std::vector<RoundReport> reports;
    std::vector<Message> skip_events;  ///< one per fully skipped round
};

/// Optional hook invoked after each round with the new state (e.g. to evaluate
/// the global model per round).
using RoundObserver = std::function<void(const ServerState&, const RoundReport&)>;

/// Runs fl.rounds synchronous rounds over `partition`, starting from `initial`.
/// The coordinator owns the ledger; client training within a round may run
/// in parallel, and aggregation sorts updates, so results do not depend on
/// delivery order.
inline SimulationResult simulate_training(const ModelConfig& mc, const TrainConfig& tc, const FlConfig& fl,
                                          const DropoutPolicy& dropout, const Partition& partition,
                                          ParamVector initial, const RoundObserver& observer = {}) {
    mc.validate();
    tc.validate();
    fl.validate();
    dropout.validate();
    require(!partition.shards.empty(), "simulate_training: partition has no shards");
    for (const auto& s : partition.shards) require(!s.empty(), "simulate_training: every shard must be nonempty");
    require(initial.size() == param_count(mc), "simulate_training: initial parameters do not match the model config");

    const int n = static_cast<int>(partition.shards.size());
    SimulationResult res;
    res.state = ServerState::initial(std::move(initial), fl.strategy);

    for (int round = 1; round <= fl.rounds; ++round) {
        res.state.round = round;
        const auto mask = participation_mask(dropout, round, n);

        RoundOutcome out = run_round(std::move(res.state), partition, tc, mc, mask, fl);
        if (out.report.skipped) {
            res.skip_events.push_back(Message{SkipPayload{round, out.report.skip_reason}});
        } else {
            for (int k = 0; k < n; ++k) {
                if (!mask[static_cast<std::size_t>(k)]) continue;
                // the broadcast carried the pre-aggregation global model, same length as the new one
                const Message down{BroadcastPayload{round, k, &out.state.global_params}};
                res.ledger.record({round, k, Direction::Downlink, down.size_bytes(), 0.0, 0.0});
            }
            for (const auto& u : out.updates) {
                const Message up{UpdatePayload{&u}};
                res.ledger.record({round, u.client_id, Direction::Uplink, up.size_bytes(), u.train_seconds,
                                   u.local_loss});
            }
        }
        res.state = std::move(out.state);
        res.state.round = round + 1;
        res.reports.push_back(std::move(out.report));
        if (observer) observer(res.state, res.reports.back());
    }
    return res;
}

}  // namespace fedvision
