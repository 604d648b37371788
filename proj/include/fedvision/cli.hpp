#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anonymize.hpp"
#include "common.hpp"
#include "data.hpp"
#include "detector.hpp"
#include "experiments.hpp"
#include "fedcore.hpp"
#include "metrics.hpp"
#include "simnet.hpp"

namespace fedvision::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// RunConfig: one JSON document with per-module sections. Flags override it.

struct RunConfig {
    std::uint64_t seed = 1;
    DatasetParams data;
    int clients = 3;
    ModelConfig model{64, 4, kNumClasses, 64, 1, 0};
    TrainConfig train{1, 10, 0.05, 0};
    FlConfig federated;
    double drop_prob = 0.0;
    EvalThresholds eval;
    AnonymizeOptions anonymize;

    void validate() const {
        model.validate();
        TrainConfig t = train;
        t.validate();
        federated.fedopt.validate();
        require(clients >= 1, "config: clients must be >= 1");
        require(data.image_size == model.image_size, "config: data.image_size and model.image_size differ");
        DropoutPolicy{drop_prob, 0}.validate();
        split_sizes(std::max<std::size_t>(data.count, 100), data.ratios);  // checks the ratios
        require(anonymize.pad_frac >= 0.0, "config: anonymize.pad_frac must be >= 0");
    }
};

namespace detail {

using nlohmann::json;

/// Walks a config object, rejecting keys not consumed by the visitor.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.push_back(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config: bad value for '" + path_ + "." + key + "'");
        }
    }

    std::optional<Section> sub(const char* key) {
        seen_.push_back(key);
        if (!j_.contains(key)) return std::nullopt;
        return Section(j_.at(key), path_ + "." + key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
                throw ConfigError("config: unknown key '" + path_ + "." + k + "'");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

}  // namespace detail

inline void apply_json(RunConfig& c, const nlohmann::json& j) {
    detail::Section root(j, "$");
    root.get("seed", c.seed);
    if (auto s = root.sub("data")) {
        s->get("count", c.data.count);
        s->get("image_size", c.data.image_size);
        s->get("max_objects", c.data.max_objects);
        std::vector<double> r;
        s->get("ratios", r);
        if (!r.empty()) {
            require(r.size() == 3, "config: data.ratios must have three entries");
            c.data.ratios = {r[0], r[1], r[2]};
        }
        s->get("clients", c.clients);
        s->finish();
        c.model.image_size = c.data.image_size;
    }
    if (auto s = root.sub("model")) {
        s->get("grid_s", c.model.grid_s);
        s->get("hidden_units", c.model.hidden_units);
        s->finish();
    }
    if (auto s = root.sub("train")) {
        s->get("epochs", c.train.epochs);
        s->get("batch_size", c.train.batch_size);
        s->get("learning_rate", c.train.learning_rate);
        s->finish();
    }
    if (auto s = root.sub("federated")) {
        s->get("rounds", c.federated.rounds);
        std::string method;
        s->get("method", method);
        if (!method.empty()) c.federated.strategy = parse_strategy(method);
        s->get("clients", c.clients);
        s->get("drop_prob", c.drop_prob);
        s->get("min_fit_clients", c.federated.min_fit_clients);
        if (auto o = s->sub("fedopt")) {
            o->get("server_lr", c.federated.fedopt.server_lr);
            o->get("beta1", c.federated.fedopt.beta1);
            o->get("beta2", c.federated.fedopt.beta2);
            o->get("tau", c.federated.fedopt.tau);
            o->finish();
        }
        s->finish();
    }
    if (auto s = root.sub("eval")) {
        s->get("ap_score_threshold", c.eval.ap_score_threshold);
        s->get("nms_iou", c.eval.nms_iou);
        s->get("pr_score_threshold", c.eval.pr_score_threshold);
        s->get("pr_iou", c.eval.pr_iou);
        s->finish();
    }
    if (auto s = root.sub("anonymize")) {
        s->get("score_threshold", c.anonymize.score_threshold);
        s->get("nms_iou", c.anonymize.nms_iou);
        s->get("pad_frac", c.anonymize.pad_frac);
        s->get("sigma_divisor", c.anonymize.sigma_rule.divisor);
        s->get("sigma_floor", c.anonymize.sigma_rule.floor);
        double fixed = 0.0;
        s->get("sigma", fixed);
        if (fixed > 0.0) c.anonymize.sigma_rule.fixed = fixed;
        s->finish();
    }
    root.finish();
}

inline RunConfig load_config(const std::string& path) {
    RunConfig c;
    if (path.empty()) return c;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: cannot parse " + path + ": " + e.what());
    } catch (const RuntimeError& e) {
        throw ConfigError(e.what());
    }
    apply_json(c, j);
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoint sidecar: <checkpoint>.json records the model architecture so
// eval/anonymize do not need it repeated on the command line.

inline std::filesystem::path sidecar_path(const std::filesystem::path& ckpt) {
    return std::filesystem::path(ckpt.string() + ".json");
}

inline void write_checkpoint(const std::filesystem::path& path, const ParamVector& p, const ModelConfig& mc) {
    write_file(path, serialize_params(p, mc));
    nlohmann::ordered_json j{{"image_size", mc.image_size}, {"grid_s", mc.grid_s},
                             {"num_classes", mc.num_classes}, {"hidden_units", mc.hidden_units},
                             {"channels", mc.channels}, {"param_count", p.size()}};
    write_file(sidecar_path(path), j.dump(2) + "\n");
}

inline ModelConfig checkpoint_model(const std::filesystem::path& path, ModelConfig fallback) {
    const auto side = sidecar_path(path);
    if (!std::filesystem::exists(side)) return fallback;
    const auto j = nlohmann::json::parse(read_file(side));
    fallback.image_size = j.at("image_size").get<int>();
    fallback.grid_s = j.at("grid_s").get<int>();
    fallback.num_classes = j.at("num_classes").get<int>();
    fallback.hidden_units = j.at("hidden_units").get<int>();
    fallback.channels = j.at("channels").get<int>();
    return fallback;
}

inline std::vector<double> parse_ratio_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("--ratios: '" + item + "' is not a number");
        }
    }
    require(out.size() == 3, "--ratios expects three comma-separated fractions");
    return out;
}

inline void append_csv_row(const std::filesystem::path& path, const MetricsReport& row) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::string text = fresh ? std::string(kMetricsCsvHeader) + "\n" : std::string();
    text += csv_row(row) + "\n";
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + path.string());
    out << text;
}

inline std::string format_eval(const EvalResult& r) {
    char line[256];
    std::snprintf(line, sizeof line, "mAP50=%.4f mAP50-95=%.4f recall=%.4f precision=%.4f loss=%.6f%s", r.map50,
                  r.map50_95, r.recall, r.precision, r.mean_loss,
                  r.empty_prediction ? " (no detections: precision by convention)" : "");
    return line;
}

// ---------------------------------------------------------------------------
// Commands. Each validates everything before touching the filesystem.

struct GenDataArgs {
    std::string config, out, ratios;
    std::optional<std::size_t> count;
    std::optional<std::uint64_t> seed;
    std::optional<int> image_size, max_objects, clients;
};

inline int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    RunConfig c = load_config(a.config);
    if (a.count) c.data.count = *a.count;
    if (a.seed) c.seed = *a.seed;
    if (a.image_size) c.data.image_size = c.model.image_size = *a.image_size;
    if (a.max_objects) c.data.max_objects = *a.max_objects;
    if (a.clients) c.clients = *a.clients;
    if (!a.ratios.empty()) {
        const auto r = parse_ratio_list(a.ratios);
        c.data.ratios = {r[0], r[1], r[2]};
    }
    require(c.data.image_size >= 32, "gen-data: --image-size must be >= 32");
    require(c.data.max_objects >= 1, "gen-data: --max-objects must be >= 1");
    require(c.data.count >= 1, "gen-data: --count must be >= 1");
    const auto sizes = split_sizes(c.data.count, c.data.ratios);
    require(static_cast<std::size_t>(c.clients) <= sizes[0], "gen-data: more clients than training samples");
    if (std::filesystem::exists(a.out) && !std::filesystem::is_directory(a.out))
        throw ConfigError("gen-data: --out exists and is not a directory");

    auto samples = generate_dataset(c.data.count, c.data.image_size, c.data.max_objects, c.seed + kSeedData,
                                    c.data.generator);
    const DatasetSplit split = split_dataset(std::move(samples), c.data.ratios, c.seed + kSeedSplit);
    const Partition partition = partition_iid(split.train, c.clients, c.seed + kSeedPartition);
    DatasetManifest m;
    m.image_size = c.data.image_size;
    m.seed = c.seed;
    m.ratios = c.data.ratios;
    const std::string text = write_dataset(a.out, split, partition, m);
    out << "wrote " << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
        << " train/val/test samples to " << a.out << "\n"
        << "manifest_hash=" << hex64(fnv1a(text)) << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config, data, mode, out, metrics, method, report, ledger;
    std::optional<int> epochs, rounds, clients, hidden, grid, batch, min_fit;
    std::optional<double> drop_prob, lr;
    std::optional<std::uint64_t> seed;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
    RunConfig c = load_config(a.config);
    require(a.mode == "centralized" || a.mode == "federated", "train: --mode must be centralized or federated");
    const bool federated = a.mode == "federated";
    if (federated) {
        require(a.rounds.has_value(), "train: --mode federated requires --rounds");
    } else {
        require(!a.rounds && a.method.empty() && !a.clients && !a.drop_prob && !a.min_fit,
                "train: --rounds/--method/--clients/--drop-prob/--min-fit only apply to --mode federated");
    }
    if (a.epochs) c.train.epochs = *a.epochs;
    if (a.rounds) c.federated.rounds = *a.rounds;
    if (!a.method.empty()) c.federated.strategy = parse_strategy(a.method);
    if (a.clients) c.clients = *a.clients;
    if (a.drop_prob) c.drop_prob = *a.drop_prob;
    if (a.min_fit) c.federated.min_fit_clients = *a.min_fit;
    if (a.hidden) c.model.hidden_units = *a.hidden;
    if (a.grid) c.model.grid_s = *a.grid;
    if (a.batch) c.train.batch_size = *a.batch;
    if (a.lr) c.train.learning_rate = *a.lr;
    require(std::filesystem::exists(std::filesystem::path(a.data) / "manifest.json"),
            "train: --data must be a dataset directory with manifest.json");

    auto ds = load_dataset(a.data);
    c.seed = a.seed.value_or(ds.manifest.seed);
    c.model.image_size = c.data.image_size = ds.manifest.image_size;
    c.validate();
    c.train.validate();
    c.federated.validate();

    ExperimentSpec spec;
    spec.seed = c.seed;
    spec.model = c.model;
    spec.train = c.train;
    const ModelConfig mc = spec.seeded_model();
    const TrainConfig tc = spec.seeded_train(c.train.epochs);

    MetricsReport row;
    row.epochs = c.train.epochs;
    ParamVector params;
    const double t0 = fedvision::detail::cpu_seconds();
    if (!federated) {
        params = train_local(init_model(mc), ds.split.train, tc, mc).params;
        row.method = "centralized";
    } else {
        const Partition part = partition_iid(ds.split.train, c.clients, c.seed + kSeedPartition);
        const DropoutPolicy dropout{c.drop_prob, c.seed + kSeedDropout};
        SimulationResult sim = simulate_training(mc, tc, c.federated, dropout, part, init_model(mc));
        params = sim.state.global_params;
        row.rounds = c.federated.rounds;
        row.method = to_string(c.federated.strategy);
        std::size_t skipped = 0;
        for (const auto& r : sim.reports) skipped += r.skipped ? 1 : 0;
        out << "rounds=" << sim.reports.size() << " skipped=" << skipped
            << " uplink_bytes=" << sim.ledger.uplink_bytes() << " downlink_bytes=" << sim.ledger.downlink_bytes()
            << "\n";
        if (!a.ledger.empty()) write_file(a.ledger, sim.ledger.to_csv());
        if (!a.report.empty()) {
            nlohmann::ordered_json j;
            auto rounds = nlohmann::ordered_json::array();
            for (const auto& r : sim.reports) rounds.push_back(to_json(r));
            j["rounds"] = rounds;
            j["ledger"] = to_json(sim.ledger);
            write_file(a.report, j.dump(2) + "\n");
        }
    }
    row.train_seconds = fedvision::detail::cpu_seconds() - t0;
    write_checkpoint(a.out, params, mc);
    row.eval = evaluate(params, ds.split.test, mc, c.eval);
    out << "checkpoint=" << a.out << " params=" << params.size() << "\n" << format_eval(row.eval) << "\n";
    if (!a.metrics.empty()) append_csv_row(a.metrics, row);
    return kExitOk;
}

struct EvalArgs {
    std::string config, data, checkpoint, csv;
    bool oracle = false;
    std::optional<int> hidden, grid;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
    RunConfig c = load_config(a.config);
    require(a.oracle || !a.checkpoint.empty(), "eval: --checkpoint is required (or --oracle)");
    require(a.oracle || std::filesystem::is_regular_file(a.checkpoint), "eval: checkpoint '" + a.checkpoint + "' not found");
    require(std::filesystem::exists(std::filesystem::path(a.data) / "manifest.json"),
            "eval: --data must be a dataset directory with manifest.json");
    if (a.hidden) c.model.hidden_units = *a.hidden;
    if (a.grid) c.model.grid_s = *a.grid;
    const auto ds = load_dataset(a.data);
    c.model.image_size = c.data.image_size = ds.manifest.image_size;
    c.validate();

    MetricsReport row;
    row.method = a.oracle ? "oracle" : "checkpoint";
    if (a.oracle) {
        row.eval = evaluate_oracle(ds.split.test, c.eval);
    } else {
        const ModelConfig mc = checkpoint_model(a.checkpoint, c.model);
        const ParamVector p = deserialize_params(read_file(a.checkpoint), mc);
        row.eval = evaluate(p, ds.split.test, mc, c.eval);
    }
    out << format_eval(row.eval) << "\n";
    if (!a.csv.empty()) append_csv_row(a.csv, row);
    return kExitOk;
}

struct AnonymizeArgs {
    std::string config, checkpoint, labels, input, output, report, debug_out;
    bool debug_boxes = false;
    std::optional<double> score, nms, pad, sigma;
    std::optional<int> hidden, grid;
};

inline int cmd_anonymize(const AnonymizeArgs& a, std::ostream& out) {
    RunConfig c = load_config(a.config);
    require(!a.checkpoint.empty() || !a.labels.empty(), "anonymize: --checkpoint or --labels is required");
    require(a.checkpoint.empty() || a.labels.empty(), "anonymize: use either --checkpoint or --labels, not both");
    require(a.checkpoint.empty() || std::filesystem::is_regular_file(a.checkpoint),
            "anonymize: checkpoint '" + a.checkpoint + "' not found");
    require(a.labels.empty() || std::filesystem::is_regular_file(a.labels), "anonymize: labels file not found");
    require(std::filesystem::is_regular_file(a.input), "anonymize: input image '" + a.input + "' not found");
    if (a.score) c.anonymize.score_threshold = *a.score;
    if (a.nms) c.anonymize.nms_iou = *a.nms;
    if (a.pad) c.anonymize.pad_frac = *a.pad;
    if (a.sigma) {
        require(*a.sigma > 0.0, "anonymize: --sigma must be positive");
        c.anonymize.sigma_rule.fixed = *a.sigma;
    }
    if (a.hidden) c.model.hidden_units = *a.hidden;
    if (a.grid) c.model.grid_s = *a.grid;
    require(c.anonymize.score_threshold >= 0.0 && c.anonymize.score_threshold <= 1.0,
            "anonymize: --score must be in [0,1]");
    require(c.anonymize.nms_iou >= 0.0 && c.anonymize.nms_iou <= 1.0, "anonymize: --nms must be in [0,1]");
    require(c.anonymize.pad_frac >= 0.0, "anonymize: --pad must be >= 0");

    const RasterImage image = read_pnm(a.input);
    std::vector<Detection> dets;
    if (!a.labels.empty()) {
        for (const auto& ann : parse_annotations(read_file(a.labels))) dets.push_back({ann.class_id, ann.box, 1.0});
    } else {
        ModelConfig mc = c.model;
        mc.image_size = image.width();
        mc.channels = image.channels();
        mc = checkpoint_model(a.checkpoint, mc);
        const ParamVector p = deserialize_params(read_file(a.checkpoint), mc);
        dets = predict(p, image, mc, c.anonymize.score_threshold, c.anonymize.nms_iou);
    }
    const AnonymizationResult res = anonymize_detections(image, dets, c.anonymize);
    write_pnm(a.output, res.image);

    nlohmann::ordered_json j;
    j["input"] = a.input;
    j["output"] = a.output;
    j["pixels_modified"] = res.report.pixels_modified;
    auto boxes = nlohmann::ordered_json::array();
    std::vector<BoundingBox> outlined;
    for (const auto& b : res.report.boxes) {
        boxes.push_back({{"class_id", b.class_id}, {"score", b.score}, {"sigma", b.sigma},
                         {"box", {b.box.cx, b.box.cy, b.box.w, b.box.h}}});
        outlined.push_back(b.box);
    }
    j["boxes"] = boxes;
    if (a.debug_boxes) {
        std::string dbg = a.debug_out;
        if (dbg.empty()) {
            std::filesystem::path p(a.output);
            dbg = (p.parent_path() / (p.stem().string() + ".debug" + p.extension().string())).string();
        }
        write_pnm(dbg, outline_regions(res.image, outlined));
        j["debug_output"] = dbg;
    }
    const std::string report = j.dump(2) + "\n";
    if (!a.report.empty()) write_file(a.report, report);
    out << "blurred " << res.report.boxes.size() << " region(s), " << res.report.pixels_modified
        << " pixel(s) -> " << a.output << "\n";
    return kExitOk;
}

struct SweepArgs {
    std::string preset, out, data;
    std::optional<std::uint64_t> seed;
};

inline int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    SweepPreset preset = make_preset(a.preset, a.seed.value_or(1));
    if (std::filesystem::exists(a.out) && !std::filesystem::is_directory(a.out))
        throw ConfigError("sweep: --out exists and is not a directory");
    DatasetSplit data;
    if (!a.data.empty()) {
        require(std::filesystem::exists(std::filesystem::path(a.data) / "manifest.json"),
                "sweep: --data must be a dataset directory with manifest.json");
        auto ds = load_dataset(a.data);
        for (auto* s : {&preset.baseline, &preset.round_sweep, &preset.methods})
            s->model.image_size = s->dataset.image_size = ds.manifest.image_size;
        data = std::move(ds.split);
    } else {
        data = prepare_data(preset.baseline);
    }
    for (const auto* s : {&preset.baseline, &preset.round_sweep, &preset.methods}) s->validate();

    const SweepResult r = run_sweep(preset, data);
    std::filesystem::create_directories(a.out);
    const std::filesystem::path dir(a.out);
    write_file(dir / "results.csv", metrics_csv(r.all_rows()));
    write_file(dir / "loss_curve.csv", loss_curve_csv(r.baseline.curve));
    write_file(dir / "summary.json", to_json(r, preset.name).dump(2) + "\n");
    out << metrics_csv(r.all_rows());
    return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses argv and dispatches. Returns the process exit code:
/// 0 success, 2 usage/config error, 1 runtime failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"fedvision: federated grid-detector training, evaluation and blur anonymization"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "fedvision 1.0.0");

    GenDataArgs g;
    auto* gen = app.add_subcommand("gen-data", "generate, split and partition a synthetic dataset");
    gen->add_option("--config", g.config, "JSON config file");
    gen->add_option("--out", g.out, "output dataset directory")->required();
    gen->add_option("--count", g.count, "number of samples (default 2460)");
    gen->add_option("--seed", g.seed, "root seed (default 1)");
    gen->add_option("--image-size", g.image_size, "image side in pixels (default 64)");
    gen->add_option("--max-objects", g.max_objects, "max shapes per image (default 3)");
    gen->add_option("--ratios", g.ratios, "train,val,test fractions (default 0.488,0.130,0.382)");
    gen->add_option("--clients", g.clients, "participants for the recorded partition (default 3)");

    TrainArgs t;
    auto* train = app.add_subcommand("train", "train centrally or by federated simulation");
    train->add_option("--config", t.config, "JSON config file");
    train->add_option("--data", t.data, "dataset directory")->required();
    train->add_option("--mode", t.mode, "centralized | federated")->required();
    train->add_option("--epochs", t.epochs, "epochs (per round when federated)")->required();
    train->add_option("--rounds", t.rounds, "federated rounds");
    train->add_option("--method", t.method, "fedavg | fedopt");
    train->add_option("--clients", t.clients, "participants (default 3)");
    train->add_option("--drop-prob", t.drop_prob, "per-round participant dropout probability");
    train->add_option("--min-fit", t.min_fit, "minimum participants for a round to run");
    train->add_option("--seed", t.seed, "root seed (default: the dataset's)");
    train->add_option("--hidden", t.hidden, "hidden units (default 64)");
    train->add_option("--grid", t.grid, "grid cells per side (default 4)");
    train->add_option("--batch", t.batch, "minibatch size (default 10)");
    train->add_option("--lr", t.lr, "learning rate (default 0.05)");
    train->add_option("--out", t.out, "checkpoint path")->required();
    train->add_option("--metrics", t.metrics, "append a metrics CSV row here");
    train->add_option("--report", t.report, "federated round reports + ledger JSON");
    train->add_option("--ledger", t.ledger, "federated communication ledger CSV");

    EvalArgs e;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("--config", e.config, "JSON config file");
    eval->add_option("--data", e.data, "dataset directory")->required();
    eval->add_option("--checkpoint", e.checkpoint, "checkpoint path");
    eval->add_flag("--oracle", e.oracle, "score the ground truth itself (perfect detector)");
    eval->add_option("--csv", e.csv, "append a metrics CSV row here");
    eval->add_option("--hidden", e.hidden, "hidden units when the checkpoint has no sidecar");
    eval->add_option("--grid", e.grid, "grid size when the checkpoint has no sidecar");

    AnonymizeArgs an;
    auto* anon = app.add_subcommand("anonymize", "blur detected regions of an image");
    anon->add_option("--config", an.config, "JSON config file");
    anon->add_option("--checkpoint", an.checkpoint, "checkpoint path");
    anon->add_option("--labels", an.labels, "blur these annotation boxes instead of running a model");
    anon->add_option("--input", an.input, "input PGM/PPM")->required();
    anon->add_option("--out", an.output, "output PGM/PPM")->required();
    anon->add_option("--report", an.report, "anonymization report JSON");
    anon->add_flag("--debug-boxes", an.debug_boxes, "also write a copy with blurred regions outlined");
    anon->add_option("--debug-out", an.debug_out, "path of the outlined copy");
    anon->add_option("--score", an.score, "detection score threshold (default 0.25)");
    anon->add_option("--nms", an.nms, "NMS IoU threshold (default 0.5)");
    anon->add_option("--pad", an.pad, "box padding fraction per side (default 0.10)");
    anon->add_option("--sigma", an.sigma, "fixed blur sigma (default: size rule)");
    anon->add_option("--hidden", an.hidden, "hidden units when the checkpoint has no sidecar");
    anon->add_option("--grid", an.grid, "grid size when the checkpoint has no sidecar");

    SweepArgs s;
    auto* sweep = app.add_subcommand("sweep", "run the baseline / rounds / method tables");
    sweep->add_option("--preset", s.preset, "paper-shape | smoke")->required();
    sweep->add_option("--out", s.out, "output directory")->required();
    sweep->add_option("--data", s.data, "use this dataset instead of generating one");
    sweep->add_option("--seed", s.seed, "root seed (default 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& ex) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << "fedvision 1.0.0\n";
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "usage error: " << ex.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(g, out);
        if (*train) return cmd_train(t, out);
        if (*eval) return cmd_eval(e, out);
        if (*anon) return cmd_anonymize(an, out);
        if (*sweep) return cmd_sweep(s, out);
    } catch (const ConfigError& ex) {
        err << "config error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace fedvision::cli
