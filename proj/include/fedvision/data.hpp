#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "geometry.hpp"
#include "image.hpp"

namespace fedvision {

struct Sample {
    RasterImage image;
    std::vector<Annotation> annotations;
    std::string id;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

/// One shard per participant.
struct Partition {
    std::vector<std::vector<Sample>> shards;
};

struct SplitRatios {
    double train = 0.488;
    double val = 0.130;
    double test = 0.382;
};

/// Knobs of the synthetic generator that are not part of the core signature.
struct GeneratorOptions {
    /// No two object centers share a cell of this grid, so a grid detector of
    /// the same (or coarser divisor) resolution sees at most one object per cell.
    int collision_grid = 4;
    int placement_attempts = 64;
    int background_min = 90;
    int background_max = 160;
    int background_jitter = 20;
    /// Contrast band (intensity levels above/below the background base) per class.
    std::array<int, 2> contrast_min{82, 62};
    std::array<int, 2> contrast_max{95, 75};
    int shape_jitter = 5;
    /// Sign of the shape/background contrast: +1 brighter, -1 darker, 0 random per shape.
    int polarity = 1;
    /// Lower bound on objects attempted per image (upper bound is max_objects).
    int min_objects = 0;
    /// Restrict shapes to one class (-1: both classes, drawn uniformly).
    int only_class = -1;
};

namespace detail {

struct PixelRect {
    double x0, y0, x1, y1;  // pixel-space extents, [x0, x1) x [y0, y1)

    bool overlaps(const PixelRect& o, double gap) const {
        return x0 < o.x1 + gap && o.x0 < x1 + gap && y0 < o.y1 + gap && o.y0 < y1 + gap;
    }
};

inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

inline Sample generate_one(std::size_t index, int size, int max_objects, std::uint64_t seed,
                           const GeneratorOptions& opt) {
    Rng rng(mix_seed(seed, index));
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "img_%06zu", index);
    s.id = id;

    const int base = uniform_int(rng, opt.background_min, opt.background_max);
    s.image = RasterImage(size, size, 1);
    for (auto& p : s.image.pixels())
        p = clamp_u8(base + uniform_int(rng, -opt.background_jitter, opt.background_jitter));

    const int wanted = uniform_int(rng, std::min(opt.min_objects, max_objects), max_objects);
    std::vector<PixelRect> placed;
    std::set<std::pair<int, int>> used_cells;
    const double n = size;
    const double cell = n / opt.collision_grid;

    for (int k = 0; k < wanted; ++k) {
        const int drawn = uniform_int(rng, 0, 1);
        const int cls = opt.only_class >= 0 ? opt.only_class : drawn;
        for (int attempt = 0; attempt < opt.placement_attempts; ++attempt) {
            PixelRect r{};
            double disk_cx = 0, disk_cy = 0, radius = 0;
            if (cls == kClassPlate) {
                // plate-like: wider than tall, integer pixel extents
                const int w = uniform_int(rng, static_cast<int>(std::lround(0.26 * n)),
                                          static_cast<int>(std::lround(0.42 * n)));
                const int h = uniform_int(rng, static_cast<int>(std::lround(0.09 * n)),
                                          static_cast<int>(std::lround(0.15 * n)));
                const int x = uniform_int(rng, 0, size - w);
                const int y = uniform_int(rng, 0, size - h);
                r = {double(x), double(y), double(x + w), double(y + h)};
            } else {
                radius = uniform_real(rng, 0.08 * n, 0.15 * n);
                disk_cx = uniform_real(rng, radius, n - radius);
                disk_cy = uniform_real(rng, radius, n - radius);
                r = {disk_cx - radius, disk_cy - radius, disk_cx + radius, disk_cy + radius};
            }
            const double ccx = 0.5 * (r.x0 + r.x1), ccy = 0.5 * (r.y0 + r.y1);
            const std::pair<int, int> cell_key{
                std::min(opt.collision_grid - 1, static_cast<int>(ccx / cell)),
                std::min(opt.collision_grid - 1, static_cast<int>(ccy / cell))};
            bool clash = used_cells.count(cell_key) > 0;
            for (const auto& other : placed) clash = clash || r.overlaps(other, 1.0);
            if (clash) continue;

            const int coin = uniform_int(rng, 0, 1) == 0 ? -1 : 1;
            const int sign = opt.polarity == 0 ? coin : opt.polarity;
            const int level = base + sign * uniform_int(rng, opt.contrast_min[static_cast<std::size_t>(cls)],
                                                               opt.contrast_max[static_cast<std::size_t>(cls)]);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    bool inside;
                    if (cls == kClassPlate) {
                        inside = x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
                    } else {
                        const double dx = x + 0.5 - disk_cx, dy = y + 0.5 - disk_cy;
                        inside = dx * dx + dy * dy <= radius * radius;
                    }
                    if (inside)
                        s.image.at(x, y) =
                            clamp_u8(level + uniform_int(rng, -opt.shape_jitter, opt.shape_jitter));
                }
            }
            placed.push_back(r);
            used_cells.insert(cell_key);
            s.annotations.push_back(
                {cls, BoundingBox::from_corners(r.x0 / n, r.y0 / n, r.x1 / n, r.y1 / n)});
            break;
        }
    }
    return s;
}

}  // namespace detail

/// Synthetic two-class dataset: filled rectangles (class 0) and filled disks
/// (class 1) on a noisy gray background. Each sample is generated from its own
/// stream seeded by (seed, index), so the result is a pure function of the
/// arguments and independent of generation order.
inline std::vector<Sample> generate_dataset(std::size_t count, int image_size, int max_objects,
                                            std::uint64_t seed, const GeneratorOptions& opt = {}) {
    require(count >= 1, "generate_dataset: count must be >= 1");
    require(image_size >= 32, "generate_dataset: image_size must be >= 32");
    require(max_objects >= 1, "generate_dataset: max_objects must be >= 1");
    require(opt.collision_grid >= 1, "generate_dataset: collision_grid must be >= 1");
    std::vector<Sample> out(count);
    parallel_for(count, [&](std::size_t i) {
        out[i] = detail::generate_one(i, image_size, max_objects, seed, opt);
    });
    return out;
}

/// Slice sizes for a split: round(count*frac) for train and val, remainder to test.
inline std::array<std::size_t, 3> split_sizes(std::size_t count, const SplitRatios& r) {
    require(r.train > 0 && r.val > 0 && r.test > 0, "split_dataset: every fraction must be positive");
    require(std::abs(r.train + r.val + r.test - 1.0) <= 1e-9, "split_dataset: fractions must sum to 1");
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * r.train));
    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(count) * r.val));
    require(n_train + n_val < count && n_train > 0 && n_val > 0,
            "split_dataset: too few samples for nonempty train/val/test slices");
    return {n_train, n_val, count - n_train - n_val};
}

inline DatasetSplit split_dataset(std::vector<Sample> samples, const SplitRatios& ratios,
                                  std::uint64_t seed) {
    const auto sizes = split_sizes(samples.size(), ratios);
    const auto order = shuffled_indices(samples.size(), seed);
    DatasetSplit out;
    out.train.reserve(sizes[0]);
    out.val.reserve(sizes[1]);
    out.test.reserve(sizes[2]);
    for (std::size_t k = 0; k < order.size(); ++k) {
        auto& dst = k < sizes[0] ? out.train : (k < sizes[0] + sizes[1] ? out.val : out.test);
        dst.push_back(std::move(samples[order[k]]));
    }
    return out;
}

/// IID partition: a seeded shuffle decides shard membership round-robin; each
/// shard keeps its samples in their original relative order. A single
/// participant therefore receives the training set unchanged.
inline Partition partition_iid(const std::vector<Sample>& train, int num_participants,
                               std::uint64_t seed) {
    require(num_participants >= 1, "partition_iid: num_participants must be >= 1");
    require(static_cast<std::size_t>(num_participants) <= train.size(),
            "partition_iid: more participants than training samples");
    const auto order = shuffled_indices(train.size(), seed);
    std::vector<int> owner(train.size());
    for (std::size_t k = 0; k < order.size(); ++k)
        owner[order[k]] = static_cast<int>(k % static_cast<std::size_t>(num_participants));
    Partition p;
    p.shards.resize(static_cast<std::size_t>(num_participants));
    for (std::size_t i = 0; i < train.size(); ++i) p.shards[static_cast<std::size_t>(owner[i])].push_back(train[i]);
    return p;
}

// ---------------------------------------------------------------------------
// On-disk dataset: images/<id>.pgm, labels/<id>.txt, manifest.json

inline std::string format_annotations(const std::vector<Annotation>& anns) {
    std::string out;
    char line[128];
    for (const auto& a : anns) {
        std::snprintf(line, sizeof line, "%d %.6f %.6f %.6f %.6f\n", a.class_id, a.box.cx, a.box.cy,
                      a.box.w, a.box.h);
        out += line;
    }
    return out;
}

inline std::vector<Annotation> parse_annotations(const std::string& text) {
    std::vector<Annotation> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Annotation a;
        if (!(ls >> a.class_id >> a.box.cx >> a.box.cy >> a.box.w >> a.box.h))
            throw RuntimeError("annotation: malformed line '" + line + "'");
        if (a.class_id < 0 || a.class_id >= kNumClasses)
            throw RuntimeError("annotation: class id out of range in '" + line + "'");
        out.push_back(a);
    }
    return out;
}

struct DatasetManifest {
    int image_size = 64;
    std::uint64_t seed = 0;
    SplitRatios ratios;
    std::vector<std::string> train, val, test;
    std::vector<std::vector<std::string>> partition;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["format"] = "fedvision-dataset-v1";
        j["image_size"] = image_size;
        j["seed"] = seed;
        j["ratios"] = {ratios.train, ratios.val, ratios.test};
        j["sizes"] = {{"train", train.size()}, {"val", val.size()}, {"test", test.size()}};
        j["splits"] = {{"train", train}, {"val", val}, {"test", test}};
        j["partition"] = partition;
        return j;
    }

    static DatasetManifest from_json(const nlohmann::json& j) {
        DatasetManifest m;
        try {
            m.image_size = j.at("image_size").get<int>();
            m.seed = j.at("seed").get<std::uint64_t>();
            const auto& r = j.at("ratios");
            m.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
            m.train = j.at("splits").at("train").get<std::vector<std::string>>();
            m.val = j.at("splits").at("val").get<std::vector<std::string>>();
            m.test = j.at("splits").at("test").get<std::vector<std::string>>();
            m.partition = j.value("partition", std::vector<std::vector<std::string>>{});
        } catch (const nlohmann::json::exception& e) {
            throw RuntimeError(std::string("manifest: ") + e.what());
        }
        return m;
    }
};

inline std::vector<std::string> ids_of(const std::vector<Sample>& samples) {
    std::vector<std::string> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.id);
    return ids;
}

/// Writes images, sidecars and manifest.json. Returns the manifest text.
inline std::string write_dataset(const std::filesystem::path& dir, const DatasetSplit& split,
                                 const Partition& partition, const DatasetManifest& base) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    for (const auto* part : {&split.train, &split.val, &split.test}) {
        for (const auto& s : *part) {
            write_pnm(dir / "images" / (s.id + (s.image.channels() == 1 ? ".pgm" : ".ppm")), s.image);
            write_file(dir / "labels" / (s.id + ".txt"), format_annotations(s.annotations));
        }
    }
    DatasetManifest m = base;
    m.train = ids_of(split.train);
    m.val = ids_of(split.val);
    m.test = ids_of(split.test);
    m.partition.clear();
    for (const auto& shard : partition.shards) m.partition.push_back(ids_of(shard));
    const std::string text = m.to_json().dump(2) + "\n";
    write_file(dir / "manifest.json", text);
    return text;
}

struct LoadedDataset {
    DatasetManifest manifest;
    DatasetSplit split;
};

inline Sample load_sample(const std::filesystem::path& dir, const std::string& id) {
    namespace fs = std::filesystem;
    Sample s;
    s.id = id;
    const fs::path pgm = dir / "images" / (id + ".pgm");
    s.image = read_pnm(fs::exists(pgm) ? pgm : dir / "images" / (id + ".ppm"));
    s.annotations = parse_annotations(read_file(dir / "labels" / (id + ".txt")));
    return s;
}

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
    LoadedDataset d;
    d.manifest = DatasetManifest::from_json(nlohmann::json::parse(read_file(dir / "manifest.json")));
    auto load_all = [&](const std::vector<std::string>& ids) {
        std::vector<Sample> out(ids.size());
        parallel_for(ids.size(), [&](std::size_t i) { out[i] = load_sample(dir, ids[i]); });
        return out;
    };
    d.split.train = load_all(d.manifest.train);
    d.split.val = load_all(d.manifest.val);
    d.split.test = load_all(d.manifest.test);
    return d;
}

}  // namespace fedvision
