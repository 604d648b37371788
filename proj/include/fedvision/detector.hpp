#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "geometry.hpp"
#include "image.hpp"

namespace fedvision {

// ---------------------------------------------------------------------------
// Model description

/// Architecture of the grid detector. The seed only affects initialization.
struct ModelConfig {
    int image_size = 64;
    int grid_s = 4;
    int num_classes = kNumClasses;
    int hidden_units = 32;
    int channels = 1;
    std::uint64_t seed = 0;

    void validate() const {
        require(image_size > 0, "ModelConfig: image_size must be positive");
        require(grid_s >= 1, "ModelConfig: grid_s must be >= 1");
        require(image_size % grid_s == 0, "ModelConfig: image_size must be divisible by grid_s");
        require(num_classes >= 1, "ModelConfig: num_classes must be >= 1");
        require(hidden_units >= 1, "ModelConfig: hidden_units must be >= 1");
        require(channels == 1 || channels == 3, "ModelConfig: channels must be 1 or 3");
    }

    std::size_t inputs() const {
        return static_cast<std::size_t>(image_size) * image_size * channels;
    }
    std::size_t cells() const { return static_cast<std::size_t>(grid_s) * grid_s; }
    /// Outputs per cell: objectness, one logit per class, then tx, ty, tw, th.
    std::size_t cell_stride() const { return 1 + static_cast<std::size_t>(num_classes) + 4; }
    std::size_t outputs() const { return cells() * cell_stride(); }
};

/// Offsets of each tensor inside the flat parameter vector.
/// Order: W1 [hidden x inputs], b1 [hidden], W2 [outputs x hidden], b2 [outputs].
/// Matrices are row-major, one row per destination unit.
struct ParamLayout {
    std::size_t inputs, hidden, outputs;
    std::size_t w1, b1, w2, b2, total;

    explicit ParamLayout(const ModelConfig& c)
        : inputs(c.inputs()), hidden(static_cast<std::size_t>(c.hidden_units)), outputs(c.outputs()) {
        w1 = 0;
        b1 = w1 + hidden * inputs;
        w2 = b1 + hidden;
        b2 = w2 + outputs * hidden;
        total = b2 + outputs;
    }
};

inline std::size_t param_count(const ModelConfig& c) { return ParamLayout(c).total; }

/// Flat, ordered model parameters (see ParamLayout); the unit exchanged in FL.
struct ParamVector {
    std::vector<double> values;

    ParamVector() = default;
    explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
    explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    std::span<const double> view() const { return values; }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }

    /// Bitwise comparison (distinguishes -0.0 from 0.0, NaN payloads).
    bool bit_equal(const ParamVector& o) const {
        return values.size() == o.values.size() &&
               (values.empty() ||
                std::memcmp(values.data(), o.values.data(), values.size() * sizeof(double)) == 0);
    }

    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

struct TrainConfig {
    int epochs = 1;
    int batch_size = 10;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;

    /// lr == 0 is accepted as an explicit no-op run.
    void validate() const {
        require(epochs >= 1, "TrainConfig: epochs must be >= 1");
        require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        require(learning_rate >= 0.0 && learning_rate < 1.0, "TrainConfig: learning_rate must be in [0, 1)");
    }
};

inline constexpr double kObjectnessBiasInit = -2.0;
inline constexpr double kBoxLossWeight = 5.0;

// ---------------------------------------------------------------------------
// Initialization

inline ParamVector init_model(const ModelConfig& cfg) {
    cfg.validate();
    const ParamLayout L(cfg);
    ParamVector p(L.total, 0.0);
    Rng rng(mix_seed(cfg.seed, 0x1417));
    // uniform(-a, a) with a = sqrt(3 / fan_in): variance 1 / fan_in
    const double a1 = std::sqrt(3.0 / static_cast<double>(L.inputs));
    for (std::size_t i = 0; i < L.hidden * L.inputs; ++i) p[L.w1 + i] = uniform_real(rng, -a1, a1);
    const double a2 = std::sqrt(3.0 / static_cast<double>(L.hidden));
    for (std::size_t i = 0; i < L.outputs * L.hidden; ++i) p[L.w2 + i] = uniform_real(rng, -a2, a2);
    for (std::size_t c = 0; c < cfg.cells(); ++c) p[L.b2 + c * cfg.cell_stride()] = kObjectnessBiasInit;
    return p;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Activations of one image; reused across a batch to avoid reallocation.
struct Workspace {
    std::vector<double> x, a, o, d_out, d_hidden;

    explicit Workspace(const ParamLayout& L)
        : x(L.inputs), a(L.hidden), o(L.outputs), d_out(L.outputs), d_hidden(L.hidden) {}
};

inline void check_image(const RasterImage& img, const ModelConfig& cfg) {
    require(img.width() == cfg.image_size && img.height() == cfg.image_size &&
                img.channels() == cfg.channels,
            "detector: image dimensions do not match the model config");
}

inline void check_params(const ParamVector& p, const ParamLayout& L) {
    require(p.size() == L.total, "detector: parameter vector length does not match the model config");
}

/// Fills ws.x, ws.a (tanh hidden) and ws.o (raw output logits).
inline void forward_raw(const ParamVector& params, const ParamLayout& L, const RasterImage& img,
                        Workspace& ws) {
    const auto px = img.pixels();
    for (std::size_t i = 0; i < L.inputs; ++i) ws.x[i] = px[i] * (1.0 / 255.0) - 0.5;
    const double* P = params.values.data();
    for (std::size_t h = 0; h < L.hidden; ++h) {
        const double* row = P + L.w1 + h * L.inputs;
        double z = 0.0;
        for (std::size_t i = 0; i < L.inputs; ++i) z += row[i] * ws.x[i];
        ws.a[h] = std::tanh(z + P[L.b1 + h]);
    }
    for (std::size_t k = 0; k < L.outputs; ++k) {
        const double* row = P + L.w2 + k * L.hidden;
        double z = P[L.b2 + k];
        for (std::size_t h = 0; h < L.hidden; ++h) z += row[h] * ws.a[h];
        ws.o[k] = z;
    }
}

}  // namespace detail

/// Decoded head output for one image, cells in row-major (row = y) order.
struct GridOutput {
    int grid_s = 0;
    int num_classes = 0;
    std::vector<double> objectness;               ///< [cells]
    std::vector<double> class_probs;              ///< [cells * num_classes]
    std::vector<std::array<double, 4>> box;       ///< [cells] (x offset, y offset, w, h), all in (0,1)

    std::span<const double> classes_of(std::size_t cell) const {
        return std::span<const double>(class_probs).subspan(cell * static_cast<std::size_t>(num_classes),
                                                            static_cast<std::size_t>(num_classes));
    }

    friend bool operator==(const GridOutput&, const GridOutput&) = default;
};

namespace detail {

inline GridOutput decode(const ModelConfig& cfg, std::span<const double> logits) {
    GridOutput g;
    g.grid_s = cfg.grid_s;
    g.num_classes = cfg.num_classes;
    const std::size_t cells = cfg.cells(), stride = cfg.cell_stride();
    const auto nc = static_cast<std::size_t>(cfg.num_classes);
    g.objectness.resize(cells);
    g.class_probs.resize(cells * nc);
    g.box.resize(cells);
    for (std::size_t c = 0; c < cells; ++c) {
        const double* o = logits.data() + c * stride;
        g.objectness[c] = sigmoid(o[0]);
        const double mx = *std::max_element(o + 1, o + 1 + nc);
        double sum = 0.0;
        for (std::size_t k = 0; k < nc; ++k) sum += (g.class_probs[c * nc + k] = std::exp(o[1 + k] - mx));
        for (std::size_t k = 0; k < nc; ++k) g.class_probs[c * nc + k] /= sum;
        for (std::size_t k = 0; k < 4; ++k) g.box[c][k] = sigmoid(o[1 + nc + k]);
    }
    return g;
}

}  // namespace detail

inline GridOutput forward(const ParamVector& params, const RasterImage& image, const ModelConfig& cfg) {
    cfg.validate();
    const ParamLayout L(cfg);
    detail::check_params(params, L);
    detail::check_image(image, cfg);
    detail::Workspace ws(L);
    detail::forward_raw(params, L, image, ws);
    return detail::decode(cfg, ws.o);
}

// ---------------------------------------------------------------------------
// Loss and gradient

/// Cell responsible for a box: the one containing its center.
inline std::size_t responsible_cell(const BoundingBox& b, int grid_s) {
    const int col = std::clamp(static_cast<int>(std::floor(b.cx * grid_s)), 0, grid_s - 1);
    const int row = std::clamp(static_cast<int>(std::floor(b.cy * grid_s)), 0, grid_s - 1);
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(grid_s) + static_cast<std::size_t>(col);
}

struct LossResult {
    double loss = 0.0;
    ParamVector gradient;
};

namespace detail {

struct CellTarget {
    bool positive = false;
    int class_id = 0;
    std::array<double, 4> box{};  // x offset, y offset, sqrt(w), sqrt(h)
};

inline std::vector<CellTarget> build_targets(const std::vector<Annotation>& anns, const ModelConfig& cfg) {
    std::vector<CellTarget> t(cfg.cells());
    const double s = cfg.grid_s;
    for (const auto& a : anns) {  // later annotation wins on a shared cell
        const std::size_t cell = responsible_cell(a.box, cfg.grid_s);
        const auto col = static_cast<double>(cell % static_cast<std::size_t>(cfg.grid_s));
        const auto row = static_cast<double>(cell / static_cast<std::size_t>(cfg.grid_s));
        t[cell] = {true, a.class_id,
                   {a.box.cx * s - col, a.box.cy * s - row, std::sqrt(a.box.w), std::sqrt(a.box.h)}};
    }
    return t;
}

/// Loss of one sample; fills ws.d_out with dLoss/dlogit (unscaled).
inline double sample_loss(const ModelConfig& cfg, const std::vector<CellTarget>& targets, Workspace& ws) {
    const std::size_t stride = cfg.cell_stride();
    const auto nc = static_cast<std::size_t>(cfg.num_classes);
    std::fill(ws.d_out.begin(), ws.d_out.end(), 0.0);
    double loss = 0.0;
    for (std::size_t c = 0; c < cfg.cells(); ++c) {
        const double* o = ws.o.data() + c * stride;
        double* d = ws.d_out.data() + c * stride;
        const CellTarget& t = targets[c];
        const double tobj = t.positive ? 1.0 : 0.0;
        // BCE(sigmoid(o), t) = softplus(o) - t*o
        loss += softplus(o[0]) - tobj * o[0];
        d[0] = sigmoid(o[0]) - tobj;
        if (!t.positive) continue;

        const double mx = *std::max_element(o + 1, o + 1 + nc);
        double sum = 0.0;
        for (std::size_t k = 0; k < nc; ++k) sum += std::exp(o[1 + k] - mx);
        const double log_z = mx + std::log(sum);
        loss += log_z - o[1 + static_cast<std::size_t>(t.class_id)];
        for (std::size_t k = 0; k < nc; ++k)
            d[1 + k] = std::exp(o[1 + k] - log_z) - (k == static_cast<std::size_t>(t.class_id) ? 1.0 : 0.0);

        for (std::size_t k = 0; k < 4; ++k) {
            const double z = o[1 + nc + k];
            const double s = sigmoid(z);
            const double ds = s * (1.0 - s);
            if (k < 2) {
                const double r = s - t.box[k];
                loss += kBoxLossWeight * r * r;
                d[1 + nc + k] = kBoxLossWeight * 2.0 * r * ds;
            } else {
                // regress sqrt of the extent: d/dz (sqrt(s) - t)^2 = (sqrt(s) - t) * ds / sqrt(s)
                const double q = std::sqrt(s);
                const double r = q - t.box[k];
                loss += kBoxLossWeight * r * r;
                d[1 + nc + k] = kBoxLossWeight * r * ds / q;
            }
        }
    }
    return loss;
}

/// Backpropagates ws.d_out into grad (accumulating).
inline void backward(const ParamVector& params, const ParamLayout& L, Workspace& ws, ParamVector& grad) {
    const double* P = params.values.data();
    double* G = grad.values.data();
    std::fill(ws.d_hidden.begin(), ws.d_hidden.end(), 0.0);
    for (std::size_t k = 0; k < L.outputs; ++k) {
        const double dk = ws.d_out[k];
        if (dk == 0.0) continue;
        G[L.b2 + k] += dk;
        double* grow = G + L.w2 + k * L.hidden;
        const double* prow = P + L.w2 + k * L.hidden;
        for (std::size_t h = 0; h < L.hidden; ++h) {
            grow[h] += dk * ws.a[h];
            ws.d_hidden[h] += dk * prow[h];
        }
    }
    for (std::size_t h = 0; h < L.hidden; ++h) {
        const double dz = ws.d_hidden[h] * (1.0 - ws.a[h] * ws.a[h]);
        if (dz == 0.0) continue;
        G[L.b1 + h] += dz;
        double* grow = G + L.w1 + h * L.inputs;
        for (std::size_t i = 0; i < L.inputs; ++i) grow[i] += dz * ws.x[i];
    }
}

}  // namespace detail

/// Mean over the batch of: objectness BCE summed over all cells, plus for
/// each positive cell the class cross-entropy and a weighted squared error on
/// (x offset, y offset, sqrt w, sqrt h). Gradient is analytic.
inline LossResult loss(const ParamVector& params, std::span<const Sample> batch, const ModelConfig& cfg) {
    cfg.validate();
    require(!batch.empty(), "loss: batch must be nonempty");
    const ParamLayout L(cfg);
    detail::check_params(params, L);
    LossResult out{0.0, ParamVector(L.total, 0.0)};
    detail::Workspace ws(L);
    for (const auto& s : batch) {
        detail::check_image(s.image, cfg);
        detail::forward_raw(params, L, s.image, ws);
        out.loss += detail::sample_loss(cfg, detail::build_targets(s.annotations, cfg), ws);
        detail::backward(params, L, ws, out.gradient);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    for (auto& g : out.gradient.values) g *= inv;
    return out;
}

/// Loss only (no backward pass), mean over samples.
inline double mean_loss(const ParamVector& params, std::span<const Sample> samples, const ModelConfig& cfg) {
    cfg.validate();
    require(!samples.empty(), "mean_loss: samples must be nonempty");
    const ParamLayout L(cfg);
    detail::check_params(params, L);
    detail::Workspace ws(L);
    double total = 0.0;
    for (const auto& s : samples) {
        detail::check_image(s.image, cfg);
        detail::forward_raw(params, L, s.image, ws);
        total += detail::sample_loss(cfg, detail::build_targets(s.annotations, cfg), ws);
    }
    return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    ParamVector params;
    std::vector<double> epoch_loss;  ///< mean training loss of each epoch
};

/// Minibatch SGD. Epoch e shuffles with seed tc.seed + e.
inline TrainResult train_local(ParamVector params, std::span<const Sample> shard, const TrainConfig& tc,
                               const ModelConfig& cfg) {
    tc.validate();
    cfg.validate();
    require(!shard.empty(), "train_local: shard must be nonempty");
    const ParamLayout L(cfg);
    detail::check_params(params, L);
    for (const auto& s : shard) detail::check_image(s.image, cfg);

    std::vector<std::vector<detail::CellTarget>> targets;
    targets.reserve(shard.size());
    for (const auto& s : shard) targets.push_back(detail::build_targets(s.annotations, cfg));

    TrainResult out;
    detail::Workspace ws(L);
    ParamVector grad(L.total, 0.0);
    const auto bs = static_cast<std::size_t>(tc.batch_size);
    for (int e = 0; e < tc.epochs; ++e) {
        const auto order = shuffled_indices(shard.size(), tc.seed + static_cast<std::uint64_t>(e));
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            std::fill(grad.values.begin(), grad.values.end(), 0.0);
            double batch_total = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                detail::forward_raw(params, L, shard[i].image, ws);
                batch_total += detail::sample_loss(cfg, targets[i], ws);
                detail::backward(params, L, ws, grad);
            }
            epoch_total += batch_total;
            const double step = tc.learning_rate / static_cast<double>(stop - start);
            if (step != 0.0)
                for (std::size_t j = 0; j < L.total; ++j) params[j] -= step * grad[j];
        }
        out.epoch_loss.push_back(epoch_total / static_cast<double>(shard.size()));
    }
    out.params = std::move(params);
    return out;
}

// ---------------------------------------------------------------------------
// Inference

/// Greedy per-class NMS. Input order is irrelevant; output is sorted by
/// descending score (ties keep input order).
inline std::vector<Detection> non_max_suppression(std::vector<Detection> dets, double iou_threshold) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

/// Candidate boxes from a decoded grid: score = objectness * max class prob,
/// kept when strictly above score_threshold.
inline std::vector<Detection> grid_candidates(const GridOutput& g, double score_threshold) {
    std::vector<Detection> out;
    const double s = g.grid_s;
    for (std::size_t c = 0; c < g.objectness.size(); ++c) {
        const auto probs = g.classes_of(c);
        const auto best = std::max_element(probs.begin(), probs.end());
        const double score = g.objectness[c] * *best;
        if (!(score > score_threshold)) continue;
        const auto col = static_cast<double>(c % static_cast<std::size_t>(g.grid_s));
        const auto row = static_cast<double>(c / static_cast<std::size_t>(g.grid_s));
        const auto& b = g.box[c];
        Detection d;
        d.class_id = static_cast<int>(best - probs.begin());
        d.box = {(col + b[0]) / s, (row + b[1]) / s, b[2], b[3]};
        d.score = std::clamp(score, 0.0, 1.0);
        out.push_back(d);
    }
    return out;
}

inline std::vector<Detection> predict(const ParamVector& params, const RasterImage& image,
                                      const ModelConfig& cfg, double score_threshold, double nms_iou) {
    require(score_threshold >= 0.0 && score_threshold <= 1.0, "predict: score_threshold must be in [0,1]");
    require(nms_iou >= 0.0 && nms_iou <= 1.0, "predict: nms_iou must be in [0,1]");
    return non_max_suppression(grid_candidates(forward(params, image, cfg), score_threshold), nms_iou);
}

// ---------------------------------------------------------------------------
// Serialization: u64 LE count | 16-byte config fingerprint | count x f64 LE

inline constexpr std::size_t kParamHeaderBytes = 24;

inline std::size_t serialized_size(std::size_t count) { return kParamHeaderBytes + 8 * count; }

/// Two FNV-1a passes over the architecture fields. The init seed is left out:
/// trained checkpoints of one architecture are interchangeable.
inline std::array<std::uint8_t, 16> config_fingerprint(const ModelConfig& c) {
    const std::string key = "fedvision-grid-mlp;image_size=" + std::to_string(c.image_size) +
                            ";grid_s=" + std::to_string(c.grid_s) +
                            ";num_classes=" + std::to_string(c.num_classes) +
                            ";hidden_units=" + std::to_string(c.hidden_units) +
                            ";channels=" + std::to_string(c.channels);
    const std::uint64_t h1 = fnv1a(key);
    const std::uint64_t h2 = fnv1a(key, splitmix64(h1));
    std::array<std::uint8_t, 16> out{};
    for (int i = 0; i < 8; ++i) {
        out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(h1 >> (8 * i));
        out[static_cast<std::size_t>(8 + i)] = static_cast<std::uint8_t>(h2 >> (8 * i));
    }
    return out;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(std::string_view in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string serialize_params(const ParamVector& p, const ModelConfig& cfg) {
    std::string out;
    out.reserve(serialized_size(p.size()));
    detail::put_u64(out, p.size());
    const auto fp = config_fingerprint(cfg);
    out.append(reinterpret_cast<const char*>(fp.data()), fp.size());
    for (double v : p.values) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

struct ParamHeader {
    std::uint64_t count = 0;
    std::array<std::uint8_t, 16> fingerprint{};
};

inline ParamHeader read_param_header(std::string_view bytes) {
    if (bytes.size() < kParamHeaderBytes) throw RuntimeError("params: truncated header");
    ParamHeader h;
    h.count = detail::get_u64(bytes, 0);
    std::memcpy(h.fingerprint.data(), bytes.data() + 8, 16);
    return h;
}

/// Decodes and checks length and fingerprint against cfg.
inline ParamVector deserialize_params(std::string_view bytes, const ModelConfig& cfg) {
    const ParamHeader h = read_param_header(bytes);
    if (bytes.size() != serialized_size(h.count)) throw RuntimeError("params: payload length mismatch");
    if (h.fingerprint != config_fingerprint(cfg))
        throw RuntimeError("params: checkpoint was produced for a different model config");
    if (h.count != param_count(cfg)) throw RuntimeError("params: parameter count does not match config");
    ParamVector p(h.count);
    for (std::size_t i = 0; i < h.count; ++i)
        p[i] = std::bit_cast<double>(detail::get_u64(bytes, kParamHeaderBytes + 8 * i));
    return p;
}

}  // namespace fedvision
