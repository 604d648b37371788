#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "common.hpp"
#include "detector.hpp"
#include "geometry.hpp"
#include "image.hpp"

namespace fedvision {

/// Separable Gaussian: 1-D weights at integer offsets -radius..radius.
struct GaussianKernel {
    double sigma = 1.0;
    int radius = 3;
    std::vector<double> weights;  ///< length 2*radius+1, sums to 1

    double at(int offset) const { return weights[static_cast<std::size_t>(offset + radius)]; }
};

inline GaussianKernel build_kernel(double sigma) {
    require(sigma > 0.0 && std::isfinite(sigma), "build_kernel: sigma must be positive");
    GaussianKernel k;
    k.sigma = sigma;
    k.radius = static_cast<int>(std::ceil(3.0 * sigma));
    k.weights.resize(static_cast<std::size_t>(2 * k.radius + 1));
    double sum = 0.0;
    for (int d = -k.radius; d <= k.radius; ++d) {
        const double w = std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma));
        k.weights[static_cast<std::size_t>(d + k.radius)] = w;
        sum += w;
    }
    for (auto& w : k.weights) w /= sum;
    return k;
}

/// Blur strength for a region: max(w_px, h_px) / divisor, floored; or a fixed value.
struct SigmaRule {
    double divisor = 6.0;
    double floor = 2.0;
    std::optional<double> fixed;

    double operator()(double w_px, double h_px) const {
        if (fixed) return *fixed;
        return std::max(std::max(w_px, h_px) / divisor, floor);
    }
};

/// Pixel rectangle [x0, x1) x [y0, y1).
struct PixelRegion {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool empty() const { return x1 <= x0 || y1 <= y0; }
    std::size_t area() const { return empty() ? 0 : static_cast<std::size_t>(x1 - x0) * static_cast<std::size_t>(y1 - y0); }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Pixels whose centers fall inside the denormalized box, clipped to the image.
inline PixelRegion pixel_region(const BoundingBox& b, int width, int height) {
    auto lo = [](double edge) { return static_cast<int>(std::ceil(edge - 0.5)); };
    PixelRegion r;
    r.x0 = std::clamp(lo(b.x0() * width), 0, width);
    r.x1 = std::clamp(lo(b.x1() * width), 0, width);
    r.y0 = std::clamp(lo(b.y0() * height), 0, height);
    r.y1 = std::clamp(lo(b.y1() * height), 0, height);
    return r;
}

/// Grows a box by `pad_frac` of its size on every side, clipped to the unit square.
inline BoundingBox pad_box(const BoundingBox& b, double pad_frac) {
    const double x0 = std::max(0.0, b.x0() - pad_frac * b.w);
    const double y0 = std::max(0.0, b.y0() - pad_frac * b.h);
    const double x1 = std::min(1.0, b.x1() + pad_frac * b.w);
    const double y1 = std::min(1.0, b.y1() + pad_frac * b.h);
    return BoundingBox::from_corners(x0, y0, x1, y1);
}

namespace detail {

/// Gaussian-filters `region` of `src` into `dst`. Reads come from `src` only,
/// with clamp-to-edge sampling. Values are rounded half away from zero.
inline void blur_into(const RasterImage& src, RasterImage& dst, const PixelRegion& region,
                      const GaussianKernel& k) {
    const int W = src.width(), H = src.height(), C = src.channels();
    const int r = k.radius;
    // horizontal pass over the rows the vertical pass will need
    const int ry0 = std::max(0, region.y0 - r), ry1 = std::min(H, region.y1 + r);
    const int cols = region.x1 - region.x0;
    std::vector<double> tmp(static_cast<std::size_t>(ry1 - ry0) * static_cast<std::size_t>(cols) * static_cast<std::size_t>(C));
    auto tmp_at = [&](int y, int x, int c) -> double& {
        return tmp[(static_cast<std::size_t>(y - ry0) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(x - region.x0)) *
                       static_cast<std::size_t>(C) + static_cast<std::size_t>(c)];
    };
    for (int y = ry0; y < ry1; ++y)
        for (int x = region.x0; x < region.x1; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d) acc += k.at(d) * src.at(std::clamp(x + d, 0, W - 1), y, c);
                tmp_at(y, x, c) = acc;
            }
    for (int y = region.y0; y < region.y1; ++y)
        for (int x = region.x0; x < region.x1; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d) acc += k.at(d) * tmp_at(std::clamp(y + d, 0, H - 1), x, c);
                dst.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
            }
}

}  // namespace detail

/// Blurs the pixels of `box`; everything outside is left byte-identical.
inline RasterImage blur_region(const RasterImage& image, const BoundingBox& box, const SigmaRule& rule = {}) {
    require(!image.empty(), "blur_region: empty image");
    const PixelRegion region = pixel_region(box, image.width(), image.height());
    require(!region.empty(), "blur_region: box does not cover any pixel of the image");
    RasterImage out = image;
    detail::blur_into(image, out, region,
                      build_kernel(rule(box.w * image.width(), box.h * image.height())));
    return out;
}

struct BlurredBox {
    BoundingBox box;  ///< padded box actually blurred
    double sigma = 0.0;
    int class_id = 0;
    double score = 0.0;
};

struct AnonymizationReport {
    std::vector<BlurredBox> boxes;
    std::size_t pixels_modified = 0;  ///< pixels covered by at least one blurred region
};

struct AnonymizeOptions {
    double score_threshold = 0.25;
    double nms_iou = 0.5;
    SigmaRule sigma_rule;
    double pad_frac = 0.10;
};

struct AnonymizationResult {
    RasterImage image;
    AnonymizationReport report;
};

/// Blurs the given detections. All regions read from the original image.
/// Where padded boxes overlap, the region with the larger sigma is written
/// last, so the output does not depend on detection order.
inline AnonymizationResult anonymize_detections(const RasterImage& image, std::span<const Detection> dets,
                                                const AnonymizeOptions& opt = {}) {
    require(opt.pad_frac >= 0.0, "anonymize: pad_frac must be >= 0");
    AnonymizationResult res{image, {}};
    struct Job {
        BlurredBox entry;
        PixelRegion region;
    };
    std::vector<Job> jobs;
    for (const auto& d : dets) {
        const BoundingBox padded = pad_box(d.box, opt.pad_frac);
        const PixelRegion region = pixel_region(padded, image.width(), image.height());
        if (region.empty()) continue;
        const double sigma = opt.sigma_rule(padded.w * image.width(), padded.h * image.height());
        jobs.push_back({{padded, sigma, d.class_id, d.score}, region});
    }
    std::stable_sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
        if (a.entry.sigma != b.entry.sigma) return a.entry.sigma < b.entry.sigma;
        if (a.region.y0 != b.region.y0) return a.region.y0 < b.region.y0;
        return a.region.x0 < b.region.x0;
    });

    std::vector<bool> covered(image.area(), false);
    for (const auto& j : jobs) {
        detail::blur_into(image, res.image, j.region, build_kernel(j.entry.sigma));
        for (int y = j.region.y0; y < j.region.y1; ++y)
            for (int x = j.region.x0; x < j.region.x1; ++x)
                covered[static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width()) + static_cast<std::size_t>(x)] = true;
        res.report.boxes.push_back(j.entry);
    }
    res.report.pixels_modified = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));
    return res;
}

inline AnonymizationResult anonymize_image(const ParamVector& params, const RasterImage& image,
                                           const ModelConfig& cfg, const AnonymizeOptions& opt = {}) {
    const auto dets = predict(params, image, cfg, opt.score_threshold, opt.nms_iou);
    return anonymize_detections(image, dets, opt);
}

/// Copy of `image` with each region outlined at full intensity on `channel`
/// (all channels of a gray image).
inline RasterImage outline_regions(const RasterImage& image, std::span<const BoundingBox> boxes, int channel = 1) {
    RasterImage out = image;
    const int c = image.channels() == 1 ? 0 : std::clamp(channel, 0, 2);
    for (const auto& b : boxes) {
        const PixelRegion r = pixel_region(b, image.width(), image.height());
        if (r.empty()) continue;
        for (int x = r.x0; x < r.x1; ++x) {
            out.at(x, r.y0, c) = 255;
            out.at(x, r.y1 - 1, c) = 255;
        }
        for (int y = r.y0; y < r.y1; ++y) {
            out.at(r.x0, y, c) = 255;
            out.at(r.x1 - 1, y, c) = 255;
        }
    }
    return out;
}

}  // namespace fedvision
