#pragma once

#include <algorithm>
#include <cmath>

#include "common.hpp"

namespace fedvision {

/// Axis-aligned box in normalized image coordinates (center + extent).
struct BoundingBox {
    double cx = 0.5;
    double cy = 0.5;
    double w = 0.0;
    double h = 0.0;

    double x0() const { return cx - 0.5 * w; }
    double y0() const { return cy - 0.5 * h; }
    double x1() const { return cx + 0.5 * w; }
    double y1() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    /// Area of the part lying inside the unit square.
    double clipped_area() const {
        const double cw = std::min(x1(), 1.0) - std::max(x0(), 0.0);
        const double ch = std::min(y1(), 1.0) - std::max(y0(), 0.0);
        return (cw > 0.0 && ch > 0.0) ? cw * ch : 0.0;
    }

    bool valid() const {
        return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) &&
               cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 && w <= 1.0 &&
               h > 0.0 && h <= 1.0 && clipped_area() > 0.0;
    }

    static BoundingBox from_corners(double x0, double y0, double x1, double y1) {
        return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline void validate(const BoundingBox& b) {
    require(b.valid(), "BoundingBox: requires 0<=cx,cy<=1, 0<w,h<=1 and a non-degenerate clipped area");
}

inline constexpr int kNumClasses = 2;
inline constexpr int kClassPlate = 0;  ///< rectangle
inline constexpr int kClassFace = 1;   ///< disk

struct Annotation {
    int class_id = 0;
    BoundingBox box;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Detection {
    int class_id = 0;
    BoundingBox box;
    double score = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Intersection over union. Works in any consistent coordinate frame since
/// the ratio is scale- and translation-invariant. Disjoint boxes give 0.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace fedvision
