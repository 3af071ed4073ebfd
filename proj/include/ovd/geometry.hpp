#pragma once

#include <algorithm>

#include "ovd/errors.hpp"

namespace ovd {

// Axis-aligned box, (x1,y1) top-left, (x2,y2) bottom-right, pixel units.
struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    bool valid() const { return x1 < x2 && y1 < y2; }
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return valid() ? width() * height() : 0.0; }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    Box clipped(double w, double h) const {
        return Box{std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h),
                   std::clamp(x2, 0.0, w), std::clamp(y2, 0.0, h)};
    }

    Box scaled(double s) const { return Box{x1 * s, y1 * s, x2 * s, y2 * s}; }
};

inline double intersection_area(const Box& a, const Box& b) {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

// Intersection over union; 0 for disjoint boxes.
inline double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) throw InvalidBoxError("iou: degenerate box");
    const double inter = intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

}  // namespace ovd
