#pragma once

#include <algorithm>

namespace iclip {

// Axis-aligned box in pixel coordinates, corners (x1,y1)-(x2,y2).
struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    bool well_formed() const { return x1 < x2 && y1 < y2; }
};

inline double box_iou(const Box& a, const Box& b) {
    const double area_a = a.area();
    const double area_b = b.area();
    if (area_a <= 0.0 || area_b <= 0.0) return 0.0;  // degenerate boxes contribute no overlap
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (area_a + area_b - inter);
}

}  // namespace iclip
