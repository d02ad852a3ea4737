#include "core/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dseg {

double BoxXYXY::area() const {
    return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
}

BoxXYXY BoxXYXY::clamped(double img_w, double img_h) const {
    auto cl = [](double v, double hi) { return std::min(std::max(v, 0.0), hi); };
    return {cl(x0, img_w), cl(y0, img_h), cl(x1, img_w), cl(y1, img_h)};
}

static double intersection_area(const BoxXYXY& a, const BoxXYXY& b) {
    double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (ix <= 0 || iy <= 0) return 0.0;
    return ix * iy;
}

double iou(const BoxXYXY& a, const BoxXYXY& b) {
    double inter = intersection_area(a, b);
    double uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0.0;  // degenerate zero-area inputs
    return inter / uni;
}

double giou(const BoxXYXY& a, const BoxXYXY& b) {
    double inter = intersection_area(a, b);
    double uni = a.area() + b.area() - inter;
    BoxXYXY hull{std::min(a.x0, b.x0), std::min(a.y0, b.y0),
                 std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
    double hull_area = hull.area();
    double i = uni > 0 ? inter / uni : 0.0;
    if (hull_area <= 0) return i;
    return i - (hull_area - uni) / hull_area;
}

BoxXYXY ccwh_to_xyxy(const BoxCCWH& b, double img_w, double img_h, bool clamp) {
    BoxXYXY out{(b.cx - b.w / 2) * img_w, (b.cy - b.h / 2) * img_h,
                (b.cx + b.w / 2) * img_w, (b.cy + b.h / 2) * img_h};
    return clamp ? out.clamped(img_w, img_h) : out;
}

BoxCCWH xyxy_to_ccwh(const BoxXYXY& b, double img_w, double img_h) {
    return {(b.x0 + b.x1) / (2 * img_w), (b.y0 + b.y1) / (2 * img_h),
            (b.x1 - b.x0) / img_w, (b.y1 - b.y0) / img_h};
}

std::int64_t Mask::count() const {
    return std::accumulate(data.begin(), data.end(), std::int64_t{0},
                           [](std::int64_t acc, std::uint8_t v) { return acc + (v != 0); });
}

double mask_iou(const Mask& a, const Mask& b) {
    int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    int ix1 = std::min(a.x0 + a.width, b.x0 + b.width);
    int iy1 = std::min(a.y0 + a.height, b.y0 + b.height);
    std::int64_t inter = 0;
    for (int y = iy0; y < iy1; ++y)
        for (int x = ix0; x < ix1; ++x)
            if (a.at(x, y) && b.at(x, y)) ++inter;
    std::int64_t uni = a.count() + b.count() - inter;
    if (uni == 0) return 0.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace dseg
