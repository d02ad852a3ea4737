#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace dseg {

// Axis-aligned box, absolute pixel corner coordinates.
struct BoxXYXY {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const;
    bool valid() const { return x0 <= x1 && y0 <= y1; }
    BoxXYXY clamped(double img_w, double img_h) const;
};

// Center-size box, normalized to [0,1] by the image extent.
struct BoxCCWH {
    double cx = 0, cy = 0, w = 0, h = 0;
};

double iou(const BoxXYXY& a, const BoxXYXY& b);
double giou(const BoxXYXY& a, const BoxXYXY& b);

BoxXYXY ccwh_to_xyxy(const BoxCCWH& b, double img_w, double img_h, bool clamp = false);
BoxCCWH xyxy_to_ccwh(const BoxXYXY& b, double img_w, double img_h);

// Binary mask stored box-local: pixel (x,y) of the canvas is data[(y-y0)*width + (x-x0)].
// Raster cells are half-open, so a mask of width w covers canvas columns [x0, x0+w).
struct Mask {
    int x0 = 0, y0 = 0;
    int width = 0, height = 0;
    std::vector<std::uint8_t> data;

    bool at(int canvas_x, int canvas_y) const {
        int lx = canvas_x - x0, ly = canvas_y - y0;
        if (lx < 0 || ly < 0 || lx >= width || ly >= height) return false;
        return data[static_cast<std::size_t>(ly) * width + lx] != 0;
    }
    std::int64_t count() const;
    bool empty_support() const { return count() == 0; }
};

double mask_iou(const Mask& a, const Mask& b);

enum StructureClass : int {
    kGlomerulus = 0,
    kArtery = 1,
    kTubulus = 2,
    kStructureClassCount = 3,
};

// Ground truth and predictions share this shape.
struct LabeledInstance {
    BoxXYXY box;
    int class_id = 0;
    Mask mask;
    std::optional<std::vector<std::uint8_t>> lesion_labels;
    double score = 1.0;  // prediction confidence; 1 for ground truth
    std::optional<std::vector<double>> lesion_probs;
};

}  // namespace dseg
