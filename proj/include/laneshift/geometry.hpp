#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace laneshift {

struct Canvas {
    int h = 64;
    int w = 160;
    bool operator==(const Canvas&) const = default;
};

/// Lane prior: normalized start point, orientation and length. theta is
/// measured from the positive x axis; lanes grow upward (decreasing y)
/// from the start point, so theta must lie strictly inside (0, pi).
/// l scales the vertical extent: the lane spans y in [y_a*H - l*H, y_a*H].
struct AnchorParams {
    double x_a = 0.5;
    double y_a = 1.0;
    double theta_a = 1.5707963267948966;
    double l = 1.0;

    bool valid() const;
};

struct AnchorDelta {
    double dx_a = 0, dy_a = 0, dtheta_a = 0, dl = 0;
};

/// Horizontal displacement (pixels) from the anchor line, one entry per
/// sampled image row. Rows are indexed bottom (0) to top (n-1) on the
/// shared evaluation row grid (see row_grid_y).
struct RowOffsets {
    std::vector<double> offsets;
};

struct LanePolyline {
    // ordered (x,y) pixel points, y strictly increasing
    std::vector<std::pair<double, double>> points;
};

struct ScoredLane {
    LanePolyline polyline;
    double confidence = 0.0;
};

struct LaneMask {
    Canvas canvas;
    std::vector<uint8_t> bitmap;  // h*w, row-major

    uint8_t at(int y, int x) const { return bitmap[static_cast<size_t>(y) * canvas.w + x]; }
    uint8_t& at(int y, int x) { return bitmap[static_cast<size_t>(y) * canvas.w + x]; }
    int64_t popcount() const;
};

struct DistributionLabel {
    int k = 1;  // 1-based
    bool operator==(const DistributionLabel&) const = default;
};

class DegenerateLaneError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// y coordinate (pixels) of evaluation row r (r=0 is the image bottom).
double row_grid_y(int r, int n_rows, const Canvas& canvas);

/// x of the anchor's center line at image row y (pixels).
double anchor_line_x(const AnchorParams& a, double y_px, const Canvas& canvas);

/// Whether evaluation row y lies within the anchor's vertical extent.
bool anchor_covers_row(const AnchorParams& a, double y_px, const Canvas& canvas);

LanePolyline decode_lane(const AnchorParams& anchor, const RowOffsets& offsets,
                         const Canvas& canvas);

std::pair<AnchorParams, RowOffsets> encode_lane(const LanePolyline& polyline,
                                                int n_rows, const Canvas& canvas);

LaneMask rasterize(const LanePolyline& polyline, double width_px, const Canvas& canvas);

double lane_iou(const LaneMask& a, const LaneMask& b);

void validate_polyline(const LanePolyline& p, const Canvas& canvas);

}  // namespace laneshift
