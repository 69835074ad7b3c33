#include "laneshift/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace laneshift {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kEps = 1e-9;
}  // namespace

bool AnchorParams::valid() const {
    return std::isfinite(x_a) && std::isfinite(y_a) && std::isfinite(theta_a) &&
           std::isfinite(l) && x_a >= 0.0 && x_a <= 1.0 && y_a >= 0.0 && y_a <= 1.0 &&
           theta_a > 0.0 && theta_a < kPi && l > 0.0 && l <= 1.0;
}

int64_t LaneMask::popcount() const {
    int64_t n = 0;
    for (uint8_t b : bitmap) n += b;
    return n;
}

// The row grid spans the full canvas height: row 0 sits on the bottom pixel
// row (y = H-1), row n-1 on the top (y = 0). Anchor y_a / l are normalized
// by H-1 so that y_a = 1 is exactly the bottom grid row.
double row_grid_y(int r, int n_rows, const Canvas& canvas) {
    return (1.0 - static_cast<double>(r) / (n_rows - 1)) * (canvas.h - 1);
}

double anchor_line_x(const AnchorParams& a, double y_px, const Canvas& canvas) {
    const double x0 = a.x_a * canvas.w;
    const double y0 = a.y_a * (canvas.h - 1);
    return x0 + (y0 - y_px) * (std::cos(a.theta_a) / std::sin(a.theta_a));
}

bool anchor_covers_row(const AnchorParams& a, double y_px, const Canvas& canvas) {
    const double y0 = a.y_a * (canvas.h - 1);
    const double y_top = y0 - a.l * (canvas.h - 1);
    return y_px >= y_top - kEps && y_px <= y0 + kEps;
}

void validate_polyline(const LanePolyline& p, const Canvas& canvas) {
    if (p.points.size() < 2) throw DegenerateLaneError("polyline has fewer than 2 points");
    for (size_t i = 0; i < p.points.size(); ++i) {
        auto [x, y] = p.points[i];
        if (!(x >= 0.0 && x < canvas.w && y >= 0.0 && y < canvas.h))
            throw std::invalid_argument("polyline point outside canvas");
        if (i > 0 && !(y > p.points[i - 1].second))
            throw std::invalid_argument("polyline y not strictly increasing");
    }
}

LanePolyline decode_lane(const AnchorParams& anchor, const RowOffsets& offsets,
                         const Canvas& canvas) {
    if (!anchor.valid()) throw std::invalid_argument("invalid anchor");
    const int n_rows = static_cast<int>(offsets.offsets.size());
    LanePolyline out;
    for (int r = n_rows - 1; r >= 0; --r) {  // top to bottom -> y increasing
        const double y = row_grid_y(r, n_rows, canvas);
        if (!anchor_covers_row(anchor, y, canvas)) continue;
        const double x = anchor_line_x(anchor, y, canvas) + offsets.offsets[r];
        if (x < 0.0 || x >= canvas.w || y < 0.0 || y >= canvas.h) continue;
        out.points.emplace_back(x, y);
    }
    if (out.points.size() < 2) throw DegenerateLaneError("degenerate lane: <2 in-canvas points");
    return out;
}

std::pair<AnchorParams, RowOffsets> encode_lane(const LanePolyline& polyline,
                                                int n_rows, const Canvas& canvas) {
    validate_polyline(polyline, canvas);
    const auto& pts = polyline.points;
    const double y_top = pts.front().second;
    const double y_bot = pts.back().second;
    const double grid_step = static_cast<double>(canvas.h - 1) / (n_rows - 1);
    if (y_bot - y_top < 2.0 * grid_step - kEps)
        throw DegenerateLaneError("degenerate lane: vertical extent below 2 rows");

    // least-squares fit x = a + b*y
    double sy = 0, sx = 0, syy = 0, sxy = 0;
    const double n = static_cast<double>(pts.size());
    for (auto [x, y] : pts) {
        sy += y;
        sx += x;
        syy += y * y;
        sxy += x * y;
    }
    const double denom = n * syy - sy * sy;
    const double b = std::abs(denom) > kEps ? (n * sxy - sx * sy) / denom : 0.0;
    // slope dx/dy = -cot(theta); atan2 keeps theta in (0, pi)
    const double theta = std::atan2(1.0, -b);

    AnchorParams a;
    a.x_a = pts.back().first / canvas.w;
    a.y_a = y_bot / (canvas.h - 1);
    a.theta_a = theta;
    a.l = (y_bot - y_top) / (canvas.h - 1);

    // residual horizontal displacement on the shared row grid
    RowOffsets off;
    off.offsets.assign(n_rows, 0.0);
    for (int r = 0; r < n_rows; ++r) {
        const double y = row_grid_y(r, n_rows, canvas);
        if (y < y_top - kEps || y > y_bot + kEps) continue;
        // interpolate along the segment that brackets y
        size_t i = 0;
        while (i + 2 < pts.size() && pts[i + 1].second < y) ++i;
        const auto [x1, yy1] = pts[i];
        const auto [x2, yy2] = pts[i + 1];
        const double t = std::abs(yy2 - yy1) > kEps ? (y - yy1) / (yy2 - yy1) : 0.0;
        const double x = x1 + std::clamp(t, 0.0, 1.0) * (x2 - x1);
        off.offsets[r] = x - anchor_line_x(a, y, canvas);
    }
    return {a, off};
}

namespace {
double dist_point_segment(double px, double py, double x1, double y1, double x2,
                          double y2) {
    const double dx = x2 - x1, dy = y2 - y1;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((px - x1) * dx + (py - y1) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = x1 + t * dx, cy = y1 + t * dy;
    return std::hypot(px - cx, py - cy);
}
}  // namespace

LaneMask rasterize(const LanePolyline& polyline, double width_px, const Canvas& canvas) {
    if (width_px < 1.0) throw std::invalid_argument("rasterize: width must be >= 1");
    LaneMask m;
    m.canvas = canvas;
    m.bitmap.assign(static_cast<size_t>(canvas.h) * canvas.w, 0);
    const double r = width_px / 2.0;
    const auto& pts = polyline.points;
    for (size_t s = 0; s + 1 < pts.size(); ++s) {
        const auto [x1, y1] = pts[s];
        const auto [x2, y2] = pts[s + 1];
        const int ix0 = std::max(0, static_cast<int>(std::floor(std::min(x1, x2) - r - 1)));
        const int ix1 = std::min(canvas.w - 1, static_cast<int>(std::ceil(std::max(x1, x2) + r + 1)));
        const int iy0 = std::max(0, static_cast<int>(std::floor(std::min(y1, y2) - r - 1)));
        const int iy1 = std::min(canvas.h - 1, static_cast<int>(std::ceil(std::max(y1, y2) + r + 1)));
        for (int iy = iy0; iy <= iy1; ++iy)
            for (int ix = ix0; ix <= ix1; ++ix) {
                // pixel centers at half-integer coordinates
                if (dist_point_segment(ix + 0.5, iy + 0.5, x1, y1, x2, y2) <= r)
                    m.at(iy, ix) = 1;
            }
    }
    return m;
}

double lane_iou(const LaneMask& a, const LaneMask& b) {
    if (!(a.canvas == b.canvas)) throw std::invalid_argument("lane_iou: canvas mismatch");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.bitmap.size(); ++i) {
        inter += a.bitmap[i] & b.bitmap[i];
        uni += a.bitmap[i] | b.bitmap[i];
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace laneshift
