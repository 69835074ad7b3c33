#pragma once

#include <string>
#include <vector>

#include "laneshift/geometry.hpp"
#include "laneshift/tensor.hpp"

namespace laneshift {

enum class Layout { SIDE, CURVED, CENTERED };

std::string layout_name(Layout l);
Layout layout_from_name(const std::string& s);

struct DistributionSpec {
    std::string name;
    Layout layout = Layout::SIDE;
    std::pair<int, int> lane_count_range{2, 4};
    std::pair<double, double> curvature_range{0.0, 0.0};  // px of lateral bow at mid-height
    double texture_noise = 0.05;                          // in [0,1]
    std::pair<double, double> brightness_range{0.3, 0.5};
    double lane_contrast = 0.45;  // lane minus background brightness, in [-1,1], != 0
    Canvas canvas;

    void validate() const;
};

struct SceneSample {
    Tensor image;  // [1,H,W], values quantized to the 8-bit grid in [0,1]
    std::vector<LanePolyline> lanes;
    DistributionLabel label;
};

SceneSample generate_scene(const DistributionSpec& spec, uint64_t seed);
std::vector<SceneSample> generate_dataset(const DistributionSpec& spec, int n,
                                          uint64_t seed);

/// On-disk layout (CULane-style):
///   <dir>/images/NNNNN.png
///   <dir>/images/NNNNN.lines.txt   one lane per line: "x1 y1 x2 y2 ..."
///   <dir>/manifest.txt             relative image path + distribution name
void write_dataset(const std::vector<SceneSample>& samples, const std::string& dir,
                   const std::string& dist_name);
std::vector<SceneSample> read_dataset(const std::string& dir, int label_k = 1);

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace laneshift
