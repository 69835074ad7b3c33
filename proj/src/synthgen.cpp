#include "laneshift/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "laneshift/image_io.hpp"
#include "laneshift/kernels.hpp"

namespace fs = std::filesystem;

namespace laneshift {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kGenRows = 36;  // row grid used to emit lane polylines

// value-stable uniform helpers (avoid libstdc++ distribution internals)
double uniform(std::mt19937_64& rng, double a, double b) {
    return a + (b - a) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}
int uniform_int(std::mt19937_64& rng, int a, int b) {  // inclusive
    return a + static_cast<int>(rng() % static_cast<uint64_t>(b - a + 1));
}

uint64_t mix_seed(const DistributionSpec& spec, uint64_t seed) {
    uint64_t h = 1469598103934665603ull;
    for (char c : spec.name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    h ^= static_cast<uint64_t>(spec.layout) + 0x9e3779b97f4a7c15ull;
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

struct LaneDraft {
    double x0, theta, l, bow;  // bow: lateral px at mid-extent
};

LanePolyline draft_to_polyline(const LaneDraft& d, const Canvas& canvas) {
    const double y0 = canvas.h - 1.0;
    const double extent = d.l * (canvas.h - 1);
    const double cot = std::cos(d.theta) / std::sin(d.theta);
    LanePolyline p;
    for (int r = kGenRows - 1; r >= 0; --r) {  // descending r -> increasing y
        const double y = row_grid_y(r, kGenRows, canvas);
        const double up = y0 - y;
        if (up > extent + 1e-9) continue;
        const double t = extent > 0 ? up / extent : 0.0;
        const double x = d.x0 + up * cot + d.bow * 4.0 * t * (1.0 - t);
        if (x < 0.0 || x >= canvas.w || y < 0.0 || y >= canvas.h) continue;
        p.points.emplace_back(x, y);
    }
    return p;
}

}  // namespace

std::string layout_name(Layout l) {
    switch (l) {
        case Layout::SIDE: return "SIDE";
        case Layout::CURVED: return "CURVED";
        case Layout::CENTERED: return "CENTERED";
    }
    return "?";
}

Layout layout_from_name(const std::string& s) {
    if (s == "SIDE") return Layout::SIDE;
    if (s == "CURVED") return Layout::CURVED;
    if (s == "CENTERED") return Layout::CENTERED;
    throw std::invalid_argument("unknown layout: " + s);
}

void DistributionSpec::validate() const {
    if (name.empty()) throw std::invalid_argument("distribution name empty");
    if (lane_count_range.first < 1 || lane_count_range.second < lane_count_range.first)
        throw std::invalid_argument("bad lane_count_range");
    if (layout == Layout::CENTERED &&
        (lane_count_range.first != 1 || lane_count_range.second != 1))
        throw std::invalid_argument("CENTERED requires lane_count_range (1,1)");
    if (curvature_range.second < curvature_range.first)
        throw std::invalid_argument("bad curvature_range");
    if (texture_noise < 0.0 || texture_noise > 1.0)
        throw std::invalid_argument("bad texture_noise");
    if (brightness_range.second < brightness_range.first || brightness_range.first < 0.0 ||
        brightness_range.second > 1.0)
        throw std::invalid_argument("bad brightness_range");
    if (lane_contrast < -1.0 || lane_contrast > 1.0 || lane_contrast == 0.0)
        throw std::invalid_argument("bad lane_contrast");
}

SceneSample generate_scene(const DistributionSpec& spec, uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(mix_seed(spec, seed));
    const Canvas& cv = spec.canvas;

    const int want = uniform_int(rng, spec.lane_count_range.first, spec.lane_count_range.second);
    std::vector<LanePolyline> lanes;
    std::vector<double> starts;
    int attempts = 0;
    while (static_cast<int>(lanes.size()) < want && attempts < want * 20) {
        ++attempts;
        LaneDraft d{};
        switch (spec.layout) {
            case Layout::SIDE:
            case Layout::CURVED: {
                const bool left = (lanes.size() + attempts) % 2 == 0;
                d.x0 = left ? uniform(rng, 0.03, 0.30) * cv.w
                            : uniform(rng, 0.70, 0.97) * cv.w;
                d.theta = left ? uniform(rng, 50.0, 75.0) * kPi / 180.0
                               : uniform(rng, 105.0, 130.0) * kPi / 180.0;
                d.l = uniform(rng, 0.7, 1.0);
                if (spec.layout == Layout::CURVED) {
                    const double c = uniform(rng, spec.curvature_range.first,
                                             spec.curvature_range.second);
                    d.bow = (left ? 1.0 : -1.0) * c;
                } else {
                    d.bow = 0.0;
                }
                break;
            }
            case Layout::CENTERED: {
                d.x0 = uniform(rng, 0.44, 0.56) * cv.w;
                d.theta = uniform(rng, 83.0, 97.0) * kPi / 180.0;
                d.l = uniform(rng, 0.8, 1.0);
                d.bow = 0.0;
                break;
            }
        }
        // keep lane starts apart
        bool too_close = false;
        for (double s : starts)
            if (std::abs(s - d.x0) < 12.0) too_close = true;
        if (too_close) continue;
        LanePolyline p = draft_to_polyline(d, cv);
        if (p.points.size() < 2) continue;
        lanes.push_back(std::move(p));
        starts.push_back(d.x0);
    }
    if (lanes.empty()) throw std::runtime_error("generate_scene: produced no lanes");

    // render: textured background, bright lane strokes, quantized to 8 bits
    const double base = uniform(rng, spec.brightness_range.first, spec.brightness_range.second);
    Tensor img({1, cv.h, cv.w});
    for (int y = 0; y < cv.h; ++y)
        for (int x = 0; x < cv.w; ++x) {
            double v = base + 0.08 * (static_cast<double>(y) / cv.h - 0.5);
            v += uniform(rng, -spec.texture_noise, spec.texture_noise);
            img.at3(0, y, x) = std::clamp(v, 0.0, 1.0);
        }
    const double lane_brightness = std::clamp(base + spec.lane_contrast, 0.0, 1.0);
    for (const auto& lane : lanes) {
        LaneMask m = rasterize(lane, 2.5, cv);
        for (int y = 0; y < cv.h; ++y)
            for (int x = 0; x < cv.w; ++x)
                if (m.at(y, x)) img.at3(0, y, x) = lane_brightness;
    }
    for (auto& v : img.v) v = std::round(v * 255.0) / 255.0;

    SceneSample s;
    s.image = std::move(img);
    s.lanes = std::move(lanes);
    return s;
}

std::vector<SceneSample> generate_dataset(const DistributionSpec& spec, int n,
                                          uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    std::vector<SceneSample> out(static_cast<size_t>(n));
    const bool par = parallel_enabled();
#pragma omp parallel for schedule(dynamic) if (par)
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = generate_scene(spec, seed + i);
    return out;
}

namespace {
std::string sample_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", i);
    return buf;
}
}  // namespace

void write_dataset(const std::vector<SceneSample>& samples, const std::string& dir,
                   const std::string& dist_name) {
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw DatasetError("cannot write manifest in " + dir);
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const int h = s.image.dim(1), w = s.image.dim(2);
        std::vector<uint8_t> px(static_cast<size_t>(h) * w);
        for (size_t p = 0; p < px.size(); ++p)
            px[p] = static_cast<uint8_t>(std::lround(s.image.v[p] * 255.0));
        const std::string id = sample_id(static_cast<int>(i));
        write_png_gray8((fs::path(dir) / "images" / (id + ".png")).string(), px, w, h);

        std::ofstream ann(fs::path(dir) / "images" / (id + ".lines.txt"));
        for (const auto& lane : s.lanes) {
            for (size_t j = 0; j < lane.points.size(); ++j) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%s%.2f %.2f", j ? " " : "",
                              lane.points[j].first, lane.points[j].second);
                ann << buf;
            }
            ann << "\n";
        }
        manifest << "images/" << id << ".png " << dist_name << "\n";
    }
}

std::vector<SceneSample> read_dataset(const std::string& dir, int label_k) {
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw DatasetError("corrupt dataset: missing manifest in " + dir);
    std::vector<SceneSample> out;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string rel, dist;
        is >> rel >> dist;
        const fs::path img_path = fs::path(dir) / rel;
        if (!fs::exists(img_path))
            throw DatasetError("corrupt dataset: missing image " + img_path.string());
        int w = 0, h = 0;
        std::vector<uint8_t> px = read_png_gray8(img_path.string(), w, h);
        SceneSample s;
        s.image = Tensor({1, h, w});
        for (size_t p = 0; p < px.size(); ++p) s.image.v[p] = px[p] / 255.0;
        s.label.k = label_k;

        fs::path ann_path = img_path;
        ann_path.replace_extension();  // drop .png
        ann_path += ".lines.txt";
        std::ifstream ann(ann_path);
        if (!ann)
            throw DatasetError("corrupt dataset: missing annotation " + ann_path.string());
        std::string lane_line;
        int lineno = 0;
        while (std::getline(ann, lane_line)) {
            ++lineno;
            if (lane_line.empty()) continue;
            std::istringstream ls(lane_line);
            LanePolyline p;
            double x, y;
            while (ls >> x) {
                if (!(ls >> y))
                    throw DatasetError("malformed annotation at " + ann_path.string() +
                                       ":" + std::to_string(lineno));
                p.points.emplace_back(x, y);
            }
            if (!ls.eof())
                throw DatasetError("malformed annotation at " + ann_path.string() + ":" +
                                   std::to_string(lineno));
            if (p.points.size() < 2)
                throw DatasetError("malformed annotation at " + ann_path.string() + ":" +
                                   std::to_string(lineno));
            s.lanes.push_back(std::move(p));
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace laneshift
