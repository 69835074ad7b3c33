#include "laneshift/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace laneshift {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kToolVersion = "1.0.0";

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;

    // Appearance statistics (brightness band, lane contrast, texture noise)
    // differ per distribution alongside layout. The photometric shift grows
    // with distance from the source: the curved target keeps bright lanes at
    // reduced contrast, the centered target inverts lane polarity entirely,
    // so adapting to it requires re-learning feature extraction, not just
    // re-calibrating the head.
    DistributionSpec side;
    side.name = "side";
    side.layout = Layout::SIDE;
    side.lane_count_range = {2, 2};
    side.curvature_range = {0.0, 0.0};
    side.brightness_range = {0.30, 0.40};
    side.texture_noise = 0.04;
    side.lane_contrast = 0.45;

    DistributionSpec curved = side;
    curved.name = "curved";
    curved.layout = Layout::CURVED;
    curved.curvature_range = {5.0, 12.0};
    curved.brightness_range = {0.45, 0.55};
    curved.texture_noise = 0.06;
    curved.lane_contrast = 0.20;

    DistributionSpec centered;
    centered.name = "centered";
    centered.layout = Layout::CENTERED;
    centered.lane_count_range = {1, 1};
    centered.brightness_range = {0.60, 0.70};
    centered.texture_noise = 0.08;
    centered.lane_contrast = -0.35;

    c.distributions = {side, curved, centered};

    c.base_train.epochs = 15;
    c.base_train.schedule = Schedule::COSINE;
    c.base_train.lr = 6e-4;
    c.base_train.batch_size = 1;

    c.finetune_train.epochs = 3;
    c.finetune_train.schedule = Schedule::FIXED;
    c.finetune_train.lr = 6e-4;
    c.finetune_train.batch_size = 1;

    c.branch_sweep = {BranchConfig{BranchKind::BIAS_H, 0}, BranchConfig{BranchKind::H, 0},
                      BranchConfig{BranchKind::NH, 0},
                      BranchConfig{BranchKind::PARTIAL_B_NH, 2},
                      BranchConfig{BranchKind::FULL, 0}};
    return c;
}

void ExperimentConfig::validate() const {
    if (distributions.size() < 2)
        throw ConfigError("config: need at least 2 distributions (source + targets)");
    std::set<std::string> names;
    for (const auto& d : distributions) {
        try {
            d.validate();
        } catch (const std::exception& e) {
            throw ConfigError("config: distribution '" + d.name + "': " + e.what());
        }
        if (!names.insert(d.name).second)
            throw ConfigError("config: duplicate distribution name '" + d.name + "'");
        if (!(d.canvas == detector.canvas))
            throw ConfigError("config: distribution '" + d.name +
                              "' canvas differs from the detector canvas");
    }
    if (train_per_dist < 1 || test_per_dist < 1)
        throw ConfigError("config: train/test sizes must be >= 1");
    if (detector.stages() < 3)
        throw ConfigError("config: backbone needs >= 3 stages for the pyramid");
    try {
        base_train.validate();
        finetune_train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: train spec: ") + e.what());
    }
    if (branch_sweep.empty()) throw ConfigError("config: empty branch_sweep");
    for (const auto& b : branch_sweep)
        if (b.kind == BranchKind::PARTIAL_B_NH && (b.k < 1 || b.k >= detector.stages()))
            throw ConfigError("config: partial branch k out of range: " + b.str());
    if (seeds.empty()) throw ConfigError("config: empty seeds");
    if (router.embed_dim < 2 || router.temperature <= 0.0)
        throw ConfigError("config: bad router settings");
}

namespace {

json dist_to_json(const DistributionSpec& d) {
    return json{{"name", d.name},
                {"layout", layout_name(d.layout)},
                {"lane_count", {d.lane_count_range.first, d.lane_count_range.second}},
                {"curvature", {d.curvature_range.first, d.curvature_range.second}},
                {"texture_noise", d.texture_noise},
                {"brightness", {d.brightness_range.first, d.brightness_range.second}},
                {"lane_contrast", d.lane_contrast},
                {"canvas", {d.canvas.h, d.canvas.w}}};
}

DistributionSpec dist_from_json(const json& j, const DistributionSpec& base) {
    DistributionSpec d = base;
    if (j.contains("name")) d.name = j.at("name").get<std::string>();
    if (j.contains("layout")) d.layout = layout_from_name(j.at("layout").get<std::string>());
    if (j.contains("lane_count"))
        d.lane_count_range = {j.at("lane_count").at(0).get<int>(),
                              j.at("lane_count").at(1).get<int>()};
    if (j.contains("curvature"))
        d.curvature_range = {j.at("curvature").at(0).get<double>(),
                             j.at("curvature").at(1).get<double>()};
    if (j.contains("texture_noise")) d.texture_noise = j.at("texture_noise").get<double>();
    if (j.contains("brightness"))
        d.brightness_range = {j.at("brightness").at(0).get<double>(),
                              j.at("brightness").at(1).get<double>()};
    if (j.contains("lane_contrast")) d.lane_contrast = j.at("lane_contrast").get<double>();
    if (j.contains("canvas"))
        d.canvas = Canvas{j.at("canvas").at(0).get<int>(), j.at("canvas").at(1).get<int>()};
    return d;
}

json train_to_json(const TrainSpec& t) {
    return json{{"epochs", t.epochs},
                {"lr", t.lr},
                {"schedule", t.schedule == Schedule::COSINE ? "cosine" : "fixed"},
                {"batch_size", t.batch_size}};
}

void train_from_json(const json& j, TrainSpec& t) {
    if (j.contains("epochs")) t.epochs = j.at("epochs").get<int>();
    if (j.contains("lr")) t.lr = j.at("lr").get<double>();
    if (j.contains("schedule")) {
        const std::string s = j.at("schedule").get<std::string>();
        if (s == "cosine")
            t.schedule = Schedule::COSINE;
        else if (s == "fixed")
            t.schedule = Schedule::FIXED;
        else
            throw ConfigError("config: unknown schedule '" + s + "'");
    }
    if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<int>();
}

}  // namespace

std::string ExperimentConfig::to_json() const {
    json j;
    json dists = json::array();
    for (const auto& d : distributions) dists.push_back(dist_to_json(d));
    j["distributions"] = dists;
    j["train_per_dist"] = train_per_dist;
    j["test_per_dist"] = test_per_dist;
    j["detector"] = {{"channels", detector.channels},
                     {"neck_channels", detector.neck_channels},
                     {"num_priors", detector.num_priors},
                     {"n_rows", detector.n_rows},
                     {"head_hidden", detector.head_hidden},
                     {"conf_threshold", detector.conf_threshold},
                     {"nms_iou", detector.nms_iou},
                     {"canvas", {detector.canvas.h, detector.canvas.w}},
                     {"loss_weights",
                      {detector.weights.reg, detector.weights.cls, detector.weights.seg,
                       detector.weights.lane_iou}}};
    j["base_train"] = train_to_json(base_train);
    j["finetune_train"] = train_to_json(finetune_train);
    j["router"] = {{"channels", router.channels},
                   {"proj_hidden", router.proj_hidden},
                   {"embed_dim", router.embed_dim},
                   {"temperature", router.temperature},
                   {"epochs", router.epochs},
                   {"lr", router.lr},
                   {"batch_per_class", router.batch_per_class}};
    json sweep = json::array();
    for (const auto& b : branch_sweep) sweep.push_back(b.str());
    j["branch_sweep"] = sweep;
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

uint64_t ExperimentConfig::hash() const {
    uint64_t h = 1469598103934665603ull;
    for (char c : to_json()) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }

    ExperimentConfig c = ExperimentConfig::defaults();
    try {
        if (j.contains("distributions")) {
            c.distributions.clear();
            for (const auto& dj : j.at("distributions"))
                c.distributions.push_back(dist_from_json(dj, DistributionSpec{}));
        }
        if (j.contains("train_per_dist")) c.train_per_dist = j.at("train_per_dist").get<int>();
        if (j.contains("test_per_dist")) c.test_per_dist = j.at("test_per_dist").get<int>();
        if (j.contains("detector")) {
            const json& d = j.at("detector");
            if (d.contains("channels"))
                c.detector.channels = d.at("channels").get<std::vector<int>>();
            if (d.contains("neck_channels"))
                c.detector.neck_channels = d.at("neck_channels").get<int>();
            if (d.contains("num_priors")) c.detector.num_priors = d.at("num_priors").get<int>();
            if (d.contains("n_rows")) c.detector.n_rows = d.at("n_rows").get<int>();
            if (d.contains("head_hidden"))
                c.detector.head_hidden = d.at("head_hidden").get<int>();
            if (d.contains("conf_threshold"))
                c.detector.conf_threshold = d.at("conf_threshold").get<double>();
            if (d.contains("nms_iou")) c.detector.nms_iou = d.at("nms_iou").get<double>();
            if (d.contains("canvas"))
                c.detector.canvas =
                    Canvas{d.at("canvas").at(0).get<int>(), d.at("canvas").at(1).get<int>()};
            if (d.contains("loss_weights")) {
                const json& w = d.at("loss_weights");
                c.detector.weights = LossWeights{w.at(0).get<double>(), w.at(1).get<double>(),
                                                 w.at(2).get<double>(), w.at(3).get<double>()};
            }
        }
        if (j.contains("base_train")) train_from_json(j.at("base_train"), c.base_train);
        if (j.contains("finetune_train"))
            train_from_json(j.at("finetune_train"), c.finetune_train);
        if (j.contains("router")) {
            const json& r = j.at("router");
            if (r.contains("channels"))
                c.router.channels = r.at("channels").get<std::vector<int>>();
            if (r.contains("proj_hidden")) c.router.proj_hidden = r.at("proj_hidden").get<int>();
            if (r.contains("embed_dim")) c.router.embed_dim = r.at("embed_dim").get<int>();
            if (r.contains("temperature"))
                c.router.temperature = r.at("temperature").get<double>();
            if (r.contains("epochs")) c.router.epochs = r.at("epochs").get<int>();
            if (r.contains("lr")) c.router.lr = r.at("lr").get<double>();
            if (r.contains("batch_per_class"))
                c.router.batch_per_class = r.at("batch_per_class").get<int>();
        }
        if (j.contains("branch_sweep")) {
            c.branch_sweep.clear();
            for (const auto& s : j.at("branch_sweep"))
                c.branch_sweep.push_back(BranchConfig::parse(s.get<std::string>()));
        }
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
        if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config error in " + path.string() + ": " + e.what());
    }

    // distribution canvases follow the detector canvas unless set explicitly
    for (auto& d : c.distributions)
        if (d.canvas == Canvas{}) d.canvas = c.detector.canvas;

    c.validate();
    return c;
}

void save_config(const fs::path& path, const ExperimentConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write config: " + path.string());
    f << cfg.to_json() << '\n';
}

void write_run_manifest(const fs::path& dir, const ExperimentConfig& cfg, uint64_t seed) {
    fs::create_directories(dir);
    json j{{"config_hash", cfg.hash()}, {"seed", seed}, {"version", kToolVersion}};
    std::ofstream f(dir / "run.json");
    if (!f) throw ConfigError("cannot write run manifest in " + dir.string());
    f << j.dump(2) << '\n';
}

}  // namespace laneshift
