#include "laneshift/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

namespace laneshift {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint32_t kVersion = 1;

struct Writer {
    std::ofstream f;
    explicit Writer(const fs::path& p) : f(p, std::ios::binary) {
        if (!f) throw ArtifactError("cannot open for writing: " + p.string());
    }
    void raw(const void* p, size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void i32(int32_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void u8(uint8_t v) { raw(&v, sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void doubles(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    void close(const fs::path& p) {
        f.flush();
        if (!f) throw ArtifactError("write failed: " + p.string());
    }
};

struct Reader {
    std::ifstream f;
    fs::path path;
    explicit Reader(const fs::path& p) : f(p, std::ios::binary), path(p) {
        if (!f) throw ArtifactError("missing artifact: " + p.string());
    }
    void raw(void* p, size_t n) {
        f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (f.gcount() != static_cast<std::streamsize>(n))
            throw ArtifactError("truncated checkpoint: " + path.string());
    }
    uint32_t u32() { uint32_t v; raw(&v, sizeof v); return v; }
    uint64_t u64() { uint64_t v; raw(&v, sizeof v); return v; }
    int32_t i32() { int32_t v; raw(&v, sizeof v); return v; }
    double f64() { double v; raw(&v, sizeof v); return v; }
    uint8_t u8() { uint8_t v; raw(&v, sizeof v); return v; }
    std::string str() {
        const uint64_t n = u64();
        if (n > (1ull << 20)) throw ArtifactError("corrupt checkpoint: " + path.string());
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::vector<double> doubles() {
        const uint64_t n = u64();
        if (n > (1ull << 30)) throw ArtifactError("corrupt checkpoint: " + path.string());
        std::vector<double> v(n);
        raw(v.data(), n * sizeof(double));
        return v;
    }
};

void expect_magic(Reader& r, const std::string& magic) {
    std::string got(magic.size(), '\0');
    r.raw(got.data(), got.size());
    if (got != magic) throw ArtifactError("corrupt checkpoint (bad magic): " + r.path.string());
    const uint32_t v = r.u32();
    if (v != kVersion)
        throw ArtifactError("unsupported checkpoint version " + std::to_string(v) + ": " +
                            r.path.string());
}

void write_tensor(Writer& w, const Tensor& t) {
    w.u32(static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) w.i32(d);
    w.doubles(t.v);
}

Tensor read_tensor(Reader& r) {
    const uint32_t rank = r.u32();
    if (rank > 8) throw ArtifactError("corrupt checkpoint (rank): " + r.path.string());
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (auto& d : shape) {
        d = r.i32();
        if (d <= 0) throw ArtifactError("corrupt checkpoint (dim): " + r.path.string());
        n *= d;
    }
    Tensor t(shape);
    t.v = r.doubles();
    if (static_cast<int64_t>(t.v.size()) != n)
        throw ArtifactError("corrupt checkpoint (size): " + r.path.string());
    return t;
}

void write_param(Writer& w, const ParamTensor& p) {
    w.str(p.name);
    w.u8(static_cast<uint8_t>(p.tag.module));
    w.i32(p.tag.stage);
    w.u8(p.tag.is_bias ? 1 : 0);
    write_tensor(w, p.t);
}

ParamTensor read_param(Reader& r) {
    ParamTensor p;
    p.name = r.str();
    p.tag.module = static_cast<char>(r.u8());
    p.tag.stage = r.i32();
    p.tag.is_bias = r.u8() != 0;
    p.t = read_tensor(r);
    return p;
}

void write_detector_config(Writer& w, const DetectorConfig& c) {
    w.i32(c.canvas.h);
    w.i32(c.canvas.w);
    w.u32(static_cast<uint32_t>(c.channels.size()));
    for (int ch : c.channels) w.i32(ch);
    w.i32(c.neck_channels);
    w.i32(c.num_priors);
    w.i32(c.n_rows);
    w.i32(c.head_hidden);
    w.f64(c.conf_threshold);
    w.f64(c.nms_iou);
    w.f64(c.eval_lane_width);
    w.f64(c.train_lane_width);
    w.f64(c.assign_lane_width);
    w.f64(c.assign_min_iou);
    w.f64(c.weights.reg);
    w.f64(c.weights.cls);
    w.f64(c.weights.seg);
    w.f64(c.weights.lane_iou);
}

DetectorConfig read_detector_config(Reader& r) {
    DetectorConfig c;
    c.canvas.h = r.i32();
    c.canvas.w = r.i32();
    c.channels.resize(r.u32());
    for (auto& ch : c.channels) ch = r.i32();
    c.neck_channels = r.i32();
    c.num_priors = r.i32();
    c.n_rows = r.i32();
    c.head_hidden = r.i32();
    c.conf_threshold = r.f64();
    c.nms_iou = r.f64();
    c.eval_lane_width = r.f64();
    c.train_lane_width = r.f64();
    c.assign_lane_width = r.f64();
    c.assign_min_iou = r.f64();
    c.weights.reg = r.f64();
    c.weights.cls = r.f64();
    c.weights.seg = r.f64();
    c.weights.lane_iou = r.f64();
    return c;
}

}  // namespace

void save_detector(const fs::path& path, const ModelParams& model) {
    Writer w(path);
    w.raw("LSDET\n", 6);
    w.u32(kVersion);
    write_detector_config(w, model.cfg);
    w.u64(model.params.size());
    for (const auto& p : model.params) write_param(w, *p);
    w.close(path);
}

ModelParams load_detector(const fs::path& path) {
    Reader r(path);
    expect_magic(r, "LSDET\n");
    ModelParams m;
    m.cfg = read_detector_config(r);
    const uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
        ParamTensor p = read_param(r);
        m.add(p.name, p.tag, std::move(p.t));
    }
    return m;
}

void save_branch(const fs::path& path, const Branch& branch) {
    Writer w(path);
    w.raw("LSBRN\n", 6);
    w.u32(kVersion);
    w.i32(branch.id.k);
    w.str(branch.config.str());
    w.u64(branch.source_hash);
    // stable order: source model order is not available here, so sort by name
    std::vector<const ParamTensor*> owned;
    for (const auto& [_, p] : branch.owned) owned.push_back(p.get());
    std::sort(owned.begin(), owned.end(),
              [](const ParamTensor* a, const ParamTensor* b) { return a->name < b->name; });
    w.u64(owned.size());
    for (const ParamTensor* p : owned) write_param(w, *p);
    w.close(path);
}

Branch load_branch(const fs::path& path, std::shared_ptr<const ModelParams> source) {
    Reader r(path);
    expect_magic(r, "LSBRN\n");
    Branch b;
    b.id.k = r.i32();
    b.config = BranchConfig::parse(r.str());
    b.source_hash = r.u64();
    b.source = source;
    if (source && source->hash() != b.source_hash)
        throw ArtifactError("prefix divergence: branch " + path.string() +
                            " was cut from a different source checkpoint");
    const uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
        ParamTensor p = read_param(r);
        if (source && !source->has(p.name))
            throw ArtifactError("corrupt branch checkpoint (unknown param " + p.name +
                                "): " + path.string());
        // the RHS of operator= is evaluated first, which would move p.name
        // out before it is used as the key — take a copy of the name first
        std::string name = p.name;
        b.owned[name] = std::make_shared<ParamTensor>(std::move(p));
    }
    return b;
}

void save_router(const fs::path& path, const RouterParams& rp,
                 const CentroidBank& centroids) {
    Writer w(path);
    w.raw("LSRTR\n", 6);
    w.u32(kVersion);
    const RouterConfig& c = rp.cfg;
    w.i32(c.canvas.h);
    w.i32(c.canvas.w);
    w.u32(static_cast<uint32_t>(c.channels.size()));
    for (int ch : c.channels) w.i32(ch);
    w.i32(c.proj_hidden);
    w.i32(c.embed_dim);
    w.f64(c.temperature);
    w.i32(c.epochs);
    w.f64(c.lr);
    w.i32(c.batch_per_class);
    w.u64(c.seed);
    w.u64(rp.params.size());
    for (const auto& p : rp.params) write_param(w, *p);
    w.u64(centroids.mu.size());
    for (size_t k = 0; k < centroids.mu.size(); ++k) {
        w.doubles(centroids.mu[k]);
        w.str(centroids.class_names[k]);
    }
    w.close(path);
}

std::pair<RouterParams, CentroidBank> load_router(const fs::path& path) {
    Reader r(path);
    expect_magic(r, "LSRTR\n");
    RouterParams rp;
    RouterConfig c;
    c.canvas.h = r.i32();
    c.canvas.w = r.i32();
    c.channels.resize(r.u32());
    for (auto& ch : c.channels) ch = r.i32();
    c.proj_hidden = r.i32();
    c.embed_dim = r.i32();
    c.temperature = r.f64();
    c.epochs = r.i32();
    c.lr = r.f64();
    c.batch_per_class = r.i32();
    c.seed = r.u64();
    rp.cfg = c;
    const uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
        ParamTensor p = read_param(r);
        rp.add(p.name, std::move(p.t));
    }
    CentroidBank bank;
    const uint64_t K = r.u64();
    for (uint64_t k = 0; k < K; ++k) {
        bank.mu.push_back(r.doubles());
        bank.class_names.push_back(r.str());
    }
    return {std::move(rp), std::move(bank)};
}

void save_bundle(const fs::path& dir, const RoutedModel& model) {
    fs::create_directories(dir / "branches");
    save_detector(dir / "source.ckpt", model.source());
    save_router(dir / "router.ckpt", model.router(), model.centroids());

    json manifest;
    manifest["format_version"] = kVersion;
    manifest["source_label"] = model.source_label().k;
    manifest["source_hash"] = model.source().hash();
    manifest["class_names"] = model.centroids().class_names;
    json branches = json::array();
    for (const auto& [label, branch] : model.branches()) {
        const std::string rel = "branches/" + std::to_string(label) + ".ckpt";
        save_branch(dir / rel, branch);
        branches.push_back({{"label", label},
                            {"config", branch.config.str()},
                            {"path", rel},
                            {"source_hash", branch.source_hash}});
    }
    manifest["branches"] = branches;
    std::ofstream mf(dir / "bundle.json");
    if (!mf) throw ArtifactError("cannot write bundle manifest: " + (dir / "bundle.json").string());
    mf << manifest.dump(2) << '\n';
}

RoutedModel load_bundle(const fs::path& dir) {
    std::ifstream mf(dir / "bundle.json");
    if (!mf) throw ArtifactError("missing artifact: " + (dir / "bundle.json").string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw ArtifactError("corrupt bundle manifest: " + std::string(e.what()));
    }
    auto source =
        std::make_shared<const ModelParams>(load_detector(dir / "source.ckpt"));
    if (manifest.at("source_hash").get<uint64_t>() != source->hash())
        throw ArtifactError("bundle manifest hash does not match source.ckpt");
    auto [router, centroids] = load_router(dir / "router.ckpt");
    RoutedModel model(source, DistributionLabel{manifest.at("source_label").get<int>()},
                      std::move(router), std::move(centroids));
    for (const auto& entry : manifest.at("branches"))
        model.register_branch(
            load_branch(dir / entry.at("path").get<std::string>(), source));
    return model;
}

}  // namespace laneshift
