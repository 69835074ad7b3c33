#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "laneshift/checkpoint.hpp"
#include "laneshift/config.hpp"
#include "laneshift/eval.hpp"
#include "laneshift/image_io.hpp"
#include "laneshift/kernels.hpp"
#include "laneshift/runtime.hpp"

namespace fs = std::filesystem;
using namespace laneshift;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 0;
    bool force = false;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", a.out_dir, "run directory (default: config out_dir)");
    cmd->add_option("--seed", a.seed, "seed override")->each([&a](const std::string&) {
        a.seed_set = true;
    });
    cmd->add_option("--jobs", a.jobs, "worker threads (0 = default)");
    cmd->add_flag("--force", a.force, "overwrite existing outputs / ignore config drift");
    cmd->add_flag("--deterministic", a.deterministic, "single-threaded kernels");
}

struct Ctx {
    ExperimentConfig cfg;
    fs::path out;
    uint64_t seed = 0;
    bool force = false;
};

Ctx make_ctx(const CommonArgs& a) {
    Ctx c;
    c.cfg = load_config(a.config_path);
    c.out = a.out_dir.empty() ? fs::path(c.cfg.out_dir) : fs::path(a.out_dir);
    c.seed = a.seed_set ? a.seed : c.cfg.seeds.front();
    c.force = a.force;
    if (a.deterministic) set_parallel_enabled(false);
    if (a.jobs > 0) set_num_threads(a.jobs);
    return c;
}

/// Warn or fail when a run directory was produced under a different config.
void check_manifest(const Ctx& c) {
    const fs::path mf = c.out / "run.json";
    if (!fs::exists(mf)) return;
    std::ifstream f(mf);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string want = "\"config_hash\": " + std::to_string(c.cfg.hash());
    if (text.find(want) != std::string::npos) return;
    if (!c.force)
        throw ConfigError("config hash mismatch with " + mf.string() +
                          " (rerun earlier stages or pass --force)");
    std::cerr << "warning: config hash mismatch with " << mf.string()
              << ", continuing because of --force\n";
}

fs::path data_dir(const Ctx& c, const std::string& dist, const std::string& split) {
    return c.out / "data" / dist / split;
}

uint64_t dataset_seed(uint64_t seed, size_t dist_idx, bool test) {
    return (seed << 32) + static_cast<uint64_t>(dist_idx) * (1ull << 22) +
           (test ? (1ull << 21) : 0ull);
}

std::vector<SceneSample> load_split(const Ctx& c, size_t dist_idx, const std::string& split) {
    const auto& d = c.cfg.distributions[dist_idx];
    const fs::path dir = data_dir(c, d.name, split);
    if (!fs::exists(dir / "manifest.txt"))
        throw ArtifactError("missing artifact: " + (dir / "manifest.txt").string() +
                            " (run gen-data first)");
    return read_dataset(dir.string(), static_cast<int>(dist_idx) + 1);
}

fs::path source_ckpt(const Ctx& c) { return c.out / "source.ckpt"; }
fs::path router_ckpt(const Ctx& c) { return c.out / "router.ckpt"; }
fs::path branch_ckpt(const Ctx& c, const std::string& dist) {
    return c.out / "branches" / (dist + ".ckpt");
}

ModelParams load_source(const Ctx& c) {
    if (!fs::exists(source_ckpt(c)))
        throw ArtifactError("missing artifact: " + source_ckpt(c).string() +
                            " (run train-base first)");
    return load_detector(source_ckpt(c));
}

// ---- commands ----

int cmd_gen_data(const Ctx& c) {
    check_manifest(c);
    for (size_t i = 0; i < c.cfg.distributions.size(); ++i) {
        const auto& d = c.cfg.distributions[i];
        for (const std::string split : {"train", "test"}) {
            const fs::path dir = data_dir(c, d.name, split);
            if (fs::exists(dir) && !fs::is_empty(dir)) {
                if (!c.force)
                    throw ConfigError("refusing to overwrite non-empty " + dir.string() +
                                      " (pass --force)");
                fs::remove_all(dir);
            }
            const bool test = split == std::string("test");
            const int n = test ? c.cfg.test_per_dist : c.cfg.train_per_dist;
            auto samples = generate_dataset(d, n, dataset_seed(c.seed, i, test));
            write_dataset(samples, dir.string(), d.name);
            std::printf("wrote %d %s samples to %s\n", n, d.name.c_str(),
                        dir.string().c_str());
        }
    }
    write_run_manifest(c.out, c.cfg, c.seed);
    return 0;
}

int cmd_train_base(const Ctx& c) {
    check_manifest(c);
    auto train = load_split(c, 0, "train");
    TrainSpec spec = c.cfg.base_train;
    spec.seed = c.seed;
    spec.loss_weights = c.cfg.detector.weights;
    TrainLog log;
    ModelParams model = train_base(train, c.cfg.detector, spec, c.seed, &log);
    save_detector(source_ckpt(c), model);
    std::printf("trained base model on '%s' (%d epochs, final loss %.4f) -> %s\n",
                c.cfg.distributions[0].name.c_str(), spec.epochs, log.epoch_loss.back(),
                source_ckpt(c).string().c_str());
    write_run_manifest(c.out, c.cfg, c.seed);
    return 0;
}

int cmd_finetune(const Ctx& c, const std::string& branch_str) {
    check_manifest(c);
    const BranchConfig bc = BranchConfig::parse(branch_str);
    auto source = std::make_shared<const ModelParams>(load_source(c));
    fs::create_directories(c.out / "branches");
    TrainSpec spec = c.cfg.finetune_train;
    spec.seed = c.seed;
    spec.loss_weights = c.cfg.detector.weights;
    for (size_t i = 1; i < c.cfg.distributions.size(); ++i) {
        const auto& d = c.cfg.distributions[i];
        auto train = load_split(c, i, "train");
        Branch b = clone_branch(source, bc, DistributionLabel{static_cast<int>(i) + 1});
        TrainLog log;
        finetune_branch(b, train, spec, &log);
        save_branch(branch_ckpt(c, d.name), b);
        std::printf("fine-tuned %s for '%s' (%lld trainable params, final loss %.4f)\n",
                    bc.str().c_str(), d.name.c_str(),
                    static_cast<long long>(b.owned_count()), log.epoch_loss.back());
    }
    write_run_manifest(c.out, c.cfg, c.seed);
    return 0;
}

std::vector<std::vector<Embedding>> embed_grouped(
    const std::vector<std::vector<SceneSample>>& per_class, const RouterParams& rp) {
    std::vector<std::vector<Embedding>> grouped;
    for (const auto& cls : per_class) {
        std::vector<Embedding> g;
        for (const auto& s : cls) g.push_back(embed(s.image, rp));
        grouped.push_back(std::move(g));
    }
    return grouped;
}

int cmd_train_router(const Ctx& c) {
    check_manifest(c);
    std::vector<std::vector<SceneSample>> train, test;
    std::vector<std::string> names;
    for (size_t i = 0; i < c.cfg.distributions.size(); ++i) {
        train.push_back(load_split(c, i, "train"));
        test.push_back(load_split(c, i, "test"));
        names.push_back(c.cfg.distributions[i].name);
    }
    RouterConfig rc = c.cfg.router;
    rc.canvas = c.cfg.detector.canvas;
    rc.seed = c.seed;

    RouterParams untrained = RouterParams::init(rc, rc.seed);
    auto before = export_embeddings(embed_grouped(train, untrained));
    write_embeddings_csv((c.out / "embeddings_before.csv").string(), before);

    RouterTrainLog log;
    RouterParams rp = train_router(train, rc, &log);
    auto grouped = embed_grouped(train, rp);
    auto after = export_embeddings(grouped);
    write_embeddings_csv((c.out / "embeddings_after.csv").string(), after);
    CentroidBank bank = compute_centroids(grouped, names);
    save_router(router_ckpt(c), rp, bank);

    RouterAccuracy acc = router_accuracy(test, rp, bank);
    write_confusion_csv((c.out / "confusion.csv").string(), acc, names);
    std::printf("router: %.2f%% overall accuracy, separation %.3f -> %.3f\n",
                100.0 * acc.overall, before.separation, after.separation);
    write_run_manifest(c.out, c.cfg, c.seed);
    return 0;
}

int cmd_eval(const Ctx& c) {
    check_manifest(c);
    auto source = std::make_shared<const ModelParams>(load_source(c));
    const std::string src_name = c.cfg.distributions[0].name;
    const int64_t full_params = source->total_count();

    std::vector<std::vector<SceneSample>> tests;
    for (size_t i = 0; i < c.cfg.distributions.size(); ++i)
        tests.push_back(load_split(c, i, "test"));

    std::vector<ReportRow> rows;
    const MetricsRecord base_src = f1_eval(*source, tests[0]);
    rows.push_back({"base@" + src_name, 100.0 * base_src.f1, 100.0 * base_src.precision,
                    100.0 * base_src.recall, full_params, 0.0, 0.0});
    std::vector<MetricsRecord> zero_shot(c.cfg.distributions.size());
    for (size_t i = 1; i < c.cfg.distributions.size(); ++i) {
        zero_shot[i] = f1_eval(*source, tests[i]);
        rows.push_back({"zero-shot@" + c.cfg.distributions[i].name, 100.0 * zero_shot[i].f1,
                        100.0 * zero_shot[i].precision, 100.0 * zero_shot[i].recall,
                        full_params, 0.0, 0.0});
    }

    for (size_t i = 1; i < c.cfg.distributions.size(); ++i) {
        const auto& d = c.cfg.distributions[i];
        if (!fs::exists(branch_ckpt(c, d.name))) continue;
        Branch b = load_branch(branch_ckpt(c, d.name), source);
        ModelParams ft = b.materialize();
        const MetricsRecord on_src = f1_eval(ft, tests[0]);
        const MetricsRecord on_tgt = f1_eval(ft, tests[i]);
        const DropGain dg = drop_gain(100.0 * base_src.f1, 100.0 * on_src.f1,
                                      100.0 * zero_shot[i].f1, 100.0 * on_tgt.f1);
        const std::string cfg_str = b.config.str();
        rows.push_back({cfg_str + "@" + src_name, 100.0 * on_src.f1,
                        100.0 * on_src.precision, 100.0 * on_src.recall, b.owned_count(),
                        dg.drop, 0.0});
        rows.push_back({cfg_str + "@" + d.name, 100.0 * on_tgt.f1, 100.0 * on_tgt.precision,
                        100.0 * on_tgt.recall, b.owned_count(), 0.0, dg.gain});
    }
    write_metrics_csv((c.out / "metrics.csv").string(), rows);
    for (const auto& r : rows)
        std::printf("%-24s F1 %6.2f  (drop %+.2f, gain %+.2f)\n", r.config.c_str(), r.f1,
                    r.drop, r.gain);
    write_run_manifest(c.out, c.cfg, c.seed);
    return 0;
}

int cmd_route(const Ctx& c, std::string images_dir) {
    check_manifest(c);
    auto source = std::make_shared<const ModelParams>(load_source(c));
    if (!fs::exists(router_ckpt(c)))
        throw ArtifactError("missing artifact: " + router_ckpt(c).string() +
                            " (run train-router first)");
    auto [rp, bank] = load_router(router_ckpt(c));
    RoutedModel model(source, DistributionLabel{1}, std::move(rp), std::move(bank));
    for (size_t i = 1; i < c.cfg.distributions.size(); ++i) {
        const fs::path p = branch_ckpt(c, c.cfg.distributions[i].name);
        if (!fs::exists(p))
            throw ArtifactError("missing artifact: " + p.string() + " (run finetune first)");
        model.register_branch(load_branch(p, source));
    }
    save_bundle(c.out, model);

    if (images_dir.empty())
        images_dir = data_dir(c, c.cfg.distributions[0].name, "test").string() + "/images";
    if (!fs::exists(images_dir))
        throw ArtifactError("missing artifact: image directory " + images_dir);

    const fs::path pred_dir = c.out / "predictions";
    fs::create_directories(pred_dir);
    std::vector<fs::path> pngs;
    for (const auto& e : fs::directory_iterator(images_dir))
        if (e.path().extension() == ".png") pngs.push_back(e.path());
    std::sort(pngs.begin(), pngs.end());

    int count = 0;
    for (const auto& png : pngs) {
        int w = 0, h = 0;
        std::vector<uint8_t> px = read_png_gray8(png.string(), w, h);
        Tensor img({1, h, w});
        for (size_t p = 0; p < px.size(); ++p) img.v[p] = px[p] / 255.0;
        auto res = model.route_infer(img);
        std::ofstream out(pred_dir / (png.stem().string() + ".lines.txt"));
        for (const auto& lane : res.lanes) {
            for (size_t j = 0; j < lane.polyline.points.size(); ++j) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%s%.2f %.2f", j ? " " : "",
                              lane.polyline.points[j].first, lane.polyline.points[j].second);
                out << buf;
            }
            out << "\n";
        }
        ++count;
    }
    std::printf("routed %d images from %s -> %s\n", count, images_dir.c_str(),
                pred_dir.string().c_str());
    return 0;
}

int cmd_ablate(const Ctx& c, const std::string& branch_str, int epochs) {
    check_manifest(c);
    auto source = std::make_shared<const ModelParams>(load_source(c));
    const size_t tgt = 1;  // first shifted distribution
    auto train = load_split(c, tgt, "train");
    auto target_test = load_split(c, tgt, "test");
    auto source_test = load_split(c, 0, "test");
    TrainSpec spec = c.cfg.finetune_train;
    spec.epochs = epochs;
    spec.seed = c.seed;
    spec.loss_weights = c.cfg.detector.weights;
    EpochCurve curve = epoch_ablation(source, BranchConfig::parse(branch_str), train,
                                      target_test, source_test, spec);
    write_epoch_curve_csv((c.out / "epoch_curve.csv").string(), curve);
    for (size_t i = 0; i < curve.epoch.size(); ++i)
        std::printf("epoch %d: target F1 %.2f, source F1 %.2f\n", curve.epoch[i],
                    100.0 * curve.target_f1[i], 100.0 * curve.source_f1[i]);
    write_run_manifest(c.out, c.cfg, c.seed);
    return 0;
}

// ---- report ----

struct CsvRow {
    std::string model, dataset;
    double f1 = 0.0;
    int64_t params = 0;
};

std::vector<CsvRow> read_metrics(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ArtifactError("missing artifact: " + path.string() + " (run eval first)");
    std::vector<CsvRow> rows;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(is, cell, ',')) cells.push_back(cell);
        if (cells.size() < 5)
            throw ArtifactError("corrupt metrics.csv line: " + line);
        CsvRow r;
        const auto at = cells[0].find('@');
        r.model = at == std::string::npos ? cells[0] : cells[0].substr(0, at);
        r.dataset = at == std::string::npos ? "" : cells[0].substr(at + 1);
        r.f1 = std::stod(cells[1]);
        r.params = std::stoll(cells[4]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string fmt_signed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.1f", v);
    return buf;
}

int cmd_report(const Ctx& c) {
    auto rows = read_metrics(c.out / "metrics.csv");
    auto find = [&rows](const std::string& model,
                        const std::string& dataset) -> const CsvRow* {
        for (const auto& r : rows)
            if (r.model == model && r.dataset == dataset) return &r;
        return nullptr;
    };
    std::string src;
    for (const auto& r : rows)
        if (r.model == "base") src = r.dataset;
    if (src.empty()) throw ArtifactError("metrics.csv has no base@<source> row");
    const CsvRow* base = find("base", src);

    std::vector<std::string> targets, configs;
    for (const auto& r : rows) {
        if (r.model == "zero-shot" &&
            std::find(targets.begin(), targets.end(), r.dataset) == targets.end())
            targets.push_back(r.dataset);
        if (r.model != "base" && r.model != "zero-shot" &&
            std::find(configs.begin(), configs.end(), r.model) == configs.end())
            configs.push_back(r.model);
    }

    std::ofstream md(c.out / "report.md");
    if (!md) throw ArtifactError("cannot write report.md");
    md << "# Fine-tuning report\n\n";
    md << "Source distribution: `" << src << "`. Values are F1 on the percent scale;\n"
       << "parentheses show drop from the base model (source) and gain over the\n"
       << "zero-shot baseline (targets).\n\n";

    md << "## Fine-tuning configurations\n\n";
    md << "| FT Config | F1 " << src << " (drop) |";
    for (const auto& t : targets) md << " F1 " << t << " (gain) |";
    md << " #Params |\n|---|---|";
    for (size_t i = 0; i < targets.size(); ++i) md << "---|";
    md << "\n";
    md << "| base | " << fmt1(base->f1) << " |";
    for (const auto& t : targets) {
        const CsvRow* z = find("zero-shot", t);
        md << ' ' << (z ? fmt1(z->f1) : "-") << " (zero-shot) |";
    }
    md << ' ' << base->params << " |\n";
    for (const auto& cfg : configs) {
        md << "| " << cfg << " | ";
        const CsvRow* on_src = find(cfg, src);
        if (on_src)
            md << fmt1(on_src->f1) << " (" << fmt_signed(on_src->f1 - base->f1) << ")";
        else
            md << "-";
        md << " |";
        int64_t params = 0;
        for (const auto& t : targets) {
            const CsvRow* on_tgt = find(cfg, t);
            const CsvRow* z = find("zero-shot", t);
            if (on_tgt && z) {
                md << ' ' << fmt1(on_tgt->f1) << " (" << fmt_signed(on_tgt->f1 - z->f1)
                   << ") |";
                params = on_tgt->params;
            } else {
                md << " - |";
            }
        }
        md << ' ' << params << " |\n";
    }

    md << "\n## Parameter efficiency\n\n";
    md << "| Branch Point | Params | Relative |\n|---|---|---|\n";
    const int64_t full = base->params;
    md << "| full model | " << full << " | 100% |\n";
    for (const auto& cfg : configs) {
        int64_t params = 0;
        for (const auto& t : targets)
            if (const CsvRow* r = find(cfg, t)) params = r->params;
        if (params > 0)
            md << "| " << cfg << " | " << params << " | " << relative_params(params, full)
               << "% |\n";
    }
    std::printf("wrote %s\n", (c.out / "report.md").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"modular fine-tuning, contrastive routing and evaluation for "
                 "anchor-based lane detection"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string branch_str = "N+H";
    std::string images_dir;
    int ablate_epochs = 5;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic distribution datasets");
    add_common(gen, args);
    auto* tb = app.add_subcommand("train-base", "train the source detector");
    add_common(tb, args);
    auto* ft = app.add_subcommand("finetune", "fine-tune a branch per target distribution");
    add_common(ft, args);
    ft->add_option("--branch", branch_str, "branch configuration (default N+H)");
    auto* tr = app.add_subcommand("train-router", "train the contrastive router");
    add_common(tr, args);
    auto* ev = app.add_subcommand("eval", "evaluate base + branches, write metrics.csv");
    add_common(ev, args);
    auto* rt = app.add_subcommand("route", "assemble the bundle and run routed inference");
    add_common(rt, args);
    rt->add_option("images", images_dir, "directory of PNG images (default: source test)");
    auto* ab = app.add_subcommand("ablate", "epoch-ablation curve on the first target");
    add_common(ab, args);
    ab->add_option("--branch", branch_str, "branch configuration (default N+H)");
    ab->add_option("--epochs", ablate_epochs, "fine-tuning epochs (default 5)");
    auto* rp = app.add_subcommand("report", "render markdown tables from metrics.csv");
    add_common(rp, args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        Ctx c = make_ctx(args);
        fs::create_directories(c.out);
        if (gen->parsed()) return cmd_gen_data(c);
        if (tb->parsed()) return cmd_train_base(c);
        if (ft->parsed()) return cmd_finetune(c, branch_str);
        if (tr->parsed()) return cmd_train_router(c);
        if (ev->parsed()) return cmd_eval(c);
        if (rt->parsed()) return cmd_route(c, images_dir);
        if (ab->parsed()) return cmd_ablate(c, branch_str, ablate_epochs);
        if (rp->parsed()) return cmd_report(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 3;
    } catch (const DatasetError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
