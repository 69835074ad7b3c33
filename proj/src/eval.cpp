#include "laneshift/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

namespace laneshift {

std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
    const int nr = static_cast<int>(cost.size());
    if (nr == 0) return {};
    const int nc = static_cast<int>(cost[0].size());
    for (const auto& row : cost)
        if (static_cast<int>(row.size()) != nc)
            throw std::invalid_argument("hungarian: ragged cost matrix");
    if (nc == 0) return std::vector<int>(static_cast<size_t>(nr), -1);

    // pad to square with a uniform large cost; a constant pad cannot change
    // which real cells an optimal assignment prefers
    const int N = std::max(nr, nc);
    const double kPad = 1e6;
    const double kInf = std::numeric_limits<double>::infinity();
    auto a = [&](int i, int j) -> double {
        return (i < nr && j < nc) ? cost[static_cast<size_t>(i)][static_cast<size_t>(j)]
                                  : kPad;
    };

    std::vector<double> u(static_cast<size_t>(N) + 1, 0.0), v(static_cast<size_t>(N) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(N) + 1, 0), way(static_cast<size_t>(N) + 1, 0);
    for (int i = 1; i <= N; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(N) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(N) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = p[static_cast<size_t>(j0)];
            double delta = kInf;
            int j1 = -1;
            for (int j = 1; j <= N; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = a(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                                   v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= N; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<int> assign(static_cast<size_t>(nr), -1);
    for (int j = 1; j <= N; ++j) {
        const int i = p[static_cast<size_t>(j)];
        if (i >= 1 && i <= nr && j <= nc) assign[static_cast<size_t>(i) - 1] = j - 1;
    }
    return assign;
}

std::vector<std::vector<double>> iou_matrix(const std::vector<ScoredLane>& preds,
                                            const std::vector<LanePolyline>& gts,
                                            double width_px, const Canvas& canvas) {
    std::vector<LaneMask> pm, gm;
    for (const auto& p : preds) pm.push_back(rasterize(p.polyline, width_px, canvas));
    for (const auto& g : gts) gm.push_back(rasterize(g, width_px, canvas));
    std::vector<std::vector<double>> m(pm.size(), std::vector<double>(gm.size(), 0.0));
    for (size_t i = 0; i < pm.size(); ++i)
        for (size_t j = 0; j < gm.size(); ++j) m[i][j] = lane_iou(pm[i], gm[j]);
    return m;
}

MatchResult match_lanes(const std::vector<std::vector<double>>& iou, double t_iou) {
    const size_t np = iou.size();
    const size_t ng = np ? iou[0].size() : 0;
    std::vector<std::vector<double>> cost(np, std::vector<double>(ng, 0.0));
    for (size_t i = 0; i < np; ++i)
        for (size_t j = 0; j < ng; ++j) cost[i][j] = 1.0 - iou[i][j];

    MatchResult r;
    std::vector<int> assign = hungarian(cost);
    for (size_t i = 0; i < np; ++i) {
        const int j = assign[i];
        if (j >= 0 && iou[i][static_cast<size_t>(j)] >= t_iou)
            r.pairs.push_back({static_cast<int>(i), j, iou[i][static_cast<size_t>(j)]});
    }
    r.tp = static_cast<int64_t>(r.pairs.size());
    r.fp = static_cast<int64_t>(np) - r.tp;
    r.fn = static_cast<int64_t>(ng) - r.tp;
    return r;
}

MatchResult match_lanes(const std::vector<LaneMask>& preds,
                        const std::vector<LaneMask>& gts, double t_iou) {
    if (preds.empty() || gts.empty()) {
        // an empty IoU matrix loses the counts, so handle the degenerate
        // cases explicitly: everything unmatched
        MatchResult r;
        r.tp = 0;
        r.fp = static_cast<int64_t>(preds.size());
        r.fn = static_cast<int64_t>(gts.size());
        return r;
    }
    std::vector<std::vector<double>> iou(preds.size(), std::vector<double>(gts.size(), 0.0));
    for (size_t i = 0; i < preds.size(); ++i)
        for (size_t j = 0; j < gts.size(); ++j) iou[i][j] = lane_iou(preds[i], gts[j]);
    return match_lanes(iou, t_iou);
}

MetricsRecord metrics_from_counts(int64_t tp, int64_t fp, int64_t fn) {
    MetricsRecord m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

MetricsRecord f1_eval(const ModelParams& model, const std::vector<SceneSample>& test,
                      double t_iou) {
    if (test.empty()) throw std::invalid_argument("f1_eval: empty test set");
    VarBank bank = make_var_bank(model);
    const DetectorConfig& cfg = model.cfg;
    int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& s : test) {
        std::vector<ScoredLane> dets = detect(s.image, cfg, bank, cfg.conf_threshold);
        std::vector<LaneMask> pred_masks, gt_masks;
        for (const auto& d : dets)
            pred_masks.push_back(rasterize(d.polyline, cfg.eval_lane_width, cfg.canvas));
        for (const auto& g : s.lanes)
            gt_masks.push_back(rasterize(g, cfg.eval_lane_width, cfg.canvas));
        MatchResult m = match_lanes(pred_masks, gt_masks, t_iou);
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
    }
    return metrics_from_counts(tp, fp, fn);
}

DropGain drop_gain(double base_src, double ft_src, double zero_shot_tgt, double ft_tgt) {
    return DropGain{ft_src - base_src, ft_tgt - zero_shot_tgt};
}

int relative_params(int64_t branch_params, int64_t full_params) {
    if (full_params <= 0) throw std::invalid_argument("relative_params: full count <= 0");
    const double pct = 100.0 * static_cast<double>(branch_params) /
                       static_cast<double>(full_params);
    return static_cast<int>(std::llround(pct));
}

EpochCurve epoch_ablation(std::shared_ptr<const ModelParams> source, BranchConfig config,
                          const std::vector<SceneSample>& train,
                          const std::vector<SceneSample>& target_test,
                          const std::vector<SceneSample>& source_test,
                          const TrainSpec& spec, double t_iou) {
    Branch branch = clone_branch(source, config, DistributionLabel{1});
    ModelParams model = branch.materialize();
    std::vector<std::string> trainable;
    for (const auto& p : model.params)
        if (branch.owned.count(p->name)) trainable.push_back(p->name);

    // the source route never trains, so its column is frozen up front
    const double src_f1 = f1_eval(*source, source_test, t_iou).f1;

    EpochCurve curve;
    curve.epoch.push_back(0);  // zero-shot row
    curve.target_f1.push_back(f1_eval(model, target_test, t_iou).f1);
    curve.source_f1.push_back(src_f1);
    train_params(model, trainable, train, spec, nullptr, [&](int epoch) {
        curve.epoch.push_back(epoch + 1);
        curve.target_f1.push_back(f1_eval(model, target_test, t_iou).f1);
        curve.source_f1.push_back(src_f1);
    });
    return curve;
}

double separation_score(const std::vector<std::vector<Embedding>>& grouped) {
    const size_t K = grouped.size();
    if (K < 2) throw std::invalid_argument("separation_score: need >= 2 classes");
    std::vector<std::vector<double>> mu;
    for (const auto& cls : grouped) {
        if (cls.empty()) throw std::invalid_argument("separation_score: empty class");
        std::vector<double> m(cls[0].z.size(), 0.0);
        for (const auto& e : cls)
            for (size_t d = 0; d < m.size(); ++d) m[d] += e.z[d];
        for (auto& v : m) v /= static_cast<double>(cls.size());
        mu.push_back(std::move(m));
    }
    double inter = 0.0;
    int pairs = 0;
    for (size_t a = 0; a < K; ++a)
        for (size_t b = a + 1; b < K; ++b) {
            double d2 = 0.0;
            for (size_t d = 0; d < mu[a].size(); ++d) {
                const double diff = mu[a][d] - mu[b][d];
                d2 += diff * diff;
            }
            inter += std::sqrt(d2);
            ++pairs;
        }
    inter /= static_cast<double>(pairs);

    double intra = 0.0;
    int64_t n = 0;
    for (size_t k = 0; k < K; ++k)
        for (const auto& e : grouped[k]) {
            double d2 = 0.0;
            for (size_t d = 0; d < mu[k].size(); ++d) {
                const double diff = e.z[d] - mu[k][d];
                d2 += diff * diff;
            }
            intra += std::sqrt(d2);
            ++n;
        }
    intra /= static_cast<double>(n);
    if (intra < 1e-15) return inter < 1e-15 ? 0.0 : inter / 1e-15;
    return inter / intra;
}

EmbeddingExport export_embeddings(const std::vector<std::vector<Embedding>>& grouped) {
    int64_t n = 0;
    size_t D = 0;
    for (const auto& cls : grouped) {
        n += static_cast<int64_t>(cls.size());
        if (!cls.empty()) D = cls[0].z.size();
    }
    if (n == 0 || D == 0) throw std::invalid_argument("export_embeddings: no embeddings");

    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(D));
    EmbeddingExport out;
    Eigen::Index r = 0;
    for (size_t k = 0; k < grouped.size(); ++k)
        for (const auto& e : grouped[k]) {
            for (size_t d = 0; d < D; ++d) X(r, static_cast<Eigen::Index>(d)) = e.z[d];
            out.labels.push_back(static_cast<int>(k) + 1);
            ++r;
        }
    Eigen::RowVectorXd mean = X.colwise().mean();
    Eigen::MatrixXd Xc = X.rowwise() - mean;
    Eigen::MatrixXd cov = (Xc.adjoint() * Xc) / std::max<double>(1.0, static_cast<double>(n - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    // eigenvalues ascending: the last two columns span the top-2 subspace
    const Eigen::Index last = es.eigenvectors().cols() - 1;
    Eigen::MatrixXd basis(static_cast<Eigen::Index>(D), 2);
    basis.col(0) = es.eigenvectors().col(last);
    if (last >= 1)
        basis.col(1) = es.eigenvectors().col(last - 1);
    else
        basis.col(1).setZero();
    Eigen::MatrixXd proj = Xc * basis;
    for (Eigen::Index i = 0; i < n; ++i) out.pc.push_back({proj(i, 0), proj(i, 1)});
    out.separation = separation_score(grouped);
    return out;
}

namespace {

std::ofstream open_csv(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << std::fixed << std::setprecision(4);
    return f;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    auto f = open_csv(path);
    f << "config,f1,precision,recall,params,drop,gain\n";
    for (const auto& r : rows)
        f << r.config << ',' << r.f1 << ',' << r.precision << ',' << r.recall << ','
          << r.params << ',' << r.drop << ',' << r.gain << '\n';
}

void write_epoch_curve_csv(const std::string& path, const EpochCurve& curve) {
    auto f = open_csv(path);
    f << "epoch,target_f1,source_f1\n";
    for (size_t i = 0; i < curve.epoch.size(); ++i)
        f << curve.epoch[i] << ',' << 100.0 * curve.target_f1[i] << ','
          << 100.0 * curve.source_f1[i] << '\n';
}

void write_embeddings_csv(const std::string& path, const EmbeddingExport& exp) {
    auto f = open_csv(path);
    f << "label,pc1,pc2\n";
    for (size_t i = 0; i < exp.pc.size(); ++i)
        f << exp.labels[i] << ',' << exp.pc[i][0] << ',' << exp.pc[i][1] << '\n';
}

void write_confusion_csv(const std::string& path, const RouterAccuracy& acc,
                         const std::vector<std::string>& class_names) {
    auto f = open_csv(path);
    f << "true\\pred";
    for (const auto& n : class_names) f << ',' << n;
    f << ",accuracy\n";
    for (size_t i = 0; i < acc.confusion.size(); ++i) {
        f << class_names[i];
        for (size_t j = 0; j < acc.confusion[i].size(); ++j) f << ',' << acc.confusion[i][j];
        f << ',' << acc.per_class[i] << '\n';
    }
}

}  // namespace laneshift
