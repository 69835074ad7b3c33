#pragma once

#include <array>

#include "laneshift/finetune.hpp"
#include "laneshift/router.hpp"

namespace laneshift {

/// Minimum-cost one-to-one assignment (Jonker-style O(n^3) Hungarian).
/// `cost` may be rectangular; returns for each row the assigned column or -1.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost);

struct MatchResult {
    int64_t tp = 0, fp = 0, fn = 0;
    struct Pair {
        int pred, gt;
        double iou;
    };
    std::vector<Pair> pairs;  // IoU >= threshold
};

/// Entry (i,j) = lane_iou of the rasterized masks at width_px.
std::vector<std::vector<double>> iou_matrix(const std::vector<ScoredLane>& preds,
                                            const std::vector<LanePolyline>& gts,
                                            double width_px, const Canvas& canvas);

/// Assign predictions to ground truth by Hungarian on cost 1 - IoU, then
/// drop pairs below `t_iou`.
MatchResult match_lanes(const std::vector<std::vector<double>>& iou, double t_iou);
MatchResult match_lanes(const std::vector<LaneMask>& preds,
                        const std::vector<LaneMask>& gts, double t_iou);

struct MetricsRecord {
    int64_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

MetricsRecord metrics_from_counts(int64_t tp, int64_t fp, int64_t fn);

/// Detection F1 over a test set: lanes rasterized at the evaluation width,
/// matched at IoU >= t_iou.
MetricsRecord f1_eval(const ModelParams& model, const std::vector<SceneSample>& test,
                      double t_iou = 0.5);

struct DropGain {
    double drop = 0.0;  // fine-tuned-on-source F1 minus base-on-source F1
    double gain = 0.0;  // fine-tuned-on-target F1 minus zero-shot-on-target F1
};

DropGain drop_gain(double base_src, double ft_src, double zero_shot_tgt, double ft_tgt);

/// Branch parameter count as an integer percentage of the full model,
/// rounded half away from zero.
int relative_params(int64_t branch_params, int64_t full_params);

struct EpochCurve {
    std::vector<int> epoch;        // starts at 0 (zero-shot row)
    std::vector<double> target_f1;
    std::vector<double> source_f1;  // routed source path; constant by construction
};

/// Fine-tunes a fresh branch and records target F1 after every epoch,
/// starting with an epoch-0 zero-shot row. The source column is evaluated
/// through the untouched source model each epoch.
EpochCurve epoch_ablation(std::shared_ptr<const ModelParams> source, BranchConfig config,
                          const std::vector<SceneSample>& train,
                          const std::vector<SceneSample>& target_test,
                          const std::vector<SceneSample>& source_test,
                          const TrainSpec& spec, double t_iou = 0.5);

struct EmbeddingExport {
    std::vector<std::array<double, 2>> pc;  // top-2 principal components, sample order
    std::vector<int> labels;                // 1-based class label per sample
    double separation = 0.0;  // mean inter-centroid dist / mean intra-class spread
};

/// Projects embeddings to their top-2 principal components and computes the
/// class-separation score used to compare before/after routing training.
EmbeddingExport export_embeddings(const std::vector<std::vector<Embedding>>& grouped);

double separation_score(const std::vector<std::vector<Embedding>>& grouped);

// ---- CSV output (4 decimal places; F1-style values on the percent scale) ----

struct ReportRow {
    std::string config;
    double f1 = 0.0, precision = 0.0, recall = 0.0;  // percent
    int64_t params = 0;
    double drop = 0.0, gain = 0.0;  // percent points
};

void write_metrics_csv(const std::string& path, const std::vector<ReportRow>& rows);
void write_epoch_curve_csv(const std::string& path, const EpochCurve& curve);
void write_embeddings_csv(const std::string& path, const EmbeddingExport& exp);
void write_confusion_csv(const std::string& path, const RouterAccuracy& acc,
                         const std::vector<std::string>& class_names);

}  // namespace laneshift
