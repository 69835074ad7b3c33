#pragma once

#include <array>
#include <memory>
#include <unordered_map>

#include "laneshift/autodiff.hpp"
#include "laneshift/geometry.hpp"

namespace laneshift {

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LossWeights {
    double reg = 1.0, cls = 2.0, seg = 0.5, lane_iou = 2.0;
};

struct DetectorConfig {
    Canvas canvas;
    std::vector<int> channels{16, 32, 64, 64};  // one entry per backbone stage
    int neck_channels = 32;
    int num_priors = 20;
    int n_rows = 36;
    int head_hidden = 64;
    double conf_threshold = 0.4;
    double nms_iou = 0.5;
    double eval_lane_width = 3.0;   // 30 px at CULane's 1640 width, scaled down
    double train_lane_width = 4.0;   // seg masks and LaneIoU interval width
    double assign_lane_width = 10.0; // wider interval for target assignment only;
                                     // keeps matches stable while priors converge
    double assign_min_iou = 0.1;
    LossWeights weights;

    int stages() const { return static_cast<int>(channels.size()); }
};

struct ParamTag {
    char module = 'B';  // 'B', 'N', 'H'
    int stage = 0;
    bool is_bias = false;
};

struct ParamTensor {
    std::string name;
    ParamTag tag;
    Tensor t;
};

struct ModelParams {
    DetectorConfig cfg;
    std::vector<std::shared_ptr<ParamTensor>> params;  // creation order, stable
    std::unordered_map<std::string, size_t> index;

    static ModelParams init(const DetectorConfig& cfg, uint64_t seed);

    void add(std::string name, ParamTag tag, Tensor t);
    const ParamTensor& get(const std::string& name) const;
    ParamTensor& get(const std::string& name);
    bool has(const std::string& name) const { return index.count(name) > 0; }
    int64_t total_count() const;
    uint64_t hash() const;
};

/// name -> Var map used by the forward pass. Trainable entries are leaf Vars
/// with requires_grad; everything else is constant. A branch overlays its
/// owned tensors on top of the source model's.
struct VarBank {
    std::unordered_map<std::string, Var> vars;
    const Var& operator()(const std::string& name) const;
};

VarBank make_var_bank(const ModelParams& model,
                      const std::vector<std::string>& trainable = {});

/// Counts how often expensive blocks ran; used to check that routed
/// inference computes the shared prefix exactly once.
struct ForwardStats {
    int64_t backbone_stage_evals = 0;
    int64_t neck_evals = 0;
    int64_t head_evals = 0;
};

struct HeadStageOutput {
    Var deltas;       // [n,4]
    Var cls;          // [n]
    Var row_offsets;  // [n,R]
};

struct ForwardResult {
    std::vector<Var> stage_feats;          // S backbone maps, strides 2,4,8,...
    std::array<Var, 3> pyramid;            // L0,L1,L2 at strides 4,8,16
    std::vector<HeadStageOutput> stages;   // 3 refinement stages
    Var priors_base;                       // [n,4] the learned priors before refinement
    Var priors_final;                     // [n,4] after Eq-style additive updates + clamping
    Var seg_logits;                        // [1,H,W] at canvas resolution
};

// forward pieces (split so routed inference can share a prefix)
std::vector<Var> forward_backbone(const Var& image, const DetectorConfig& cfg,
                                  const VarBank& P, int from_stage = 0,
                                  int to_stage = -1, ForwardStats* stats = nullptr);
std::array<Var, 3> forward_neck(const std::vector<Var>& stage_feats,
                                const DetectorConfig& cfg, const VarBank& P,
                                ForwardStats* stats = nullptr);
ForwardResult forward_head(std::vector<Var> stage_feats, std::array<Var, 3> pyramid,
                           const DetectorConfig& cfg, const VarBank& P,
                           ForwardStats* stats = nullptr);
ForwardResult forward_detector(const Tensor& image, const DetectorConfig& cfg,
                               const VarBank& P, ForwardStats* stats = nullptr);

// ---- lane/target bookkeeping on the shared row grid ----

struct RowTable {
    std::vector<double> x;         // size n_rows
    std::vector<uint8_t> present;  // size n_rows
};

RowTable polyline_row_table(const LanePolyline& lane, int n_rows, const Canvas& canvas);
RowTable prediction_row_table(const AnchorParams& a, const RowOffsets& off,
                              const Canvas& canvas);

/// Row-wise soft LaneIoU between two thickened center-line tables
/// (interval width w per row, averaged over rows present in either lane).
double row_interval_iou(const RowTable& a, const RowTable& b, double w);

/// Greedy one-to-one matching by descending LaneIoU; entry i is the matched
/// gt index for prediction i, or -1. Pairs below min_iou stay unmatched.
std::vector<int> assign_targets(const std::vector<RowTable>& preds,
                                const std::vector<RowTable>& gts, double w,
                                double min_iou);

// ---- losses (autodiff scalars) ----

Var loss_reg(const Var& priors_final, const std::vector<int>& matches,
             const std::vector<AnchorParams>& gt_anchors);
Var loss_cls(const Var& cls_logits, const std::vector<int>& matches, double gamma = 2.0,
             double alpha = 0.25);
Var loss_seg(const Var& seg_logits, const LaneMask& gt_mask);
Var loss_lane_iou(const Var& priors_final, const Var& row_offsets,
                  const std::vector<int>& matches, const std::vector<RowTable>& gt_rows,
                  double w, const Canvas& canvas);

struct LossBreakdown {
    Var reg, cls, seg, lane_iou, total;
};

LossBreakdown detector_loss(const ForwardResult& fwd,
                            const std::vector<LanePolyline>& gt_lanes,
                            const DetectorConfig& cfg);

// ---- inference ----

AnchorParams anchor_from_row(const Tensor& priors, int i);

/// Decode + threshold + NMS applied to a finished forward pass.
std::vector<ScoredLane> lanes_from_forward(const ForwardResult& fwd,
                                           const DetectorConfig& cfg,
                                           double conf_threshold);

std::vector<ScoredLane> detect(const Tensor& image, const DetectorConfig& cfg,
                               const VarBank& P, double conf_threshold = 0.5,
                               ForwardStats* stats = nullptr);

/// Suppression used by detect(); exposed for the brute-force oracle test.
std::vector<int> greedy_mask_nms(const std::vector<LaneMask>& masks,
                                 const std::vector<double>& conf, double iou_thresh);

}  // namespace laneshift
