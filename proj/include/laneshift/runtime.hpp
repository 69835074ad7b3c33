#pragma once

#include <map>

#include "laneshift/eval.hpp"
#include "laneshift/finetune.hpp"
#include "laneshift/router.hpp"

namespace laneshift {

/// How much of the network a branch shares with the source model.
/// prefix_stages backbone stages (and optionally the neck) are computed with
/// the source parameters; everything after the branch point uses the branch's.
struct BranchPoint {
    int prefix_stages = 0;
    bool shared_neck = false;
};

BranchPoint branch_point_of(const BranchConfig& config, int total_stages);

/// A frozen source model plus per-distribution fine-tuned branches and the
/// contrastive router that picks between them at inference time.
class RoutedModel {
public:
    /// The source model serves its own route: inputs classified as
    /// `source_label` run plain source inference.
    RoutedModel(std::shared_ptr<const ModelParams> source, DistributionLabel source_label,
                RouterParams router, CentroidBank centroids);

    /// Registers a fine-tuned branch for distribution `branch.id`.
    /// Throws std::invalid_argument on a duplicate label or if the branch was
    /// cut from a different source model (hash mismatch).
    void register_branch(Branch branch);

    struct Result {
        DistributionLabel label;
        std::vector<ScoredLane> lanes;
        ForwardStats stats;
    };

    /// Classifies the image, then runs the selected branch. The shared prefix
    /// is evaluated exactly once, with the source parameters; results are
    /// bit-identical to running the branch's materialized model end to end.
    Result route_infer(const Tensor& image) const;

    /// Detection with the selected branch's fully materialized parameters
    /// (no prefix sharing); the bitwise reference for route_infer.
    std::vector<ScoredLane> monolithic_infer(const Tensor& image,
                                             DistributionLabel label) const;

    DistributionLabel classify_input(const Tensor& image) const;

    const std::map<int, Branch>& branches() const { return branches_; }
    const ModelParams& source() const { return *source_; }
    DistributionLabel source_label() const { return source_label_; }
    const RouterParams& router() const { return router_; }
    const CentroidBank& centroids() const { return centroids_; }

private:
    struct Entry {
        Branch branch;
        BranchPoint point;
        ModelParams materialized;
        VarBank bank;  // const leaves over the materialized parameters
    };

    std::shared_ptr<const ModelParams> source_;
    DistributionLabel source_label_;
    VarBank source_bank_;
    uint64_t source_hash_ = 0;
    RouterParams router_;
    CentroidBank centroids_;
    std::map<int, Branch> branches_;
    std::map<int, Entry> entries_;
};

struct OverheadReport {
    double router_ms = 0.0;     // mean per-input router time
    double detector_ms = 0.0;   // mean per-input branch inference time
    double overhead_frac = 0.0; // router / (router + detector)
    int inputs = 0;
};

/// Times routing overhead on a monotonic clock: 10 warmup inputs, then at
/// least `min_inputs` measured ones.
OverheadReport measure_overhead(const RoutedModel& model,
                                const std::vector<Tensor>& images,
                                int min_inputs = 100);

}  // namespace laneshift
