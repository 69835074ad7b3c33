#include "laneshift/runtime.hpp"

#include <chrono>

namespace laneshift {

BranchPoint branch_point_of(const BranchConfig& config, int total_stages) {
    switch (config.kind) {
        case BranchKind::BIAS_H:
        case BranchKind::H:
            return {total_stages, true};
        case BranchKind::BIAS_NH:
        case BranchKind::NH:
            return {total_stages, false};
        case BranchKind::PARTIAL_B_NH:
            return {total_stages - config.k, false};
        case BranchKind::FULL:
            return {0, false};
    }
    throw std::logic_error("branch_point_of: unknown kind");
}

RoutedModel::RoutedModel(std::shared_ptr<const ModelParams> source,
                         DistributionLabel source_label, RouterParams router,
                         CentroidBank centroids)
    : source_(std::move(source)),
      source_label_(source_label),
      router_(std::move(router)),
      centroids_(std::move(centroids)) {
    if (!source_) throw std::invalid_argument("RoutedModel: null source");
    source_hash_ = source_->hash();
    source_bank_ = make_var_bank(*source_);
}

void RoutedModel::register_branch(Branch branch) {
    const int label = branch.id.k;
    if (label == source_label_.k)
        throw std::invalid_argument(
            "register_branch: label collides with the source route");
    if (entries_.count(label))
        throw std::invalid_argument("register_branch: duplicate distribution label " +
                                    std::to_string(label));
    if (branch.source_hash != source_hash_)
        throw std::invalid_argument(
            "register_branch: branch was cut from a different source model");
    Entry e;
    e.branch = branch;
    e.point = branch_point_of(branch.config, source_->cfg.stages());
    e.materialized = branch.materialize();
    e.bank = make_var_bank(e.materialized);
    branches_.emplace(label, std::move(branch));
    entries_.emplace(label, std::move(e));
}

DistributionLabel RoutedModel::classify_input(const Tensor& image) const {
    return classify(image, router_, centroids_);
}

RoutedModel::Result RoutedModel::route_infer(const Tensor& image) const {
    if (entries_.empty()) throw std::logic_error("route_infer: no branches registered");
    Result res;
    res.label = classify_input(image);
    const DetectorConfig& src_cfg = source_->cfg;
    if (res.label == source_label_) {
        // the source model is its own route
        res.lanes = detect(image, src_cfg, source_bank_, src_cfg.conf_threshold, &res.stats);
        return res;
    }
    auto it = entries_.find(res.label.k);
    if (it == entries_.end())
        throw std::invalid_argument("route_infer: no branch for distribution " +
                                    std::to_string(res.label.k));
    const Entry& e = it->second;
    const DetectorConfig& cfg = source_->cfg;

    Var img = make_const(image);
    // shared prefix with the source parameters, computed once
    std::vector<Var> feats =
        forward_backbone(img, cfg, source_bank_, 0, e.point.prefix_stages, &res.stats);
    const Var resume = feats.empty() ? img : feats.back();
    std::vector<Var> rest =
        forward_backbone(resume, cfg, e.bank, e.point.prefix_stages, -1, &res.stats);
    feats.insert(feats.end(), rest.begin(), rest.end());

    const VarBank& neck_bank = e.point.shared_neck ? source_bank_ : e.bank;
    auto pyramid = forward_neck(feats, cfg, neck_bank, &res.stats);
    ForwardResult fwd =
        forward_head(std::move(feats), std::move(pyramid), cfg, e.bank, &res.stats);
    res.lanes = lanes_from_forward(fwd, cfg, cfg.conf_threshold);
    return res;
}

std::vector<ScoredLane> RoutedModel::monolithic_infer(const Tensor& image,
                                                      DistributionLabel label) const {
    const DetectorConfig& cfg = source_->cfg;
    if (label == source_label_) return detect(image, cfg, source_bank_, cfg.conf_threshold);
    auto it = entries_.find(label.k);
    if (it == entries_.end())
        throw std::invalid_argument("monolithic_infer: no branch for distribution " +
                                    std::to_string(label.k));
    return detect(image, cfg, it->second.bank, cfg.conf_threshold);
}

OverheadReport measure_overhead(const RoutedModel& model,
                                const std::vector<Tensor>& images, int min_inputs) {
    if (images.empty()) throw std::invalid_argument("measure_overhead: no images");
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    const int warmup = 10;
    for (int i = 0; i < warmup; ++i)
        (void)model.route_infer(images[static_cast<size_t>(i) % images.size()]);

    OverheadReport rep;
    rep.inputs = std::max(min_inputs, static_cast<int>(images.size()));
    double router_ms = 0.0, detector_ms = 0.0;
    for (int i = 0; i < rep.inputs; ++i) {
        const Tensor& img = images[static_cast<size_t>(i) % images.size()];
        auto t0 = clock::now();
        DistributionLabel label = model.classify_input(img);
        router_ms += ms_since(t0);
        t0 = clock::now();
        (void)model.monolithic_infer(img, label);
        detector_ms += ms_since(t0);
    }
    rep.router_ms = router_ms / rep.inputs;
    rep.detector_ms = detector_ms / rep.inputs;
    rep.overhead_frac = rep.router_ms / (rep.router_ms + rep.detector_ms);
    return rep;
}

}  // namespace laneshift
