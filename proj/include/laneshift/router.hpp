#pragma once

#include "laneshift/autodiff.hpp"
#include "laneshift/finetune.hpp"
#include "laneshift/synthgen.hpp"

namespace laneshift {

struct RouterConfig {
    Canvas canvas;
    std::vector<int> channels{6, 12, 24, 32};  // small conv encoder, stride 2 each
    int proj_hidden = 64;
    int embed_dim = 32;  // D
    double temperature = 0.1;
    int epochs = 12;
    double lr = 6e-4;
    int batch_per_class = 8;
    uint64_t seed = 0;

    int stages() const { return static_cast<int>(channels.size()); }
};

struct RouterParams {
    RouterConfig cfg;
    std::vector<std::shared_ptr<ParamTensor>> params;
    std::unordered_map<std::string, size_t> index;

    static RouterParams init(const RouterConfig& cfg, uint64_t seed);
    void add(std::string name, Tensor t);
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
};

struct Embedding {
    std::vector<double> z;  // unit L2 norm
};

struct CentroidBank {
    std::vector<std::vector<double>> mu;  // K x D, means of normalized embeddings
    std::vector<std::string> class_names;
};

/// Forward through encoder+projector; eval path (no graph retained).
Embedding embed(const Tensor& image, const RouterParams& rp);

/// Batched differentiable forward; rows are L2-normalized embeddings.
Var embed_batch_var(const std::vector<const Tensor*>& images, const RouterConfig& cfg,
                    const std::unordered_map<std::string, Var>& bank);

/// Supervised contrastive loss over a batch of normalized embeddings.
/// Anchors without an in-batch positive are dropped from the outer sum;
/// a batch where every anchor is dropped is an error.
Var supcon_loss(const Var& z, const std::vector<int>& labels, double tau);

struct RouterTrainLog {
    std::vector<double> epoch_loss;
};

RouterParams train_router(const std::vector<std::vector<SceneSample>>& per_class_data,
                          const RouterConfig& cfg, RouterTrainLog* log = nullptr);

CentroidBank compute_centroids(const std::vector<std::vector<Embedding>>& grouped,
                               std::vector<std::string> class_names = {});

DistributionLabel classify(const Tensor& image, const RouterParams& rp,
                           const CentroidBank& bank);
DistributionLabel classify_embedding(const Embedding& e, const CentroidBank& bank);

struct RouterAccuracy {
    std::vector<double> per_class;                // fraction correct
    std::vector<std::vector<int64_t>> confusion;  // true x predicted
    double overall = 0.0;
};

RouterAccuracy router_accuracy(const std::vector<std::vector<SceneSample>>& per_class_test,
                               const RouterParams& rp, const CentroidBank& bank);

std::vector<std::string> router_param_names(const RouterParams& rp);

}  // namespace laneshift
