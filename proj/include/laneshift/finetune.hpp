#pragma once

#include <memory>

#include "laneshift/detector.hpp"
#include "laneshift/synthgen.hpp"

namespace laneshift {

enum class BranchKind { BIAS_H, BIAS_NH, H, NH, PARTIAL_B_NH, FULL };

struct BranchConfig {
    BranchKind kind = BranchKind::NH;
    int k = 0;  // final backbone stages, PARTIAL_B_NH only

    std::string str() const;
    static BranchConfig parse(const std::string& s);
    bool operator==(const BranchConfig&) const = default;
};

/// Names of the tensors trainable under a configuration, in model order.
std::vector<std::string> select_trainable(const ModelParams& model,
                                          const BranchConfig& config);
int64_t count_trainable(const ModelParams& model, const std::vector<std::string>& names);
int64_t count_trainable(const ModelParams& model, const BranchConfig& config);

/// A fine-tuned suffix over a frozen source model. Owned tensors are deep
/// copies of the trainable set; everything else resolves to the source.
struct Branch {
    DistributionLabel id;
    BranchConfig config;
    std::shared_ptr<const ModelParams> source;
    std::unordered_map<std::string, std::shared_ptr<ParamTensor>> owned;
    uint64_t source_hash = 0;

    /// Full parameter set with owned tensors overlaid on the source.
    ModelParams materialize() const;
    int64_t owned_count() const;
};

Branch clone_branch(std::shared_ptr<const ModelParams> source, const BranchConfig& config,
                    DistributionLabel id);

enum class Schedule { COSINE, FIXED };

struct TrainSpec {
    int epochs = 15;
    double lr = 6e-4;
    Schedule schedule = Schedule::COSINE;
    int batch_size = 8;
    uint64_t seed = 0;
    LossWeights loss_weights;

    void validate() const;
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

/// Adam over the given trainable subset; mutates `model` in place.
/// Optimizer moments start at zero. Aborts with NumericalError on a
/// non-finite loss.
void train_params(ModelParams& model, const std::vector<std::string>& trainable,
                  const std::vector<SceneSample>& data, const TrainSpec& spec,
                  TrainLog* log = nullptr,
                  const std::function<void(int /*epoch*/)>& on_epoch = {});

ModelParams train_base(const std::vector<SceneSample>& data, const DetectorConfig& cfg,
                       const TrainSpec& spec, uint64_t init_seed = 0,
                       TrainLog* log = nullptr);

/// Fine-tunes only the branch-owned tensors; the shared prefix is checked
/// (by checksum) to be bit-identical before and after.
void finetune_branch(Branch& branch, const std::vector<SceneSample>& target_data,
                     const TrainSpec& spec, TrainLog* log = nullptr,
                     const std::function<void(int)>& on_epoch = {});

}  // namespace laneshift
