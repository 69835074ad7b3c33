#include "laneshift/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace laneshift {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

std::string BranchConfig::str() const {
    switch (kind) {
        case BranchKind::BIAS_H: return "bias(H)";
        case BranchKind::BIAS_NH: return "bias(N+H)";
        case BranchKind::H: return "H";
        case BranchKind::NH: return "N+H";
        case BranchKind::PARTIAL_B_NH: return "B(k=" + std::to_string(k) + ")+N+H";
        case BranchKind::FULL: return "B+N+H";
    }
    return "?";
}

BranchConfig BranchConfig::parse(const std::string& s) {
    if (s == "bias(H)") return {BranchKind::BIAS_H, 0};
    if (s == "bias(N+H)") return {BranchKind::BIAS_NH, 0};
    if (s == "H") return {BranchKind::H, 0};
    if (s == "N+H") return {BranchKind::NH, 0};
    if (s == "B+N+H") return {BranchKind::FULL, 0};
    if (s.rfind("B(k=", 0) == 0) {
        auto close = s.find(')');
        if (close != std::string::npos && s.substr(close) == ")+N+H")
            return {BranchKind::PARTIAL_B_NH, std::stoi(s.substr(4, close - 4))};
    }
    throw std::invalid_argument("unknown branch config: " + s);
}

std::vector<std::string> select_trainable(const ModelParams& model,
                                          const BranchConfig& config) {
    const int S = model.cfg.stages();
    if (config.kind == BranchKind::PARTIAL_B_NH && (config.k < 1 || config.k >= S))
        throw std::invalid_argument("PARTIAL_B_NH requires 1 <= k < S");
    std::vector<std::string> out;
    for (const auto& p : model.params) {
        const auto& tag = p->tag;
        bool take = false;
        switch (config.kind) {
            case BranchKind::BIAS_H: take = tag.module == 'H' && tag.is_bias; break;
            case BranchKind::BIAS_NH:
                take = (tag.module == 'H' || tag.module == 'N') && tag.is_bias;
                break;
            case BranchKind::H: take = tag.module == 'H'; break;
            case BranchKind::NH: take = tag.module == 'H' || tag.module == 'N'; break;
            case BranchKind::PARTIAL_B_NH:
                take = tag.module == 'H' || tag.module == 'N' ||
                       (tag.module == 'B' && tag.stage >= S - config.k);
                break;
            case BranchKind::FULL: take = true; break;
        }
        if (take) out.push_back(p->name);
    }
    return out;
}

int64_t count_trainable(const ModelParams& model, const std::vector<std::string>& names) {
    int64_t n = 0;
    for (const auto& name : names) n += model.get(name).t.size();
    return n;
}

int64_t count_trainable(const ModelParams& model, const BranchConfig& config) {
    return count_trainable(model, select_trainable(model, config));
}

Branch clone_branch(std::shared_ptr<const ModelParams> source, const BranchConfig& config,
                    DistributionLabel id) {
    Branch b;
    b.id = id;
    b.config = config;
    b.source = source;
    b.source_hash = source->hash();
    for (const auto& name : select_trainable(*source, config)) {
        const auto& p = source->get(name);
        b.owned[name] = std::make_shared<ParamTensor>(p);  // deep copy
    }
    return b;
}

ModelParams Branch::materialize() const {
    ModelParams m;
    m.cfg = source->cfg;
    for (const auto& p : source->params) {
        auto it = owned.find(p->name);
        const ParamTensor& src = it != owned.end() ? *it->second : *p;
        m.add(src.name, src.tag, src.t);
    }
    return m;
}

int64_t Branch::owned_count() const {
    int64_t n = 0;
    for (const auto& [_, p] : owned) n += p->t.size();
    return n;
}

void TrainSpec::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(lr > 0.0) && lr != 0.0) throw std::invalid_argument("lr must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

namespace {

struct AdamState {
    Tensor m, v;
    int64_t t = 0;
};

}  // namespace

void train_params(ModelParams& model, const std::vector<std::string>& trainable,
                  const std::vector<SceneSample>& data, const TrainSpec& spec,
                  TrainLog* log, const std::function<void(int)>& on_epoch) {
    spec.validate();
    if (data.empty()) throw std::invalid_argument("train_params: empty dataset");
    DetectorConfig cfg = model.cfg;
    cfg.weights = spec.loss_weights;

    std::unordered_map<std::string, AdamState> adam;
    for (const auto& name : trainable) {
        AdamState st;
        st.m = Tensor(model.get(name).t.shape);
        st.v = Tensor(model.get(name).t.shape);
        adam[name] = std::move(st);
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(data.size()) + spec.batch_size - 1) / spec.batch_size;
    const int64_t total_steps = steps_per_epoch * spec.epochs;
    int64_t step = 0;

    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ull + epoch + 1);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < order.size(); start += spec.batch_size) {
            const size_t stop = std::min(order.size(), start + spec.batch_size);
            VarBank bank = make_var_bank(model, trainable);
            for (size_t bi = start; bi < stop; ++bi) {
                const auto& s = data[order[bi]];
                ForwardResult fwd = forward_detector(s.image, cfg, bank);
                LossBreakdown lb = detector_loss(fwd, s.lanes, cfg);
                if (!std::isfinite(lb.total->val[0]))
                    throw NumericalError(
                        "training diverged: non-finite loss at epoch " +
                        std::to_string(epoch) + " (reg=" + std::to_string(lb.reg->val[0]) +
                        " cls=" + std::to_string(lb.cls->val[0]) + ")");
                epoch_loss += lb.total->val[0];
                ++seen;
                backward(lb.total);
            }
            const double batch_n = static_cast<double>(stop - start);
            double lr = spec.lr;
            if (spec.schedule == Schedule::COSINE)
                lr = spec.lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) /
                                                     static_cast<double>(total_steps)));
            ++step;
            for (const auto& name : trainable) {
                auto& st = adam[name];
                ++st.t;
                const Var& var = bank(name);
                Tensor& param = model.get(name).t;
                if (var->grad.v.empty()) continue;  // no gradient this batch
                const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
                const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
                for (int64_t i = 0; i < param.size(); ++i) {
                    const double g = var->grad[i] / batch_n;
                    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                    param[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps);
                }
            }
        }
        if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(seen));
        if (on_epoch) on_epoch(epoch);
    }
}

ModelParams train_base(const std::vector<SceneSample>& data, const DetectorConfig& cfg,
                       const TrainSpec& spec, uint64_t init_seed, TrainLog* log) {
    ModelParams model = ModelParams::init(cfg, init_seed);
    std::vector<std::string> all;
    for (const auto& p : model.params) all.push_back(p->name);
    train_params(model, all, data, spec, log);
    return model;
}

void finetune_branch(Branch& branch, const std::vector<SceneSample>& target_data,
                     const TrainSpec& spec, TrainLog* log,
                     const std::function<void(int)>& on_epoch) {
    ModelParams model = branch.materialize();
    std::vector<std::string> trainable;
    for (const auto& p : model.params)
        if (branch.owned.count(p->name)) trainable.push_back(p->name);

    // checksum of the frozen prefix before training
    uint64_t prefix_before = 1469598103934665603ull;
    for (const auto& p : model.params)
        if (!branch.owned.count(p->name)) prefix_before = tensor_hash(p->t, prefix_before);

    train_params(model, trainable, target_data, spec, log, on_epoch);

    uint64_t prefix_after = 1469598103934665603ull;
    for (const auto& p : model.params)
        if (!branch.owned.count(p->name)) prefix_after = tensor_hash(p->t, prefix_after);
    if (prefix_before != prefix_after)
        throw std::logic_error("finetune_branch: gradient leaked into frozen prefix");

    for (auto& [name, owned] : branch.owned) owned->t = model.get(name).t;
}

}  // namespace laneshift
