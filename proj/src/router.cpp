#include "laneshift/router.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "laneshift/kernels.hpp"

namespace laneshift {

namespace {
constexpr double kPi = 3.14159265358979323846;

double gauss(std::mt19937_64& rng) {
    double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

Tensor randn(std::vector<int> shape, double std, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.v) v = std * gauss(rng);
    return t;
}
}  // namespace

void RouterParams::add(std::string name, Tensor t) {
    index[name] = params.size();
    params.push_back(std::make_shared<ParamTensor>(
        ParamTensor{std::move(name), ParamTag{'R', 0, false}, std::move(t)}));
}

const Tensor& RouterParams::get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown router parameter: " + name);
    return params[it->second]->t;
}
Tensor& RouterParams::get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown router parameter: " + name);
    return params[it->second]->t;
}

RouterParams RouterParams::init(const RouterConfig& cfg, uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0xa0761d6478bd642full);
    RouterParams rp;
    rp.cfg = cfg;
    int cin = 1;
    for (int s = 0; s < cfg.stages(); ++s) {
        const int cout = cfg.channels[s];
        rp.add("enc.s" + std::to_string(s) + ".w",
               randn({cout, cin, 3, 3}, std::sqrt(2.0 / (cin * 9.0)), rng));
        rp.add("enc.s" + std::to_string(s) + ".b", Tensor({cout}));
        cin = cout;
    }
    rp.add("proj.fc1.w", randn({cfg.proj_hidden, cin}, std::sqrt(2.0 / cin), rng));
    rp.add("proj.fc1.b", Tensor({cfg.proj_hidden}));
    rp.add("proj.fc2.w",
           randn({cfg.embed_dim, cfg.proj_hidden}, std::sqrt(2.0 / cfg.proj_hidden), rng));
    rp.add("proj.fc2.b", Tensor({cfg.embed_dim}));
    return rp;
}

std::vector<std::string> router_param_names(const RouterParams& rp) {
    std::vector<std::string> out;
    for (const auto& p : rp.params) out.push_back(p->name);
    return out;
}

static Var embed_one(const Var& img, const RouterConfig& cfg,
                     const std::unordered_map<std::string, Var>& bank) {
    auto P = [&bank](const std::string& n) -> const Var& {
        auto it = bank.find(n);
        if (it == bank.end()) throw std::invalid_argument("router bank: missing " + n);
        return it->second;
    };
    Var x = img;
    for (int s = 0; s < cfg.stages(); ++s) {
        const std::string p = "enc.s" + std::to_string(s);
        x = ops::relu(ops::conv(x, P(p + ".w"), P(p + ".b"), 2, 1));
    }
    Var h = ops::global_avg_pool(x);
    h = ops::relu(ops::linear(P("proj.fc1.w"), h, P("proj.fc1.b")));
    return ops::linear(P("proj.fc2.w"), h, P("proj.fc2.b"));
}

Var embed_batch_var(const std::vector<const Tensor*>& images, const RouterConfig& cfg,
                    const std::unordered_map<std::string, Var>& bank) {
    const int B = static_cast<int>(images.size());
    std::vector<Var> rows;
    rows.reserve(static_cast<size_t>(B));
    for (const Tensor* img : images) rows.push_back(embed_one(make_const(*img), cfg, bank));
    // stack into [B,D]
    const int D = cfg.embed_dim;
    Tensor y({B, D});
    for (int i = 0; i < B; ++i)
        std::copy(rows[static_cast<size_t>(i)]->val.v.begin(),
                  rows[static_cast<size_t>(i)]->val.v.end(), y.v.begin() + static_cast<int64_t>(i) * D);
    std::vector<Var> parents(rows.begin(), rows.end());
    Var stacked = make_op(std::move(y), std::move(parents), [D](Node& nd) {
        for (size_t i = 0; i < nd.parents.size(); ++i) {
            auto& p = nd.parents[i];
            if (!p->rg) continue;
            p->ensure_grad();
            for (int j = 0; j < D; ++j)
                p->grad[j] += nd.grad[static_cast<int64_t>(i) * D + j];
        }
    });
    return ops::l2_normalize_rows(stacked);
}

Embedding embed(const Tensor& image, const RouterParams& rp) {
    std::unordered_map<std::string, Var> bank;
    for (const auto& p : rp.params) bank[p->name] = make_const(p->t);
    Var z = embed_batch_var({&image}, rp.cfg, bank);
    Embedding e;
    e.z.assign(z->val.v.begin(), z->val.v.end());
    return e;
}

Var supcon_loss(const Var& z, const std::vector<int>& labels, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("supcon_loss: tau must be positive");
    const int B = z->val.dim(0), D = z->val.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument("supcon_loss: label count mismatch");
    if (B < 2) throw std::invalid_argument("supcon_loss: batch must have >= 2 samples");

    // cosine similarities (rows are unit norm by contract)
    std::vector<double> sim(static_cast<size_t>(B) * B, 0.0);
    for (int i = 0; i < B; ++i)
        for (int j = i + 1; j < B; ++j) {
            double s = 0.0;
            for (int d = 0; d < D; ++d) s += z->val.at2(i, d) * z->val.at2(j, d);
            sim[static_cast<size_t>(i) * B + j] = s;
            sim[static_cast<size_t>(j) * B + i] = s;
        }

    double loss = 0.0;
    // dL/dsim, filled for the backward pass
    auto gsim = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * B, 0.0);
    int valid_anchors = 0;
    for (int i = 0; i < B; ++i) {
        std::vector<int> pos;
        for (int j = 0; j < B; ++j)
            if (j != i && labels[j] == labels[i]) pos.push_back(j);
        if (pos.empty()) continue;  // anchor dropped
        ++valid_anchors;
        // log-sum-exp over A(i) = everyone but i
        double mx = -1e300;
        for (int a = 0; a < B; ++a)
            if (a != i) mx = std::max(mx, sim[static_cast<size_t>(i) * B + a] / tau);
        double S = 0.0;
        for (int a = 0; a < B; ++a)
            if (a != i) S += std::exp(sim[static_cast<size_t>(i) * B + a] / tau - mx);
        const double lse = mx + std::log(S);
        const double inv_p = 1.0 / static_cast<double>(pos.size());
        for (int p : pos) loss += -inv_p * (sim[static_cast<size_t>(i) * B + p] / tau - lse);
        // gradient wrt this anchor's similarity row
        for (int p : pos) (*gsim)[static_cast<size_t>(i) * B + p] += -inv_p / tau;
        for (int a = 0; a < B; ++a) {
            if (a == i) continue;
            const double w = std::exp(sim[static_cast<size_t>(i) * B + a] / tau - lse);
            (*gsim)[static_cast<size_t>(i) * B + a] += w / tau;
        }
    }
    if (valid_anchors == 0)
        throw std::invalid_argument("supcon_loss: no anchor has an in-batch positive");

    Tensor y({1});
    y[0] = loss;
    return make_op(std::move(y), {z}, [gsim](Node& nd) {
        auto& z = nd.parents[0];
        z->ensure_grad();
        const int B = z->val.dim(0), D = z->val.dim(1);
        const double g0 = nd.grad[0];
        for (int i = 0; i < B; ++i)
            for (int a = 0; a < B; ++a) {
                if (a == i) continue;
                const double g = g0 * (*gsim)[static_cast<size_t>(i) * B + a];
                if (g == 0.0) continue;
                for (int d = 0; d < D; ++d) {
                    z->grad.at2(i, d) += g * z->val.at2(a, d);
                    z->grad.at2(a, d) += g * z->val.at2(i, d);
                }
            }
    });
}

RouterParams train_router(const std::vector<std::vector<SceneSample>>& per_class_data,
                          const RouterConfig& cfg, RouterTrainLog* log) {
    const int K = static_cast<int>(per_class_data.size());
    if (K < 2) throw std::invalid_argument("train_router: need >= 2 distributions");
    for (const auto& cls : per_class_data)
        if (cls.empty()) throw std::invalid_argument("train_router: empty class");

    RouterParams rp = RouterParams::init(cfg, cfg.seed);

    struct AdamState {
        Tensor m, v;
        int64_t t = 0;
    };
    std::unordered_map<std::string, AdamState> adam;
    for (const auto& p : rp.params)
        adam[p->name] = {Tensor(p->t.shape), Tensor(p->t.shape), 0};
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    size_t min_class = per_class_data[0].size();
    for (const auto& c : per_class_data) min_class = std::min(min_class, c.size());
    const int batches = std::max<int>(1, static_cast<int>(min_class) / cfg.batch_per_class);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ull + 77 + epoch);
        std::vector<std::vector<size_t>> order(static_cast<size_t>(K));
        for (int k = 0; k < K; ++k) {
            order[k].resize(per_class_data[k].size());
            for (size_t i = 0; i < order[k].size(); ++i) order[k][i] = i;
            std::shuffle(order[k].begin(), order[k].end(), rng);
        }
        double epoch_loss = 0.0;
        for (int b = 0; b < batches; ++b) {
            std::unordered_map<std::string, Var> bank;
            for (const auto& p : rp.params) bank[p->name] = make_leaf(p->t, true);
            std::vector<const Tensor*> images;
            std::vector<int> labels;
            for (int k = 0; k < K; ++k)
                for (int j = 0; j < cfg.batch_per_class; ++j) {
                    const size_t idx = order[k][(static_cast<size_t>(b) * cfg.batch_per_class + j) %
                                                order[k].size()];
                    images.push_back(&per_class_data[k][idx].image);
                    labels.push_back(k + 1);
                }
            Var z = embed_batch_var(images, cfg, bank);
            Var loss = supcon_loss(z, labels, cfg.temperature);
            if (!std::isfinite(loss->val[0]))
                throw NumericalError("router training diverged: non-finite loss");
            epoch_loss += loss->val[0];
            backward(loss);
            for (const auto& p : rp.params) {
                auto& st = adam[p->name];
                ++st.t;
                const Var& var = bank[p->name];
                if (var->grad.v.empty()) continue;
                const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
                const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
                for (int64_t i = 0; i < p->t.size(); ++i) {
                    const double g = var->grad[i];
                    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                    p->t[i] -= cfg.lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps);
                }
            }
        }
        if (log) log->epoch_loss.push_back(epoch_loss / batches);
    }
    return rp;
}

CentroidBank compute_centroids(const std::vector<std::vector<Embedding>>& grouped,
                               std::vector<std::string> class_names) {
    CentroidBank bank;
    for (size_t k = 0; k < grouped.size(); ++k) {
        if (grouped[k].empty())
            throw std::invalid_argument("compute_centroids: empty class " + std::to_string(k + 1));
        const size_t D = grouped[k][0].z.size();
        std::vector<double> mu(D, 0.0);
        for (const auto& e : grouped[k])
            for (size_t d = 0; d < D; ++d) mu[d] += e.z[d];
        for (auto& v : mu) v /= static_cast<double>(grouped[k].size());
        bank.mu.push_back(std::move(mu));
    }
    bank.class_names = std::move(class_names);
    if (bank.class_names.empty())
        for (size_t k = 0; k < grouped.size(); ++k)
            bank.class_names.push_back("class" + std::to_string(k + 1));
    return bank;
}

DistributionLabel classify_embedding(const Embedding& e, const CentroidBank& bank) {
    int best = 0;
    double best_d = 1e300;
    for (size_t k = 0; k < bank.mu.size(); ++k) {
        double d = 0.0;
        for (size_t j = 0; j < e.z.size(); ++j) {
            const double diff = e.z[j] - bank.mu[k][j];
            d += diff * diff;
        }
        if (d < best_d) {  // strict: ties keep the smallest k
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return DistributionLabel{best + 1};
}

DistributionLabel classify(const Tensor& image, const RouterParams& rp,
                           const CentroidBank& bank) {
    return classify_embedding(embed(image, rp), bank);
}

RouterAccuracy router_accuracy(const std::vector<std::vector<SceneSample>>& per_class_test,
                               const RouterParams& rp, const CentroidBank& bank) {
    const int K = static_cast<int>(per_class_test.size());
    RouterAccuracy acc;
    acc.per_class.assign(static_cast<size_t>(K), 0.0);
    acc.confusion.assign(static_cast<size_t>(K), std::vector<int64_t>(static_cast<size_t>(K), 0));
    int64_t correct = 0, total = 0;
    for (int k = 0; k < K; ++k) {
        int64_t ok = 0;
        for (const auto& s : per_class_test[static_cast<size_t>(k)]) {
            const int pred = classify(s.image, rp, bank).k;
            ++acc.confusion[static_cast<size_t>(k)][static_cast<size_t>(pred - 1)];
            if (pred == k + 1) ++ok;
        }
        const int64_t n = static_cast<int64_t>(per_class_test[static_cast<size_t>(k)].size());
        acc.per_class[static_cast<size_t>(k)] = n ? static_cast<double>(ok) / n : 0.0;
        correct += ok;
        total += n;
    }
    acc.overall = total ? static_cast<double>(correct) / total : 0.0;
    return acc;
}

}  // namespace laneshift
