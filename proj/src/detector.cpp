#include "laneshift/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace laneshift {

namespace {

constexpr double kPi = 3.14159265358979323846;
// logits are produced as raw * kLogitGain (see forward_head)
constexpr double kLogitGain = 8.0;

// clamp bounds applied after each additive prior update
void prior_bounds(int n, Tensor& lo, Tensor& hi) {
    lo = Tensor({n, 4});
    hi = Tensor({n, 4});
    for (int i = 0; i < n; ++i) {
        lo.at2(i, 0) = 0.0;        hi.at2(i, 0) = 1.0;         // x_a
        lo.at2(i, 1) = 0.0;        hi.at2(i, 1) = 1.0;         // y_a
        lo.at2(i, 2) = 0.05;       hi.at2(i, 2) = kPi - 0.05;  // theta
        lo.at2(i, 3) = 0.05;       hi.at2(i, 3) = 1.0;         // l
    }
}

double gauss(std::mt19937_64& rng) {
    // Box-Muller on value-stable uniforms
    double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

Tensor randn(std::vector<int> shape, double std, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.v) v = std * gauss(rng);
    return t;
}

Var stack_rows(const std::vector<Var>& rows) {
    const int n = static_cast<int>(rows.size());
    const int k = static_cast<int>(rows[0]->val.size());
    Tensor y(k == 1 ? std::vector<int>{n} : std::vector<int>{n, k});
    for (int i = 0; i < n; ++i)
        std::copy(rows[i]->val.v.begin(), rows[i]->val.v.end(), y.v.begin() + i * k);
    std::vector<Var> parents(rows.begin(), rows.end());
    return make_op(std::move(y), std::move(parents), [k](Node& nd) {
        for (size_t i = 0; i < nd.parents.size(); ++i) {
            auto& p = nd.parents[i];
            if (!p->rg) continue;
            p->ensure_grad();
            for (int j = 0; j < k; ++j) p->grad[j] += nd.grad[static_cast<int64_t>(i) * k + j];
        }
    });
}

}  // namespace

void ModelParams::add(std::string name, ParamTag tag, Tensor t) {
    index[name] = params.size();
    params.push_back(std::make_shared<ParamTensor>(ParamTensor{std::move(name), tag, std::move(t)}));
}

const ParamTensor& ModelParams::get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown parameter: " + name);
    return *params[it->second];
}
ParamTensor& ModelParams::get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("unknown parameter: " + name);
    return *params[it->second];
}

int64_t ModelParams::total_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p->t.size();
    return n;
}

uint64_t ModelParams::hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : params) h = tensor_hash(p->t, h);
    return h;
}

ModelParams ModelParams::init(const DetectorConfig& cfg, uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ull);
    ModelParams m;
    m.cfg = cfg;
    const int S = cfg.stages();
    const int C = cfg.neck_channels;
    const int R = cfg.n_rows;
    const int n = cfg.num_priors;
    const int hid = cfg.head_hidden;

    // backbone: one 3x3 stride-2 conv per stage
    int cin = 1;
    for (int s = 0; s < S; ++s) {
        const int cout = cfg.channels[s];
        const double std = std::sqrt(2.0 / (cin * 9.0));
        m.add("B.s" + std::to_string(s) + ".conv.w", {'B', s, false},
              randn({cout, cin, 3, 3}, std, rng));
        m.add("B.s" + std::to_string(s) + ".conv.b", {'B', s, true}, Tensor({cout}));
        cin = cout;
    }
    // neck: lateral 1x1 per pyramid level + 3x3 fusion
    for (int j = 0; j < 3; ++j) {
        const int src = cfg.channels[S - 3 + j];
        m.add("N.lat" + std::to_string(j) + ".w", {'N', j, false},
              randn({C, src, 1, 1}, std::sqrt(2.0 / src), rng));
        m.add("N.lat" + std::to_string(j) + ".b", {'N', j, true}, Tensor({C}));
        m.add("N.fuse" + std::to_string(j) + ".w", {'N', j, false},
              randn({C, C, 3, 3}, std::sqrt(2.0 / (C * 9.0)), rng));
        m.add("N.fuse" + std::to_string(j) + ".b", {'N', j, true}, Tensor({C}));
    }
    // learnable priors spread over bottom-edge starts, three orientations
    Tensor priors({n, 4});
    const double angles[3] = {60.0 * kPi / 180.0, 90.0 * kPi / 180.0, 120.0 * kPi / 180.0};
    for (int i = 0; i < n; ++i) {
        priors.at2(i, 0) = 0.05 + 0.90 * i / (n - 1);
        priors.at2(i, 1) = 1.0;
        priors.at2(i, 2) = angles[i % 3];
        priors.at2(i, 3) = 1.0;
    }
    m.add("H.priors", {'H', 0, false}, std::move(priors));
    // head refinement stages
    for (int t = 1; t <= 3; ++t) {
        const std::string p = "H.t" + std::to_string(t);
        m.add(p + ".pool.w", {'H', t, false},
              randn({C, R * C}, std::sqrt(2.0 / (R * C)), rng));
        m.add(p + ".pool.b", {'H', t, true}, Tensor({C}));
        m.add(p + ".fc1.w", {'H', t, false}, randn({hid, 2 * C}, std::sqrt(2.0 / (2 * C)), rng));
        m.add(p + ".fc1.b", {'H', t, true}, Tensor({hid}));
        m.add(p + ".reg.w", {'H', t, false}, randn({4, hid}, 0.005, rng));
        m.add(p + ".reg.b", {'H', t, true}, Tensor({4}));
        m.add(p + ".cls.w", {'H', t, false}, randn({1, hid}, 0.01, rng));
        m.add(p + ".cls.b", {'H', t, true}, Tensor::full({1}, -2.0 / kLogitGain));
        m.add(p + ".off.w", {'H', t, false}, randn({R, hid}, 0.001, rng));
        m.add(p + ".off.b", {'H', t, true}, Tensor({R}));
    }
    // auxiliary segmentation projection on L0
    m.add("H.seg.w", {'H', 4, false}, randn({1, C, 1, 1}, std::sqrt(2.0 / C), rng));
    m.add("H.seg.b", {'H', 4, true}, Tensor::full({1}, -2.0 / kLogitGain));
    return m;
}

const Var& VarBank::operator()(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::invalid_argument("VarBank: unknown parameter " + name);
    return it->second;
}

VarBank make_var_bank(const ModelParams& model, const std::vector<std::string>& trainable) {
    VarBank bank;
    std::unordered_map<std::string, bool> want;
    for (const auto& n : trainable) want[n] = true;
    for (const auto& p : model.params)
        bank.vars[p->name] = make_leaf(p->t, want.count(p->name) > 0);
    return bank;
}

std::vector<Var> forward_backbone(const Var& image, const DetectorConfig& cfg,
                                  const VarBank& P, int from_stage, int to_stage,
                                  ForwardStats* stats) {
    const int S = to_stage < 0 ? cfg.stages() : to_stage;
    std::vector<Var> feats;
    Var x = image;
    for (int s = from_stage; s < S; ++s) {
        const std::string p = "B.s" + std::to_string(s);
        x = ops::relu(ops::conv(x, P(p + ".conv.w"), P(p + ".conv.b"), 2, 1));
        feats.push_back(x);
        if (stats) ++stats->backbone_stage_evals;
    }
    return feats;
}

std::array<Var, 3> forward_neck(const std::vector<Var>& stage_feats,
                                const DetectorConfig& cfg, const VarBank& P,
                                ForwardStats* stats) {
    const int S = cfg.stages();
    if (static_cast<int>(stage_feats.size()) != S)
        throw std::invalid_argument("forward_neck: expected all backbone stages");
    if (stats) ++stats->neck_evals;
    std::array<Var, 3> lat;
    for (int j = 0; j < 3; ++j) {
        const std::string p = "N.lat" + std::to_string(j);
        lat[j] = ops::conv(stage_feats[S - 3 + j], P(p + ".w"), P(p + ".b"), 1, 0);
    }
    std::array<Var, 3> td;
    td[2] = lat[2];
    td[1] = ops::add(lat[1], ops::upsample_nearest(td[2], 2));
    td[0] = ops::add(lat[0], ops::upsample_nearest(td[1], 2));
    std::array<Var, 3> out;
    for (int j = 0; j < 3; ++j) {
        const std::string p = "N.fuse" + std::to_string(j);
        out[j] = ops::relu(ops::conv(td[j], P(p + ".w"), P(p + ".b"), 1, 1));
    }
    return out;
}

AnchorParams anchor_from_row(const Tensor& priors, int i) {
    AnchorParams a;
    a.x_a = priors.at2(i, 0);
    a.y_a = priors.at2(i, 1);
    a.theta_a = priors.at2(i, 2);
    a.l = priors.at2(i, 3);
    return a;
}

ForwardResult forward_head(std::vector<Var> stage_feats, std::array<Var, 3> pyramid,
                           const DetectorConfig& cfg, const VarBank& P,
                           ForwardStats* stats) {
    if (stats) ++stats->head_evals;
    const int n = cfg.num_priors;
    const int R = cfg.n_rows;
    const int C = cfg.neck_channels;
    const Canvas& cv = cfg.canvas;

    ForwardResult res;
    res.stage_feats = std::move(stage_feats);
    res.pyramid = std::move(pyramid);

    Tensor lo, hi;
    prior_bounds(n, lo, hi);
    Var cur = P("H.priors");
    // priors are clamped into valid anchor range before the first stage
    cur = ops::clamp(cur, lo, hi);
    res.priors_base = cur;

    for (int t = 1; t <= 3; ++t) {
        const Var& level = res.pyramid[3 - t];  // stages consume L2 -> L1 -> L0
        const int Hl = level->val.dim(1), Wl = level->val.dim(2);
        // derive the level's stride from its actual size so the head works
        // for any backbone depth (16/8/4 with the default four stages)
        const int stride = cv.h / Hl;
        Var M2 = ops::reshape(level, {C, Hl * Wl});
        const std::string pfx = "H.t" + std::to_string(t);

        std::vector<Var> deltas, clss, offs;
        deltas.reserve(n);
        for (int i = 0; i < n; ++i) {
            // pooling locations from the *current* prior values (detached)
            const AnchorParams a = anchor_from_row(cur->val, i);
            std::vector<std::pair<double, double>> pts(R);
            const double y0 = a.y_a * (cv.h - 1);
            for (int j = 0; j < R; ++j) {
                const double y = y0 - (static_cast<double>(j) / (R - 1)) * a.l * (cv.h - 1);
                const double x = anchor_line_x(a, y, cv);
                pts[j] = {x / stride - 0.5, y / stride - 0.5};
            }
            Var pooled = ops::reshape(ops::bilinear_pool(level, pts), {R * C});
            Var q = ops::relu(ops::linear(P(pfx + ".pool.w"), pooled, P(pfx + ".pool.b")));
            // single-head attention of the lane vector against the level map
            Var scores = ops::scale(ops::matvec_t_op(M2, q), 1.0 / std::sqrt(static_cast<double>(C)));
            Var ctx = ops::matvec_op(M2, ops::softmax_vec(scores));
            Var h = ops::relu(ops::linear(P(pfx + ".fc1.w"), ops::concat_vec(q, ctx), P(pfx + ".fc1.b")));
            // output gains keep the required raw-weight movement O(0.1) per
            // coordinate so the fixed 6e-4 learning rate converges at desk
            // scale: theta deltas in units of pi, row offsets in units of W,
            // classifier/logit heads in units of kLogitGain
            Tensor reg_gain({4});
            reg_gain[0] = 1.0;
            reg_gain[1] = 1.0;
            reg_gain[2] = kPi;
            reg_gain[3] = 1.0;
            deltas.push_back(ops::mul_const(
                ops::linear(P(pfx + ".reg.w"), h, P(pfx + ".reg.b")), reg_gain));
            clss.push_back(ops::scale(
                ops::linear(P(pfx + ".cls.w"), h, P(pfx + ".cls.b")), kLogitGain));
            offs.push_back(ops::scale(
                ops::linear(P(pfx + ".off.w"), h, P(pfx + ".off.b")),
                static_cast<double>(cv.w)));
        }
        HeadStageOutput out;
        out.deltas = stack_rows(deltas);
        out.cls = stack_rows(clss);
        out.row_offsets = stack_rows(offs);
        if (!out.deltas->val.all_finite())
            throw NumericalError("non-finite anchor deltas at head stage " + std::to_string(t));
        res.stages.push_back(out);
        cur = ops::clamp(ops::add(cur, out.deltas), lo, hi);
    }
    res.priors_final = cur;
    res.seg_logits = ops::scale(
        ops::upsample_nearest(ops::conv(res.pyramid[0], P("H.seg.w"), P("H.seg.b"), 1, 0),
                              cv.h / res.pyramid[0]->val.dim(1)),
        kLogitGain);
    return res;
}

ForwardResult forward_detector(const Tensor& image, const DetectorConfig& cfg,
                               const VarBank& P, ForwardStats* stats) {
    if (image.rank() != 3 || image.dim(1) != cfg.canvas.h || image.dim(2) != cfg.canvas.w)
        throw std::invalid_argument("forward_detector: image does not match canvas");
    Var img = make_const(image);
    auto feats = forward_backbone(img, cfg, P, 0, -1, stats);
    auto pyr = forward_neck(feats, cfg, P, stats);
    return forward_head(std::move(feats), std::move(pyr), cfg, P, stats);
}

// ---- row tables & assignment ----

RowTable polyline_row_table(const LanePolyline& lane, int n_rows, const Canvas& canvas) {
    RowTable t;
    t.x.assign(n_rows, 0.0);
    t.present.assign(n_rows, 0);
    const auto& pts = lane.points;
    const double y_top = pts.front().second, y_bot = pts.back().second;
    for (int r = 0; r < n_rows; ++r) {
        const double y = row_grid_y(r, n_rows, canvas);
        if (y < y_top - 1e-9 || y > y_bot + 1e-9) continue;
        size_t i = 0;
        while (i + 2 < pts.size() && pts[i + 1].second < y) ++i;
        const auto [x1, yy1] = pts[i];
        const auto [x2, yy2] = pts[i + 1];
        const double dy = yy2 - yy1;
        const double tt = std::abs(dy) > 1e-12 ? std::clamp((y - yy1) / dy, 0.0, 1.0) : 0.0;
        t.x[r] = x1 + tt * (x2 - x1);
        t.present[r] = 1;
    }
    return t;
}

RowTable prediction_row_table(const AnchorParams& a, const RowOffsets& off,
                              const Canvas& canvas) {
    const int n_rows = static_cast<int>(off.offsets.size());
    RowTable t;
    t.x.assign(n_rows, 0.0);
    t.present.assign(n_rows, 0);
    for (int r = 0; r < n_rows; ++r) {
        const double y = row_grid_y(r, n_rows, canvas);
        if (!anchor_covers_row(a, y, canvas)) continue;
        t.x[r] = anchor_line_x(a, y, canvas) + off.offsets[r];
        t.present[r] = 1;
    }
    return t;
}

double row_interval_iou(const RowTable& a, const RowTable& b, double w) {
    int union_rows = 0;
    double acc = 0.0;
    const size_t n = a.x.size();
    for (size_t r = 0; r < n; ++r) {
        if (!a.present[r] && !b.present[r]) continue;
        ++union_rows;
        if (a.present[r] && b.present[r]) {
            const double d = std::abs(a.x[r] - b.x[r]);
            if (d < w) acc += (w - d) / (w + d);
        }
    }
    return union_rows == 0 ? 0.0 : acc / union_rows;
}

std::vector<int> assign_targets(const std::vector<RowTable>& preds,
                                const std::vector<RowTable>& gts, double w,
                                double min_iou) {
    const int P = static_cast<int>(preds.size());
    const int G = static_cast<int>(gts.size());
    std::vector<std::vector<double>> iou(P, std::vector<double>(G, 0.0));
    for (int i = 0; i < P; ++i)
        for (int j = 0; j < G; ++j) iou[i][j] = row_interval_iou(preds[i], gts[j], w);

    std::vector<int> match(P, -1);
    std::vector<uint8_t> used_p(P, 0), used_g(G, 0);
    while (true) {
        double best = min_iou;
        int bi = -1, bj = -1;
        for (int i = 0; i < P; ++i) {
            if (used_p[i]) continue;
            for (int j = 0; j < G; ++j) {
                if (used_g[j]) continue;
                if (iou[i][j] > best) {
                    best = iou[i][j];
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi < 0) break;
        match[bi] = bj;
        used_p[bi] = 1;
        used_g[bj] = 1;
    }
    return match;
}

// ---- losses ----

namespace {
inline double smooth_l1(double d) {
    const double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}
inline double smooth_l1_grad(double d) {
    return std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
}
// focal term for a positive sample; returns {value, d/dx}
inline std::pair<double, double> focal_pos(double x, double alpha, double gamma) {
    const double p = 1.0 / (1.0 + std::exp(-x));
    const double logp = -std::log1p(std::exp(-x));
    const double q = 1.0 - p;
    const double val = -alpha * std::pow(q, gamma) * logp;
    const double grad = alpha * gamma * p * std::pow(q, gamma) * logp - alpha * std::pow(q, gamma + 1.0);
    return {val, grad};
}
}  // namespace

Var loss_reg(const Var& priors_final, const std::vector<int>& matches,
             const std::vector<AnchorParams>& gt_anchors) {
    const double scale[4] = {1.0, 1.0, 1.0 / kPi, 1.0};
    int m = 0;
    double acc = 0.0;
    const int n = priors_final->val.dim(0);
    for (int i = 0; i < n; ++i) {
        if (matches[i] < 0) continue;
        ++m;
        const auto& g = gt_anchors[static_cast<size_t>(matches[i])];
        const double tgt[4] = {g.x_a, g.y_a, g.theta_a, g.l};
        for (int c = 0; c < 4; ++c)
            acc += smooth_l1((priors_final->val.at2(i, c) - tgt[c]) * scale[c]);
    }
    Tensor y({1});
    y[0] = m > 0 ? acc / (4.0 * m) : 0.0;
    return make_op(std::move(y), {priors_final}, [matches, gt_anchors, m, scale](Node& nd) {
        if (m == 0) return;
        auto& P = nd.parents[0];
        P->ensure_grad();
        const double g0 = nd.grad[0] / (4.0 * m);
        const int n = P->val.dim(0);
        for (int i = 0; i < n; ++i) {
            if (matches[i] < 0) continue;
            const auto& g = gt_anchors[static_cast<size_t>(matches[i])];
            const double tgt[4] = {g.x_a, g.y_a, g.theta_a, g.l};
            for (int c = 0; c < 4; ++c) {
                const double d = (P->val.at2(i, c) - tgt[c]) * scale[c];
                P->grad.at2(i, c) += g0 * smooth_l1_grad(d) * scale[c];
            }
        }
    });
}

Var loss_cls(const Var& cls_logits, const std::vector<int>& matches, double gamma,
             double alpha) {
    const int n = cls_logits->val.dim(0);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = cls_logits->val[i];
        acc += matches[i] >= 0 ? focal_pos(x, alpha, gamma).first
                               : focal_pos(-x, 1.0 - alpha, gamma).first;
    }
    Tensor y({1});
    y[0] = acc / n;
    return make_op(std::move(y), {cls_logits}, [matches, gamma, alpha](Node& nd) {
        auto& L = nd.parents[0];
        L->ensure_grad();
        const int n = L->val.dim(0);
        const double g0 = nd.grad[0] / n;
        for (int i = 0; i < n; ++i) {
            const double x = L->val[i];
            const double dx = matches[i] >= 0 ? focal_pos(x, alpha, gamma).second
                                              : -focal_pos(-x, 1.0 - alpha, gamma).second;
            L->grad[i] += g0 * dx;
        }
    });
}

Var loss_seg(const Var& seg_logits, const LaneMask& gt_mask) {
    const int64_t N = seg_logits->val.size();
    if (N != static_cast<int64_t>(gt_mask.bitmap.size()))
        throw std::invalid_argument("loss_seg: shape mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const double x = seg_logits->val[i];
        const double t = gt_mask.bitmap[static_cast<size_t>(i)];
        acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor y({1});
    y[0] = acc / static_cast<double>(N);
    auto targets = gt_mask.bitmap;
    return make_op(std::move(y), {seg_logits}, [targets](Node& nd) {
        auto& L = nd.parents[0];
        L->ensure_grad();
        const int64_t N = L->val.size();
        const double g0 = nd.grad[0] / static_cast<double>(N);
        for (int64_t i = 0; i < N; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-L->val[i]));
            L->grad[i] += g0 * (p - targets[static_cast<size_t>(i)]);
        }
    });
}

Var loss_lane_iou(const Var& priors_final, const Var& row_offsets,
                  const std::vector<int>& matches, const std::vector<RowTable>& gt_rows,
                  double w, const Canvas& canvas) {
    const int n = priors_final->val.dim(0);
    const int R = row_offsets->val.dim(1);

    struct RowGrad {  // per matched prior: dL/d(x3,y3,theta) plus per-row dL/doff
        int prior = -1;
        double dx = 0, dy = 0, dth = 0;
        std::vector<double> doff;
    };
    int m = 0;
    for (int i = 0; i < n; ++i)
        if (matches[i] >= 0) ++m;
    Tensor y({1});
    if (m == 0) return make_op(std::move(y), {priors_final, row_offsets}, [](Node&) {});

    auto grads = std::make_shared<std::vector<RowGrad>>();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        if (matches[i] < 0) continue;
        const auto& gt = gt_rows[static_cast<size_t>(matches[i])];
        const AnchorParams a = anchor_from_row(priors_final->val, i);
        const double y0 = a.y_a * (canvas.h - 1);
        const double cot = std::cos(a.theta_a) / std::sin(a.theta_a);
        const double inv_sin2 = 1.0 / (std::sin(a.theta_a) * std::sin(a.theta_a));

        RowGrad rg;
        rg.prior = i;
        rg.doff.assign(R, 0.0);
        int union_rows = 0;
        double acc = 0.0;
        std::vector<std::pair<int, double>> both;  // (row, diou/dxp)
        for (int r = 0; r < R; ++r) {
            const double yr = row_grid_y(r, R, canvas);
            const bool p_here = anchor_covers_row(a, yr, canvas);
            const bool g_here = gt.present[r];
            if (!p_here && !g_here) continue;
            ++union_rows;
            if (p_here && g_here) {
                const double xp = a.x_a * canvas.w + (y0 - yr) * cot +
                                  row_offsets->val.at2(i, r);
                const double d = xp - gt.x[r];
                const double ad = std::abs(d);
                if (ad < w) {
                    acc += (w - ad) / (w + ad);
                    const double diou = -2.0 * w * (d >= 0 ? 1.0 : -1.0) / ((w + ad) * (w + ad));
                    both.emplace_back(r, diou);
                }
            }
        }
        const double soft = union_rows > 0 ? acc / union_rows : 0.0;
        total += 1.0 - soft;
        // dL/dxp(r) for this pair; mean over matches applied below
        for (auto [r, diou] : both) {
            const double yr = row_grid_y(r, R, canvas);
            const double base = -diou / union_rows;  // d(1-soft)/dxp
            rg.doff[static_cast<size_t>(r)] += base;
            rg.dx += base * canvas.w;
            rg.dy += base * (canvas.h - 1) * cot;
            rg.dth += base * (y0 - yr) * (-inv_sin2);
        }
        grads->push_back(std::move(rg));
    }
    y[0] = total / m;
    return make_op(std::move(y), {priors_final, row_offsets}, [grads, m](Node& nd) {
        auto& P = nd.parents[0];
        auto& O = nd.parents[1];
        const double g0 = nd.grad[0] / m;
        for (const auto& rg : *grads) {
            if (P->rg) {
                P->ensure_grad();
                P->grad.at2(rg.prior, 0) += g0 * rg.dx;
                P->grad.at2(rg.prior, 1) += g0 * rg.dy;
                P->grad.at2(rg.prior, 2) += g0 * rg.dth;
            }
            if (O->rg) {
                O->ensure_grad();
                for (size_t r = 0; r < rg.doff.size(); ++r)
                    O->grad.at2(rg.prior, static_cast<int>(r)) += g0 * rg.doff[r];
            }
        }
    });
}

LossBreakdown detector_loss(const ForwardResult& fwd,
                            const std::vector<LanePolyline>& gt_lanes,
                            const DetectorConfig& cfg) {
    const int R = cfg.n_rows;
    const Canvas& cv = cfg.canvas;
    const auto& final_stage = fwd.stages.back();

    std::vector<RowTable> gt_rows;
    std::vector<AnchorParams> gt_anchors;
    for (const auto& lane : gt_lanes) {
        gt_rows.push_back(polyline_row_table(lane, R, cv));
        gt_anchors.push_back(encode_lane(lane, R, cv).first);
    }
    // Assignment is computed from the pre-refinement priors so the positive /
    // negative split cannot be altered by the head's own outputs: every loss
    // gradient that reaches the priors pulls matched priors toward their
    // target, so training cannot collapse by pushing refined predictions out
    // of the matching window.
    const int n = cfg.num_priors;
    std::vector<RowTable> prior_rows(static_cast<size_t>(n));
    RowOffsets zero_off;
    zero_off.offsets.assign(static_cast<size_t>(R), 0.0);
    for (int i = 0; i < n; ++i)
        prior_rows[static_cast<size_t>(i)] = prediction_row_table(
            anchor_from_row(fwd.priors_base->val, i), zero_off, cv);
    const auto matches = assign_targets(prior_rows, gt_rows, cfg.assign_lane_width,
                                        cfg.assign_min_iou);

    LaneMask seg_gt;
    seg_gt.canvas = cv;
    seg_gt.bitmap.assign(static_cast<size_t>(cv.h) * cv.w, 0);
    for (const auto& lane : gt_lanes) {
        LaneMask lm = rasterize(lane, cfg.train_lane_width, cv);
        for (size_t i = 0; i < lm.bitmap.size(); ++i) seg_gt.bitmap[i] |= lm.bitmap[i];
    }

    LossBreakdown lb;
    lb.reg = loss_reg(fwd.priors_final, matches, gt_anchors);
    lb.cls = loss_cls(final_stage.cls, matches);
    lb.seg = loss_seg(fwd.seg_logits, seg_gt);
    lb.lane_iou = loss_lane_iou(fwd.priors_final, final_stage.row_offsets, matches,
                                gt_rows, cfg.train_lane_width, cv);
    lb.total = ops::weighted_sum({lb.reg, lb.cls, lb.seg, lb.lane_iou},
                                 {cfg.weights.reg, cfg.weights.cls, cfg.weights.seg,
                                  cfg.weights.lane_iou});
    return lb;
}

// ---- inference ----

std::vector<int> greedy_mask_nms(const std::vector<LaneMask>& masks,
                                 const std::vector<double>& conf, double iou_thresh) {
    std::vector<int> order(masks.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&conf](int a, int b) { return conf[a] > conf[b]; });
    std::vector<int> kept;
    for (int i : order) {
        bool suppressed = false;
        for (int k : kept)
            if (lane_iou(masks[static_cast<size_t>(i)], masks[static_cast<size_t>(k)]) > iou_thresh) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(i);
    }
    return kept;
}

std::vector<ScoredLane> lanes_from_forward(const ForwardResult& fwd,
                                           const DetectorConfig& cfg,
                                           double conf_threshold) {
    const auto& st = fwd.stages.back();
    const int n = cfg.num_priors;
    const int R = cfg.n_rows;

    std::vector<ScoredLane> cands;
    std::vector<LaneMask> masks;
    for (int i = 0; i < n; ++i) {
        const double conf = 1.0 / (1.0 + std::exp(-st.cls->val[i]));
        if (conf < conf_threshold) continue;
        RowOffsets off;
        off.offsets.resize(static_cast<size_t>(R));
        for (int r = 0; r < R; ++r) off.offsets[r] = st.row_offsets->val.at2(i, r);
        try {
            LanePolyline p = decode_lane(anchor_from_row(fwd.priors_final->val, i), off,
                                         cfg.canvas);
            masks.push_back(rasterize(p, cfg.eval_lane_width, cfg.canvas));
            cands.push_back({std::move(p), conf});
        } catch (const DegenerateLaneError&) {
            // prior decoded to nothing visible; skip
        }
    }
    std::vector<double> confs;
    for (const auto& c : cands) confs.push_back(c.confidence);
    std::vector<ScoredLane> out;
    for (int i : greedy_mask_nms(masks, confs, cfg.nms_iou))
        out.push_back(cands[static_cast<size_t>(i)]);
    return out;  // nms order is confidence-descending
}

std::vector<ScoredLane> detect(const Tensor& image, const DetectorConfig& cfg,
                               const VarBank& P, double conf_threshold,
                               ForwardStats* stats) {
    return lanes_from_forward(forward_detector(image, cfg, P, stats), cfg, conf_threshold);
}

}  // namespace laneshift
