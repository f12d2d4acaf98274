#include "ibam/soh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ibam {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// features

FeatureTensor build_features(const ResampledCycle& cycle, const FeatureConfig& cfg,
                             const NormStats* stats) {
    if (cfg.channels != 1 && cfg.channels != 4)
        throw ConfigError("feature channels must be 1 or 4");
    const int n = cycle.n;
    FeatureTensor f;
    f.t_end = cycle.t.back();
    f.x.resize(cfg.channels, n);

    for (int i = 0; i < n; ++i) f.x(0, i) = cycle.V[i];

    if (cfg.channels == 4) {
        double q = cfg.q_ah;
        if (cfg.rate_c > 0.0) {
            const double mean_i =
                std::accumulate(cycle.I.begin(), cycle.I.end(), 0.0) / cycle.I.size();
            if (mean_i > 0.0) q = mean_i / cfg.rate_c;
        }
        const auto soc = coulomb_count(cycle.I, cycle.dt, cfg.soc0, q);
        for (int i = 0; i < n; ++i) f.x(1, i) = cycle.V[i] - ocv(soc[i], cfg.ocv);
        // dV/dt: central differences, one-sided at the ends
        f.x(2, 0) = (cycle.V[1] - cycle.V[0]) / cycle.dt;
        for (int i = 1; i < n - 1; ++i)
            f.x(2, i) = (cycle.V[i + 1] - cycle.V[i - 1]) / (2.0 * cycle.dt);
        f.x(2, n - 1) = (cycle.V[n - 1] - cycle.V[n - 2]) / cycle.dt;
        for (int i = 0; i < n; ++i) f.x(3, i) = cycle.t[i] / f.t_end;
    }

    if (stats) apply_stats(f, *stats);
    return f;
}

NormStats compute_stats(std::span<const FeatureTensor> features) {
    if (features.empty()) throw ValidationError("compute_stats: empty feature set");
    const auto c = features.front().x.rows();
    NormStats s;
    s.mean = VectorXd::Zero(c);
    s.stdev = VectorXd::Zero(c);
    std::size_t total = 0;
    for (const auto& f : features) {
        s.mean += f.x.rowwise().sum();
        total += static_cast<std::size_t>(f.x.cols());
    }
    s.mean /= static_cast<double>(total);
    for (const auto& f : features)
        s.stdev += (f.x.colwise() - s.mean).array().square().matrix().rowwise().sum();
    s.stdev = (s.stdev / static_cast<double>(total)).array().sqrt();
    for (Eigen::Index i = 0; i < c; ++i)
        if (!(s.stdev(i) > 0.0))
            throw ValidationError("degenerate feature channel " + std::to_string(i) +
                                  " (zero variance in the training set)");
    return s;
}

void apply_stats(FeatureTensor& f, const NormStats& stats) {
    if (f.x.rows() != stats.mean.size())
        throw ValidationError("feature/stats channel count mismatch");
    f.x = (f.x.colwise() - stats.mean).array().colwise() / stats.stdev.array();
}

// ---------------------------------------------------------------------------
// parameters

namespace {

void dir_params(GruDir& d, const std::function<void(double*, std::size_t)>& fn) {
    for (MatrixXd* m : {&d.Wz, &d.Wr, &d.Wn, &d.Uz, &d.Ur, &d.Un})
        fn(m->data(), static_cast<std::size_t>(m->size()));
    for (VectorXd* v : {&d.bz, &d.br, &d.bn}) fn(v->data(), static_cast<std::size_t>(v->size()));
}

GruDir make_dir(int input, int hidden) {
    GruDir d;
    d.Wz = MatrixXd::Zero(hidden, input);
    d.Wr = MatrixXd::Zero(hidden, input);
    d.Wn = MatrixXd::Zero(hidden, input);
    d.Uz = MatrixXd::Zero(hidden, hidden);
    d.Ur = MatrixXd::Zero(hidden, hidden);
    d.Un = MatrixXd::Zero(hidden, hidden);
    d.bz = VectorXd::Zero(hidden);
    d.br = VectorXd::Zero(hidden);
    d.bn = VectorXd::Zero(hidden);
    return d;
}

}  // namespace

std::size_t SohEstimator::param_count() const {
    std::size_t n = 0;
    const_cast<SohEstimator*>(this)->for_each_param(
        [&](double*, std::size_t k) { n += k; });
    return n;
}

void SohEstimator::for_each_param(const std::function<void(double*, std::size_t)>& fn) {
    for (auto& d : dirs) dir_params(d, fn);
    fn(head_W1.data(), static_cast<std::size_t>(head_W1.size()));
    fn(head_b1.data(), static_cast<std::size_t>(head_b1.size()));
    fn(head_W2.data(), static_cast<std::size_t>(head_W2.size()));
    fn(&head_b2, 1);
}

void SohEstimator::for_each_param(
    const std::function<void(const double*, std::size_t)>& fn) const {
    const_cast<SohEstimator*>(this)->for_each_param(
        [&](double* p, std::size_t n) { fn(p, n); });
}

SohEstimator SohEstimator::make(int in_channels, int hidden, int head_hidden, int num_layers,
                                std::uint64_t seed) {
    if (in_channels < 1 || hidden < 1 || head_hidden < 1 || num_layers < 1)
        throw ConfigError("estimator dimensions must be positive");
    SohEstimator w;
    w.in_channels = in_channels;
    w.hidden = hidden;
    w.head_hidden = head_hidden;
    w.num_layers = num_layers;
    for (int l = 0; l < num_layers; ++l) {
        const int input = (l == 0) ? in_channels : 2 * hidden;
        w.dirs.push_back(make_dir(input, hidden));
        w.dirs.push_back(make_dir(input, hidden));
    }
    w.head_W1 = MatrixXd::Zero(head_hidden, w.rep_dim());
    w.head_b1 = VectorXd::Zero(head_hidden);
    w.head_W2 = MatrixXd::Zero(1, head_hidden);
    w.head_b2 = 0.0;

    std::mt19937_64 rng(mix_seed(seed, "soh-init"));
    const double k_rec = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& d : w.dirs)
        dir_params(d, [&](double* p, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) p[i] = k_rec * u(rng);
        });
    const double k1 = 1.0 / std::sqrt(static_cast<double>(w.rep_dim()));
    for (Eigen::Index i = 0; i < w.head_W1.size(); ++i) w.head_W1.data()[i] = k1 * u(rng);
    for (Eigen::Index i = 0; i < w.head_b1.size(); ++i) w.head_b1.data()[i] = k1 * u(rng);
    const double k2 = 1.0 / std::sqrt(static_cast<double>(head_hidden));
    for (Eigen::Index i = 0; i < w.head_W2.size(); ++i) w.head_W2.data()[i] = k2 * u(rng);
    w.head_b2 = k2 * u(rng);
    return w;
}

SohGradients SohGradients::zeros_like(const SohEstimator& w) {
    SohGradients g;
    for (int l = 0; l < w.num_layers; ++l) {
        const int input = (l == 0) ? w.in_channels : 2 * w.hidden;
        g.dirs.push_back(make_dir(input, w.hidden));
        g.dirs.push_back(make_dir(input, w.hidden));
    }
    g.head_W1 = MatrixXd::Zero(w.head_hidden, w.rep_dim());
    g.head_b1 = VectorXd::Zero(w.head_hidden);
    g.head_W2 = MatrixXd::Zero(1, w.head_hidden);
    g.head_b2 = 0.0;
    return g;
}

void SohGradients::set_zero() {
    for_each_param([](double* p, std::size_t n) { std::memset(p, 0, n * sizeof(double)); });
}

void SohGradients::for_each_param(const std::function<void(double*, std::size_t)>& fn) {
    for (auto& d : dirs) dir_params(d, fn);
    fn(head_W1.data(), static_cast<std::size_t>(head_W1.size()));
    fn(head_b1.data(), static_cast<std::size_t>(head_b1.size()));
    fn(head_W2.data(), static_cast<std::size_t>(head_W2.size()));
    fn(&head_b2, 1);
}

// ---------------------------------------------------------------------------
// forward / backward

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct DirCache {
    MatrixXd H, Z, R, N, Q, Hprev;  // hidden x T
};

struct LayerCache {
    MatrixXd X;     // layer input (after dropout of previous output)
    MatrixXd O;     // undropped output, 2*hidden x T
    MatrixXd mask;  // dropout mask applied to O before the next layer; empty = none
    DirCache fwd, bwd;
};

struct HeadCache {
    VectorXd rep, a1, r1;
    double a2 = 0.0, yhat = 0.0;
};

void gru_dir_forward(const GruDir& p, const MatrixXd& X, bool reverse, DirCache& c) {
    const int T = static_cast<int>(X.cols());
    const int H = static_cast<int>(p.bz.size());
    c.H.resize(H, T);
    c.Z.resize(H, T);
    c.R.resize(H, T);
    c.N.resize(H, T);
    c.Q.resize(H, T);
    c.Hprev.resize(H, T);

    MatrixXd pz = (p.Wz * X).colwise() + p.bz;
    MatrixXd pr = (p.Wr * X).colwise() + p.br;
    MatrixXd pn = (p.Wn * X).colwise() + p.bn;

    VectorXd h = VectorXd::Zero(H);
    for (int i = 0; i < T; ++i) {
        const int t = reverse ? T - 1 - i : i;
        c.Hprev.col(t) = h;
        VectorXd z = (pz.col(t) + p.Uz * h).unaryExpr([](double v) { return sigmoid(v); });
        VectorXd r = (pr.col(t) + p.Ur * h).unaryExpr([](double v) { return sigmoid(v); });
        VectorXd q = r.cwiseProduct(h);
        VectorXd n = (pn.col(t) + p.Un * q).array().tanh();
        h = (VectorXd::Ones(H) - z).cwiseProduct(n) + z.cwiseProduct(h);
        c.Z.col(t) = z;
        c.R.col(t) = r;
        c.Q.col(t) = q;
        c.N.col(t) = n;
        c.H.col(t) = h;
    }
}

// dH carries the loss gradient on the stored state at every position.
void gru_dir_backward(const GruDir& p, const MatrixXd& X, const DirCache& c, const MatrixXd& dH,
                      bool reverse, GruDir& gp, MatrixXd& dX) {
    const int T = static_cast<int>(X.cols());
    const int H = static_cast<int>(p.bz.size());
    MatrixXd DZ(H, T), DR(H, T), DN(H, T);

    VectorXd carry = VectorXd::Zero(H);
    for (int i = T - 1; i >= 0; --i) {
        const int t = reverse ? T - 1 - i : i;
        VectorXd gh = dH.col(t) + carry;
        const auto z = c.Z.col(t);
        const auto r = c.R.col(t);
        const auto n = c.N.col(t);
        const auto hp = c.Hprev.col(t);

        VectorXd dn = gh.cwiseProduct((1.0 - z.array()).matrix());
        VectorXd dz = gh.cwiseProduct(hp - n);
        VectorXd dh_prev = gh.cwiseProduct(z);

        VectorXd dn_pre = dn.array() * (1.0 - n.array().square());
        VectorXd dq = p.Un.transpose() * dn_pre;
        VectorXd dr = dq.cwiseProduct(hp);
        dh_prev += dq.cwiseProduct(r);
        VectorXd dz_pre = dz.array() * z.array() * (1.0 - z.array());
        VectorXd dr_pre = dr.array() * r.array() * (1.0 - r.array());
        dh_prev.noalias() += p.Uz.transpose() * dz_pre;
        dh_prev.noalias() += p.Ur.transpose() * dr_pre;

        DZ.col(t) = dz_pre;
        DR.col(t) = dr_pre;
        DN.col(t) = dn_pre;
        carry = dh_prev;
    }

    gp.Wz.noalias() += DZ * X.transpose();
    gp.Wr.noalias() += DR * X.transpose();
    gp.Wn.noalias() += DN * X.transpose();
    gp.Uz.noalias() += DZ * c.Hprev.transpose();
    gp.Ur.noalias() += DR * c.Hprev.transpose();
    gp.Un.noalias() += DN * c.Q.transpose();
    gp.bz += DZ.rowwise().sum();
    gp.br += DR.rowwise().sum();
    gp.bn += DN.rowwise().sum();
    dX.noalias() += p.Wz.transpose() * DZ;
    dX.noalias() += p.Wr.transpose() * DR;
    dX.noalias() += p.Wn.transpose() * DN;
}

// Full forward with caches. Dropout masks (inverted scaling) are applied to
// each layer's output before it feeds the next layer; representation taps
// read the undropped outputs.
double forward_cached(const FeatureTensor& f, const SohEstimator& w, std::vector<LayerCache>& lc,
                      HeadCache& hc, double dropout_p, std::uint64_t dropout_seed) {
    if (f.x.rows() != w.in_channels)
        throw ValidationError("feature tensor has " + std::to_string(f.x.rows()) +
                              " channels, estimator expects " + std::to_string(w.in_channels));
    const int T = static_cast<int>(f.x.cols());
    const int H = w.hidden;

    std::mt19937_64 mask_rng(mix_seed(dropout_seed, "dropout"));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    lc.resize(w.num_layers);
    for (int l = 0; l < w.num_layers; ++l) {
        LayerCache& c = lc[l];
        if (l == 0) {
            c.X = f.x;
        } else {
            c.X = lc[l - 1].O;
            if (lc[l - 1].mask.size() > 0) c.X = c.X.cwiseProduct(lc[l - 1].mask);
        }
        gru_dir_forward(w.dirs[2 * l], c.X, false, c.fwd);
        gru_dir_forward(w.dirs[2 * l + 1], c.X, true, c.bwd);
        c.O.resize(2 * H, T);
        c.O.topRows(H) = c.fwd.H;
        c.O.bottomRows(H) = c.bwd.H;
        if (dropout_p > 0.0 && l + 1 < w.num_layers) {
            c.mask.resize(2 * H, T);
            const double scale = 1.0 / (1.0 - dropout_p);
            for (Eigen::Index k = 0; k < c.mask.size(); ++k)
                c.mask.data()[k] = (u01(mask_rng) >= dropout_p) ? scale : 0.0;
        } else {
            c.mask.resize(0, 0);
        }
    }

    hc.rep.resize(w.rep_dim());
    for (int l = 0; l < w.num_layers; ++l) hc.rep.segment(2 * H * l, 2 * H) = lc[l].O.col(T - 1);
    hc.a1 = w.head_W1 * hc.rep + w.head_b1;
    hc.r1 = hc.a1.cwiseMax(0.0);
    hc.a2 = (w.head_W2 * hc.r1)(0) + w.head_b2;
    hc.yhat = sigmoid(hc.a2);
    return hc.yhat;
}

void backward_cached(const SohEstimator& w, const std::vector<LayerCache>& lc,
                     const HeadCache& hc, double dyhat, SohGradients& g) {
    const int H = w.hidden;
    const int T = static_cast<int>(lc[0].X.cols());

    const double da2 = dyhat * hc.yhat * (1.0 - hc.yhat);
    g.head_W2.noalias() += da2 * hc.r1.transpose();
    g.head_b2 += da2;
    VectorXd dr1 = w.head_W2.transpose() * da2;
    VectorXd da1 =
        dr1.cwiseProduct(hc.a1.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    g.head_W1.noalias() += da1 * hc.rep.transpose();
    g.head_b1 += da1;
    VectorXd drep = w.head_W1.transpose() * da1;

    MatrixXd dX_next;  // gradient on the next layer's input, from above
    for (int l = w.num_layers - 1; l >= 0; --l) {
        const LayerCache& c = lc[l];
        MatrixXd dO = MatrixXd::Zero(2 * H, T);
        if (l < w.num_layers - 1) {
            dO = dX_next;
            if (c.mask.size() > 0) dO = dO.cwiseProduct(c.mask);
        }
        dO.col(T - 1) += drep.segment(2 * H * l, 2 * H);

        MatrixXd dX = MatrixXd::Zero(c.X.rows(), T);
        gru_dir_backward(w.dirs[2 * l], c.X, c.fwd, dO.topRows(H), false, g.dirs[2 * l], dX);
        gru_dir_backward(w.dirs[2 * l + 1], c.X, c.bwd, dO.bottomRows(H), true, g.dirs[2 * l + 1],
                         dX);
        dX_next = std::move(dX);
    }
}

}  // namespace

double estimator_forward(const FeatureTensor& f, const SohEstimator& w, bool train_mode,
                         std::uint64_t seed) {
    std::vector<LayerCache> lc;
    HeadCache hc;
    return forward_cached(f, w, lc, hc, train_mode ? w.dropout_p : 0.0, seed);
}

double sample_loss_grad(const FeatureTensor& f, double label, const SohEstimator& w,
                        SohGradients& g, std::uint64_t dropout_seed, double dropout_p) {
    std::vector<LayerCache> lc;
    HeadCache hc;
    const double yhat = forward_cached(f, w, lc, hc, dropout_p, dropout_seed);
    const double err = yhat - label;
    backward_cached(w, lc, hc, 2.0 * err, g);
    return err * err;
}

// ---------------------------------------------------------------------------
// training

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (min_lr < 0.0 || min_lr > lr) throw ConfigError("min_lr must be in [0, lr]");
    if (ema < 0.0 || ema >= 1.0) throw ConfigError("ema must be in [0, 1)");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (epochs < 1 || batch < 1) throw ConfigError("epochs and batch must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
    if (train_frac <= 0.0 || train_frac + val_frac > 1.0)
        throw ConfigError("invalid train/val split fractions");
}

SplitIndices split_cycles(std::span<const LabeledSample> dataset, double train_frac,
                          double val_frac) {
    // group per cell, preserving order (samples per cell assumed chronological)
    std::vector<std::string> cells;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto it = std::find(cells.begin(), cells.end(), dataset[i].cell_id);
        if (it == cells.end()) {
            cells.push_back(dataset[i].cell_id);
            groups.emplace_back();
            it = cells.end() - 1;
        }
        groups[static_cast<std::size_t>(it - cells.begin())].push_back(i);
    }
    SplitIndices s;
    const double hold_frac = 1.0 - train_frac;
    const double val_share = hold_frac > 0.0 ? val_frac / hold_frac : 0.0;
    // r-th element of an evenly-spaced stripe of density f: the floor of the
    // cumulative count increments exactly on stripe members
    auto striped = [](std::size_t r, double f) {
        return std::floor((r + 1) * f) > std::floor(r * f);
    };
    for (auto& grp : groups) {
        std::stable_sort(grp.begin(), grp.end(), [&](std::size_t a, std::size_t b) {
            return dataset[a].cycle < dataset[b].cycle;
        });
        std::size_t held = 0;
        for (std::size_t r = 0; r < grp.size(); ++r) {
            if (!striped(r, hold_frac)) {
                s.train.push_back(grp[r]);
            } else {
                (striped(held, val_share) ? s.val : s.test).push_back(grp[r]);
                ++held;
            }
        }
    }
    return s;
}

namespace {

std::vector<std::pair<double*, std::size_t>> collect(SohGradients& g) {
    std::vector<std::pair<double*, std::size_t>> spans;
    g.for_each_param([&](double* p, std::size_t n) { spans.emplace_back(p, n); });
    return spans;
}

double mse_forward(const SohEstimator& w, const std::vector<FeatureTensor>& xs,
                   const std::vector<double>& ys, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i : idx) {
        const double e = estimator_forward(xs[i], w) - ys[i];
        s += e * e;
    }
    return s / idx.size();
}

}  // namespace

SohEstimator train_soh(std::span<const LabeledSample> dataset, const TrainConfig& cfg,
                       TrainReport* report) {
    cfg.validate();
    if (dataset.empty()) throw ValidationError("train_soh: empty dataset");
    for (const auto& s : dataset)
        if (!(s.soh > 0.0 && s.soh <= 1.0))
            throw ValidationError("SoH labels must lie in (0, 1]");

    const SplitIndices split = split_cycles(dataset, cfg.train_frac, cfg.val_frac);
    if (split.train.empty()) throw ValidationError("train split is empty");

    // normalization stats come from the training portion only
    std::vector<FeatureTensor> train_raw;
    train_raw.reserve(split.train.size());
    for (std::size_t i : split.train) train_raw.push_back(dataset[i].f);
    const NormStats stats = compute_stats(train_raw);

    std::vector<FeatureTensor> xs(dataset.size());
    std::vector<double> ys(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        xs[i] = dataset[i].f;
        apply_stats(xs[i], stats);
        ys[i] = dataset[i].soh;
    }

    const int channels = static_cast<int>(dataset.front().f.x.rows());
    SohEstimator w = SohEstimator::make(channels, cfg.hidden, cfg.head_hidden, 2, cfg.seed);
    w.dropout_p = cfg.dropout_p;
    w.stats = stats;

    SohGradients m = SohGradients::zeros_like(w);
    SohGradients v = SohGradients::zeros_like(w);
    SohGradients g = SohGradients::zeros_like(w);
    auto m_spans = collect(m);
    auto v_spans = collect(v);
    auto g_spans = collect(g);
    std::vector<std::pair<double*, std::size_t>> w_spans;
    w.for_each_param([&](double* p, std::size_t n) { w_spans.emplace_back(p, n); });

    int jobs = cfg.jobs;
#ifdef _OPENMP
    if (jobs <= 0) jobs = omp_get_max_threads();
#else
    jobs = 1;
#endif
    std::vector<SohGradients> slot_grads;
    for (int i = 0; i < cfg.batch; ++i) slot_grads.push_back(SohGradients::zeros_like(w));
    std::vector<std::vector<std::pair<double*, std::size_t>>> slot_spans;
    for (auto& sg : slot_grads) slot_spans.push_back(collect(sg));

    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    long adam_t = 0;

    // exponential moving average of the weights; the averaged model is what
    // gets validated and returned, which smooths late-training noise
    const bool use_ema = cfg.ema > 0.0;
    SohEstimator ema = w;
    std::vector<std::pair<double*, std::size_t>> ema_spans;
    ema.for_each_param([&](double* p, std::size_t n) { ema_spans.emplace_back(p, n); });

    SohEstimator best = w;
    double best_metric = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    if (report) *report = TrainReport{};

    std::vector<std::size_t> order = split.train;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x9e3779b9ULL + epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        // cosine decay from the peak rate to min_lr over the epoch budget
        const double cos_w =
            cfg.epochs > 1 ? 0.5 * (1.0 + std::cos(M_PI * epoch / (cfg.epochs - 1))) : 1.0;
        const double lr_e = cfg.min_lr + (cfg.lr - cfg.min_lr) * cos_w;

        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const int bn = static_cast<int>(std::min<std::size_t>(cfg.batch, order.size() - start));
            std::vector<double> slot_loss(bn, 0.0);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
#endif
            for (int s = 0; s < bn; ++s) {
                slot_grads[s].set_zero();
                const std::size_t idx = order[start + s];
                const std::uint64_t dseed =
                    mix_seed(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) + start + s);
                slot_loss[s] = sample_loss_grad(xs[idx], ys[idx], w, slot_grads[s], dseed,
                                                cfg.dropout_p);
            }

            // serial reduction in slot order keeps results independent of jobs
            g.set_zero();
            double batch_loss = 0.0;
            for (int s = 0; s < bn; ++s) {
                batch_loss += slot_loss[s];
                for (std::size_t k = 0; k < g_spans.size(); ++k) {
                    double* dst = g_spans[k].first;
                    const double* src = slot_spans[s][k].first;
                    for (std::size_t j = 0; j < g_spans[k].second; ++j) dst[j] += src[j];
                }
            }
            batch_loss /= bn;
            if (!std::isfinite(batch_loss))
                throw NumericError("training diverged at epoch " + std::to_string(epoch));
            epoch_loss += batch_loss * bn;
            seen += bn;

            ++adam_t;
            const double bc1 = 1.0 - std::pow(beta1, adam_t);
            const double bc2 = 1.0 - std::pow(beta2, adam_t);
            for (std::size_t k = 0; k < w_spans.size(); ++k) {
                double* wp = w_spans[k].first;
                double* mp = m_spans[k].first;
                double* vp = v_spans[k].first;
                const double* gp = g_spans[k].first;
                for (std::size_t j = 0; j < w_spans[k].second; ++j) {
                    const double grad = gp[j] / bn;
                    mp[j] = beta1 * mp[j] + (1.0 - beta1) * grad;
                    vp[j] = beta2 * vp[j] + (1.0 - beta2) * grad * grad;
                    const double step = (mp[j] / bc1) / (std::sqrt(vp[j] / bc2) + adam_eps);
                    wp[j] -= lr_e * (step + cfg.weight_decay * wp[j]);
                }
            }
            if (use_ema) {
                for (std::size_t k = 0; k < w_spans.size(); ++k) {
                    double* ep = ema_spans[k].first;
                    const double* wp = w_spans[k].first;
                    for (std::size_t j = 0; j < w_spans[k].second; ++j)
                        ep[j] = cfg.ema * ep[j] + (1.0 - cfg.ema) * wp[j];
                }
            }
        }
        epoch_loss /= seen;

        const SohEstimator& cand = use_ema ? ema : w;
        const double metric =
            split.val.empty() ? epoch_loss : mse_forward(cand, xs, ys, split.val);
        if (metric < best_metric) {
            best_metric = metric;
            best = cand;
            best.stats = stats;
            best_epoch = epoch;
        }
        if (report) {
            report->epoch_train_loss.push_back(epoch_loss);
            report->epoch_val_loss.push_back(metric);
        }
    }
    if (report) {
        report->best_val_loss = best_metric;
        report->best_epoch = best_epoch;
    }
    return best;
}

std::pair<double, double> evaluate_soh(const SohEstimator& w,
                                       std::span<const LabeledSample> dataset) {
    if (dataset.empty()) throw ValidationError("evaluate_soh: empty dataset");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (const auto& s : dataset) {
        FeatureTensor f = s.f;
        apply_stats(f, w.stats);
        const double e = estimator_forward(f, w) - s.soh;
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    return {abs_sum / dataset.size(), std::sqrt(sq_sum / dataset.size())};
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {
constexpr const char kMagic[] = "IBAM-SOH-v1\n";

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
void get(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
}
}  // namespace

void save_checkpoint(const SohEstimator& w, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint to " + path);
    out.write(kMagic, sizeof kMagic - 1);
    put<std::int32_t>(out, w.in_channels);
    put<std::int32_t>(out, w.hidden);
    put<std::int32_t>(out, w.head_hidden);
    put<std::int32_t>(out, w.num_layers);
    put<double>(out, w.dropout_p);
    for (Eigen::Index i = 0; i < w.stats.mean.size(); ++i) put<double>(out, w.stats.mean(i));
    for (Eigen::Index i = 0; i < w.stats.stdev.size(); ++i) put<double>(out, w.stats.stdev(i));
    put<std::uint64_t>(out, w.param_count());
    w.for_each_param([&](const double* p, std::size_t n) {
        out.write(reinterpret_cast<const char*>(p), n * sizeof(double));
    });
    if (!out) throw ConfigError("short write to checkpoint " + path);
}

SohEstimator load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read checkpoint from " + path);
    char magic[sizeof kMagic - 1];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw ParseError("not an IBAM-SOH-v1 checkpoint: " + path);
    std::int32_t channels, hidden, head_hidden, layers;
    get(in, channels);
    get(in, hidden);
    get(in, head_hidden);
    get(in, layers);
    SohEstimator w = SohEstimator::make(channels, hidden, head_hidden, layers, 0);
    get(in, w.dropout_p);
    w.stats.mean.resize(channels);
    w.stats.stdev.resize(channels);
    for (Eigen::Index i = 0; i < channels; ++i) get(in, w.stats.mean(i));
    for (Eigen::Index i = 0; i < channels; ++i) get(in, w.stats.stdev(i));
    std::uint64_t count;
    get(in, count);
    if (count != w.param_count())
        throw ParseError("checkpoint parameter count mismatch in " + path);
    w.for_each_param([&](double* p, std::size_t n) {
        in.read(reinterpret_cast<char*>(p), n * sizeof(double));
    });
    if (!in) throw ParseError("truncated checkpoint " + path);
    return w;
}

}  // namespace ibam
