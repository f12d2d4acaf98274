#include "ibam/identify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ibam {

void IdentConfig::validate() const {
    if (!(rdyn_lo >= 0.0) || !(rdyn_lo < rdyn_hi))
        throw ConfigError("R_dyn bracket must satisfy 0 <= lo < hi");
    if (!(rw_lo >= 0.0) || !(rw_lo < rw_hi))
        throw ConfigError("R_W bracket must satisfy 0 <= lo < hi");
    if (!(tol > 0.0)) throw ConfigError("minimizer tolerance must be positive");
    if (scan_points < 2) throw ConfigError("scan_points must be >= 2");
    if (rate_c < 0.0) throw ConfigError("rate_c must be >= 0");
    if (max_refine < 0) throw ConfigError("max_refine must be >= 0");
    if (refine < 1) throw ConfigError("refine must be >= 1");
}

double minimize_scalar(const std::function<double(double)>& f, double lo, double hi, double tol,
                       int scan_points) {
    // coarse scan pins the basin; golden section refines inside it
    double best_x = lo, best_f = f(lo);
    const double step = (hi - lo) / (scan_points - 1);
    int best_i = 0;
    for (int i = 1; i < scan_points; ++i) {
        const double x = (i == scan_points - 1) ? hi : lo + step * i;
        const double fx = f(x);
        if (fx < best_f) {
            best_f = fx;
            best_x = x;
            best_i = i;
        }
    }
    double a = (best_i == 0) ? lo : lo + step * (best_i - 1);
    double b = (best_i == scan_points - 1) ? hi : lo + step * (best_i + 1);

    constexpr double invphi = 0.6180339887498949;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        }
    }
    const double mid = 0.5 * (a + b);
    const double fmid = f(mid);
    if (fmid <= best_f) {
        best_f = fmid;
        best_x = mid;
    }
    return best_x;
}

namespace {

FoecmParams cycle_theta(const ResampledCycle& cycle, const IdentConfig& cfg) {
    FoecmParams p = cfg.theta;
    if (cfg.rate_c > 0.0) {
        const double mean_i =
            std::accumulate(cycle.I.begin(), cycle.I.end(), 0.0) / cycle.I.size();
        if (mean_i > 0.0) p.Q = mean_i / cfg.rate_c;
    }
    return p;
}

double sse_full(const std::vector<double>& pred, const std::vector<double>& meas) {
    double s = 0.0;
    for (std::size_t i = 0; i < meas.size(); ++i) {
        const double d = meas[i] - pred[i];
        s += d * d;
    }
    return s;
}

}  // namespace

std::pair<double, double> fit_rdyn(const ResampledCycle& cycle, const IdentConfig& cfg) {
    cfg.validate();
    FoecmParams theta = cycle_theta(cycle, cfg);
    theta.R_W = 0.0;  // stage-1 predictor disables the tail
    auto objective = [&](double r_dyn) {
        theta.R_dyn = r_dyn;
        return sse_full(simulate_foecm(cycle.I, cycle.dt, theta, cfg.memory, cfg.refine),
                        cycle.V);
    };
    const double r = minimize_scalar(objective, cfg.rdyn_lo, cfg.rdyn_hi, cfg.tol, cfg.scan_points);
    return {r, objective(r)};
}

std::vector<int> gate_tail(const ResampledCycle& cycle, double v_gate) {
    std::vector<int> idx;
    for (int i = 0; i < cycle.n; ++i)
        if (cycle.V[i] <= v_gate) idx.push_back(i);
    return idx;
}

RwFit fit_rw(const ResampledCycle& cycle, double r_dyn, const IdentConfig& cfg) {
    cfg.validate();
    const auto gate = gate_tail(cycle, cfg.v_gate);
    if (gate.empty())
        throw TailUnobservableError("cycle " + cycle.cell_id + "/" +
                                    std::to_string(cycle.cycle_index) +
                                    ": no samples at or below the low-voltage gate");

    FoecmParams theta = cycle_theta(cycle, cfg);
    theta.R_dyn = r_dyn;
    auto objective = [&](double r_w) {
        theta.R_W = r_w;
        const auto pred = simulate_foecm(cycle.I, cycle.dt, theta, cfg.memory, cfg.refine);
        double s = 0.0;
        for (int i : gate) {
            const double d = cycle.V[i] - pred[i];
            s += d * d;
        }
        return s;
    };
    RwFit fit;
    fit.r_w = minimize_scalar(objective, cfg.rw_lo, cfg.rw_hi, cfg.tol, cfg.scan_points);
    fit.eps2 = objective(fit.r_w);
    fit.tail_fraction = static_cast<double>(gate.size()) / cycle.n;
    return fit;
}

namespace {

// Full-curve re-fit of R_dyn with the tail term held fixed at r_w.
std::pair<double, double> refit_rdyn(const ResampledCycle& cycle, double r_w,
                                     const IdentConfig& cfg) {
    FoecmParams theta = cycle_theta(cycle, cfg);
    theta.R_W = r_w;
    auto objective = [&](double r_dyn) {
        theta.R_dyn = r_dyn;
        return sse_full(simulate_foecm(cycle.I, cycle.dt, theta, cfg.memory, cfg.refine),
                        cycle.V);
    };
    const double r =
        minimize_scalar(objective, cfg.rdyn_lo, cfg.rdyn_hi, cfg.tol, cfg.scan_points);
    return {r, objective(r)};
}

}  // namespace

CycleFingerprint extract_fingerprint(const ResampledCycle& cycle, const IdentConfig& cfg) {
    CycleFingerprint fp;
    fp.cell_id = cycle.cell_id;
    fp.cycle_index = cycle.cycle_index;
    auto [r_dyn, eps1] = fit_rdyn(cycle, cfg);
    fp.r_dyn = r_dyn;
    fp.eps1 = eps1;
    try {
        RwFit fit = fit_rw(cycle, fp.r_dyn, cfg);
        fp.tail_fraction = fit.tail_fraction;
        // The tail-free stage-1 fit soaks part of the tail drop into R_dyn,
        // which in turn biases the gated stage-2 fit. Alternating the two 1-D
        // stages with the other parameter held fixed contracts that coupling
        // geometrically; stop once both estimates settle within tolerance.
        for (int round = 0; round < cfg.max_refine; ++round) {
            const auto [r_dyn_next, eps1_next] = refit_rdyn(cycle, fit.r_w, cfg);
            const RwFit fit_next = fit_rw(cycle, r_dyn_next, cfg);
            const bool settled = std::abs(r_dyn_next - fp.r_dyn) < cfg.tol &&
                                 std::abs(fit_next.r_w - fit.r_w) < cfg.tol;
            fp.r_dyn = r_dyn_next;
            fp.eps1 = eps1_next;
            fit = fit_next;
            if (settled) break;
        }
        fp.r_w = fit.r_w;
        fp.eps2 = fit.eps2;
        // report the full-curve residual of the final joint fit
        FoecmParams theta = cycle_theta(cycle, cfg);
        theta.R_dyn = fp.r_dyn;
        theta.R_W = fp.r_w;
        fp.eps1 = sse_full(simulate_foecm(cycle.I, cycle.dt, theta, cfg.memory, cfg.refine),
                           cycle.V);
    } catch (const TailUnobservableError&) {
        fp.r_w = cfg.rw_lo;
        fp.eps2 = 0.0;
        fp.tail_fraction = 0.0;
        fp.tail_observable = false;
    }
    return fp;
}

std::vector<CycleFingerprint> extract_fingerprints_serial(std::span<const ResampledCycle> cycles,
                                                          const IdentConfig& cfg) {
    std::vector<CycleFingerprint> out(cycles.size());
    for (std::size_t i = 0; i < cycles.size(); ++i) out[i] = extract_fingerprint(cycles[i], cfg);
    return out;
}

std::vector<CycleFingerprint> extract_fingerprints(std::span<const ResampledCycle> cycles,
                                                   const IdentConfig& cfg, int jobs) {
    std::vector<CycleFingerprint> out(cycles.size());
    const auto n = static_cast<std::int64_t>(cycles.size());
#ifdef _OPENMP
    if (jobs <= 0) jobs = omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
    for (std::int64_t i = 0; i < n; ++i) out[i] = extract_fingerprint(cycles[i], cfg);
#else
    (void)jobs;
    for (std::int64_t i = 0; i < n; ++i) out[i] = extract_fingerprint(cycles[i], cfg);
#endif
    return out;
}

double fit_cycle_rmse(const ResampledCycle& cycle, const IdentConfig& cfg, PhysicsModel model,
                      double ecm_c1) {
    cfg.validate();
    const FoecmParams theta = cycle_theta(cycle, cfg);
    double sse = 0.0;
    switch (model) {
        case PhysicsModel::Ecm: {
            EcmParams p;
            p.R0 = theta.R0;
            p.Q = theta.Q;
            p.soc0 = theta.soc0;
            p.pairs = {{1.0, ecm_c1}};
            auto objective = [&](double r1) {
                p.pairs[0].R = std::max(r1, 1e-12);
                return sse_full(simulate_ecm(cycle.I, cycle.dt, p, theta.ocv), cycle.V);
            };
            const double r = minimize_scalar(objective, cfg.rdyn_lo, cfg.rdyn_hi, cfg.tol,
                                             cfg.scan_points);
            p.pairs[0].R = std::max(r, 1e-12);
            sse = sse_full(simulate_ecm(cycle.I, cycle.dt, p, theta.ocv), cycle.V);
            break;
        }
        case PhysicsModel::FoecmBase: {
            FoecmParams p = theta;
            p.R_dyn = fit_rdyn(cycle, cfg).first;
            p.R_W = 0.0;
            sse = sse_full(simulate_foecm(cycle.I, cycle.dt, p, cfg.memory, cfg.refine), cycle.V);
            break;
        }
        case PhysicsModel::Foecm: {
            FoecmParams p = theta;
            const CycleFingerprint fp = extract_fingerprint(cycle, cfg);
            p.R_dyn = fp.r_dyn;
            p.R_W = fp.r_w;
            sse = sse_full(simulate_foecm(cycle.I, cycle.dt, p, cfg.memory, cfg.refine), cycle.V);
            break;
        }
    }
    return std::sqrt(sse / cycle.n);
}

}  // namespace ibam
