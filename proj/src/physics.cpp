#include "ibam/physics.hpp"

#include <algorithm>
#include <cmath>

namespace ibam {

void OcvModel::validate() const {
    if (soc_knots.size() < 2 || soc_knots.size() != v_knots.size())
        throw ConfigError("OCV table needs >= 2 matching knots");
    if (soc_knots.front() != 0.0 || soc_knots.back() != 1.0)
        throw ConfigError("OCV knots must cover [0, 1]");
    for (std::size_t i = 1; i < soc_knots.size(); ++i) {
        if (soc_knots[i] <= soc_knots[i - 1])
            throw ConfigError("OCV soc knots must be strictly increasing");
        if (v_knots[i] < v_knots[i - 1])
            throw ConfigError("OCV voltage must be non-decreasing with SoC");
    }
}

OcvModel OcvModel::default_table() {
    OcvModel m;
    m.soc_knots = {0.0, 0.1, 0.3, 0.7, 1.0};
    m.v_knots = {2.0, 2.8, 3.05, 3.25, 3.3};
    return m;
}

double ocv(double soc, const OcvModel& m) {
    if (soc <= m.soc_knots.front()) return m.v_knots.front();
    if (soc >= m.soc_knots.back()) return m.v_knots.back();
    auto it = std::upper_bound(m.soc_knots.begin(), m.soc_knots.end(), soc);
    std::size_t i = static_cast<std::size_t>(it - m.soc_knots.begin()) - 1;
    const double w = (soc - m.soc_knots[i]) / (m.soc_knots[i + 1] - m.soc_knots[i]);
    return m.v_knots[i] + w * (m.v_knots[i + 1] - m.v_knots[i]);
}

std::vector<double> coulomb_count(std::span<const double> I, double dt, double soc0, double Q_ah) {
    if (!(Q_ah > 0.0)) throw ConfigError("capacity Q must be positive");
    const double q_as = Q_ah * 3600.0;  // amp-seconds
    std::vector<double> soc(I.size());
    double charge = 0.0;
    for (std::size_t i = 0; i < I.size(); ++i) {
        if (i > 0) charge += 0.5 * (I[i] + I[i - 1]) * dt;
        soc[i] = soc0 - charge / q_as;
    }
    return soc;
}

GlKernel gl_weights(double alpha, int L, double dt) {
    if (L < 1) throw ConfigError("GL kernel length must be >= 1");
    GlKernel k;
    k.alpha = alpha;
    k.dt = dt;
    k.L = L;
    k.weights.resize(L);
    k.weights[0] = 1.0;
    for (int j = 1; j < L; ++j)
        k.weights[j] = k.weights[j - 1] * (1.0 - (alpha + 1.0) / j);
    return k;
}

std::vector<double> simulate_ecm(std::span<const double> I, double dt, const EcmParams& p,
                                 const OcvModel& m) {
    if (p.pairs.empty()) throw ConfigError("ECM needs at least one RC pair");
    m.validate();
    const auto soc = coulomb_count(I, dt, p.soc0, p.Q);
    const std::size_t n = I.size();
    std::vector<double> V(n);
    std::vector<double> v(p.pairs.size(), 0.0);
    std::vector<double> decay(p.pairs.size());
    for (std::size_t j = 0; j < p.pairs.size(); ++j)
        decay[j] = std::exp(-dt / (p.pairs[j].R * p.pairs[j].C));

    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) {
            // exact ZOH update with current held at I[i-1] over the step
            for (std::size_t j = 0; j < p.pairs.size(); ++j)
                v[j] = v[j] * decay[j] + I[i - 1] * p.pairs[j].R * (1.0 - decay[j]);
        }
        double drop = I[i] * p.R0;
        for (double vj : v) drop += vj;
        V[i] = ocv(soc[i], m) - drop;
    }
    return V;
}

std::vector<double> simulate_cpe_parallel(std::span<const double> I, double dt, double R_dyn,
                                          double cpe_Q, double cpe_alpha, int L) {
    const std::size_t n = I.size();
    std::vector<double> v(n, 0.0);
    if (R_dyn == 0.0 || n == 0) return v;
    if (!(cpe_Q > 0.0) || !(cpe_alpha > 0.0) || !(cpe_alpha <= 1.0))
        throw ConfigError("CPE requires cpe_Q > 0 and cpe_alpha in (0, 1]");
    if (L <= 0 || L > static_cast<int>(n)) L = static_cast<int>(n);

    const auto kern = gl_weights(cpe_alpha, L, dt);
    const double a = cpe_Q * std::pow(dt, -cpe_alpha);
    const double denom = a + 1.0 / R_dyn;
    for (std::size_t k = 0; k < n; ++k) {
        double hist = 0.0;
        const std::size_t jmax = std::min<std::size_t>(k, static_cast<std::size_t>(L - 1));
        for (std::size_t j = 1; j <= jmax; ++j) hist += kern.weights[j] * v[k - j];
        v[k] = (I[k] - a * hist) / denom;
    }
    return v;
}

std::vector<double> simulate_warburg(std::span<const double> I, double dt, double R_W,
                                     double tau_W, int L) {
    if (!(tau_W > 0.0)) throw ConfigError("Warburg tau_W must be positive");
    const std::size_t n = I.size();
    std::vector<double> v(n, 0.0);
    if (R_W == 0.0 || n == 0) return v;
    if (L <= 0 || L > static_cast<int>(n)) L = static_cast<int>(n);

    // kernel[m] integrates (t_k - tau)^(-1/2) over the m-th step back
    std::vector<double> kernel(L);
    for (int m = 1; m <= L; ++m)
        kernel[m - 1] = std::sqrt(static_cast<double>(m)) - std::sqrt(static_cast<double>(m - 1));
    const double scale = R_W / std::sqrt(tau_W) * 2.0 * std::sqrt(dt) / std::sqrt(M_PI);

    for (std::size_t k = 1; k < n; ++k) {
        double acc = 0.0;
        const std::size_t mmax = std::min<std::size_t>(k, static_cast<std::size_t>(L));
        for (std::size_t m = 1; m <= mmax; ++m) acc += kernel[m - 1] * I[k - m];
        v[k] = scale * acc;
    }
    return v;
}

void FoecmParams::validate() const {
    if (!(cpe_alpha > 0.0 && cpe_alpha < 1.0))
        throw ConfigError("cpe_alpha must be in (0, 1)");
    if (!(tau_W > 0.0)) throw ConfigError("tau_W must be positive");
    if (!(cpe_Q > 0.0)) throw ConfigError("cpe_Q must be positive");
    if (R0 < 0.0 || R_dyn < 0.0 || R_W < 0.0) throw ConfigError("resistances must be >= 0");
    ocv.validate();
}

std::vector<double> simulate_foecm(std::span<const double> I, double dt, const FoecmParams& p,
                                   int memory, int refine) {
    p.validate();
    if (refine < 1) throw ConfigError("refine must be >= 1");
    if (refine > 1 && I.size() >= 2) {
        // Integrate the fractional terms on a refined grid and decimate back.
        // The discrete CPE/Warburg responses converge to the continuous ones
        // as the step shrinks, so refined simulation is nearly independent of
        // the sampling grid of the input.
        const std::size_t n = I.size();
        const std::size_t nf = (n - 1) * static_cast<std::size_t>(refine) + 1;
        std::vector<double> If(nf);
        for (std::size_t k = 0; k + 1 < n; ++k)
            for (int s = 0; s < refine; ++s)
                If[k * refine + s] =
                    I[k] + (I[k + 1] - I[k]) * (static_cast<double>(s) / refine);
        If[nf - 1] = I[n - 1];
        const int memf = memory > 0 ? memory * refine : 0;
        const auto Vf = simulate_foecm(If, dt / refine, p, memf, 1);
        std::vector<double> V(n);
        for (std::size_t k = 0; k < n; ++k) V[k] = Vf[k * refine];
        return V;
    }
    const auto soc = coulomb_count(I, dt, p.soc0, p.Q);
    const auto v_dyn = simulate_cpe_parallel(I, dt, p.R_dyn, p.cpe_Q, p.cpe_alpha, memory);
    const auto v_w = simulate_warburg(I, dt, p.R_W, p.tau_W, memory);
    std::vector<double> V(I.size());
    for (std::size_t i = 0; i < I.size(); ++i)
        V[i] = ocv(soc[i], p.ocv) - I[i] * p.R0 - v_dyn[i] - v_w[i];
    return V;
}

}  // namespace ibam
