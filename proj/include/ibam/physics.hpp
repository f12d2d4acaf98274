#pragma once

#include <span>
#include <vector>

#include "ibam/common.hpp"

namespace ibam {

// Monotone piecewise-linear OCV table over SoC in [0,1].
struct OcvModel {
    std::vector<double> soc_knots;  // strictly increasing, covering [0,1]
    std::vector<double> v_knots;    // non-decreasing with SoC

    void validate() const;
    // 5-knot table spanning 3.3 V -> 2.0 V over SoC 1 -> 0, for synthetic work
    static OcvModel default_table();
};

// Piecewise-linear OCV lookup; soc outside [0,1] clamps to the endpoints.
double ocv(double soc, const OcvModel& m);

// SoC(t_i) = soc0 - (1/Q) * integral of I, trapezoidal, Q in amp-hours.
// Not clamped.
std::vector<double> coulomb_count(std::span<const double> I, double dt, double soc0, double Q_ah);

// Grunwald-Letnikov kernel for fractional order alpha (negative = integral).
struct GlKernel {
    double alpha = 0.0;
    double dt = 0.0;
    int L = 0;
    std::vector<double> weights;  // weights[0] = 1, w_j = w_{j-1} * (1 - (alpha+1)/j)
};

GlKernel gl_weights(double alpha, int L, double dt = 0.0);

struct RcPair {
    double R = 0.0;  // ohms, > 0
    double C = 0.0;  // farads, > 0
};

struct EcmParams {
    double R0 = 0.0;
    std::vector<RcPair> pairs;
    double Q = 1.1;     // amp-hours
    double soc0 = 1.0;  // fraction
};

// V(t) = V0(SoC) - I*R0 - sum v_i, each pair advanced by the exact
// zero-order-hold discretization. All pair states start at zero.
std::vector<double> simulate_ecm(std::span<const double> I, double dt, const EcmParams& p,
                                 const OcvModel& m);

// Solves cpe_Q * D^alpha v + v / R_dyn = I via implicit Grunwald-Letnikov
// with memory length L. R_dyn = 0 returns all zeros.
std::vector<double> simulate_cpe_parallel(std::span<const double> I, double dt, double R_dyn,
                                          double cpe_Q, double cpe_alpha, int L);

// Half-order diffusion tail: v_W = (R_W/sqrt(tau_W)) * D^{-1/2} I, realized
// by product-integration quadrature of the Riemann-Liouville convolution
// assuming zero-order-hold current (exact for step inputs). Memory L steps.
std::vector<double> simulate_warburg(std::span<const double> I, double dt, double R_W,
                                     double tau_W, int L);

struct FoecmParams {
    double R0 = 0.01;       // ohms
    double R_dyn = 0.0;     // ohms
    double cpe_Q = 50.0;     // siemens * s^alpha
    double cpe_alpha = 0.7; // in (0,1)
    double R_W = 0.0;       // ohms
    double tau_W = 100.0;   // seconds
    double Q = 1.1;         // amp-hours
    double soc0 = 1.0;
    OcvModel ocv = OcvModel::default_table();

    void validate() const;
};

// V = V0(SoC) - I*R0 - v_dyn - v_W. memory = 0 uses the full grid length.
// refine > 1 integrates the fractional terms on a grid refined by that factor
// (current linearly interpolated) and decimates back, which makes the result
// nearly independent of the input sampling rate.
std::vector<double> simulate_foecm(std::span<const double> I, double dt, const FoecmParams& p,
                                   int memory = 0, int refine = 1);

}  // namespace ibam
