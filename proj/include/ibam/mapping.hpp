#pragma once

#include <span>
#include <string>
#include <vector>

#include "ibam/common.hpp"

namespace ibam {

// Step curve fitted by isotonic regression: value y[i] at breakpoint s[i],
// s strictly increasing, y monotone per the direction flag.
struct IsotonicCurve {
    std::vector<double> s;
    std::vector<double> y;
    bool increasing = true;  // true: y non-decreasing in s
};

struct MappingConfig {
    double eps0 = 1e-6;   // stability constant, volts^2
    double f_min = 0.01;  // tail-fraction floor
    int k = 25;           // lookup reference points
    double soh_lo = 0.80;
    double soh_hi = 1.00;
    bool increasing_dyn = false;  // resistances fall as SoH rises
    bool increasing_w = false;

    void validate() const;
};

// w_i = 1 / (eps1_i + eps0)
std::vector<double> weights_rdyn(std::span<const double> eps1, double eps0);

// w_i = max(f_i, f_min)
std::vector<double> weights_rw(std::span<const double> tail_fractions, double f_min);

// Weighted pool-adjacent-violators. Points are sorted by s internally and
// equal-s points pre-pooled by weighted mean.
IsotonicCurve isotonic_fit(std::span<const double> s, std::span<const double> y,
                           std::span<const double> w, bool increasing);

// Step-function evaluation with endpoint extension outside the support.
double curve_eval(const IsotonicCurve& c, double s);

struct LookupTable {
    std::vector<double> soh_refs;  // k points, evenly spaced
    std::vector<double> r_dyn;     // ohms
    std::vector<double> r_w;       // ohms
    bool increasing_dyn = false;
    bool increasing_w = false;
    std::string built_from;  // cell id(s), cycle count, config hash
};

LookupTable build_lookup(const IsotonicCurve& curve_dyn, const IsotonicCurve& curve_w,
                         const MappingConfig& cfg);

// Linear interpolation between neighboring reference points; s outside the
// table range clamps to the nearest endpoint.
std::pair<double, double> query_lookup(const LookupTable& tbl, double s);

void save_lookup(const LookupTable& tbl, const std::string& path);
LookupTable load_lookup(const std::string& path);

}  // namespace ibam
