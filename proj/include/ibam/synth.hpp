#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ibam/ingest.hpp"
#include "ibam/physics.hpp"

namespace ibam {

// Parametric aging schedule for one lifespan category. SoH falls linearly
// from 1 at cycle 0 to 0.80 at eol_cycle. R_dyn grows linearly; R_W grows as
// a power law whose exponent separates the lifespan categories.
struct AgingProfile {
    std::string name;     // short | medium | long
    int eol_cycle = 648;
    double q0_ah = 1.1;   // beginning-of-life capacity
    double rate_c = 4.0;  // discharge C-rate relative to current capacity
    double noise_sigma = 0.005;  // volts, additive on V only
    double cutoff_v = 2.0;
    double sim_dt = 1.0;  // raw sampling period, seconds
    double r0 = 0.01;
    double rdyn_bol = 0.0, rdyn_eol = 0.0;       // linear schedule endpoints
    double rw_bol = 0.0, rw_gain = 0.0, rw_exp = 1.0;  // rw(x) = rw_bol + gain*x^exp
    double cpe_q = 50.0, cpe_alpha = 0.7, tau_w = 100.0;
    OcvModel ocv = OcvModel::default_table();

    static AgingProfile preset(const std::string& name);
    static std::vector<std::string> preset_names();
};

struct ScheduledParams {
    double q_ah = 0.0;
    double r_dyn = 0.0;
    double r_w = 0.0;
    double soh = 1.0;
};

// Evaluates the schedules at cycle c. Throws ConfigError past eol_cycle.
ScheduledParams aging_schedule(const AgingProfile& profile, int c);

struct GeneratedCycle {
    CycleLog log;
    FoecmParams truth;
    double soh_true = 1.0;
};

// Constant-current discharge at rate_c * Q_c from SoC 1 until the clean
// simulated voltage crosses cutoff_v; seeded Gaussian noise is then added to
// V only. scale jitters the resistance schedules (per-cell variation).
GeneratedCycle generate_cycle(const AgingProfile& profile, int c, std::uint64_t seed,
                              double rdyn_scale = 1.0, double rw_scale = 1.0);

struct TruthRow {
    std::string cell_id;
    int cycle = 0;
    double q_ah = 0.0, r_dyn = 0.0, r_w = 0.0, soh_true = 1.0;
};

struct Dataset {
    std::vector<CycleLog> logs;
    std::vector<TruthRow> truth;
};

// Deterministic per seed; cell RNG streams derive from (seed, cell_id) so
// per-cell parallel generation cannot change the output. cycle_stride
// subsamples the cycle axis (cycle 0 and eol_cycle always included).
Dataset generate_dataset(std::span<const AgingProfile> profiles, int cells_per_profile,
                         std::uint64_t seed, int cycle_stride = 1);

void write_data_csv(std::ostream& out, std::span<const CycleLog> logs,
                    const std::string& meta_comment = "");
void write_truth_csv(std::ostream& out, std::span<const TruthRow> truth,
                     const std::string& meta_comment = "");

}  // namespace ibam
