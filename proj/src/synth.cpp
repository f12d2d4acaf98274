#include "ibam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

namespace ibam {

AgingProfile AgingProfile::preset(const std::string& name) {
    AgingProfile p;
    p.name = name;
    if (name == "short") {
        p.eol_cycle = 648;
        p.rdyn_bol = 0.060;
        p.rdyn_eol = 0.082;
        p.rw_bol = 0.010;
        p.rw_gain = 0.112;
        p.rw_exp = 2.0;  // steep late tail growth
    } else if (name == "medium") {
        p.eol_cycle = 1155;
        p.rdyn_bol = 0.065;
        p.rdyn_eol = 0.087;
        p.rw_bol = 0.009;
        p.rw_gain = 0.0546;
        p.rw_exp = 1.6;
    } else if (name == "long") {
        p.eol_cycle = 1636;
        p.rdyn_bol = 0.070;
        p.rdyn_eol = 0.092;
        p.rw_bol = 0.008;
        p.rw_gain = 0.02216;
        p.rw_exp = 1.3;
    } else {
        throw ConfigError("unknown aging profile '" + name + "'");
    }
    return p;
}

std::vector<std::string> AgingProfile::preset_names() { return {"short", "medium", "long"}; }

ScheduledParams aging_schedule(const AgingProfile& profile, int c) {
    if (c < 0 || c > profile.eol_cycle)
        throw ConfigError("cycle " + std::to_string(c) + " outside schedule support [0, " +
                          std::to_string(profile.eol_cycle) + "]");
    const double x = static_cast<double>(c) / profile.eol_cycle;
    ScheduledParams s;
    s.soh = 1.0 - 0.2 * x;
    s.q_ah = profile.q0_ah * s.soh;
    s.r_dyn = profile.rdyn_bol + (profile.rdyn_eol - profile.rdyn_bol) * x;
    s.r_w = profile.rw_bol + profile.rw_gain * std::pow(x, profile.rw_exp);
    return s;
}

GeneratedCycle generate_cycle(const AgingProfile& profile, int c, std::uint64_t seed,
                              double rdyn_scale, double rw_scale) {
    const ScheduledParams sched = aging_schedule(profile, c);

    GeneratedCycle out;
    out.soh_true = sched.soh;
    FoecmParams& p = out.truth;
    p.R0 = profile.r0;
    p.R_dyn = sched.r_dyn * rdyn_scale;
    p.R_W = sched.r_w * rw_scale;
    p.cpe_Q = profile.cpe_q;
    p.cpe_alpha = profile.cpe_alpha;
    p.tau_W = profile.tau_w;
    p.Q = sched.q_ah;
    p.soc0 = 1.0;
    p.ocv = profile.ocv;

    const double current = profile.rate_c * sched.q_ah;  // amperes
    const double dt = profile.sim_dt;
    // full nominal discharge takes 3600/rate seconds; allow slack for the
    // cutoff scan before declaring the simulation stuck
    const int horizon = static_cast<int>(1.5 * 3600.0 / profile.rate_c / dt) + 2;
    std::vector<double> I(horizon, current);
    const auto V = simulate_foecm(I, dt, p, horizon);

    int n_keep = 0;
    while (n_keep < horizon && V[n_keep] >= profile.cutoff_v) ++n_keep;
    if (n_keep == horizon)
        throw NumericError("cycle " + std::to_string(c) + " of profile " + profile.name +
                           " never reached the cutoff voltage within the safety horizon");
    if (n_keep < 2)
        throw NumericError("cycle " + std::to_string(c) + " of profile " + profile.name +
                           " starts below the cutoff voltage");

    CycleLog& log = out.log;
    log.cycle_index = c;
    log.t.resize(n_keep);
    log.V.resize(n_keep);
    log.I.assign(I.begin(), I.begin() + n_keep);
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < n_keep; ++i) {
        log.t[i] = dt * i;
        log.V[i] = V[i] + (profile.noise_sigma > 0.0 ? profile.noise_sigma * noise(rng) : 0.0);
    }
    return out;
}

Dataset generate_dataset(std::span<const AgingProfile> profiles, int cells_per_profile,
                         std::uint64_t seed, int cycle_stride) {
    if (profiles.empty()) throw ConfigError("generate_dataset needs at least one profile");
    if (cells_per_profile < 1) throw ConfigError("cells_per_profile must be >= 1");
    if (cycle_stride < 1) throw ConfigError("cycle_stride must be >= 1");

    Dataset ds;
    for (const AgingProfile& profile : profiles) {
        for (int cell = 0; cell < cells_per_profile; ++cell) {
            const std::string cell_id = profile.name + "-" + std::to_string(cell);
            const std::uint64_t cell_seed = mix_seed(seed, cell_id);
            // small deterministic per-cell spread on the resistance schedules
            std::mt19937_64 jitter_rng(cell_seed);
            std::uniform_real_distribution<double> jitter(-0.03, 0.03);
            const double rdyn_scale = 1.0 + jitter(jitter_rng);
            const double rw_scale = 1.0 + jitter(jitter_rng);

            for (int c = 0;; c += cycle_stride) {
                const int cc = std::min(c, profile.eol_cycle);
                GeneratedCycle g = generate_cycle(profile, cc, cell_seed, rdyn_scale, rw_scale);
                g.log.cell_id = cell_id;
                ds.truth.push_back(
                    {cell_id, cc, g.truth.Q, g.truth.R_dyn, g.truth.R_W, g.soh_true});
                ds.logs.push_back(std::move(g.log));
                if (cc == profile.eol_cycle) break;
            }
        }
    }
    return ds;
}

namespace {
void write_double(std::ostream& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
}
}  // namespace

void write_data_csv(std::ostream& out, std::span<const CycleLog> logs,
                    const std::string& meta_comment) {
    if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
    out << "cell_id,cycle,t_s,voltage_V,current_A\n";
    for (const CycleLog& log : logs) {
        for (std::size_t i = 0; i < log.size(); ++i) {
            out << log.cell_id << "," << log.cycle_index << ",";
            write_double(out, log.t[i]);
            out << ",";
            write_double(out, log.V[i]);
            out << ",";
            write_double(out, log.I[i]);
            out << "\n";
        }
    }
}

void write_truth_csv(std::ostream& out, std::span<const TruthRow> truth,
                     const std::string& meta_comment) {
    if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
    out << "cell_id,cycle,Q_Ah,R_dyn_ohm,R_W_ohm,soh_true\n";
    for (const TruthRow& r : truth) {
        out << r.cell_id << "," << r.cycle << ",";
        write_double(out, r.q_ah);
        out << ",";
        write_double(out, r.r_dyn);
        out << ",";
        write_double(out, r.r_w);
        out << ",";
        write_double(out, r.soh_true);
        out << "\n";
    }
}

}  // namespace ibam
