#pragma once

#include <string>

#include <json.hpp>

#include "ibam/identify.hpp"
#include "ibam/ingest.hpp"
#include "ibam/mapping.hpp"
#include "ibam/soh.hpp"

namespace ibam {

// Merged run configuration for the CLI. Every field has a default; a config
// file overrides by section and unknown keys are rejected.
struct RunConfig {
    IngestConfig ingest;
    FoecmParams physics;   // fixed identification physics (R_dyn/R_W ignored)
    double v_gate = 2.4;
    double rdyn_lo = 0.0, rdyn_hi = 1.0;
    double rw_lo = 0.0, rw_hi = 1.0;
    double ident_tol = 1e-6;
    double rate_c = 4.0;   // capacity-inference C-rate; 0 disables
    int scan_points = 33;
    int max_refine = 200;
    int ident_refine = 1;
    double ecm_c1 = 100.0;
    int soh_channels = 4;
    TrainConfig train;
    MappingConfig mapping;
    double synth_noise_sigma = 0.005;
    double synth_cutoff_v = 2.0;
    double synth_sim_dt = 1.0;
    int synth_cycle_stride = 12;

    IdentConfig ident_config() const;
    FeatureConfig feature_config() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    std::string hash() const;  // hex digest of the canonical serialization
};

// Defaults overlaid with the file's sections; unknown keys are an error.
RunConfig load_config(const std::string& path);

}  // namespace ibam
