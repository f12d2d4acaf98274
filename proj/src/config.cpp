#include "ibam/config.hpp"

#include <fstream>
#include <sstream>

namespace ibam {

using nlohmann::json;

IdentConfig RunConfig::ident_config() const {
    IdentConfig c;
    c.v_gate = v_gate;
    c.rdyn_lo = rdyn_lo;
    c.rdyn_hi = rdyn_hi;
    c.rw_lo = rw_lo;
    c.rw_hi = rw_hi;
    c.tol = ident_tol;
    c.theta = physics;
    c.theta.R_dyn = 0.0;
    c.theta.R_W = 0.0;
    c.rate_c = rate_c;
    c.scan_points = scan_points;
    c.max_refine = max_refine;
    c.refine = ident_refine;
    return c;
}

FeatureConfig RunConfig::feature_config() const {
    FeatureConfig f;
    f.ocv = physics.ocv;
    f.rate_c = rate_c;
    f.q_ah = physics.Q;
    f.soc0 = physics.soc0;
    f.channels = soh_channels;
    return f;
}

json RunConfig::to_json() const {
    json j;
    j["ingest"] = {{"grid_n", ingest.grid_n}, {"discharge_positive", ingest.discharge_positive}};
    j["physics"] = {{"r0", physics.R0},
                    {"cpe_q", physics.cpe_Q},
                    {"cpe_alpha", physics.cpe_alpha},
                    {"tau_w", physics.tau_W},
                    {"q_ah", physics.Q},
                    {"soc0", physics.soc0},
                    {"ocv_soc", physics.ocv.soc_knots},
                    {"ocv_v", physics.ocv.v_knots}};
    j["ident"] = {{"v_gate", v_gate},
                  {"rdyn_bracket", {rdyn_lo, rdyn_hi}},
                  {"rw_bracket", {rw_lo, rw_hi}},
                  {"tol", ident_tol},
                  {"rate_c", rate_c},
                  {"scan_points", scan_points},
                  {"max_refine", max_refine},
                  {"refine", ident_refine},
                  {"ecm_c1", ecm_c1}};
    j["soh"] = {{"channels", soh_channels},
                {"hidden", train.hidden},
                {"head_hidden", train.head_hidden},
                {"lr", train.lr},
                {"min_lr", train.min_lr},
                {"ema", train.ema},
                {"weight_decay", train.weight_decay},
                {"epochs", train.epochs},
                {"batch", train.batch},
                {"dropout", train.dropout_p},
                {"train_frac", train.train_frac},
                {"val_frac", train.val_frac}};
    j["mapping"] = {{"eps0", mapping.eps0},
                    {"f_min", mapping.f_min},
                    {"k", mapping.k},
                    {"soh_range", {mapping.soh_lo, mapping.soh_hi}},
                    {"increasing_dyn", mapping.increasing_dyn},
                    {"increasing_w", mapping.increasing_w}};
    j["synth"] = {{"noise_sigma", synth_noise_sigma},
                  {"cutoff_v", synth_cutoff_v},
                  {"sim_dt", synth_sim_dt},
                  {"cycle_stride", synth_cycle_stride}};
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    const auto& ing = j.at("ingest");
    c.ingest.grid_n = ing.at("grid_n").get<int>();
    c.ingest.discharge_positive = ing.at("discharge_positive").get<bool>();
    const auto& ph = j.at("physics");
    c.physics.R0 = ph.at("r0").get<double>();
    c.physics.cpe_Q = ph.at("cpe_q").get<double>();
    c.physics.cpe_alpha = ph.at("cpe_alpha").get<double>();
    c.physics.tau_W = ph.at("tau_w").get<double>();
    c.physics.Q = ph.at("q_ah").get<double>();
    c.physics.soc0 = ph.at("soc0").get<double>();
    c.physics.ocv.soc_knots = ph.at("ocv_soc").get<std::vector<double>>();
    c.physics.ocv.v_knots = ph.at("ocv_v").get<std::vector<double>>();
    const auto& id = j.at("ident");
    c.v_gate = id.at("v_gate").get<double>();
    c.rdyn_lo = id.at("rdyn_bracket").at(0).get<double>();
    c.rdyn_hi = id.at("rdyn_bracket").at(1).get<double>();
    c.rw_lo = id.at("rw_bracket").at(0).get<double>();
    c.rw_hi = id.at("rw_bracket").at(1).get<double>();
    c.ident_tol = id.at("tol").get<double>();
    c.rate_c = id.at("rate_c").get<double>();
    c.scan_points = id.at("scan_points").get<int>();
    c.max_refine = id.at("max_refine").get<int>();
    c.ident_refine = id.at("refine").get<int>();
    c.ecm_c1 = id.at("ecm_c1").get<double>();
    const auto& soh = j.at("soh");
    c.soh_channels = soh.at("channels").get<int>();
    c.train.hidden = soh.at("hidden").get<int>();
    c.train.head_hidden = soh.at("head_hidden").get<int>();
    c.train.lr = soh.at("lr").get<double>();
    c.train.min_lr = soh.at("min_lr").get<double>();
    c.train.ema = soh.at("ema").get<double>();
    c.train.weight_decay = soh.at("weight_decay").get<double>();
    c.train.epochs = soh.at("epochs").get<int>();
    c.train.batch = soh.at("batch").get<int>();
    c.train.dropout_p = soh.at("dropout").get<double>();
    c.train.train_frac = soh.at("train_frac").get<double>();
    c.train.val_frac = soh.at("val_frac").get<double>();
    const auto& mp = j.at("mapping");
    c.mapping.eps0 = mp.at("eps0").get<double>();
    c.mapping.f_min = mp.at("f_min").get<double>();
    c.mapping.k = mp.at("k").get<int>();
    c.mapping.soh_lo = mp.at("soh_range").at(0).get<double>();
    c.mapping.soh_hi = mp.at("soh_range").at(1).get<double>();
    c.mapping.increasing_dyn = mp.at("increasing_dyn").get<bool>();
    c.mapping.increasing_w = mp.at("increasing_w").get<bool>();
    const auto& sy = j.at("synth");
    c.synth_noise_sigma = sy.at("noise_sigma").get<double>();
    c.synth_cutoff_v = sy.at("cutoff_v").get<double>();
    c.synth_sim_dt = sy.at("sim_dt").get<double>();
    c.synth_cycle_stride = sy.at("cycle_stride").get<int>();
    return c;
}

std::string RunConfig::hash() const {
    const std::string dump = to_json().dump();
    const std::uint64_t h = fnv1a64(dump);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

// overlay `patch` onto `base`, rejecting keys absent from the defaults
void merge_checked(json& base, const json& patch, const std::string& prefix) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
        if (base[it.key()].is_object() && it.value().is_object())
            merge_checked(base[it.key()], it.value(), path);
        else
            base[it.key()] = it.value();
    }
}

}  // namespace

RunConfig load_config(const std::string& path) {
    json base = RunConfig{}.to_json();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        json user;
        try {
            in >> user;
        } catch (const json::exception& e) {
            throw ConfigError("bad config file " + path + ": " + e.what());
        }
        if (!user.is_object()) throw ConfigError("config root must be a JSON object");
        merge_checked(base, user, "");
    }
    return RunConfig::from_json(base);
}

}  // namespace ibam
