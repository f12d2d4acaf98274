#include "ibam/mapping.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace ibam {

void MappingConfig::validate() const {
    if (!(eps0 > 0.0)) throw ConfigError("eps0 must be positive");
    if (!(f_min >= 0.0)) throw ConfigError("f_min must be >= 0");
    if (k < 2) throw ConfigError("lookup needs k >= 2 reference points");
    if (!(soh_lo < soh_hi)) throw ConfigError("soh range must be ordered");
}

std::vector<double> weights_rdyn(std::span<const double> eps1, double eps0) {
    if (!(eps0 > 0.0)) throw ConfigError("eps0 must be positive");
    std::vector<double> w(eps1.size());
    for (std::size_t i = 0; i < eps1.size(); ++i) w[i] = 1.0 / (eps1[i] + eps0);
    return w;
}

std::vector<double> weights_rw(std::span<const double> tail_fractions, double f_min) {
    std::vector<double> w(tail_fractions.size());
    for (std::size_t i = 0; i < tail_fractions.size(); ++i)
        w[i] = std::max(tail_fractions[i], f_min);
    return w;
}

IsotonicCurve isotonic_fit(std::span<const double> s, std::span<const double> y,
                           std::span<const double> w, bool increasing) {
    if (s.empty()) throw ValidationError("isotonic_fit: empty input");
    if (s.size() != y.size() || s.size() != w.size())
        throw ValidationError("isotonic_fit: length mismatch");
    for (double wi : w)
        if (!(wi > 0.0)) throw ValidationError("isotonic_fit: weights must be positive");

    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });

    // pre-pool equal-s points by weighted mean
    std::vector<double> ps, py, pw;
    for (std::size_t idx : order) {
        if (!ps.empty() && s[idx] == ps.back()) {
            const double wt = pw.back() + w[idx];
            py.back() = (py.back() * pw.back() + y[idx] * w[idx]) / wt;
            pw.back() = wt;
        } else {
            ps.push_back(s[idx]);
            py.push_back(y[idx]);
            pw.push_back(w[idx]);
        }
    }

    const double sign = increasing ? 1.0 : -1.0;
    struct Block {
        double mean, weight;
        std::size_t count;
    };
    std::vector<Block> blocks;
    for (std::size_t i = 0; i < py.size(); ++i) {
        blocks.push_back({sign * py[i], pw[i], 1});
        while (blocks.size() >= 2 &&
               blocks[blocks.size() - 2].mean > blocks.back().mean) {
            Block b = blocks.back();
            blocks.pop_back();
            Block& a = blocks.back();
            const double wt = a.weight + b.weight;
            a.mean = (a.mean * a.weight + b.mean * b.weight) / wt;
            a.weight = wt;
            a.count += b.count;
        }
    }

    IsotonicCurve out;
    out.increasing = increasing;
    out.s = std::move(ps);
    out.y.reserve(out.s.size());
    for (const Block& b : blocks)
        for (std::size_t j = 0; j < b.count; ++j) out.y.push_back(sign * b.mean);
    return out;
}

double curve_eval(const IsotonicCurve& c, double s) {
    if (c.s.empty()) throw ValidationError("curve_eval: empty curve");
    if (s <= c.s.front()) return c.y.front();
    if (s >= c.s.back()) return c.y.back();
    auto it = std::upper_bound(c.s.begin(), c.s.end(), s);
    return c.y[static_cast<std::size_t>(it - c.s.begin()) - 1];
}

LookupTable build_lookup(const IsotonicCurve& curve_dyn, const IsotonicCurve& curve_w,
                         const MappingConfig& cfg) {
    cfg.validate();
    LookupTable tbl;
    tbl.increasing_dyn = curve_dyn.increasing;
    tbl.increasing_w = curve_w.increasing;
    tbl.soh_refs.resize(cfg.k);
    tbl.r_dyn.resize(cfg.k);
    tbl.r_w.resize(cfg.k);
    const double step = (cfg.soh_hi - cfg.soh_lo) / (cfg.k - 1);
    for (int i = 0; i < cfg.k; ++i) {
        const double s = (i == cfg.k - 1) ? cfg.soh_hi : cfg.soh_lo + step * i;
        tbl.soh_refs[i] = s;
        tbl.r_dyn[i] = curve_eval(curve_dyn, s);
        tbl.r_w[i] = curve_eval(curve_w, s);
    }
    return tbl;
}

std::pair<double, double> query_lookup(const LookupTable& tbl, double s) {
    if (tbl.soh_refs.empty()) throw ValidationError("query_lookup: empty table");
    if (s <= tbl.soh_refs.front()) return {tbl.r_dyn.front(), tbl.r_w.front()};
    if (s >= tbl.soh_refs.back()) return {tbl.r_dyn.back(), tbl.r_w.back()};
    auto it = std::upper_bound(tbl.soh_refs.begin(), tbl.soh_refs.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - tbl.soh_refs.begin()) - 1;
    const double w = (s - tbl.soh_refs[i]) / (tbl.soh_refs[i + 1] - tbl.soh_refs[i]);
    return {tbl.r_dyn[i] + w * (tbl.r_dyn[i + 1] - tbl.r_dyn[i]),
            tbl.r_w[i] + w * (tbl.r_w[i + 1] - tbl.r_w[i])};
}

void save_lookup(const LookupTable& tbl, const std::string& path) {
    nlohmann::json j;
    j["soh_refs"] = tbl.soh_refs;
    j["r_dyn_ohm"] = tbl.r_dyn;
    j["r_w_ohm"] = tbl.r_w;
    j["direction"] = {{"r_dyn_increasing_in_soh", tbl.increasing_dyn},
                      {"r_w_increasing_in_soh", tbl.increasing_w}};
    j["built_from"] = tbl.built_from;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write lookup table to " + path);
    out << j.dump(2) << "\n";
}

LookupTable load_lookup(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read lookup table from " + path);
    nlohmann::json j;
    in >> j;
    LookupTable tbl;
    tbl.soh_refs = j.at("soh_refs").get<std::vector<double>>();
    tbl.r_dyn = j.at("r_dyn_ohm").get<std::vector<double>>();
    tbl.r_w = j.at("r_w_ohm").get<std::vector<double>>();
    tbl.increasing_dyn = j.at("direction").at("r_dyn_increasing_in_soh").get<bool>();
    tbl.increasing_w = j.at("direction").at("r_w_increasing_in_soh").get<bool>();
    tbl.built_from = j.value("built_from", "");
    return tbl;
}

}  // namespace ibam
