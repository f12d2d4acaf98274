#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ibam/config.hpp"
#include "ibam/identify.hpp"
#include "ibam/ingest.hpp"
#include "ibam/mapping.hpp"
#include "ibam/soh.hpp"
#include "ibam/synth.hpp"

namespace fs = std::filesystem;
using namespace ibam;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    int jobs = 1;
};

std::string meta_line(const RunConfig& cfg, std::uint64_t seed) {
    std::ostringstream os;
    os << "ibam " << kVersion << " config=" << cfg.hash() << " seed=" << seed;
    return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::vector<ResampledCycle> load_cycles(const std::string& path, const RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open input file " + path);
    const auto logs = parse_cycle_log(in, cfg.ingest);
    if (logs.empty()) throw ValidationError("input file " + path + " holds no cycles");
    std::vector<ResampledCycle> cycles;
    cycles.reserve(logs.size());
    for (const auto& log : logs)
        cycles.push_back(resample_cycle(segment_discharge(log, cfg.ingest), cfg.ingest.grid_n));
    return cycles;
}

std::map<std::pair<std::string, int>, double> load_soh_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open labels file " + path);
    std::string line;
    std::vector<std::string> header;
    std::map<std::pair<std::string, int>, double> labels;
    int c_cell = -1, c_cycle = -1, c_soh = -1;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells = split_list(line);
        if (header.empty()) {
            header = cells;
            for (int i = 0; i < static_cast<int>(header.size()); ++i) {
                if (header[i] == "cell_id") c_cell = i;
                if (header[i] == "cycle") c_cycle = i;
                if (header[i] == "soh_true") c_soh = i;
            }
            if (c_cell < 0 || c_cycle < 0 || c_soh < 0)
                throw ParseError("labels file needs cell_id, cycle, soh_true columns");
            continue;
        }
        labels[{cells[c_cell], std::stoi(cells[c_cycle])}] = std::stod(cells[c_soh]);
    }
    return labels;
}

std::vector<LabeledSample> build_samples(const std::vector<ResampledCycle>& cycles,
                                         const std::map<std::pair<std::string, int>, double>& labels,
                                         const FeatureConfig& fc) {
    std::vector<LabeledSample> out;
    for (const auto& cyc : cycles) {
        auto it = labels.find({cyc.cell_id, cyc.cycle_index});
        if (it == labels.end())
            throw ValidationError("no SoH label for " + cyc.cell_id + "/" +
                                  std::to_string(cyc.cycle_index));
        LabeledSample s;
        s.f = build_features(cyc, fc);
        s.soh = it->second;
        s.cell_id = cyc.cell_id;
        s.cycle = cyc.cycle_index;
        out.push_back(std::move(s));
    }
    return out;
}

std::string category_of(const std::string& cell_id) {
    const auto pos = cell_id.find('-');
    return pos == std::string::npos ? cell_id : cell_id.substr(0, pos);
}

void write_checkpoint_meta(const std::string& ckpt_path, const RunConfig& cfg,
                           std::uint64_t seed) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["config_hash"] = cfg.hash();
    j["seed"] = seed;
    std::ofstream out(ckpt_path + ".meta.json");
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

int cmd_simulate(const GlobalArgs& g, const RunConfig& cfg, const std::string& profiles_arg,
                 int cells, int stride_flag) {
    std::vector<AgingProfile> profiles;
    for (const auto& name : split_list(profiles_arg)) {
        AgingProfile p = AgingProfile::preset(name);
        p.noise_sigma = cfg.synth_noise_sigma;
        p.cutoff_v = cfg.synth_cutoff_v;
        p.sim_dt = cfg.synth_sim_dt;
        profiles.push_back(p);
    }
    const int stride = stride_flag > 0 ? stride_flag : cfg.synth_cycle_stride;
    const Dataset ds = generate_dataset(profiles, cells, g.seed, stride);

    fs::create_directories(g.out_dir);
    {
        std::ofstream out(fs::path(g.out_dir) / "data.csv");
        write_data_csv(out, ds.logs, meta_line(cfg, g.seed));
    }
    {
        std::ofstream out(fs::path(g.out_dir) / "truth.csv");
        write_truth_csv(out, ds.truth, meta_line(cfg, g.seed));
    }
    std::cout << "wrote " << ds.logs.size() << " cycles for " << profiles.size() * cells
              << " cells to " << g.out_dir << "\n";
    return 0;
}

int cmd_fingerprint(const GlobalArgs& g, const RunConfig& cfg, const std::string& input,
                    const std::string& model_name, const std::string& output) {
    const auto cycles = load_cycles(input, cfg);
    const IdentConfig ident = cfg.ident_config();

    PhysicsModel model = PhysicsModel::Foecm;
    if (model_name == "ecm")
        model = PhysicsModel::Ecm;
    else if (model_name == "foecm-base")
        model = PhysicsModel::FoecmBase;
    else if (model_name != "foecm")
        throw ConfigError("unknown model '" + model_name + "' (ecm|foecm-base|foecm)");

    std::vector<CycleFingerprint> fps;
    std::vector<double> rmse(cycles.size());
    if (model == PhysicsModel::Foecm) {
        fps = extract_fingerprints(cycles, ident, g.jobs);
        for (std::size_t i = 0; i < cycles.size(); ++i)
            rmse[i] = fit_cycle_rmse(cycles[i], ident, model, cfg.ecm_c1);
    } else {
        fps.resize(cycles.size());
        for (std::size_t i = 0; i < cycles.size(); ++i) {
            CycleFingerprint fp;
            fp.cell_id = cycles[i].cell_id;
            fp.cycle_index = cycles[i].cycle_index;
            if (model == PhysicsModel::FoecmBase) {
                auto [r, e] = fit_rdyn(cycles[i], ident);
                fp.r_dyn = r;
                fp.eps1 = e;
            }
            rmse[i] = fit_cycle_rmse(cycles[i], ident, model, cfg.ecm_c1);
            if (model == PhysicsModel::Ecm) {
                fp.eps1 = rmse[i] * rmse[i] * cycles[i].n;
            }
            fps[i] = fp;
        }
    }

    fs::create_directories(fs::path(output).parent_path().empty()
                               ? "."
                               : fs::path(output).parent_path().string());
    std::ofstream out(output);
    if (!out) throw ConfigError("cannot write " + output);
    out << "# " << meta_line(cfg, g.seed) << " model=" << model_name << "\n";
    out << "cell_id,cycle,R_dyn_ohm,R_W_ohm,eps1_V2,eps2_V2,tail_fraction,soh_hat,rmse_mV\n";
    char buf[512];
    for (std::size_t i = 0; i < fps.size(); ++i) {
        const auto& fp = fps[i];
        std::snprintf(buf, sizeof buf, "%s,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%s,%.6g\n",
                      fp.cell_id.c_str(), fp.cycle_index, fp.r_dyn, fp.r_w, fp.eps1, fp.eps2,
                      fp.tail_fraction, fp.soh_hat < 0 ? "nan" : std::to_string(fp.soh_hat).c_str(),
                      rmse[i] * 1000.0);
        out << buf;
    }
    std::cout << "wrote " << fps.size() << " fingerprints to " << output << "\n";
    return 0;
}

int cmd_train_soh(const GlobalArgs& g, RunConfig cfg, const std::string& input,
                  const std::string& labels_path, int channels, int epochs,
                  const std::string& ckpt_path) {
    if (channels > 0) cfg.soh_channels = channels;
    if (epochs > 0) cfg.train.epochs = epochs;
    cfg.train.seed = g.seed;
    cfg.train.jobs = g.jobs;

    const auto cycles = load_cycles(input, cfg);
    const auto labels = load_soh_labels(labels_path);
    const auto samples = build_samples(cycles, labels, cfg.feature_config());

    TrainReport report;
    const SohEstimator model = train_soh(samples, cfg.train, &report);
    fs::create_directories(g.out_dir);
    const std::string path =
        ckpt_path.empty() ? (fs::path(g.out_dir) / "soh_checkpoint.bin").string() : ckpt_path;
    save_checkpoint(model, path);
    write_checkpoint_meta(path, cfg, g.seed);

    const auto split = split_cycles(samples, cfg.train.train_frac, cfg.train.val_frac);
    auto subset = [&](const std::vector<std::size_t>& idx) {
        std::vector<LabeledSample> v;
        for (auto i : idx) v.push_back(samples[i]);
        return v;
    };
    char buf[256];
    std::snprintf(buf, sizeof buf, "best_epoch=%d best_val_mse=%.8g\n", report.best_epoch,
                  report.best_val_loss);
    std::cout << buf;
    for (const char* name : {"train", "val", "test"}) {
        const auto& idx = std::string(name) == "train" ? split.train
                          : std::string(name) == "val" ? split.val
                                                       : split.test;
        if (idx.empty()) continue;
        auto [mae, rmse] = evaluate_soh(model, subset(idx));
        std::snprintf(buf, sizeof buf, "%s: n=%zu MAE=%.6f RMSE=%.6f\n", name, idx.size(), mae,
                      rmse);
        std::cout << buf;
    }
    std::cout << "checkpoint written to " << path << "\n";
    return 0;
}

int cmd_eval(const GlobalArgs&, const RunConfig& cfg, const std::string& input,
             const std::string& labels_path, const std::vector<std::string>& ckpts) {
    const auto cycles = load_cycles(input, cfg);
    const auto labels = load_soh_labels(labels_path);

    struct Arm {
        std::string name;
        SohEstimator model;
        std::vector<LabeledSample> samples;
    };
    std::vector<Arm> arms;
    for (const auto& path : ckpts) {
        Arm arm;
        arm.model = load_checkpoint(path);
        arm.name = std::to_string(arm.model.in_channels) + "-channel";
        FeatureConfig fc = cfg.feature_config();
        fc.channels = arm.model.in_channels;
        arm.samples = build_samples(cycles, labels, fc);
        arms.push_back(std::move(arm));
    }
    if (arms.empty()) throw ConfigError("eval needs at least one --checkpoint");

    // evaluate on the held-out (test) portion of the chronological split
    const auto split = split_cycles(arms[0].samples, cfg.train.train_frac,
                                           cfg.train.val_frac);
    std::vector<std::string> cats;
    for (auto i : split.test) {
        const std::string c = category_of(arms[0].samples[i].cell_id);
        if (std::find(cats.begin(), cats.end(), c) == cats.end()) cats.push_back(c);
    }

    std::cout << "category";
    for (const auto& arm : arms) std::cout << ",MAE[" << arm.name << "],RMSE[" << arm.name << "]";
    std::cout << "\n";
    char buf[64];
    auto print_row = [&](const std::string& cat, const std::vector<std::size_t>& idx) {
        std::cout << cat;
        for (const auto& arm : arms) {
            std::vector<LabeledSample> sub;
            for (auto i : idx) sub.push_back(arm.samples[i]);
            auto [mae, rmse] = evaluate_soh(arm.model, sub);
            std::snprintf(buf, sizeof buf, ",%.6f,%.6f", mae, rmse);
            std::cout << buf;
        }
        std::cout << "\n";
    };
    for (const auto& cat : cats) {
        std::vector<std::size_t> idx;
        for (auto i : split.test)
            if (category_of(arms[0].samples[i].cell_id) == cat) idx.push_back(i);
        print_row(cat, idx);
    }
    print_row("all", split.test);
    return 0;
}

int cmd_map(const GlobalArgs& g, const RunConfig& cfg, const std::string& fingerprints_path,
            const std::string& truth_path, const std::string& ckpt_path,
            const std::string& input_path, const std::string& output) {
    // fingerprints
    std::ifstream in(fingerprints_path);
    if (!in) throw ConfigError("cannot open " + fingerprints_path);
    std::string line;
    std::vector<std::string> header;
    struct Row {
        std::string cell;
        int cycle;
        double r_dyn, r_w, eps1, tail_fraction;
    };
    std::vector<Row> rows;
    std::map<std::string, int> col;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto cells = split_list(line);
        if (header.empty()) {
            header = cells;
            for (int i = 0; i < static_cast<int>(header.size()); ++i) col[header[i]] = i;
            for (const char* need : {"cell_id", "cycle", "R_dyn_ohm", "R_W_ohm", "eps1_V2",
                                     "tail_fraction"})
                if (!col.count(need))
                    throw ParseError("fingerprints file lacks column " + std::string(need));
            continue;
        }
        rows.push_back({cells[col["cell_id"]], std::stoi(cells[col["cycle"]]),
                        std::stod(cells[col["R_dyn_ohm"]]), std::stod(cells[col["R_W_ohm"]]),
                        std::stod(cells[col["eps1_V2"]]), std::stod(cells[col["tail_fraction"]])});
    }
    if (rows.empty()) throw ValidationError("no fingerprints in " + fingerprints_path);

    // SoH coordinates: sidecar labels or BiGRU predictions
    std::map<std::pair<std::string, int>, double> soh;
    if (!truth_path.empty()) {
        soh = load_soh_labels(truth_path);
    } else if (!ckpt_path.empty() && !input_path.empty()) {
        const SohEstimator model = load_checkpoint(ckpt_path);
        FeatureConfig fc = cfg.feature_config();
        fc.channels = model.in_channels;
        for (const auto& cyc : load_cycles(input_path, cfg)) {
            FeatureTensor f = build_features(cyc, fc, &model.stats);
            soh[{cyc.cell_id, cyc.cycle_index}] = estimator_forward(f, model);
        }
    } else {
        throw ConfigError("map needs either --truth or both --checkpoint and --input");
    }

    std::vector<double> s, r_dyn, r_w, eps1, tail;
    std::size_t cells_seen = 0;
    std::map<std::string, bool> seen;
    for (const auto& r : rows) {
        auto it = soh.find({r.cell, r.cycle});
        if (it == soh.end())
            throw ValidationError("no SoH coordinate for " + r.cell + "/" +
                                  std::to_string(r.cycle));
        s.push_back(it->second);
        r_dyn.push_back(r.r_dyn);
        r_w.push_back(r.r_w);
        eps1.push_back(r.eps1);
        tail.push_back(r.tail_fraction);
        if (!seen[r.cell]) {
            seen[r.cell] = true;
            ++cells_seen;
        }
    }

    const auto w_dyn = weights_rdyn(eps1, cfg.mapping.eps0);
    const auto w_w = weights_rw(tail, cfg.mapping.f_min);
    const auto curve_dyn = isotonic_fit(s, r_dyn, w_dyn, cfg.mapping.increasing_dyn);
    const auto curve_w = isotonic_fit(s, r_w, w_w, cfg.mapping.increasing_w);
    LookupTable tbl = build_lookup(curve_dyn, curve_w, cfg.mapping);
    std::ostringstream built;
    built << "cells=" << cells_seen << " cycles=" << rows.size() << " ibam=" << kVersion
          << " config=" << cfg.hash() << " seed=" << g.seed;
    tbl.built_from = built.str();
    save_lookup(tbl, output);
    std::cout << "wrote lookup table (" << tbl.soh_refs.size() << " reference points) to "
              << output << "\n";
    return 0;
}

int cmd_query(const RunConfig& cfg, const std::string& table_path, double s) {
    if (s < 0.0 || s > 1.0) throw ConfigError("--soh must lie in [0, 1]");
    const LookupTable tbl = load_lookup(table_path);
    auto [r_dyn, r_w] = query_lookup(tbl, s);
    nlohmann::json j;
    j["soh"] = s;
    j["r_dyn_ohm"] = r_dyn;
    j["r_w_ohm"] = r_w;
    j["version"] = kVersion;
    j["config_hash"] = cfg.hash();
    std::cout << j.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"battery aging fingerprints from routine discharge logs"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON config file (overrides defaults)");
    app.add_option("--seed", g.seed, "RNG seed");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--jobs", g.jobs, "worker threads (outputs are independent of this)");

    auto* sim = app.add_subcommand("simulate", "generate a labeled synthetic dataset");
    std::string profiles = "short,medium,long";
    int cells = 1, stride = 0;
    sim->add_option("--profiles", profiles, "comma-separated preset names");
    sim->add_option("--cells", cells, "cells per profile");
    sim->add_option("--stride", stride, "cycle stride (default from config)");

    auto* fp = app.add_subcommand("fingerprint", "per-cycle two-stage identification");
    std::string input, model_name = "foecm", output = "fingerprints.csv";
    fp->add_option("--input", input, "data.csv")->required();
    fp->add_option("--model", model_name, "ecm|foecm-base|foecm");
    fp->add_option("--output", output, "fingerprint CSV path");

    auto* tr = app.add_subcommand("train-soh", "train the SoH estimator");
    std::string tr_input, tr_labels, tr_ckpt;
    int tr_channels = 0, tr_epochs = 0;
    tr->add_option("--input", tr_input, "data.csv")->required();
    tr->add_option("--labels", tr_labels, "truth.csv with soh_true")->required();
    tr->add_option("--channels", tr_channels, "1 or 4 (default from config)");
    tr->add_option("--epochs", tr_epochs, "override epoch count");
    tr->add_option("--checkpoint", tr_ckpt, "checkpoint output path");

    auto* ev = app.add_subcommand("eval", "evaluate checkpoints on the held-out split");
    std::string ev_input, ev_labels;
    std::vector<std::string> ev_ckpts;
    ev->add_option("--input", ev_input, "data.csv")->required();
    ev->add_option("--labels", ev_labels, "truth.csv")->required();
    ev->add_option("--checkpoint", ev_ckpts, "checkpoint path (repeatable)")->required();

    auto* mp = app.add_subcommand("map", "isotonic SoH-domain mapping and lookup table");
    std::string mp_fps, mp_truth, mp_ckpt, mp_input, mp_output = "lookup.json";
    mp->add_option("--fingerprints", mp_fps, "fingerprints.csv")->required();
    mp->add_option("--truth", mp_truth, "truth.csv for SoH coordinates");
    mp->add_option("--checkpoint", mp_ckpt, "SoH checkpoint for predicted coordinates");
    mp->add_option("--input", mp_input, "data.csv (with --checkpoint)");
    mp->add_option("--output", mp_output, "lookup table path");

    auto* qr = app.add_subcommand("query", "interpolate the lookup table at an SoH");
    std::string qr_table;
    double qr_soh = 0.9;
    qr->add_option("--table", qr_table, "lookup.json")->required();
    qr->add_option("--soh", qr_soh, "query SoH in [0, 1]")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = load_config(g.config_path);
        if (sim->parsed()) return cmd_simulate(g, cfg, profiles, cells, stride);
        if (fp->parsed()) return cmd_fingerprint(g, cfg, input, model_name, output);
        if (tr->parsed())
            return cmd_train_soh(g, cfg, tr_input, tr_labels, tr_channels, tr_epochs, tr_ckpt);
        if (ev->parsed()) return cmd_eval(g, cfg, ev_input, ev_labels, ev_ckpts);
        if (mp->parsed()) return cmd_map(g, cfg, mp_fps, mp_truth, mp_ckpt, mp_input, mp_output);
        if (qr->parsed()) return cmd_query(cfg, qr_table, qr_soh);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
