#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ibam/synth.hpp"

using namespace ibam;

TEST_CASE("aging_schedule hits its endpoints and mid-life anchors") {
    for (const auto& name : AgingProfile::preset_names()) {
        const auto p = AgingProfile::preset(name);
        const auto bol = aging_schedule(p, 0);
        CHECK(bol.soh == doctest::Approx(1.0));
        CHECK(bol.q_ah == doctest::Approx(p.q0_ah));
        const auto eol = aging_schedule(p, p.eol_cycle);
        CHECK(eol.soh == doctest::Approx(0.80));
        CHECK(eol.q_ah == doctest::Approx(0.80 * p.q0_ah));
        CHECK(eol.r_dyn > bol.r_dyn);
        CHECK(eol.r_w > bol.r_w);
        CHECK_THROWS_AS(aging_schedule(p, p.eol_cycle + 1), ConfigError);
        CHECK_THROWS_AS(aging_schedule(p, -1), ConfigError);
    }
    // mid-life fingerprints for the extreme lifespan categories
    const auto s = AgingProfile::preset("short");
    const auto ms = aging_schedule(s, s.eol_cycle / 2);
    CHECK(ms.soh == doctest::Approx(0.90));
    CHECK(ms.r_dyn == doctest::Approx(0.071).epsilon(1e-6));
    CHECK(ms.r_w == doctest::Approx(0.038).epsilon(1e-6));
    const auto l = AgingProfile::preset("long");
    const auto ml = aging_schedule(l, l.eol_cycle / 2);
    CHECK(ml.soh == doctest::Approx(0.90));
    CHECK(ml.r_dyn == doctest::Approx(0.081).epsilon(1e-6));
    CHECK(ml.r_w == doctest::Approx(0.017).epsilon(1e-2));
    // end-of-discharge tail loss separates the categories at equal SoH
    CHECK(ms.r_w > ml.r_w);
}

TEST_CASE("preset lifespans are ordered") {
    CHECK(AgingProfile::preset("short").eol_cycle < AgingProfile::preset("medium").eol_cycle);
    CHECK(AgingProfile::preset("medium").eol_cycle < AgingProfile::preset("long").eol_cycle);
    CHECK_THROWS_AS(AgingProfile::preset("forever"), ConfigError);
}

TEST_CASE("generate_cycle is deterministic and physically sensible") {
    const auto p = AgingProfile::preset("short");
    const auto a = generate_cycle(p, 100, 77);
    const auto b = generate_cycle(p, 100, 77);
    CHECK(a.log.V == b.log.V);
    CHECK(a.log.t == b.log.t);
    const auto c = generate_cycle(p, 100, 78);
    CHECK(a.log.V != c.log.V);  // noise stream differs by seed

    // constant-current discharge at rate_c relative to the aged capacity
    const auto sched = aging_schedule(p, 100);
    for (double i_k : a.log.I) CHECK(i_k == doctest::Approx(p.rate_c * sched.q_ah));
    CHECK(a.soh_true == doctest::Approx(sched.soh));
    CHECK(a.truth.R_dyn == doctest::Approx(sched.r_dyn));
    CHECK(a.truth.R_W == doctest::Approx(sched.r_w));

    // enough raw samples for a meaningful 150-point grid, and a sane duration
    CHECK(a.log.size() > 300);
    CHECK(a.log.t.back() < 1.2 * 3600.0 / p.rate_c);
    // discharge reaches the cutoff region
    double v_min = 1e9;
    for (double v : a.log.V) v_min = std::min(v_min, v);
    CHECK(v_min < p.cutoff_v + 0.1);
}

TEST_CASE("generate_dataset covers cycle 0 and the EoL cycle") {
    auto p = AgingProfile::preset("short");
    p.eol_cycle = 10;  // keep the test small
    const Dataset ds = generate_dataset(std::vector<AgingProfile>{p}, 1, 5, 4);
    REQUIRE(!ds.logs.empty());
    CHECK(ds.logs.front().cycle_index == 0);
    CHECK(ds.logs.back().cycle_index == 10);
    CHECK(ds.logs.size() == ds.truth.size());
    // stride 4 over [0,10] plus the forced final cycle
    CHECK(ds.logs.size() == 4);  // cycles 0, 4, 8, 10
    CHECK(ds.truth.front().soh_true == doctest::Approx(1.0));
    CHECK(ds.truth.back().soh_true == doctest::Approx(0.80));
    CHECK(ds.logs.front().cell_id == "short-0");
}

TEST_CASE("generate_dataset is reproducible and cell-jittered") {
    auto p = AgingProfile::preset("short");
    p.eol_cycle = 6;
    const auto profs = std::vector<AgingProfile>{p};
    const Dataset a = generate_dataset(profs, 2, 9, 3);
    const Dataset b = generate_dataset(profs, 2, 9, 3);
    REQUIRE(a.logs.size() == b.logs.size());
    for (std::size_t i = 0; i < a.logs.size(); ++i) CHECK(a.logs[i].V == b.logs[i].V);

    // the two cells carry distinct jittered schedules
    CHECK(a.truth[0].cell_id != a.truth.back().cell_id);
    CHECK(a.truth[0].r_dyn != doctest::Approx(a.truth[3].r_dyn).epsilon(1e-12));
}

TEST_CASE("data CSV round-trips through the ingest parser") {
    auto p = AgingProfile::preset("short");
    p.eol_cycle = 4;
    const Dataset ds = generate_dataset(std::vector<AgingProfile>{p}, 1, 13, 2);
    std::ostringstream os;
    write_data_csv(os, ds.logs, "unit test meta");
    CHECK(os.str().rfind("# unit test meta", 0) == 0);

    std::istringstream in(os.str());
    const auto logs = parse_cycle_log(in, IngestConfig{});
    REQUIRE(logs.size() == ds.logs.size());
    for (std::size_t i = 0; i < logs.size(); ++i) {
        CHECK(logs[i].cell_id == ds.logs[i].cell_id);
        CHECK(logs[i].cycle_index == ds.logs[i].cycle_index);
        REQUIRE(logs[i].size() == ds.logs[i].size());
        for (std::size_t k = 0; k < logs[i].size(); ++k) {
            CHECK(logs[i].V[k] == ds.logs[i].V[k]);  // %.17g is lossless
            CHECK(logs[i].t[k] == ds.logs[i].t[k]);
            CHECK(logs[i].I[k] == ds.logs[i].I[k]);
        }
    }
}

TEST_CASE("truth CSV carries the schedule") {
    auto p = AgingProfile::preset("medium");
    p.eol_cycle = 4;
    const Dataset ds = generate_dataset(std::vector<AgingProfile>{p}, 1, 1, 2);
    std::ostringstream os;
    write_truth_csv(os, ds.truth, "");
    const std::string s = os.str();
    CHECK(s.find("cell_id,cycle,Q_Ah,R_dyn_ohm,R_W_ohm,soh_true") != std::string::npos);
    CHECK(s.find("medium-0") != std::string::npos);
}
