#include <doctest.h>

#include <sstream>

#include "ibam/ingest.hpp"

using namespace ibam;

namespace {

const char* kSample =
    "# comment line\n"
    "cell_id,cycle,t_s,voltage_V,current_A,temp_C\n"
    "A,1,0.0,3.30,4.4,25\n"
    "A,1,1.0,3.28,4.4,25\n"
    "A,1,2.0,3.26,4.4,25\n"
    "# interleaved comment\n"
    "B,7,0.0,3.31,4.4,26\n"
    "B,7,2.0,3.27,4.4,26\n"
    "A,2,0.0,3.29,4.4,25\n"
    "A,2,1.5,3.25,4.4,25\n";

}  // namespace

TEST_CASE("parse_cycle_log splits by (cell, cycle) in first-appearance order") {
    std::istringstream in(kSample);
    const auto logs = parse_cycle_log(in, IngestConfig{});
    REQUIRE(logs.size() == 3);
    CHECK(logs[0].cell_id == "A");
    CHECK(logs[0].cycle_index == 1);
    CHECK(logs[0].size() == 3);
    CHECK(logs[1].cell_id == "B");
    CHECK(logs[1].cycle_index == 7);
    CHECK(logs[2].cell_id == "A");
    CHECK(logs[2].cycle_index == 2);
    CHECK(logs[0].t == std::vector<double>{0.0, 1.0, 2.0});
    CHECK(logs[0].V[1] == doctest::Approx(3.28));
    CHECK(logs[0].temp.size() == 3);
}

TEST_CASE("parse_cycle_log works without the optional temperature column") {
    std::istringstream in(
        "cell_id,cycle,t_s,voltage_V,current_A\n"
        "A,1,0,3.3,4.4\n"
        "A,1,1,3.2,4.4\n");
    const auto logs = parse_cycle_log(in, IngestConfig{});
    REQUIRE(logs.size() == 1);
    CHECK(logs[0].temp.empty());
}

TEST_CASE("parse_cycle_log reports the line of a malformed field") {
    std::istringstream in(
        "cell_id,cycle,t_s,voltage_V,current_A\n"
        "A,1,0,3.3,4.4\n"
        "A,1,oops,3.2,4.4\n");
    try {
        parse_cycle_log(in, IngestConfig{});
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
}

TEST_CASE("parse_cycle_log requires the mandatory columns") {
    std::istringstream in("cell_id,cycle,t_s,voltage_V\nA,1,0,3.3\n");
    CHECK_THROWS_AS(parse_cycle_log(in, IngestConfig{}), ParseError);
}

TEST_CASE("CycleLog validation rejects non-increasing time") {
    CycleLog log;
    log.cell_id = "A";
    log.t = {0.0, 1.0, 1.0};
    log.V = {3.3, 3.2, 3.1};
    log.I = {1.0, 1.0, 1.0};
    CHECK_THROWS_AS(log.validate(), ValidationError);
}

TEST_CASE("CycleLog validation rejects non-positive voltage") {
    CycleLog log;
    log.cell_id = "A";
    log.t = {0.0, 1.0};
    log.V = {3.3, 0.0};
    log.I = {1.0, 1.0};
    CHECK_THROWS_AS(log.validate(), ValidationError);
}

TEST_CASE("segment_discharge keeps the longest discharge-sign run") {
    CycleLog log;
    log.cell_id = "A";
    // rest(1), discharge(2), rest(1), discharge(3) -> second run wins
    log.t = {0, 1, 2, 3, 4, 5, 6};
    log.V = {3.3, 3.2, 3.1, 3.3, 3.2, 3.1, 3.0};
    log.I = {0.0, 2.0, 2.0, -1.0, 2.0, 2.0, 2.0};
    const auto seg = segment_discharge(log, IngestConfig{});
    REQUIRE(seg.size() == 3);
    CHECK(seg.t.front() == 4.0);
    CHECK(seg.t.back() == 6.0);
}

TEST_CASE("segment_discharge ties break to the earliest run") {
    CycleLog log;
    log.cell_id = "A";
    log.t = {0, 1, 2, 3, 4};
    log.V = {3.3, 3.2, 3.3, 3.2, 3.1};
    log.I = {2.0, 2.0, -1.0, 2.0, 2.0};
    const auto seg = segment_discharge(log, IngestConfig{});
    CHECK(seg.t.front() == 0.0);
    CHECK(seg.size() == 2);
}

TEST_CASE("segment_discharge honours the sign convention") {
    CycleLog log;
    log.cell_id = "A";
    log.t = {0, 1, 2};
    log.V = {3.3, 3.2, 3.1};
    log.I = {-2.0, -2.0, -2.0};
    IngestConfig cfg;
    CHECK_THROWS_AS(segment_discharge(log, cfg), ValidationError);
    cfg.discharge_positive = false;
    CHECK(segment_discharge(log, cfg).size() == 3);
}

TEST_CASE("resample_cycle is exact for piecewise-linear data") {
    CycleLog seg;
    seg.cell_id = "A";
    seg.t = {10.0, 11.0, 13.0, 14.0};
    seg.V = {3.4, 3.3, 3.1, 3.0};   // linear in t: V = 3.4 - 0.1*(t-10)
    seg.I = {1.0, 1.0, 1.0, 1.0};
    const auto rc = resample_cycle(seg, 9);
    REQUIRE(rc.n == 9);
    CHECK(rc.t.front() == 0.0);
    CHECK(rc.t.back() == doctest::Approx(4.0));
    CHECK(rc.dt == doctest::Approx(0.5));
    CHECK(rc.V.front() == 3.4);   // endpoints copied exactly
    CHECK(rc.V.back() == 3.0);
    for (int i = 0; i < rc.n; ++i)
        CHECK(rc.V[i] == doctest::Approx(3.4 - 0.1 * rc.t[i]).epsilon(1e-12));
}

TEST_CASE("resample_cycle rejects degenerate inputs") {
    CycleLog seg;
    seg.cell_id = "A";
    seg.t = {0.0};
    seg.V = {3.3};
    seg.I = {1.0};
    CHECK_THROWS_AS(resample_cycle(seg, 150), ValidationError);
}
