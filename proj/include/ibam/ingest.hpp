#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ibam/common.hpp"

namespace ibam {

// Raw timestamped samples for one cycle. Channel vectors are parallel;
// temp is empty when the log carries no temperature column.
struct CycleLog {
    std::string cell_id;
    int cycle_index = 1;
    std::vector<double> t;   // seconds, strictly increasing
    std::vector<double> V;   // volts, > 0
    std::vector<double> I;   // amperes
    std::vector<double> temp;  // degrees C, optional (empty or same length)

    std::size_t size() const { return t.size(); }
    void validate() const;  // throws ValidationError
};

struct IngestConfig {
    std::string col_cell = "cell_id";
    std::string col_cycle = "cycle";
    std::string col_t = "t_s";
    std::string col_v = "voltage_V";
    std::string col_i = "current_A";
    std::string col_temp = "temp_C";
    bool discharge_positive = true;  // sign convention for discharge current
    int grid_n = 150;
};

// One discharge segment on a fixed uniform time grid, rebased to t[0] = 0.
struct ResampledCycle {
    std::string cell_id;
    int cycle_index = 1;
    int n = 0;
    double dt = 0.0;
    std::vector<double> t;
    std::vector<double> V;
    std::vector<double> I;
};

// Parse delimiter-separated text with a header row into per-cycle logs.
// Lines starting with '#' are skipped. One CycleLog per distinct
// (cell_id, cycle), keys emitted in first-appearance order.
std::vector<CycleLog> parse_cycle_log(std::istream& in, const IngestConfig& cfg);

// Longest contiguous run of samples matching the discharge sign convention;
// ties broken by earliest start. Throws ValidationError when no sample matches.
CycleLog segment_discharge(const CycleLog& log, const IngestConfig& cfg);

// Linear interpolation of V and I onto n evenly spaced points over
// [0, t_end]; endpoints are copied from the source exactly.
ResampledCycle resample_cycle(const CycleLog& seg, int n);

}  // namespace ibam
