#include "ibam/ingest.hpp"

#include <algorithm>
#include <cstdlib>
#include <istream>
#include <map>
#include <sstream>

namespace ibam {

void CycleLog::validate() const {
    if (t.size() < 2)
        throw ValidationError("cycle " + cell_id + "/" + std::to_string(cycle_index) +
                              ": needs at least 2 samples, has " + std::to_string(t.size()));
    if (V.size() != t.size() || I.size() != t.size() ||
        (!temp.empty() && temp.size() != t.size()))
        throw ValidationError("cycle " + cell_id + "/" + std::to_string(cycle_index) +
                              ": channel lengths differ");
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (i > 0 && t[i] <= t[i - 1])
            throw ValidationError("cycle " + cell_id + "/" + std::to_string(cycle_index) +
                                  ": non-increasing timestamp at sample " + std::to_string(i));
        if (!(V[i] > 0.0))
            throw ValidationError("cycle " + cell_id + "/" + std::to_string(cycle_index) +
                                  ": non-positive voltage at sample " + std::to_string(i));
    }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, std::size_t lineno, const std::string& col) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw ParseError("line " + std::to_string(lineno) + ": bad value '" + s +
                         "' in column " + col);
    return v;
}

}  // namespace

std::vector<CycleLog> parse_cycle_log(std::istream& in, const IngestConfig& cfg) {
    std::string line;
    std::size_t lineno = 0;

    // header
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        header = split_csv(line);
        break;
    }
    if (header.empty()) throw ParseError("missing header row");

    auto col_of = [&](const std::string& name, bool required) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            if (required) throw ParseError("header lacks required column '" + name + "'");
            return -1;
        }
        return static_cast<int>(it - header.begin());
    };
    const int c_cell = col_of(cfg.col_cell, true);
    const int c_cycle = col_of(cfg.col_cycle, true);
    const int c_t = col_of(cfg.col_t, true);
    const int c_v = col_of(cfg.col_v, true);
    const int c_i = col_of(cfg.col_i, true);
    const int c_temp = col_of(cfg.col_temp, false);

    std::map<std::pair<std::string, int>, std::size_t> index;
    std::vector<CycleLog> logs;
    std::vector<std::size_t> order;  // logs already in first-appearance order

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto cells = split_csv(line);
        if (static_cast<int>(cells.size()) < static_cast<int>(header.size()))
            throw ParseError("line " + std::to_string(lineno) + ": expected " +
                             std::to_string(header.size()) + " fields, got " +
                             std::to_string(cells.size()));
        std::string cell_id = cells[c_cell];
        int cycle = static_cast<int>(parse_double(cells[c_cycle], lineno, cfg.col_cycle));
        auto key = std::make_pair(cell_id, cycle);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, logs.size()).first;
            CycleLog log;
            log.cell_id = cell_id;
            log.cycle_index = cycle;
            logs.push_back(std::move(log));
        }
        CycleLog& log = logs[it->second];
        log.t.push_back(parse_double(cells[c_t], lineno, cfg.col_t));
        log.V.push_back(parse_double(cells[c_v], lineno, cfg.col_v));
        log.I.push_back(parse_double(cells[c_i], lineno, cfg.col_i));
        if (c_temp >= 0) log.temp.push_back(parse_double(cells[c_temp], lineno, cfg.col_temp));
    }

    for (const auto& log : logs) log.validate();
    return logs;
}

CycleLog segment_discharge(const CycleLog& log, const IngestConfig& cfg) {
    log.validate();
    const double sign = cfg.discharge_positive ? 1.0 : -1.0;
    std::size_t best_start = 0, best_len = 0;
    std::size_t run_start = 0, run_len = 0;
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (sign * log.I[i] > 0.0) {
            if (run_len == 0) run_start = i;
            ++run_len;
            if (run_len > best_len) {  // strict: ties keep the earliest run
                best_len = run_len;
                best_start = run_start;
            }
        } else {
            run_len = 0;
        }
    }
    if (best_len == 0)
        throw ValidationError("cycle " + log.cell_id + "/" + std::to_string(log.cycle_index) +
                              ": no discharge samples under the configured sign convention");

    CycleLog out;
    out.cell_id = log.cell_id;
    out.cycle_index = log.cycle_index;
    auto copy_range = [&](const std::vector<double>& src, std::vector<double>& dst) {
        if (src.empty()) return;
        dst.assign(src.begin() + best_start, src.begin() + best_start + best_len);
    };
    copy_range(log.t, out.t);
    copy_range(log.V, out.V);
    copy_range(log.I, out.I);
    copy_range(log.temp, out.temp);
    return out;
}

ResampledCycle resample_cycle(const CycleLog& seg, int n) {
    if (n < 2) throw ConfigError("resample grid length must be >= 2, got " + std::to_string(n));
    seg.validate();

    const double t0 = seg.t.front();
    const double span = seg.t.back() - t0;
    ResampledCycle out;
    out.cell_id = seg.cell_id;
    out.cycle_index = seg.cycle_index;
    out.n = n;
    out.dt = span / (n - 1);
    out.t.resize(n);
    out.V.resize(n);
    out.I.resize(n);

    std::size_t j = 0;  // source interval cursor
    for (int k = 0; k < n; ++k) {
        out.t[k] = out.dt * k;
        if (k == 0) {
            out.V[0] = seg.V.front();
            out.I[0] = seg.I.front();
            continue;
        }
        if (k == n - 1) {
            out.V[k] = seg.V.back();
            out.I[k] = seg.I.back();
            continue;
        }
        const double tq = t0 + out.t[k];
        while (j + 2 < seg.t.size() && seg.t[j + 1] <= tq) ++j;
        const double w = (tq - seg.t[j]) / (seg.t[j + 1] - seg.t[j]);
        out.V[k] = seg.V[j] + w * (seg.V[j + 1] - seg.V[j]);
        out.I[k] = seg.I[j] + w * (seg.I[j + 1] - seg.I[j]);
    }
    return out;
}

}  // namespace ibam
