// Benchmark: serial vs OpenMP fingerprint extraction on a synthetic dataset,
// with an equality check between the two paths.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "ibam/config.hpp"
#include "ibam/identify.hpp"
#include "ibam/synth.hpp"

using namespace ibam;
using clk = std::chrono::steady_clock;

namespace {

double seconds_since(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

bool same(const std::vector<CycleFingerprint>& a, const std::vector<CycleFingerprint>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].cell_id != b[i].cell_id || a[i].cycle_index != b[i].cycle_index ||
            std::memcmp(&a[i].r_dyn, &b[i].r_dyn, sizeof(double)) != 0 ||
            std::memcmp(&a[i].r_w, &b[i].r_w, sizeof(double)) != 0 ||
            std::memcmp(&a[i].eps1, &b[i].eps1, sizeof(double)) != 0 ||
            std::memcmp(&a[i].eps2, &b[i].eps2, sizeof(double)) != 0)
            return false;
    }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    int cells = 2;
    int stride = 40;
    std::vector<int> job_counts = {1, 2, 4};
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--cells") == 0 && i + 1 < argc) cells = std::atoi(argv[++i]);
        if (std::strcmp(argv[i], "--stride") == 0 && i + 1 < argc) stride = std::atoi(argv[++i]);
    }

    const RunConfig cfg;
    std::vector<AgingProfile> profiles = {AgingProfile::preset("short"),
                                          AgingProfile::preset("long")};
    const Dataset ds = generate_dataset(profiles, cells, 7, stride);

    std::vector<ResampledCycle> cycles;
    cycles.reserve(ds.logs.size());
    for (const auto& log : ds.logs)
        cycles.push_back(resample_cycle(segment_discharge(log, cfg.ingest), cfg.ingest.grid_n));
    std::printf("dataset: %zu cycles (%d cells/profile, stride %d)\n", cycles.size(), cells,
                stride);

    const IdentConfig ident = cfg.ident_config();

    auto t0 = clk::now();
    const auto ref = extract_fingerprints_serial(cycles, ident);
    const double t_serial = seconds_since(t0);
    std::printf("serial reference:      %8.3f s\n", t_serial);

    bool ok = true;
    for (int jobs : job_counts) {
        t0 = clk::now();
        const auto par = extract_fingerprints(cycles, ident, jobs);
        const double t_par = seconds_since(t0);
        const bool eq = same(ref, par);
        ok = ok && eq;
        std::printf("openmp jobs=%-2d         %8.3f s  speedup %.2fx  match=%s\n", jobs, t_par,
                    t_serial / t_par, eq ? "yes" : "NO");
    }
    if (!ok) {
        std::fprintf(stderr, "parallel results differ from serial reference\n");
        return 1;
    }
    return 0;
}
