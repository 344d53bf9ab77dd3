// Compares the OpenMP E-step against the serial reference on a mid-sized
// problem and checks that both produce identical results.
#include <chrono>
#include <cstdio>

#include "fmab/estimation.hpp"
#include "fmab/simulation.hpp"

using namespace fmab;
using clock_type = std::chrono::steady_clock;

namespace {

double time_ms(const ModelParams& params, const PatternTable& data, const TensorGrid& grid,
               bool parallel, int reps, double* checksum) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto start = clock_type::now();
        const EStepResult es =
            parallel ? e_step(params, data, grid) : e_step_serial(params, data, grid);
        const auto stop = clock_type::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(stop - start).count());
        *checksum = es.loglik;
    }
    return best;
}

}  // namespace

int main(int argc, char** argv) {
    const long n = argc > 1 ? std::atol(argv[1]) : 2000;
    const int reps = argc > 2 ? std::atoi(argv[2]) : 5;

    std::printf("%-28s %10s %10s %10s\n", "case", "serial ms", "openmp ms", "speedup");
    for (const auto& [q, k, T] : {std::tuple{1, 2, 15}, {2, 2, 10}, {2, 3, 10}}) {
        const SimDesign design = generate_design(q, k, 7, 12, n, 1);
        const SampleResult sample = sample_responses(design.true_params, n, 3);
        const TensorGrid grid = tensor_grid(q, T);

        double check_serial = 0.0, check_parallel = 0.0;
        const double serial =
            time_ms(design.true_params, sample.table, grid, false, reps, &check_serial);
        const double parallel =
            time_ms(design.true_params, sample.table, grid, true, reps, &check_parallel);

        char label[64];
        std::snprintf(label, sizeof(label), "q=%d k=%d T=%d H=%zu", q, k, T,
                      sample.table.size());
        std::printf("%-28s %10.2f %10.2f %9.2fx\n", label, serial, parallel,
                    serial / parallel);
        if (check_serial != check_parallel) {
            std::printf("MISMATCH: serial %.17g vs openmp %.17g\n", check_serial,
                        check_parallel);
            return 1;
        }
    }
    std::printf("serial and OpenMP E-steps agree bit-for-bit\n");
    return 0;
}
