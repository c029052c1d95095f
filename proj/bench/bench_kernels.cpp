// Timing comparison between the OpenMP kernels and their serial
// references, plus the end-to-end per-layer transfer cost.
//
//   casa_bench [size=768] [repeats=5]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "casa/kernels.hpp"
#include "casa/spectral.hpp"
#include "casa/transfer.hpp"

using namespace casa;
using Clock = std::chrono::steady_clock;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                     double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * dist(rng);
    return m;
}

template <typename F>
double best_of(int repeats, F&& f) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        f();
        const double sec = std::chrono::duration<double>(Clock::now() - t0).count();
        if (sec < best) best = sec;
    }
    return best;
}

volatile double sink = 0.0;

} // namespace

int main(int argc, char** argv) {
    const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 768;
    const int repeats = argc > 2 ? std::atoi(argv[2]) : 5;

#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (no OpenMP)\n");
#endif
    std::printf("matrix size: %zux%zu, repeats: %d (best shown)\n\n", n, n, repeats);

    std::mt19937_64 rng(1);
    const Matrix a = random_matrix(rng, n, n);
    const Matrix b = random_matrix(rng, n, n);

    struct Row {
        const char* name;
        double serial;
        double parallel;
    };
    Row rows[] = {
        {"matmul",
         best_of(repeats, [&] { sink = sink + kernels::serial::matmul(a, b)(0, 0); }),
         best_of(repeats, [&] { sink = sink + kernels::matmul(a, b)(0, 0); })},
        {"matmul_at_b",
         best_of(repeats, [&] { sink = sink + kernels::serial::matmul_at_b(a, b)(0, 0); }),
         best_of(repeats, [&] { sink = sink + kernels::matmul_at_b(a, b)(0, 0); })},
        {"matmul_a_bt",
         best_of(repeats, [&] { sink = sink + kernels::serial::matmul_a_bt(a, b)(0, 0); }),
         best_of(repeats, [&] { sink = sink + kernels::matmul_a_bt(a, b)(0, 0); })},
    };

    std::printf("%-14s %12s %12s %9s\n", "kernel", "serial [s]", "openmp [s]", "speedup");
    for (const Row& row : rows)
        std::printf("%-14s %12.4f %12.4f %8.2fx\n", row.name, row.serial, row.parallel,
                    row.serial / row.parallel);

    // Per-layer transfer at a realistic projection size.
    const std::size_t layer = std::min<std::size_t>(n, 512);
    const Matrix ws = random_matrix(rng, layer, layer);
    const SvdTriple t = svd(ws);
    const Matrix delta_lora =
        kernels::matmul(random_matrix(rng, layer, 8, 0.02), random_matrix(rng, 8, layer, 0.02));
    const Matrix delta_fft = random_matrix(rng, layer, layer, 0.001);
    CasaConfig cfg;
    const double transfer_time = best_of(repeats, [&] {
        const TransferResult r = transfer_layer(t, delta_lora, delta_fft, cfg, 8);
        sink = sink + r.report.factorization_error;
    });
    std::printf("\ntransfer_layer (%zux%zu, rank 8): %.4f s\n", layer, layer,
                transfer_time);
    return 0;
}
