#include "fixture.hpp"

#include <cmath>
#include <filesystem>

#include "casa/kernels.hpp"
#include "casa/spectral.hpp"

namespace casa::testsupport {

namespace {

double norm2(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x * x;
    return std::sqrt(sum);
}

std::vector<double> planted_spectrum() {
    std::vector<double> s;
    s.reserve(48);
    const double plateaus[3] = {10.0, 7.0, 4.5};
    for (double level : plateaus)
        for (std::size_t i = 0; i < 6; ++i)
            s.push_back(level - 1e-7 * static_cast<double>(i));
    for (std::size_t i = 0; i < 30; ++i)
        s.push_back(3.0 * std::pow(0.955, static_cast<double>(i)));
    return s;
}

Matrix diag_times(const Matrix& u, const std::vector<double>& s) {
    Matrix scaled(u.rows(), s.size());
    for (std::size_t i = 0; i < u.rows(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) scaled(i, j) = u(i, j) * s[j];
    return scaled;
}

} // namespace

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * dist(rng);
    return m;
}

Matrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols) {
    return svd(random_matrix(rng, rows, cols)).u;
}

Fixture make_fixture(std::uint64_t seed) {
    Rng rng(seed);
    Fixture fx;
    fx.source.dtype = Dtype::F64;
    fx.target.dtype = Dtype::F64;
    fx.lora_raw.dtype = Dtype::F64;

    const std::vector<double> spectrum = planted_spectrum();
    const double spectrum_norm = norm2(spectrum);
    const std::size_t m = spectrum.size();

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t layer = 0; layer < 8; ++layer) {
        const std::size_t d_out = layer % 2 == 0 ? 64 : 48;
        const std::string key = "blocks." + std::to_string(layer) + ".proj.weight";
        fx.layer_keys.push_back(key);
        fx.planted_spectra.push_back(spectrum);

        const Matrix u = random_orthonormal(rng, d_out, m);
        const Matrix v = random_orthonormal(rng, m, m);
        const Matrix ws = kernels::matmul_a_bt(diag_times(u, spectrum), v);
        fx.source.insert(key, ws);

        // Drift routing concentrated on the two head plateaus, scaled so the
        // Weyl bound keeps rho_2 comfortably under 0.3%.
        Matrix c_star(m, m);
        for (std::size_t i = 0; i < fx.head_indices; ++i)
            for (std::size_t j = 0; j < fx.head_indices; ++j) {
                const double magnitude = 0.5 + unit(rng);
                c_star(i, j) = (unit(rng) < 0.5 ? -1.0 : 1.0) * magnitude;
            }
        const double drift_scale = 0.0022 * spectrum_norm / c_star.frobenius_norm();
        c_star = kernels::scale(c_star, drift_scale);
        const Matrix drift = kernels::matmul_a_bt(kernels::matmul(u, c_star), v);
        fx.target.insert(key, kernels::axpby(1.0, ws, 1.0, drift));

        // Rank-4 LoRA whose routing c * G1 G2^T touches every entry.
        const Matrix g1 = random_matrix(rng, m, fx.lora_rank);
        const Matrix g2 = random_matrix(rng, m, fx.lora_rank);
        const Matrix c0 = kernels::matmul_a_bt(g1, g2);
        const double lora_scale = 0.0022 * spectrum_norm / c0.frobenius_norm();
        const Matrix b = kernels::scale(kernels::matmul(u, g1), lora_scale);
        const Matrix a = kernels::matmul_at_b(g2, v.transposed());
        fx.lora_raw.insert(key + ".lora_A.weight", a);
        fx.lora_raw.insert(key + ".lora_B.weight", b);
    }
    return fx;
}

void write_fixture(const Fixture& fixture, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_checkpoint(fixture.source, dir + "/source.safetensors");
    save_checkpoint(fixture.target, dir + "/target.safetensors");
    save_checkpoint(fixture.lora_raw, dir + "/lora.safetensors");
}

} // namespace casa::testsupport
