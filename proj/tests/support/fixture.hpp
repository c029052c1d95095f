#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "casa/matrix.hpp"
#include "casa/tensor_store.hpp"

namespace casa::testsupport {

using Rng = std::mt19937_64;

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0);

// Column-orthonormal basis from the SVD of a Gaussian matrix.
Matrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols);

// Synthetic 8-layer model family for end-to-end checks:
//  - source layers (64x48 and 48x48) carry a planted step-like spectrum of
//    three plateaus (around 10, 7, 4.5; in-plateau gaps ~1e-7) and a smooth
//    tail, so the rotation graph recovers the plateaus as clusters and 90%
//    spectral energy lands exactly on the three plateaus (k = 18);
//  - the distilled target adds drift U_s C* V_s^T with C* supported on the
//    two head plateaus (rows/cols 0..11), scaled so rho_2 <= 0.003;
//  - the rank-4 LoRA's routing is spread across all of C.
struct Fixture {
    WeightMap source;
    WeightMap target;
    WeightMap lora_raw; // adapter checkpoint (lora_A/lora_B convention)

    std::vector<std::string> layer_keys;
    std::vector<std::vector<double>> planted_spectra;
    std::size_t plateau_size = 6;
    std::size_t planted_k = 18;      // three plateaus
    std::size_t head_indices = 12;   // union of the two head plateaus
    std::size_t lora_rank = 4;
};

Fixture make_fixture(std::uint64_t seed = 20260809);

// Writes source.safetensors, target.safetensors, lora.safetensors.
void write_fixture(const Fixture& fixture, const std::string& dir);

} // namespace casa::testsupport
