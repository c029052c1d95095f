#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casa/tensor_store.hpp"
#include "casa/transfer.hpp"

namespace casa {

struct AblationSpec {
    std::vector<double> q_sweep;  // dominance quantiles for partial_distilled
    double noise_mean = 2.0;      // Gaussian perturbation mean
    double noise_var = 5.0;       // Gaussian perturbation variance
    double block_fraction = 0.05; // share of cluster-pair blocks to perturb
    std::uint64_t rng_seed = 0;

    void validate() const; // throws UsageError
};

struct AblationLayerStats {
    std::string key;
    std::size_t k = 0;
    std::size_t cluster_count = 0;
    double routing_energy = 0.0; // ||C_fft||_F^2
    double masked_energy = 0.0;  // energy removed (partial) or blocks' share (overactivate)
    std::size_t selected_blocks = 0; // overactivate only
};

// Removes the routing contributions of non-dominant clusters from the
// distilled model: W_t^(q) = W_t - U_s ((1 - D_q) .* C_fft) V_s^T, with
// dominance detected at quantile q over C_fft's rotation-graph clusters.
// q = 0 makes every cluster dominant and returns the target unchanged.
WeightMap partial_distilled(const WeightMap& source, const WeightMap& target,
                            const CasaConfig& cfg, double q,
                            std::vector<AblationLayerStats>* stats = nullptr);

// Adds Gaussian noise to the highest-energy-density cluster-pair blocks of
// C_fft (top spec.block_fraction of the blocks, at least one) and projects
// the perturbation back onto the distilled weights. Deterministic for a
// fixed spec.rng_seed; per-layer streams are derived from the layer key.
WeightMap overactivate_dominant_blocks(const WeightMap& source, const WeightMap& target,
                                       const CasaConfig& cfg, const AblationSpec& spec,
                                       std::vector<AblationLayerStats>* stats = nullptr);

} // namespace casa
