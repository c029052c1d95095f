#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casa/matrix.hpp"
#include "casa/routing.hpp"
#include "casa/spectral.hpp"
#include "casa/tensor_store.hpp"

namespace casa {

enum class ResidualPolicy { passthrough, discard };
enum class QuantilePopulation { positive_only, all };

std::string_view residual_policy_name(ResidualPolicy p);
std::string_view quantile_population_name(QuantilePopulation p);

struct CasaConfig {
    double energy_fraction = 0.9; // leading-subspace spectral energy cutoff
    double tau = 5.0;             // rotation-graph edge threshold
    double epsilon = 1e-8;        // gap / cosine regularizer
    double q_dom = 0.5;           // dominance quantile over cluster densities
    double q_act = 0.95;          // arbitration quantile over positive scores
    std::size_t out_rank = 0;     // 0 = preserve the input adapter rank
    ResidualPolicy residual = ResidualPolicy::passthrough;
    QuantilePopulation population = QuantilePopulation::positive_only;

    void validate() const; // throws UsageError
};

enum class Region : std::uint8_t { restore = 0, preserve = 1, arbitrate = 2 };

std::string_view region_name(Region r);

// Dominant-region mask and the per-entry treatment decision. D is 1 exactly
// where an entry touches a dominant cluster inside the top-k square;
// everything outside top-k is non-dominant by definition.
struct RegionLabels {
    std::size_t m = 0;
    std::size_t k = 0;
    std::vector<std::size_t> dominant_send; // cluster ids
    std::vector<std::size_t> dominant_recv;
    std::vector<std::uint8_t> d;   // m*m row-major mask
    std::vector<Region> region;    // m*m row-major

    bool dominant(std::size_t i, std::size_t j) const { return d[i * m + j] != 0; }
    Region region_at(std::size_t i, std::size_t j) const { return region[i * m + j]; }
};

struct OverActivationScore {
    Matrix e;       // aligned interaction energy, nonnegative
    Matrix context; // cluster-level alignment propagated to entries
    Matrix s_score; // e .* context
    double threshold_value = 0.0; // filled in by arbitrate()
};

// Nearest-rank quantile: smallest element of the multiset with at least
// ceil(q * n) values at or below it (the minimum when q = 0).
double nearest_rank_quantile(std::vector<double> values, double q);

RegionLabels detect_dominant(const ClusterMetrics& metrics_fft,
                             const ClusterSet& clusters, double q_dom);

OverActivationScore score_overactivation(const RoutingMatrix& c_lora,
                                         const RoutingMatrix& c_fft,
                                         const RegionLabels& labels,
                                         const ClusterSet& clusters, double eps);

// Produces C_casa so that the effective routing C_fft + C_casa restores the
// LoRA routing outside dominant regions, keeps it inside them, and caps
// sign-aligned high-risk entries at max(|lora|, |fft|) with LoRA's sign.
// Updates `labels.region` to the final assignment and fills in the score's
// threshold value.
RoutingMatrix arbitrate(const RoutingMatrix& c_lora, const RoutingMatrix& c_fft,
                        RegionLabels& labels, OverActivationScore& score,
                        double q_act,
                        QuantilePopulation population = QuantilePopulation::positive_only);

struct LayerReport {
    std::string key;
    std::size_t m = 0;
    std::size_t k = 0;
    std::size_t cluster_count = 0;
    std::vector<std::size_t> dominant_send;
    std::vector<std::size_t> dominant_recv;
    std::size_t restored = 0;
    std::size_t preserved = 0;
    std::size_t arbitrated = 0;
    double arbitration_threshold = 0.0;
    double residual_norm = 0.0;       // off-subspace part of the LoRA update
    double factorization_error = 0.0; // ||delta_casa - B * A||_F
};

struct TransferResult {
    Matrix b; // d_out x out_rank
    Matrix a; // out_rank x d_in
    LayerReport report;
};

// Full per-layer pipeline: project, cluster, detect dominance, score,
// arbitrate, back-project, re-factorize. `default_out_rank` is used when
// cfg.out_rank is 0 (normally the input adapter's rank).
TransferResult transfer_layer(const SvdTriple& svd_source, const Matrix& delta_lora,
                              const Matrix& delta_fft, const CasaConfig& cfg,
                              std::size_t default_out_rank = 0);

struct ModelReport {
    CasaConfig config;
    std::vector<LayerReport> layers;
};

struct ModelTransfer {
    LoraAdapter adapter;
    ModelReport report;
};

// Applies transfer_layer to every adapter pair. Layers are independent and
// processed by a worker pool of `jobs` threads (<= 0 means all cores);
// results are merged in adapter key order, so output is identical for any
// parallelism degree.
ModelTransfer transfer_model(const WeightMap& source, const WeightMap& target,
                             const LoraAdapter& adapter, const CasaConfig& cfg,
                             int jobs = 0);

} // namespace casa
