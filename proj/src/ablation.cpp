#include "casa/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "casa/errors.hpp"
#include "casa/kernels.hpp"
#include "casa/routing.hpp"

namespace casa {

namespace {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Box-Muller on top of mt19937_64 rather than std::normal_distribution,
// whose output sequence differs between standard library implementations.
class PortableGaussian {
public:
    explicit PortableGaussian(std::uint64_t seed) : engine_(seed) {}

    double operator()(double mean, double stdev) {
        const double u1 = next_open01();
        const double u2 = next_open01();
        const double z =
            std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
        return mean + stdev * z;
    }

private:
    double next_open01() {
        // (0, 1]: keeps log() finite.
        return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    }
    std::mt19937_64 engine_;
};

struct LayerRouting {
    SvdTriple svd_source;
    RoutingMatrix c_fft;
    std::size_t k = 0;
    ClusterSet clusters;
};

LayerRouting analyze_layer(const Matrix& ws, const Matrix& wt, const CasaConfig& cfg,
                           const std::string& key) {
    if (!ws.same_shape(wt))
        throw ShapeError("layer \"" + key + "\" differs in shape between models");
    LayerRouting lr;
    lr.svd_source = svd(ws);
    const Matrix delta_fft = kernels::axpby(1.0, wt, -1.0, ws);
    lr.c_fft = project_routing(lr.svd_source, delta_fft, DeltaKind::fft, key);
    lr.k = topk_energy(lr.svd_source.s, cfg.energy_fraction);
    lr.clusters =
        cluster_rotation_graph(lr.c_fft, lr.svd_source.s, lr.k, cfg.tau, cfg.epsilon);
    return lr;
}

} // namespace

void AblationSpec::validate() const {
    for (double q : q_sweep)
        if (!(q >= 0.0 && q <= 1.0)) throw UsageError("q sweep values must lie in [0, 1]");
    if (!(noise_var >= 0.0)) throw UsageError("noise_var must be nonnegative");
    if (!(block_fraction > 0.0 && block_fraction <= 1.0))
        throw UsageError("block_fraction must lie in (0, 1]");
}

WeightMap partial_distilled(const WeightMap& source, const WeightMap& target,
                            const CasaConfig& cfg, double q,
                            std::vector<AblationLayerStats>* stats) {
    cfg.validate();
    if (!(q >= 0.0 && q <= 1.0)) throw UsageError("q must lie in [0, 1]");

    WeightMap out;
    out.dtype = target.dtype;
    out.source_path = target.source_path;
    out.extras = target.extras;
    for (const auto& [key, wt] : target) {
        const Matrix* ws = source.find(key);
        if (!ws) {
            out.insert(key, wt);
            continue;
        }
        LayerRouting lr = analyze_layer(*ws, wt, cfg, key);
        const ClusterMetrics metrics = cluster_metrics(lr.c_fft, lr.clusters);
        const RegionLabels labels = detect_dominant(metrics, lr.clusters, q);

        // Only cluster members can be non-dominant; the spectral tail
        // beyond k belongs to no cluster and its routing is kept.
        const std::size_t m = lr.svd_source.m();
        RoutingMatrix masked;
        masked.kind = DeltaKind::fft;
        masked.layer_key = key;
        masked.c = Matrix(m, m);
        double removed = 0.0;
        for (std::size_t i = 0; i < lr.k; ++i)
            for (std::size_t j = 0; j < lr.k; ++j) {
                if (!labels.dominant(i, j)) {
                    const double v = lr.c_fft.c(i, j);
                    masked.c(i, j) = v;
                    removed += v * v;
                }
            }
        const Matrix subtract = backproject_routing(lr.svd_source, masked);
        out.insert(key, kernels::axpby(1.0, wt, -1.0, subtract));

        if (stats) {
            AblationLayerStats st;
            st.key = key;
            st.k = lr.k;
            st.cluster_count = lr.clusters.count();
            st.routing_energy =
                lr.c_fft.c.frobenius_norm() * lr.c_fft.c.frobenius_norm();
            st.masked_energy = removed;
            stats->push_back(std::move(st));
        }
    }
    return out;
}

WeightMap overactivate_dominant_blocks(const WeightMap& source, const WeightMap& target,
                                       const CasaConfig& cfg, const AblationSpec& spec,
                                       std::vector<AblationLayerStats>* stats) {
    cfg.validate();
    spec.validate();
    const double stdev = std::sqrt(spec.noise_var);

    WeightMap out;
    out.dtype = target.dtype;
    out.source_path = target.source_path;
    out.extras = target.extras;
    for (const auto& [key, wt] : target) {
        const Matrix* ws = source.find(key);
        if (!ws) {
            out.insert(key, wt);
            continue;
        }
        LayerRouting lr = analyze_layer(*ws, wt, cfg, key);
        const ClusterMetrics metrics = cluster_metrics(lr.c_fft, lr.clusters);
        const std::size_t count = lr.clusters.count();

        // Rank cluster-pair blocks by RMS energy density, ties by index.
        struct Block {
            double density;
            std::size_t gm, gn;
        };
        std::vector<Block> blocks;
        blocks.reserve(count * count);
        for (std::size_t gm = 0; gm < count; ++gm)
            for (std::size_t gn = 0; gn < count; ++gn)
                blocks.push_back({metrics.rms_block(gm, gn), gm, gn});
        std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) {
            if (a.density != b.density) return a.density > b.density;
            if (a.gm != b.gm) return a.gm < b.gm;
            return a.gn < b.gn;
        });
        const std::size_t selected = std::min(
            blocks.size(),
            static_cast<std::size_t>(std::ceil(
                spec.block_fraction * static_cast<double>(blocks.size()))));

        PortableGaussian gaussian(splitmix64(spec.rng_seed ^ fnv1a64(key)));
        const std::size_t m = lr.svd_source.m();
        RoutingMatrix perturbation;
        perturbation.kind = DeltaKind::fft;
        perturbation.layer_key = key;
        perturbation.c = Matrix(m, m);
        double selected_energy = 0.0;
        for (std::size_t b = 0; b < selected; ++b) {
            const auto& rows = lr.clusters.clusters[blocks[b].gm];
            const auto& cols = lr.clusters.clusters[blocks[b].gn];
            for (std::size_t i : rows)
                for (std::size_t j : cols) {
                    perturbation.c(i, j) = gaussian(spec.noise_mean, stdev);
                    selected_energy += lr.c_fft.c(i, j) * lr.c_fft.c(i, j);
                }
        }
        const Matrix add = backproject_routing(lr.svd_source, perturbation);
        out.insert(key, kernels::axpby(1.0, wt, 1.0, add));

        if (stats) {
            AblationLayerStats st;
            st.key = key;
            st.k = lr.k;
            st.cluster_count = count;
            st.routing_energy =
                lr.c_fft.c.frobenius_norm() * lr.c_fft.c.frobenius_norm();
            st.masked_energy = selected_energy;
            st.selected_blocks = selected;
            stats->push_back(std::move(st));
        }
    }
    return out;
}

} // namespace casa
