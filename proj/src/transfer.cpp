#include "casa/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "casa/errors.hpp"
#include "casa/kernels.hpp"

namespace casa {

namespace {

double sign_of(double x) {
    if (x > 0.0) return 1.0;
    if (x < 0.0) return -1.0;
    return 0.0;
}

} // namespace

std::string_view residual_policy_name(ResidualPolicy p) {
    return p == ResidualPolicy::passthrough ? "passthrough" : "discard";
}

std::string_view quantile_population_name(QuantilePopulation p) {
    return p == QuantilePopulation::positive_only ? "positive-only" : "all";
}

std::string_view region_name(Region r) {
    switch (r) {
        case Region::restore: return "restore";
        case Region::preserve: return "preserve";
        case Region::arbitrate: return "arbitrate";
    }
    return "restore";
}

void CasaConfig::validate() const {
    if (!(energy_fraction > 0.0 && energy_fraction <= 1.0))
        throw UsageError("energy_fraction must lie in (0, 1]");
    if (!(tau > 0.0)) throw UsageError("tau must be positive");
    if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
    if (!(q_dom >= 0.0 && q_dom <= 1.0)) throw UsageError("q_dom must lie in [0, 1]");
    if (!(q_act >= 0.0 && q_act <= 1.0)) throw UsageError("q_act must lie in [0, 1]");
}

double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty())
        throw DegenerateError("quantile of an empty multiset is undefined");
    if (!(q >= 0.0 && q <= 1.0)) throw UsageError("quantile level out of [0, 1]");
    std::sort(values.begin(), values.end());
    const double scaled = q * static_cast<double>(values.size());
    std::size_t rank = static_cast<std::size_t>(std::ceil(scaled));
    if (rank < 1) rank = 1;
    if (rank > values.size()) rank = values.size();
    return values[rank - 1];
}

RegionLabels detect_dominant(const ClusterMetrics& metrics_fft,
                             const ClusterSet& clusters, double q_dom) {
    if (clusters.count() == 0)
        throw DegenerateError("detect_dominant: no clusters");
    if (metrics_fft.send_density.size() != clusters.count())
        throw ShapeError("detect_dominant: metrics do not match the cluster set");

    const double send_thr = nearest_rank_quantile(metrics_fft.send_density, q_dom);
    const double recv_thr = nearest_rank_quantile(metrics_fft.recv_density, q_dom);

    RegionLabels labels;
    labels.m = metrics_fft.m;
    labels.k = clusters.k;
    std::vector<bool> send_dom(clusters.count()), recv_dom(clusters.count());
    for (std::size_t g = 0; g < clusters.count(); ++g) {
        if (metrics_fft.send_density[g] >= send_thr) {
            send_dom[g] = true;
            labels.dominant_send.push_back(g);
        }
        if (metrics_fft.recv_density[g] >= recv_thr) {
            recv_dom[g] = true;
            labels.dominant_recv.push_back(g);
        }
    }

    labels.d.assign(labels.m * labels.m, 0);
    labels.region.assign(labels.m * labels.m, Region::restore);
    for (std::size_t i = 0; i < labels.k; ++i)
        for (std::size_t j = 0; j < labels.k; ++j) {
            const bool dom = recv_dom[clusters.cluster_of(i)] ||
                             send_dom[clusters.cluster_of(j)];
            if (dom) {
                labels.d[i * labels.m + j] = 1;
                labels.region[i * labels.m + j] = Region::preserve;
            }
        }
    return labels;
}

OverActivationScore score_overactivation(const RoutingMatrix& c_lora,
                                         const RoutingMatrix& c_fft,
                                         const RegionLabels& labels,
                                         const ClusterSet& clusters, double eps) {
    const Matrix& cl = c_lora.c;
    const Matrix& cf = c_fft.c;
    if (!cl.same_shape(cf) || cl.rows() != labels.m)
        throw ShapeError("score_overactivation: inconsistent shapes");

    const std::size_t m = labels.m;
    const std::size_t count = clusters.count();

    // Cluster-level alignment, propagated back to entries as context.
    Matrix block_cos(count, count);
    for (std::size_t gm = 0; gm < count; ++gm)
        for (std::size_t gn = 0; gn < count; ++gn)
            block_cos(gm, gn) = block_cosine(cl, cf, clusters.clusters[gm],
                                             clusters.clusters[gn], eps);

    OverActivationScore score;
    score.e = Matrix(m, m);
    score.context = Matrix(m, m);
    score.s_score = Matrix(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double e = labels.dominant(i, j)
                                 ? std::max(0.0, cl(i, j) * cf(i, j))
                                 : 0.0;
            const double ctx = (i < labels.k && j < labels.k)
                                   ? block_cos(clusters.cluster_of(i),
                                               clusters.cluster_of(j))
                                   : 1.0;
            score.e(i, j) = e;
            score.context(i, j) = ctx;
            score.s_score(i, j) = e * ctx;
        }
    return score;
}

RoutingMatrix arbitrate(const RoutingMatrix& c_lora, const RoutingMatrix& c_fft,
                        RegionLabels& labels, OverActivationScore& score,
                        double q_act, QuantilePopulation population) {
    const Matrix& cl = c_lora.c;
    const Matrix& cf = c_fft.c;
    if (!cl.same_shape(cf) || cl.rows() != labels.m || !cl.same_shape(score.s_score))
        throw ShapeError("arbitrate: inconsistent shapes");

    const std::size_t m = labels.m;

    std::vector<double> pop;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (!labels.dominant(i, j)) continue;
            const double s = score.s_score(i, j);
            if (population == QuantilePopulation::positive_only ? s > 0.0 : true)
                pop.push_back(s);
        }
    const double threshold =
        pop.empty() ? std::numeric_limits<double>::infinity()
                    : nearest_rank_quantile(std::move(pop), q_act);
    score.threshold_value = threshold;

    RoutingMatrix out;
    out.kind = DeltaKind::casa;
    out.layer_key = c_lora.layer_key;
    out.c = Matrix(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double l = cl(i, j);
            const double f = cf(i, j);
            if (!labels.dominant(i, j)) {
                // Restore: effective routing becomes exactly the LoRA routing.
                out.c(i, j) = l - f;
                labels.region[i * m + j] = Region::restore;
            } else if (score.e(i, j) > 0.0 && score.s_score(i, j) >= threshold) {
                // Cap at the stronger contribution, keeping LoRA's sign.
                out.c(i, j) = std::max(std::abs(l), std::abs(f)) * sign_of(l) - f;
                labels.region[i * m + j] = Region::arbitrate;
            } else {
                out.c(i, j) = l;
                labels.region[i * m + j] = Region::preserve;
            }
        }
    return out;
}

TransferResult transfer_layer(const SvdTriple& svd_source, const Matrix& delta_lora,
                              const Matrix& delta_fft, const CasaConfig& cfg,
                              std::size_t default_out_rank) {
    cfg.validate();
    const std::size_t out_rank = cfg.out_rank ? cfg.out_rank : default_out_rank;
    if (out_rank == 0)
        throw UsageError("transfer_layer: no output rank (config or adapter)");

    const RoutingMatrix c_lora =
        project_routing(svd_source, delta_lora, DeltaKind::lora);
    const RoutingMatrix c_fft = project_routing(svd_source, delta_fft, DeltaKind::fft);

    const std::size_t k = topk_energy(svd_source.s, cfg.energy_fraction);
    const ClusterSet clusters =
        cluster_rotation_graph(c_lora, svd_source.s, k, cfg.tau, cfg.epsilon);
    const ClusterMetrics metrics_fft = cluster_metrics(c_fft, clusters);

    RegionLabels labels = detect_dominant(metrics_fft, clusters, cfg.q_dom);
    OverActivationScore score =
        score_overactivation(c_lora, c_fft, labels, clusters, cfg.epsilon);
    const RoutingMatrix c_casa =
        arbitrate(c_lora, c_fft, labels, score, cfg.q_act, cfg.population);

    Matrix delta_casa = backproject_routing(svd_source, c_casa);
    double residual_norm = 0.0;
    if (cfg.residual == ResidualPolicy::passthrough) {
        // Component of the LoRA update outside span(U_s) x span(V_s); the
        // routing math cannot represent it, so it is carried over as is.
        const Matrix inside = backproject_routing(svd_source, c_lora);
        const Matrix residual = kernels::axpby(1.0, delta_lora, -1.0, inside);
        residual_norm = residual.frobenius_norm();
        delta_casa = kernels::axpby(1.0, delta_casa, 1.0, residual);
    }

    auto [b, a] = truncated_factorize(delta_casa, out_rank);
    const Matrix approx = kernels::matmul(b, a);

    TransferResult result;
    result.report.m = svd_source.m();
    result.report.k = k;
    result.report.cluster_count = clusters.count();
    result.report.dominant_send = labels.dominant_send;
    result.report.dominant_recv = labels.dominant_recv;
    for (Region r : labels.region) {
        if (r == Region::restore) ++result.report.restored;
        else if (r == Region::preserve) ++result.report.preserved;
        else ++result.report.arbitrated;
    }
    result.report.arbitration_threshold = score.threshold_value;
    result.report.residual_norm = residual_norm;
    result.report.factorization_error =
        kernels::axpby(1.0, delta_casa, -1.0, approx).frobenius_norm();
    result.b = std::move(b);
    result.a = std::move(a);
    return result;
}

ModelTransfer transfer_model(const WeightMap& source, const WeightMap& target,
                             const LoraAdapter& adapter, const CasaConfig& cfg,
                             int jobs) {
    cfg.validate();

    struct Job {
        const std::string* base;
        const LoraPair* pair;
        const Matrix* ws;
        const Matrix* wt;
    };
    std::vector<Job> work;
    work.reserve(adapter.size());
    for (const auto& [base, pair] : adapter) {
        const Matrix* ws = source.find(base);
        if (!ws) throw KeyError("adapter base key \"" + base + "\" not in the source model");
        const Matrix* wt = target.find(base);
        if (!wt) throw KeyError("adapter base key \"" + base + "\" not in the target model");
        if (!ws->same_shape(*wt))
            throw ShapeError("layer \"" + base + "\" differs in shape between models");
        if (pair.b.rows() != ws->rows() || pair.a.cols() != ws->cols())
            throw ShapeError("adapter factors for \"" + base +
                             "\" do not match the base layer shape");
        work.push_back({&base, &pair, ws, wt});
    }

#ifdef _OPENMP
    const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#else
    const int threads = 1;
    (void)jobs;
#endif

    std::vector<TransferResult> results(work.size());
    std::vector<std::exception_ptr> failures(work.size());
    const std::int64_t n = static_cast<std::int64_t>(work.size());
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (std::int64_t idx = 0; idx < n; ++idx) {
        try {
            const Job& job = work[static_cast<std::size_t>(idx)];
            const SvdTriple svd_source = svd(*job.ws);
            const Matrix delta_fft = kernels::axpby(1.0, *job.wt, -1.0, *job.ws);
            const Matrix delta_lora = job.pair->materialize();
            TransferResult r = transfer_layer(svd_source, delta_lora, delta_fft, cfg,
                                              job.pair->rank());
            r.report.key = *job.base;
            results[static_cast<std::size_t>(idx)] = std::move(r);
        } catch (...) {
            failures[static_cast<std::size_t>(idx)] = std::current_exception();
        }
    }
    for (const auto& failure : failures)
        if (failure) std::rethrow_exception(failure);

    ModelTransfer out;
    out.report.config = cfg;
    out.adapter.convention = adapter.convention;
    out.adapter.dtype = adapter.dtype;
    for (std::size_t idx = 0; idx < work.size(); ++idx) {
        const Job& job = work[idx];
        TransferResult& r = results[idx];
        const std::size_t out_rank = cfg.out_rank ? cfg.out_rank : job.pair->rank();

        LoraPair pair;
        pair.alpha_explicit = job.pair->alpha_explicit;
        pair.alpha = pair.alpha_explicit ? job.pair->alpha
                                         : static_cast<double>(out_rank);
        // materialize() applies alpha/rank; pre-divide so it cancels.
        const double scale = pair.alpha / static_cast<double>(out_rank);
        pair.b = kernels::scale(r.b, 1.0 / scale);
        pair.a = std::move(r.a);
        out.adapter.insert(*job.base, std::move(pair));
        out.report.layers.push_back(std::move(r.report));
    }
    return out;
}

} // namespace casa
