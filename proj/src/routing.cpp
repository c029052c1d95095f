#include "casa/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "casa/errors.hpp"
#include "casa/kernels.hpp"

namespace casa {

namespace {

// Connected components over an adjacency list, clusters ordered by
// smallest member, members sorted ascending.
ClusterSet components_from_edges(std::size_t k,
                                 const std::vector<std::vector<std::size_t>>& adj,
                                 ClusterMethod method) {
    ClusterSet set;
    set.k = k;
    set.method = method;
    set.index_to_cluster.assign(k, static_cast<std::size_t>(-1));
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < k; ++start) {
        if (set.index_to_cluster[start] != static_cast<std::size_t>(-1)) continue;
        const std::size_t id = set.clusters.size();
        std::vector<std::size_t> members;
        stack.push_back(start);
        set.index_to_cluster[start] = id;
        while (!stack.empty()) {
            const std::size_t node = stack.back();
            stack.pop_back();
            members.push_back(node);
            for (std::size_t next : adj[node]) {
                if (set.index_to_cluster[next] != static_cast<std::size_t>(-1)) continue;
                set.index_to_cluster[next] = id;
                stack.push_back(next);
            }
        }
        std::sort(members.begin(), members.end());
        set.clusters.push_back(std::move(members));
    }
    return set;
}

double pairwise_cosine(const Matrix& c, std::size_t a, std::size_t b, bool columns) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    const std::size_t n = columns ? c.rows() : c.cols();
    for (std::size_t t = 0; t < n; ++t) {
        const double x = columns ? c(t, a) : c(a, t);
        const double y = columns ? c(t, b) : c(b, t);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom > 0.0 ? dot / denom : 0.0;
}

// Mean pairwise cosine and coefficient of variation of member norms along
// one side (columns = senders, rows = receivers).
void side_metrics(const Matrix& c, const std::vector<std::size_t>& members,
                  bool columns, double& density, double& coherence, double& cv) {
    std::vector<double> norms;
    norms.reserve(members.size());
    for (std::size_t idx : members)
        norms.push_back(columns ? c.col_norm(idx) : c.row_norm(idx));

    double sum = 0.0;
    for (double v : norms) sum += v;
    const double mean = sum / static_cast<double>(norms.size());
    density = mean;

    if (members.size() < 2) {
        coherence = 1.0;
        cv = 0.0;
        return;
    }
    double cos_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < members.size(); ++a)
        for (std::size_t b = a + 1; b < members.size(); ++b) {
            cos_sum += pairwise_cosine(c, members[a], members[b], columns);
            ++pairs;
        }
    coherence = cos_sum / static_cast<double>(pairs);

    double var = 0.0;
    for (double v : norms) var += (v - mean) * (v - mean);
    var /= static_cast<double>(norms.size());
    cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
}

} // namespace

std::string_view cluster_method_name(ClusterMethod m) {
    return m == ClusterMethod::analysis_graph ? "analysis-graph" : "rotation-graph";
}

RoutingMatrix project_routing(const SvdTriple& svd, const Matrix& delta, DeltaKind kind,
                              std::string layer_key) {
    if (delta.rows() != svd.u.rows() || delta.cols() != svd.v.rows())
        throw ShapeError("project_routing: update shape disagrees with the layer SVD" +
                         (layer_key.empty() ? "" : " for \"" + layer_key + "\""));
    RoutingMatrix out;
    out.c = kernels::matmul(kernels::matmul_at_b(svd.u, delta), svd.v);
    out.kind = kind;
    out.layer_key = std::move(layer_key);
    return out;
}

Matrix backproject_routing(const SvdTriple& svd, const RoutingMatrix& routing) {
    if (routing.c.rows() != svd.m() || routing.c.cols() != svd.m())
        throw ShapeError("backproject_routing: routing matrix is not m x m");
    return kernels::matmul_a_bt(kernels::matmul(svd.u, routing.c), svd.v);
}

ClusterSet cluster_rotation_graph(const RoutingMatrix& routing,
                                  const std::vector<double>& s, std::size_t k,
                                  double tau, double eps) {
    const Matrix& c = routing.c;
    if (k == 0 || k > c.rows() || k > s.size())
        throw UsageError("cluster_rotation_graph: k out of range");
    if (!(tau > 0.0) || !(eps > 0.0))
        throw UsageError("cluster_rotation_graph: tau and eps must be positive");

    std::vector<std::vector<std::size_t>> adj(k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j) {
            const double gap = std::abs(s[i] - s[j]) + eps;
            // Edge when either direction's rotation strength clears tau.
            const bool edge = std::abs(c(i, j)) / gap > tau ||
                              std::abs(c(j, i)) / gap > tau;
            if (edge) {
                adj[i].push_back(j);
                adj[j].push_back(i);
            }
        }
    return components_from_edges(k, adj, ClusterMethod::rotation_graph);
}

ClusterSet cluster_similarity_graph(const Matrix& u, const Matrix& u_prime,
                                    std::size_t k, double threshold) {
    if (u.rows() != u_prime.rows())
        throw ShapeError("cluster_similarity_graph: bases have different ambient dimension");
    if (k == 0 || k > u.cols() || k > u_prime.cols())
        throw UsageError("cluster_similarity_graph: k out of range");

    // Nodes 0..k-1 are pre directions, k..2k-1 are post directions.
    std::vector<std::vector<std::size_t>> adj(2 * k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double dot = 0.0;
            for (std::size_t t = 0; t < u.rows(); ++t) dot += u(t, i) * u_prime(t, j);
            if (std::abs(dot) > threshold) {
                adj[i].push_back(k + j);
                adj[k + j].push_back(i);
            }
        }

    const ClusterSet bipartite =
        components_from_edges(2 * k, adj, ClusterMethod::analysis_graph);

    // Keep the pre-index part of each component; post-only components drop out.
    ClusterSet set;
    set.k = k;
    set.method = ClusterMethod::analysis_graph;
    set.index_to_cluster.assign(k, static_cast<std::size_t>(-1));
    for (const auto& component : bipartite.clusters) {
        std::vector<std::size_t> members;
        for (std::size_t node : component)
            if (node < k) members.push_back(node);
        if (members.empty()) continue;
        const std::size_t id = set.clusters.size();
        for (std::size_t node : members) set.index_to_cluster[node] = id;
        set.clusters.push_back(std::move(members));
    }
    return set;
}

ClusterMetrics cluster_metrics(const RoutingMatrix& routing, const ClusterSet& clusters) {
    const Matrix& c = routing.c;
    if (clusters.k > c.rows() || clusters.k > c.cols())
        throw ShapeError("cluster_metrics: clusters cover more indices than the matrix");

    const std::size_t m_count = clusters.count();
    ClusterMetrics out;
    out.m = c.rows();
    out.send_density.resize(m_count);
    out.recv_density.resize(m_count);
    out.coherence_send.resize(m_count);
    out.coherence_recv.resize(m_count);
    out.energy_cv_send.resize(m_count);
    out.energy_cv_recv.resize(m_count);
    for (std::size_t g = 0; g < m_count; ++g) {
        const auto& members = clusters.clusters[g];
        side_metrics(c, members, /*columns=*/true, out.send_density[g],
                     out.coherence_send[g], out.energy_cv_send[g]);
        side_metrics(c, members, /*columns=*/false, out.recv_density[g],
                     out.coherence_recv[g], out.energy_cv_recv[g]);
    }

    out.rms_block = Matrix(m_count, m_count);
    for (std::size_t gm = 0; gm < m_count; ++gm)
        for (std::size_t gn = 0; gn < m_count; ++gn) {
            const auto& rows = clusters.clusters[gm];
            const auto& cols = clusters.clusters[gn];
            double sum = 0.0;
            for (std::size_t i : rows)
                for (std::size_t j : cols) sum += c(i, j) * c(i, j);
            out.rms_block(gm, gn) =
                std::sqrt(sum) /
                std::sqrt(static_cast<double>(rows.size()) *
                          static_cast<double>(cols.size()));
        }
    return out;
}

double block_cosine(const Matrix& c1, const Matrix& c2,
                    const std::vector<std::size_t>& rows,
                    const std::vector<std::size_t>& cols, double eps) {
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i : rows)
        for (std::size_t j : cols) {
            const double a = c1(i, j);
            const double b = c2(i, j);
            dot += a * b;
            n1 += a * a;
            n2 += b * b;
        }
    return dot / (std::sqrt(n1) * std::sqrt(n2) + eps);
}

InterferenceMaps interference_maps(const RoutingMatrix& c_lora,
                                   const RoutingMatrix& c_fft,
                                   const ClusterSet& clusters, double eps) {
    if (!c_lora.c.same_shape(c_fft.c))
        throw ShapeError("interference_maps: routing matrices have different shapes");
    if (!c_lora.layer_key.empty() && !c_fft.layer_key.empty() &&
        c_lora.layer_key != c_fft.layer_key)
        throw UsageError("interference_maps: routing matrices come from different layers");

    const ClusterMetrics lora = cluster_metrics(c_lora, clusters);
    const ClusterMetrics fft = cluster_metrics(c_fft, clusters);

    const std::size_t m_count = clusters.count();
    InterferenceMaps maps;
    maps.overlap = Matrix(m_count, m_count);
    maps.alignment = Matrix(m_count, m_count);
    for (std::size_t gm = 0; gm < m_count; ++gm)
        for (std::size_t gn = 0; gn < m_count; ++gn) {
            maps.overlap(gm, gn) = lora.rms_block(gm, gn) * fft.rms_block(gm, gn);
            maps.alignment(gm, gn) =
                block_cosine(c_lora.c, c_fft.c, clusters.clusters[gm],
                             clusters.clusters[gn], eps);
        }
    return maps;
}

} // namespace casa
