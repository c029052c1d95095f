#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "casa/matrix.hpp"
#include "casa/spectral.hpp"
#include "casa/tensor_store.hpp"

namespace casa {

// A weight update expressed in the source layer's singular bases,
// C = U_s^T * Delta * V_s. Entry (i, j) is the strength of the routing
// connection from sender direction j to receiver direction i.
struct RoutingMatrix {
    Matrix c; // m x m
    DeltaKind kind = DeltaKind::fft;
    std::string layer_key;
};

enum class ClusterMethod { analysis_graph, rotation_graph };

std::string_view cluster_method_name(ClusterMethod m);

// Partition of the leading k singular indices (0-based) into clusters.
// Members are sorted ascending; clusters are ordered by smallest member.
struct ClusterSet {
    std::vector<std::vector<std::size_t>> clusters;
    std::size_t k = 0;
    ClusterMethod method = ClusterMethod::rotation_graph;
    std::vector<std::size_t> index_to_cluster; // size k

    std::size_t count() const noexcept { return clusters.size(); }
    std::size_t cluster_of(std::size_t index) const { return index_to_cluster.at(index); }
};

struct ClusterMetrics {
    std::size_t m = 0; // dimension of the routing matrix the metrics came from
    std::vector<double> send_density;   // mean column norm per cluster
    std::vector<double> recv_density;   // mean row norm per cluster
    std::vector<double> coherence_send; // mean pairwise cosine, 1 for singletons
    std::vector<double> coherence_recv;
    std::vector<double> energy_cv_send; // stdev/mean of member norms, 0 for singletons
    std::vector<double> energy_cv_recv;
    Matrix rms_block; // M x M, ||C[G_m, G_n]||_F / sqrt(|G_m| |G_n|)
};

RoutingMatrix project_routing(const SvdTriple& svd, const Matrix& delta, DeltaKind kind,
                              std::string layer_key = {});

Matrix backproject_routing(const SvdTriple& svd, const RoutingMatrix& routing);

// Gap-aware perturbation graph: i and j (both < k) are connected when the
// predicted rotation strength |C(i,j)| / (|s_i - s_j| + eps) exceeds tau in
// either direction; clusters are the connected components.
ClusterSet cluster_rotation_graph(const RoutingMatrix& routing,
                                  const std::vector<double>& s, std::size_t k,
                                  double tau, double eps);

// Bipartite mixing graph between pre/post singular directions, thresholded
// on |U[:,i] . U'[:,j]|; components are projected onto the pre indices.
ClusterSet cluster_similarity_graph(const Matrix& u, const Matrix& u_prime,
                                    std::size_t k, double threshold = 0.2);

ClusterMetrics cluster_metrics(const RoutingMatrix& routing, const ClusterSet& clusters);

struct InterferenceMaps {
    Matrix overlap;   // M x M, product of the two RMS block energies
    Matrix alignment; // M x M, Frobenius cosine between the block pair
};

InterferenceMaps interference_maps(const RoutingMatrix& c_lora,
                                   const RoutingMatrix& c_fft,
                                   const ClusterSet& clusters, double eps = 1e-8);

// Frobenius cosine between the (rows x cols) blocks of two routing
// matrices, with a regularized denominator (0 when both blocks vanish).
double block_cosine(const Matrix& c1, const Matrix& c2,
                    const std::vector<std::size_t>& rows,
                    const std::vector<std::size_t>& cols, double eps);

} // namespace casa
