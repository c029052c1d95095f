#include <doctest.h>

#include <cmath>

#include "casa/errors.hpp"
#include "casa/kernels.hpp"
#include "casa/routing.hpp"
#include "support/fixture.hpp"

using namespace casa;
using testsupport::random_matrix;
using testsupport::random_orthonormal;

namespace {

SvdTriple random_svd(testsupport::Rng& rng, std::size_t rows, std::size_t cols) {
    return svd(random_matrix(rng, rows, cols));
}

RoutingMatrix wrap(Matrix c, DeltaKind kind = DeltaKind::lora) {
    RoutingMatrix r;
    r.c = std::move(c);
    r.kind = kind;
    return r;
}

// O(k^3) Floyd-Warshall-style closure over the thresholded rotation graph.
std::vector<std::vector<std::size_t>> closure_clusters(const Matrix& c,
                                                       const std::vector<double>& s,
                                                       std::size_t k, double tau,
                                                       double eps) {
    std::vector<std::vector<bool>> reach(k, std::vector<bool>(k, false));
    for (std::size_t i = 0; i < k; ++i) reach[i][i] = true;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            if (std::abs(c(i, j)) / (std::abs(s[i] - s[j]) + eps) > tau) {
                reach[i][j] = true;
                reach[j][i] = true;
            }
        }
    for (std::size_t via = 0; via < k; ++via)
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                if (reach[i][via] && reach[via][j]) reach[i][j] = true;

    std::vector<std::vector<std::size_t>> clusters;
    std::vector<bool> seen(k, false);
    for (std::size_t i = 0; i < k; ++i) {
        if (seen[i]) continue;
        std::vector<std::size_t> members;
        for (std::size_t j = 0; j < k; ++j)
            if (reach[i][j]) {
                members.push_back(j);
                seen[j] = true;
            }
        clusters.push_back(std::move(members));
    }
    return clusters;
}

bool is_partition(const ClusterSet& set) {
    std::vector<bool> seen(set.k, false);
    for (const auto& cluster : set.clusters) {
        if (cluster.empty()) return false;
        for (std::size_t i : cluster) {
            if (i >= set.k || seen[i]) return false;
            seen[i] = true;
        }
    }
    for (bool b : seen)
        if (!b) return false;
    return true;
}

} // namespace

TEST_CASE("project_routing") {
    testsupport::Rng rng(31);
    const Matrix w = random_matrix(rng, 9, 6);
    const SvdTriple t = svd(w);

    SUBCASE("zero update projects to zero") {
        const RoutingMatrix c = project_routing(t, Matrix(9, 6), DeltaKind::fft);
        CHECK(c.c.max_abs() == 0.0);
    }
    SUBCASE("the weight matrix itself projects to diag(S)") {
        const RoutingMatrix c = project_routing(t, w, DeltaKind::fft);
        for (std::size_t i = 0; i < t.m(); ++i)
            for (std::size_t j = 0; j < t.m(); ++j)
                CHECK(c.c(i, j) ==
                      doctest::Approx(i == j ? t.s[i] : 0.0).epsilon(1e-10));
    }
    SUBCASE("outer product of singular vectors hits a single entry") {
        Matrix delta(9, 6, 0.0);
        for (std::size_t r = 0; r < 9; ++r)
            for (std::size_t cidx = 0; cidx < 6; ++cidx)
                delta(r, cidx) = t.u(r, 0) * t.v(cidx, 1);
        const RoutingMatrix c = project_routing(t, delta, DeltaKind::lora);
        for (std::size_t i = 0; i < t.m(); ++i)
            for (std::size_t j = 0; j < t.m(); ++j) {
                const double expected = (i == 0 && j == 1) ? 1.0 : 0.0;
                CHECK(c.c(i, j) == doctest::Approx(expected).epsilon(1e-10));
            }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(project_routing(t, Matrix(6, 9), DeltaKind::fft), ShapeError);
    }
}

TEST_CASE("backproject_routing") {
    testsupport::Rng rng(32);
    const Matrix w = random_matrix(rng, 8, 8);
    const SvdTriple t = svd(w);

    SUBCASE("zero routing back-projects to zero") {
        CHECK(backproject_routing(t, wrap(Matrix(8, 8))).max_abs() == 0.0);
    }
    SUBCASE("diag(S) back-projects to the weight matrix") {
        Matrix diag(8, 8);
        for (std::size_t i = 0; i < 8; ++i) diag(i, i) = t.s[i];
        const Matrix back = backproject_routing(t, wrap(std::move(diag)));
        const Matrix diff = kernels::axpby(1.0, back, -1.0, w);
        CHECK(diff.frobenius_norm() / w.frobenius_norm() <= 1e-10);
    }
    SUBCASE("project(backproject(C)) is the identity on routing space") {
        for (int trial = 0; trial < 20; ++trial) {
            const RoutingMatrix c = wrap(random_matrix(rng, 8, 8));
            const Matrix delta = backproject_routing(t, c);
            const RoutingMatrix back = project_routing(t, delta, c.kind);
            const Matrix diff = kernels::axpby(1.0, back.c, -1.0, c.c);
            CHECK(diff.max_abs() <= 1e-10);
        }
    }
    SUBCASE("Frobenius norm is preserved by the orthonormal bases") {
        const RoutingMatrix c = wrap(random_matrix(rng, 8, 8));
        const Matrix delta = backproject_routing(t, c);
        CHECK(delta.frobenius_norm() ==
              doctest::Approx(c.c.frobenius_norm()).epsilon(1e-10));
    }
}

TEST_CASE("cluster_rotation_graph") {
    SUBCASE("zero routing gives singletons") {
        const std::vector<double> s{5.0, 4.0, 3.0, 2.0};
        const ClusterSet set =
            cluster_rotation_graph(wrap(Matrix(4, 4)), s, 4, 5.0, 1e-8);
        CHECK(set.count() == 4);
        for (std::size_t g = 0; g < 4; ++g) {
            CHECK(set.clusters[g] == std::vector<std::size_t>{g});
            CHECK(set.cluster_of(g) == g);
        }
    }
    SUBCASE("a tiny spectral gap amplifies weak coupling") {
        // sigma = [5, 5, 1]: R(0,1) = 0.01 / 1e-6 = 1e4 > tau.
        Matrix c(3, 3);
        c(0, 1) = 0.01;
        const ClusterSet set =
            cluster_rotation_graph(wrap(std::move(c)), {5.0, 5.0, 1.0}, 3, 1.0, 1e-6);
        REQUIRE(set.count() == 2);
        CHECK(set.clusters[0] == std::vector<std::size_t>{0, 1});
        CHECK(set.clusters[1] == std::vector<std::size_t>{2});
    }
    SUBCASE("components match the transitive-closure oracle") {
        testsupport::Rng rng(33);
        std::uniform_int_distribution<std::size_t> k_dist(2, 16);
        std::uniform_real_distribution<double> gap(0.0, 1.0);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t k = k_dist(rng);
            std::vector<double> s;
            double level = 10.0;
            for (std::size_t i = 0; i < k; ++i) {
                s.push_back(level);
                level -= gap(rng) < 0.4 ? 1e-7 : 0.8;
            }
            Matrix c = random_matrix(rng, k, k, 0.05);
            const ClusterSet set = cluster_rotation_graph(wrap(c), s, k, 5.0, 1e-8);
            CHECK(is_partition(set));
            CHECK(set.clusters == closure_clusters(c, s, k, 5.0, 1e-8));
        }
    }
    SUBCASE("symmetrization makes transposition irrelevant") {
        testsupport::Rng rng(34);
        const std::vector<double> s{3.0, 3.0 - 1e-7, 3.0 - 2e-7, 1.0, 0.5};
        for (int trial = 0; trial < 50; ++trial) {
            const Matrix c = random_matrix(rng, 5, 5, 0.01);
            const ClusterSet a = cluster_rotation_graph(wrap(c), s, 5, 5.0, 1e-8);
            const ClusterSet b =
                cluster_rotation_graph(wrap(c.transposed()), s, 5, 5.0, 1e-8);
            CHECK(a.clusters == b.clusters);
        }
    }
    SUBCASE("invariant to permutations within a cluster") {
        // Swapping two same-plateau indices permutes rows/columns of the
        // routing matrix but cannot move them across cluster boundaries.
        testsupport::Rng rng(38);
        const std::vector<double> s{6.0, 6.0 - 1e-7, 6.0 - 2e-7, 2.0, 1.0};
        for (int trial = 0; trial < 20; ++trial) {
            Matrix c = random_matrix(rng, 5, 5, 0.01);
            const ClusterSet before = cluster_rotation_graph(wrap(c), s, 5, 5.0, 1e-8);
            if (before.cluster_of(0) != before.cluster_of(1)) continue;
            Matrix permuted = c;
            for (std::size_t t = 0; t < 5; ++t) {
                std::swap(permuted(0, t), permuted(1, t));
            }
            for (std::size_t t = 0; t < 5; ++t) {
                std::swap(permuted(t, 0), permuted(t, 1));
            }
            const ClusterSet after =
                cluster_rotation_graph(wrap(std::move(permuted)), s, 5, 5.0, 1e-8);
            CHECK(before.clusters == after.clusters);
        }
    }
    SUBCASE("parameter validation") {
        CHECK_THROWS_AS(
            cluster_rotation_graph(wrap(Matrix(3, 3)), {1.0, 1.0, 1.0}, 0, 5.0, 1e-8),
            UsageError);
        CHECK_THROWS_AS(
            cluster_rotation_graph(wrap(Matrix(3, 3)), {1.0, 1.0, 1.0}, 3, -1.0, 1e-8),
            UsageError);
    }
}

TEST_CASE("cluster_similarity_graph") {
    testsupport::Rng rng(35);
    const Matrix u = random_orthonormal(rng, 16, 8);

    SUBCASE("identical bases give singletons") {
        const ClusterSet set = cluster_similarity_graph(u, u, 8);
        CHECK(set.count() == 8);
        CHECK(is_partition(set));
    }
    SUBCASE("a 45-degree rotation within a 2-D span merges the pair") {
        Matrix rotated = u;
        const double c = std::sqrt(0.5);
        for (std::size_t i = 0; i < u.rows(); ++i) {
            rotated(i, 0) = c * u(i, 0) + c * u(i, 1);
            rotated(i, 1) = -c * u(i, 0) + c * u(i, 1);
        }
        const ClusterSet set = cluster_similarity_graph(u, rotated, 8);
        REQUIRE(set.count() == 7);
        CHECK(set.clusters[0] == std::vector<std::size_t>{0, 1});
    }
    SUBCASE("a rotation confined to indices 2..4 yields one non-singleton") {
        // Random orthogonal 3x3 mix of columns 2, 3, 4.
        const Matrix q = random_orthonormal(rng, 3, 3);
        Matrix rotated = u;
        for (std::size_t i = 0; i < u.rows(); ++i)
            for (std::size_t a = 0; a < 3; ++a) {
                double sum = 0.0;
                for (std::size_t b = 0; b < 3; ++b) sum += u(i, 2 + b) * q(b, a);
                rotated(i, 2 + a) = sum;
            }
        const ClusterSet set = cluster_similarity_graph(u, rotated, 8);
        CHECK(is_partition(set));
        std::vector<std::vector<std::size_t>> non_singletons;
        for (const auto& cluster : set.clusters)
            if (cluster.size() > 1) non_singletons.push_back(cluster);
        REQUIRE(non_singletons.size() == 1);
        CHECK(non_singletons[0] == std::vector<std::size_t>{2, 3, 4});
    }
    SUBCASE("pre-indices isolated from every post direction stay singletons") {
        // Post basis orthogonal to the whole pre basis: no edges at all.
        Matrix zero_overlap(16, 8, 0.0);
        const Matrix filler = random_orthonormal(rng, 16, 16);
        // Columns of `filler` beyond the span of u are not guaranteed, so
        // build the disjoint basis by Gram-Schmidt against u.
        for (std::size_t col = 0; col < 8; ++col) {
            std::vector<double> v(16);
            for (std::size_t i = 0; i < 16; ++i) v[i] = filler(i, col);
            for (std::size_t j = 0; j < 8; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < 16; ++i) dot += v[i] * u(i, j);
                for (std::size_t i = 0; i < 16; ++i) v[i] -= dot * u(i, j);
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            for (std::size_t i = 0; i < 16; ++i) zero_overlap(i, col) = v[i] / norm;
        }
        const ClusterSet set = cluster_similarity_graph(u, zero_overlap, 8);
        CHECK(set.count() == 8);
        for (const auto& cluster : set.clusters) CHECK(cluster.size() == 1);
    }
}

TEST_CASE("cluster_metrics") {
    SUBCASE("zero routing gives zero densities and CVs") {
        const std::vector<double> s{4.0, 3.0, 2.0};
        const ClusterSet set =
            cluster_rotation_graph(wrap(Matrix(3, 3)), s, 3, 5.0, 1e-8);
        const ClusterMetrics metrics = cluster_metrics(wrap(Matrix(3, 3)), set);
        for (std::size_t g = 0; g < 3; ++g) {
            CHECK(metrics.send_density[g] == 0.0);
            CHECK(metrics.recv_density[g] == 0.0);
            CHECK(metrics.energy_cv_send[g] == 0.0);
            CHECK(metrics.energy_cv_recv[g] == 0.0);
            CHECK(metrics.coherence_send[g] == 1.0); // singleton convention
        }
    }
    SUBCASE("identity routing with singleton clusters") {
        const std::vector<double> s{4.0, 3.0, 2.0};
        const ClusterSet set =
            cluster_rotation_graph(wrap(Matrix(3, 3)), s, 3, 5.0, 1e-8);
        const ClusterMetrics metrics = cluster_metrics(wrap(Matrix::identity(3)), set);
        for (std::size_t g = 0; g < 3; ++g) {
            CHECK(metrics.send_density[g] == 1.0);
            CHECK(metrics.recv_density[g] == 1.0);
            CHECK(metrics.rms_block(g, g) == 1.0);
        }
        CHECK(metrics.rms_block(0, 1) == 0.0);
    }
    SUBCASE("densities match a double-loop oracle") {
        testsupport::Rng rng(36);
        const std::vector<double> s{5.0, 5.0 - 1e-7, 3.0, 3.0 - 1e-7, 1.0, 0.6};
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix c = random_matrix(rng, 6, 6);
            const ClusterSet set = cluster_rotation_graph(wrap(c), s, 6, 1.0, 1e-8);
            const ClusterMetrics metrics = cluster_metrics(wrap(c), set);
            for (std::size_t g = 0; g < set.count(); ++g) {
                double send = 0.0, recv = 0.0;
                for (std::size_t j : set.clusters[g]) {
                    double col = 0.0, row = 0.0;
                    for (std::size_t i = 0; i < 6; ++i) {
                        col += c(i, j) * c(i, j);
                        row += c(j, i) * c(j, i);
                    }
                    send += std::sqrt(col);
                    recv += std::sqrt(row);
                }
                send /= static_cast<double>(set.clusters[g].size());
                recv /= static_cast<double>(set.clusters[g].size());
                CHECK(metrics.send_density[g] == doctest::Approx(send).epsilon(1e-12));
                CHECK(metrics.recv_density[g] == doctest::Approx(recv).epsilon(1e-12));
            }
        }
    }
    SUBCASE("coherent cluster has coherence 1 and CV 0") {
        // Two identical columns inside one cluster.
        Matrix c(4, 4);
        for (std::size_t i = 0; i < 4; ++i) {
            c(i, 0) = static_cast<double>(i) + 1.0;
            c(i, 1) = static_cast<double>(i) + 1.0;
        }
        ClusterSet set;
        set.k = 2;
        set.method = ClusterMethod::rotation_graph;
        set.clusters = {{0, 1}};
        set.index_to_cluster = {0, 0};
        const ClusterMetrics metrics = cluster_metrics(wrap(std::move(c)), set);
        CHECK(metrics.coherence_send[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(metrics.energy_cv_send[0] == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("interference_maps") {
    testsupport::Rng rng(37);
    const std::vector<double> s{5.0, 5.0 - 1e-7, 2.0, 1.0};

    SUBCASE("identical routing aligns at +1, negated at -1") {
        const Matrix c = random_matrix(rng, 4, 4);
        const ClusterSet set = cluster_rotation_graph(wrap(c), s, 4, 1.0, 1e-8);
        const InterferenceMaps same =
            interference_maps(wrap(c, DeltaKind::lora), wrap(c, DeltaKind::fft), set);
        const InterferenceMaps opposite = interference_maps(
            wrap(c, DeltaKind::lora), wrap(kernels::scale(c, -1.0), DeltaKind::fft), set);
        for (std::size_t i = 0; i < set.count(); ++i)
            for (std::size_t j = 0; j < set.count(); ++j) {
                CHECK(same.alignment(i, j) == doctest::Approx(1.0).epsilon(1e-6));
                CHECK(opposite.alignment(i, j) == doctest::Approx(-1.0).epsilon(1e-6));
            }
    }
    SUBCASE("overlap is symmetric under swapping the arguments") {
        for (int trial = 0; trial < 20; ++trial) {
            const Matrix a = random_matrix(rng, 4, 4);
            const Matrix b = random_matrix(rng, 4, 4);
            const ClusterSet set = cluster_rotation_graph(wrap(a), s, 4, 1.0, 1e-8);
            const InterferenceMaps ab =
                interference_maps(wrap(a, DeltaKind::lora), wrap(b, DeltaKind::fft), set);
            const InterferenceMaps ba =
                interference_maps(wrap(b, DeltaKind::lora), wrap(a, DeltaKind::fft), set);
            CHECK(ab.overlap == ba.overlap);
            for (std::size_t i = 0; i < ab.alignment.size(); ++i) {
                CHECK(ab.alignment.data()[i] >= -1.0 - 1e-12);
                CHECK(ab.alignment.data()[i] <= 1.0 + 1e-12);
                CHECK(ab.overlap.data()[i] >= 0.0);
            }
        }
    }
    SUBCASE("all-zero blocks align at 0") {
        const ClusterSet set =
            cluster_rotation_graph(wrap(Matrix(4, 4)), s, 4, 1.0, 1e-8);
        const InterferenceMaps maps = interference_maps(
            wrap(Matrix(4, 4), DeltaKind::lora), wrap(Matrix(4, 4), DeltaKind::fft), set);
        CHECK(maps.alignment.max_abs() == 0.0);
        CHECK(maps.overlap.max_abs() == 0.0);
    }
}
