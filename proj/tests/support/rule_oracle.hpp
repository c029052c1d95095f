#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "casa/matrix.hpp"

namespace casa::testsupport {

// Naive per-entry reimplementation of the dominance-detection, scoring and
// arbitration rules, written directly from their definitions with plain
// loops. Kept independent of the library so it can serve as an oracle.
struct RuleOracleResult {
    Matrix c_casa;
    Matrix effective; // c_fft + c_casa
    std::vector<char> region; // 'r' restore, 'p' preserve, 'a' arbitrate
    std::vector<bool> send_dominant, recv_dominant;
    double threshold = 0.0;
};

inline double oracle_quantile(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    std::size_t rank =
        static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
    rank = std::max<std::size_t>(1, std::min(rank, values.size()));
    return values[rank - 1];
}

inline RuleOracleResult casa_rule_oracle(
    const Matrix& c_lora, const Matrix& c_fft,
    const std::vector<std::vector<std::size_t>>& clusters, std::size_t k,
    double q_dom, double q_act, double eps, bool positive_only = true) {
    const std::size_t m = c_lora.rows();
    const std::size_t n_clusters = clusters.size();

    std::vector<std::size_t> cluster_of(k);
    for (std::size_t g = 0; g < n_clusters; ++g)
        for (std::size_t idx : clusters[g]) cluster_of[idx] = g;

    // Eqs. for send/recv density: mean full column / row norm per cluster.
    std::vector<double> send(n_clusters), recv(n_clusters);
    for (std::size_t g = 0; g < n_clusters; ++g) {
        double s_sum = 0.0, r_sum = 0.0;
        for (std::size_t idx : clusters[g]) {
            double col = 0.0, row = 0.0;
            for (std::size_t i = 0; i < m; ++i) col += c_fft(i, idx) * c_fft(i, idx);
            for (std::size_t j = 0; j < m; ++j) row += c_fft(idx, j) * c_fft(idx, j);
            s_sum += std::sqrt(col);
            r_sum += std::sqrt(row);
        }
        send[g] = s_sum / static_cast<double>(clusters[g].size());
        recv[g] = r_sum / static_cast<double>(clusters[g].size());
    }
    const double send_thr = oracle_quantile(send, q_dom);
    const double recv_thr = oracle_quantile(recv, q_dom);

    RuleOracleResult result;
    result.send_dominant.resize(n_clusters);
    result.recv_dominant.resize(n_clusters);
    for (std::size_t g = 0; g < n_clusters; ++g) {
        result.send_dominant[g] = send[g] >= send_thr;
        result.recv_dominant[g] = recv[g] >= recv_thr;
    }

    auto dominant = [&](std::size_t i, std::size_t j) {
        if (i >= k || j >= k) return false;
        return result.recv_dominant[cluster_of[i]] || result.send_dominant[cluster_of[j]];
    };

    // Block cosine per cluster pair.
    std::vector<std::vector<double>> block_cos(n_clusters,
                                               std::vector<double>(n_clusters));
    for (std::size_t gm = 0; gm < n_clusters; ++gm)
        for (std::size_t gn = 0; gn < n_clusters; ++gn) {
            double dot = 0.0, n1 = 0.0, n2 = 0.0;
            for (std::size_t i : clusters[gm])
                for (std::size_t j : clusters[gn]) {
                    dot += c_lora(i, j) * c_fft(i, j);
                    n1 += c_lora(i, j) * c_lora(i, j);
                    n2 += c_fft(i, j) * c_fft(i, j);
                }
            block_cos[gm][gn] = dot / (std::sqrt(n1) * std::sqrt(n2) + eps);
        }

    auto interaction = [&](std::size_t i, std::size_t j) {
        return dominant(i, j) ? std::max(0.0, c_lora(i, j) * c_fft(i, j)) : 0.0;
    };
    auto score = [&](std::size_t i, std::size_t j) {
        const double ctx = (i < k && j < k)
                               ? block_cos[cluster_of[i]][cluster_of[j]]
                               : 1.0;
        return interaction(i, j) * ctx;
    };

    std::vector<double> population;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (!dominant(i, j)) continue;
            const double s = score(i, j);
            if (!positive_only || s > 0.0) population.push_back(s);
        }
    result.threshold = population.empty()
                           ? std::numeric_limits<double>::infinity()
                           : oracle_quantile(population, q_act);

    result.c_casa = Matrix(m, m);
    result.effective = Matrix(m, m);
    result.region.assign(m * m, 'r');
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double l = c_lora(i, j);
            const double f = c_fft(i, j);
            double casa;
            if (!dominant(i, j)) {
                casa = l - f;
                result.region[i * m + j] = 'r';
            } else if (interaction(i, j) > 0.0 && score(i, j) >= result.threshold) {
                const double sgn = l > 0.0 ? 1.0 : (l < 0.0 ? -1.0 : 0.0);
                casa = std::max(std::abs(l), std::abs(f)) * sgn - f;
                result.region[i * m + j] = 'a';
            } else {
                casa = l;
                result.region[i * m + j] = 'p';
            }
            result.c_casa(i, j) = casa;
            result.effective(i, j) = f + casa;
        }
    return result;
}

inline double ulp_of(double x) {
    const double a = std::abs(x);
    return std::nextafter(a, std::numeric_limits<double>::infinity()) - a;
}

// One-ulp tolerance for the restoration identity (f + (l - f)) == l,
// measured at the scale of the inputs: each of the two roundings involved
// contributes at most half an ulp of |l| + |f|.
inline double restore_ulp(double l, double f) {
    return ulp_of(std::abs(l) + std::abs(f));
}

} // namespace casa::testsupport
