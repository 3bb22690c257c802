#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "rnm/channel.hpp"
#include "rnm/complex.hpp"
#include "rnm/errors.hpp"
#include "rnm/tape.hpp"

namespace rnm {

// Ordered (strong, weak) user pairs. "Strong" is the SIC-protected member
// decoded interference-free through ZF.
struct Clustering {
    std::vector<std::pair<int, int>> pairs;

    int num_users() const { return static_cast<int>(pairs.size()) * 2; }

    // Users listed strong-first per cluster: s_1, w_1, s_2, w_2, ...
    // This is the canonical ordering of power vectors and network inputs.
    std::vector<int> user_order() const {
        std::vector<int> order;
        order.reserve(pairs.size() * 2);
        for (const auto& [s, w] : pairs) {
            order.push_back(s);
            order.push_back(w);
        }
        return order;
    }
};

namespace detail {

// Sort users by descending key (ties by ascending index), then pair rank k
// with rank k + K/2; the first member has the larger key and is the strong
// user.
inline Clustering fold_pairing(std::span<const double> key) {
    const int K = static_cast<int>(key.size());
    if (K % 2 != 0) throw OddUserCount("clustering requires an even user count");
    std::vector<int> order(K);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return key[a] > key[b]; });
    Clustering c;
    const int half = K / 2;
    c.pairs.reserve(half);
    for (int k = 0; k < half; ++k) {
        c.pairs.emplace_back(order[k], order[k + half]);
    }
    return c;
}

}  // namespace detail

inline Clustering cluster_by_qos(std::span<const double> qos) {
    return detail::fold_pairing(qos);
}

inline Clustering cluster_by_channel(std::span<const double> gains) {
    return detail::fold_pairing(gains);
}

inline double min_qos_deviation(const Clustering& c, std::span<const double> qos) {
    double dev = std::numeric_limits<double>::infinity();
    for (const auto& [s, w] : c.pairs) {
        dev = std::min(dev, qos[s] - qos[w]);
    }
    return dev;
}

// Exhaustive search over all perfect matchings; the returned clustering
// maximizes the minimum within-pair QoS deviation. Double-factorial growth,
// so capped at K = 10 (945 matchings).
inline std::pair<Clustering, double> oracle_best_clustering(std::span<const double> qos) {
    const int K = static_cast<int>(qos.size());
    if (K % 2 != 0) throw OddUserCount("clustering requires an even user count");
    if (K > 10) throw TooLarge("oracle_best_clustering is limited to K <= 10");

    Clustering best, current;
    double best_dev = -std::numeric_limits<double>::infinity();
    std::vector<bool> used(K, false);

    const auto as_pair = [&](int a, int b) {
        // Strong member is the higher-QoS one; ties by lower index.
        return qos[a] >= qos[b] ? std::pair(a, b) : std::pair(b, a);
    };

    const auto recurse = [&](auto&& self, int matched) -> void {
        if (matched == K) {
            const double dev = min_qos_deviation(current, qos);
            if (dev > best_dev) {
                best_dev = dev;
                best = current;
            }
            return;
        }
        int first = 0;
        while (used[first]) ++first;
        used[first] = true;
        for (int partner = first + 1; partner < K; ++partner) {
            if (used[partner]) continue;
            used[partner] = true;
            current.pairs.push_back(as_pair(first, partner));
            self(self, matched + 2);
            current.pairs.pop_back();
            used[partner] = false;
        }
        used[first] = false;
    };
    recurse(recurse, 0);
    return {best, best_dev};
}

// ---------------------------------------------------------------------------
// Zero-forcing precoding.

// Unit-norm ZF beams w_l with the effective gains rho_l: the raw columns are
// V = H_s (H_s^H H_s)^{-1}, rho_l = |v_l|^2, w_l = v_l / |v_l|, so
// h_{j,s}^H w_l = 0 for j != l and h_{l,s}^H w_l = 1/sqrt(rho_l).
struct Precoder {
    std::vector<CVec> w;        // K/2 columns, each of length M, unit norm
    std::vector<double> rho;    // K/2 effective gains
};

struct PrecoderNodes {
    std::vector<std::vector<CVar>> w;
    std::vector<Var> rho;
};

inline PrecoderNodes zf_precoder_on_tape(const std::vector<std::vector<CVar>>& strong_cols) {
    const int C = static_cast<int>(strong_cols.size());
    if (C == 0) throw DimensionMismatch("zf_precoder: no strong channels");
    const int M = static_cast<int>(strong_cols[0].size());
    if (M < C) throw DimensionMismatch("zf_precoder: fewer antennas than clusters");
    Tape& tape = *strong_cols[0][0].re.tape;

    // Gram[i][j] = h_i^H h_j.
    std::vector<std::vector<CVar>> gram(C, std::vector<CVar>(C));
    for (int i = 0; i < C; ++i) {
        for (int j = 0; j < C; ++j) {
            CVar acc = lift(tape, 0.0);
            for (int m = 0; m < M; ++m) {
                acc = acc + conj(strong_cols[i][m]) * strong_cols[j][m];
            }
            gram[i][j] = acc;
        }
    }

    // Columns of the Gram inverse, one solve per identity column.
    std::vector<std::vector<CVar>> eye(C, std::vector<CVar>(C));
    for (int j = 0; j < C; ++j) {
        for (int i = 0; i < C; ++i) {
            eye[j][i] = lift(tape, i == j ? 1.0 : 0.0);
        }
    }
    const auto inv_cols = solve_on_tape_multi(gram, eye);

    PrecoderNodes out;
    out.w.resize(C);
    out.rho.resize(C);
    for (int l = 0; l < C; ++l) {
        // v_l = H_s * inv_col_l.
        std::vector<CVar> v(M);
        for (int m = 0; m < M; ++m) {
            CVar acc = lift(tape, 0.0);
            for (int i = 0; i < C; ++i) {
                acc = acc + strong_cols[i][m] * inv_cols[l][i];
            }
            v[m] = acc;
        }
        Var rho = tape.constant(0.0);
        for (int m = 0; m < M; ++m) rho = rho + norm_sq(v[m]);
        out.rho[l] = rho;
        const Var inv_norm = 1.0 / sqrt(rho);
        out.w[l].resize(M);
        for (int m = 0; m < M; ++m) out.w[l][m] = v[m] * inv_norm;
    }
    return out;
}

inline Precoder zf_precoder(const std::vector<CVec>& strong_cols) {
    Tape tape;
    std::vector<std::vector<CVar>> lifted(strong_cols.size());
    for (std::size_t l = 0; l < strong_cols.size(); ++l) {
        for (const auto& z : strong_cols[l]) lifted[l].push_back(lift(tape, z));
    }
    const PrecoderNodes nodes = zf_precoder_on_tape(lifted);
    Precoder p;
    p.w.resize(nodes.w.size());
    p.rho.resize(nodes.rho.size());
    for (std::size_t l = 0; l < nodes.w.size(); ++l) {
        p.rho[l] = nodes.rho[l].value();
        for (const auto& z : nodes.w[l]) p.w[l].push_back(value(z));
    }
    return p;
}

// ---------------------------------------------------------------------------
// SINRs.

inline double sinr_strong(double p_ls, double rho_l, double sigma2) {
    return p_ls / (rho_l * sigma2);
}

// Weak-user SINR with the inter-cluster term in expectation over unit-power
// symbols: |h^H w_l|^2 p_lw / (|h^H w_l|^2 p_ls
//          + sum_{j != l} |h^H w_j|^2 (p_js + p_jw) + sigma^2).
inline double sinr_weak(const CVec& h_weak, const Precoder& pre, std::span<const double> powers,
                        double sigma2, int cluster) {
    const int C = static_cast<int>(pre.w.size());
    const int M = static_cast<int>(h_weak.size());
    std::vector<double> a(C);
    for (int j = 0; j < C; ++j) {
        std::complex<double> dot = 0.0;
        for (int m = 0; m < M; ++m) dot += std::conj(h_weak[m]) * pre.w[j][m];
        a[j] = std::norm(dot);
    }
    double interference = a[cluster] * powers[2 * cluster];
    for (int j = 0; j < C; ++j) {
        if (j == cluster) continue;
        interference += a[j] * (powers[2 * j] + powers[2 * j + 1]);
    }
    return a[cluster] * powers[2 * cluster + 1] / (interference + sigma2);
}

// ---------------------------------------------------------------------------
// Rates.

// Per-user results indexed by user id. Rates are in bit/s.
struct RateReport {
    std::vector<double> sinr;
    std::vector<double> rate;
    std::vector<double> qos_violation;
    double sum_rate = 0.0;
};

// Tape-valued per-user results, indexed by user id; rates in Mbit/s (the
// scale the loss operates on).
struct RateNodes {
    std::vector<Var> sinr;
    std::vector<Var> rate_mbps;
    std::vector<Var> violation_mbps;
    Var sum_rate_mbps;
};

namespace detail {

inline Var rate_from_sinr(Tape& tape, Var sinr, double bandwidth_hz) {
    // B log2(1 + sinr) in Mbit/s.
    const double scale = bandwidth_hz / (1e6 * std::numbers::ln2);
    return log(1.0 + sinr) * scale;
}

}  // namespace detail

// NOMA rates under ZF precoding, Eq.-(5)/(6)-style SINRs. h_cols and
// qos_bps are indexed by user id; `powers` is cluster-interleaved
// (p_{1,s}, p_{1,w}, ...). Differentiable in channels and powers.
inline RateNodes noma_rate_nodes(Tape& tape, const std::vector<std::vector<CVar>>& h_cols,
                                 const Clustering& clustering, std::span<const Var> powers,
                                 std::span<const double> qos_bps, double sigma2,
                                 double bandwidth_hz) {
    const int K = static_cast<int>(h_cols.size());
    const int C = static_cast<int>(clustering.pairs.size());
    if (C * 2 != K) throw DimensionMismatch("noma_rate_nodes: clustering does not cover users");
    if (static_cast<int>(powers.size()) != K) {
        throw DimensionMismatch("noma_rate_nodes: power vector length != K");
    }

    std::vector<std::vector<CVar>> strong_cols(C);
    for (int l = 0; l < C; ++l) strong_cols[l] = h_cols[clustering.pairs[l].first];
    const PrecoderNodes pre = zf_precoder_on_tape(strong_cols);

    RateNodes out;
    out.sinr.resize(K);
    out.rate_mbps.resize(K);
    out.violation_mbps.resize(K);
    Var sum = tape.constant(0.0);

    for (int l = 0; l < C; ++l) {
        const auto [s_user, w_user] = clustering.pairs[l];
        const Var p_s = powers[2 * l];
        const Var p_w = powers[2 * l + 1];

        out.sinr[s_user] = p_s / (pre.rho[l] * sigma2);

        // Beam gains a_j = |h_w^H w_j|^2 seen by the weak user.
        const auto& h_w = h_cols[w_user];
        const int M = static_cast<int>(h_w.size());
        std::vector<Var> a(C);
        for (int j = 0; j < C; ++j) {
            CVar dot = lift(tape, 0.0);
            for (int m = 0; m < M; ++m) dot = dot + conj(h_w[m]) * pre.w[j][m];
            a[j] = norm_sq(dot);
        }
        Var interference = a[l] * p_s;
        for (int j = 0; j < C; ++j) {
            if (j == l) continue;
            interference = interference + a[j] * (powers[2 * j] + powers[2 * j + 1]);
        }
        out.sinr[w_user] = a[l] * p_w / (interference + sigma2);
    }

    for (int k = 0; k < K; ++k) {
        out.rate_mbps[k] = detail::rate_from_sinr(tape, out.sinr[k], bandwidth_hz);
        out.violation_mbps[k] = relu(qos_bps[k] / 1e6 - out.rate_mbps[k]);
        sum = sum + out.rate_mbps[k];
    }
    out.sum_rate_mbps = sum;
    return out;
}

// Orthogonal baseline: each user gets a band of width B/K and a
// maximum-ratio beam on its own combined channel, so
// R_k = (B/K) log2(1 + p_k |h_k|^2 / sigma2_k) with sigma2_k over B/K.
// `powers` is in user-id order here.
inline RateNodes oma_rate_nodes(Tape& tape, const std::vector<std::vector<CVar>>& h_cols,
                                std::span<const Var> powers, std::span<const double> qos_bps,
                                double sigma2_full, double bandwidth_hz) {
    const int K = static_cast<int>(h_cols.size());
    if (static_cast<int>(powers.size()) != K) {
        throw DimensionMismatch("oma_rate_nodes: power vector length != K");
    }
    const double band = bandwidth_hz / K;
    const double sigma2_user = sigma2_full / K;

    RateNodes out;
    out.sinr.resize(K);
    out.rate_mbps.resize(K);
    out.violation_mbps.resize(K);
    Var sum = tape.constant(0.0);
    for (int k = 0; k < K; ++k) {
        Var gain = tape.constant(0.0);
        for (const auto& z : h_cols[k]) gain = gain + norm_sq(z);
        out.sinr[k] = powers[k] * gain / sigma2_user;
        out.rate_mbps[k] = detail::rate_from_sinr(tape, out.sinr[k], band);
        out.violation_mbps[k] = relu(qos_bps[k] / 1e6 - out.rate_mbps[k]);
        sum = sum + out.rate_mbps[k];
    }
    out.sum_rate_mbps = sum;
    return out;
}

namespace detail {

inline RateReport report_from_nodes(const RateNodes& nodes) {
    RateReport r;
    const std::size_t K = nodes.sinr.size();
    r.sinr.resize(K);
    r.rate.resize(K);
    r.qos_violation.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        r.sinr[k] = nodes.sinr[k].value();
        r.rate[k] = nodes.rate_mbps[k].value() * 1e6;
        r.qos_violation[k] = nodes.violation_mbps[k].value() * 1e6;
    }
    r.sum_rate = nodes.sum_rate_mbps.value() * 1e6;
    return r;
}

inline std::vector<std::vector<CVar>> lift_combined(Tape& tape, const ChannelSet& cs,
                                                    const PhaseShift& theta) {
    const CombinedChannel cc = combined_channel(cs, theta);
    std::vector<std::vector<CVar>> h(cc.h.size());
    for (std::size_t k = 0; k < cc.h.size(); ++k) {
        for (const auto& z : cc.h[k]) h[k].push_back(lift(tape, z));
    }
    return h;
}

}  // namespace detail

// Plain-number facades: run the tape kernels on a scratch tape so there is a
// single implementation of the physics.
inline RateReport sum_rate(const ChannelSet& cs, const PhaseShift& theta,
                           const Clustering& clustering, std::span<const double> powers,
                           const Scenario& scenario) {
    Tape tape;
    const auto h = detail::lift_combined(tape, cs, theta);
    std::vector<Var> p;
    for (double v : powers) p.push_back(tape.constant(v));
    const RateNodes nodes =
        noma_rate_nodes(tape, h, clustering, p, scenario.qos, scenario.noise_power_w,
                        scenario.config.bandwidth);
    return detail::report_from_nodes(nodes);
}

inline RateReport oma_sum_rate(const ChannelSet& cs, const PhaseShift& theta,
                               std::span<const double> powers, const Scenario& scenario) {
    if (scenario.config.num_antennas < scenario.config.num_users) {
        throw InvalidConfig("OMA baseline expects num_antennas >= num_users");
    }
    Tape tape;
    const auto h = detail::lift_combined(tape, cs, theta);
    std::vector<Var> p;
    for (double v : powers) p.push_back(tape.constant(v));
    const RateNodes nodes = oma_rate_nodes(tape, h, p, scenario.qos, scenario.noise_power_w,
                                           scenario.config.bandwidth);
    return detail::report_from_nodes(nodes);
}

}  // namespace rnm
