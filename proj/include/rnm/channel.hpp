#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "rnm/complex.hpp"
#include "rnm/errors.hpp"
#include "rnm/rng.hpp"
#include "rnm/tape.hpp"
#include "rnm/units.hpp"

namespace rnm {

using Vec2 = std::array<double, 2>;
using CMat = std::vector<std::vector<std::complex<double>>>;
using CVec = std::vector<std::complex<double>>;

inline double distance(const Vec2& a, const Vec2& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

// Geometry, array sizes, and radio constants for one network. Users are
// dropped uniformly in a square of side `area_width` with the BS at one
// corner.
struct TopologyConfig {
    double area_width = 10.0;        // m
    Vec2 bs_position{0.0, 0.0};      // corner of the area
    Vec2 ris_position{5.0, 5.0};     // m
    int num_antennas = 16;           // M
    int num_elements = 16;           // N
    int num_users = 4;               // K, even
    double path_loss_exponent = 3.0;           // alpha, BS-MU and RIS-MU links
    double bs_ris_loss_exponent = 2.2;         // fixed LoS-grade exponent
    double rician_factor = 10.0;               // kappa, linear
    double bandwidth = 4e6;                    // Hz
    double noise_psd_dbm = -169.0;             // dBm/Hz
    double p_max = dbm_to_watts(20.0);         // W
    double qos_low_mbps = 0.5;                 // QoS draw range, Mbit/s
    double qos_high_mbps = 2.5;

    void validate() const {
        if (num_users < 2) throw InvalidConfig("num_users must be at least 2");
        if (num_users % 2 != 0) throw InvalidConfig("num_users must be even");
        if (num_antennas < num_users / 2) {
            throw InvalidConfig("num_antennas must be at least num_users/2");
        }
        if (num_elements < 1) throw InvalidConfig("num_elements must be positive");
        if (area_width <= 0.0) throw InvalidConfig("area_width must be positive");
        if (path_loss_exponent <= 0.0) throw InvalidConfig("path_loss_exponent must be positive");
        if (rician_factor < 0.0) throw InvalidConfig("rician_factor must be nonnegative");
        if (bandwidth <= 0.0) throw InvalidConfig("bandwidth must be positive");
        if (p_max <= 0.0) throw InvalidConfig("p_max must be positive");
        if (qos_low_mbps <= 0.0 || qos_high_mbps < qos_low_mbps) {
            throw InvalidConfig("QoS range must be positive and ordered");
        }
    }
};

// One static snapshot: user drop plus QoS requirements. Noise power is over
// the full bandwidth; orthogonal schemes rescale per sub-band.
struct Scenario {
    TopologyConfig config;
    std::vector<Vec2> mu_positions;
    std::vector<double> qos;  // bit/s, per user
    double noise_power_w = 0.0;
};

// All fading realizations for one scenario. Entries already carry the
// large-scale losses: h_direct variance d_k^{-alpha}, h_ris variance
// d_{R,k}^{-alpha}, H_BR scaled by d_BR^{-2.2}.
struct ChannelSet {
    CMat h_bru;                       // N x M, BS-RIS
    std::vector<CVec> h_direct;       // K vectors of length M
    std::vector<CVec> h_ris;          // K vectors of length N
    std::vector<double> loss_path;    // K, BS-MU path loss
};

struct PhaseShift {
    std::vector<double> theta;  // radians, [0, 2pi)
};

// Effective BS-to-user channels h_k (column vectors of length M) with
// h_k^H = h_{B,k}^H + h_{R,k}^H diag(e^{j theta}) H_BR.
struct CombinedChannel {
    std::vector<CVec> h;
};

namespace stream {
// Fixed tags for RNG sub-stream derivation; values are part of the
// reproducibility contract (same seed -> same draws, forever).
inline constexpr std::uint64_t kPositions = 1;
inline constexpr std::uint64_t kQos = 2;
inline constexpr std::uint64_t kDirect = 3;
inline constexpr std::uint64_t kRis = 4;
inline constexpr std::uint64_t kBsRis = 5;
inline constexpr std::uint64_t kTrainScenario = 10;
inline constexpr std::uint64_t kTrainChannels = 11;
inline constexpr std::uint64_t kTrainTheta = 12;
inline constexpr std::uint64_t kInitWeights = 13;
inline constexpr std::uint64_t kEvalScenario = 20;
inline constexpr std::uint64_t kEvalChannels = 21;
inline constexpr std::uint64_t kEvalTheta = 22;
inline constexpr std::uint64_t kSweepTrain = 30;
}  // namespace stream

inline Scenario generate_topology(const TopologyConfig& config, std::uint64_t seed) {
    config.validate();
    Scenario s;
    s.config = config;
    s.noise_power_w = noise_power(config.noise_psd_dbm, config.bandwidth);

    CounterRng pos_rng(CounterRng::derive(seed, stream::kPositions));
    s.mu_positions.resize(config.num_users);
    for (auto& p : s.mu_positions) {
        p[0] = pos_rng.uniform(0.0, config.area_width);
        p[1] = pos_rng.uniform(0.0, config.area_width);
    }

    CounterRng qos_rng(CounterRng::derive(seed, stream::kQos));
    s.qos.resize(config.num_users);
    for (auto& q : s.qos) {
        q = qos_rng.uniform(config.qos_low_mbps, config.qos_high_mbps) * 1e6;
    }
    return s;
}

namespace detail {

// Circularly-symmetric complex Gaussian with E|z|^2 = var.
inline std::complex<double> cscg(CounterRng& rng, double var) {
    const double s = std::sqrt(var / 2.0);
    const double re = rng.normal();
    const double im = rng.normal();
    return {s * re, s * im};
}

}  // namespace detail

inline ChannelSet sample_channels(const Scenario& scenario, std::uint64_t seed) {
    const TopologyConfig& c = scenario.config;
    const int M = c.num_antennas, N = c.num_elements, K = c.num_users;
    ChannelSet cs;
    cs.h_direct.resize(K);
    cs.h_ris.resize(K);
    cs.loss_path.resize(K);

    for (int k = 0; k < K; ++k) {
        const double d_bs = distance(c.bs_position, scenario.mu_positions[k]);
        const double d_ris = distance(c.ris_position, scenario.mu_positions[k]);
        cs.loss_path[k] = path_loss(d_bs, c.path_loss_exponent);
        const double var_ris = path_loss(d_ris, c.path_loss_exponent);

        CounterRng rng_b(CounterRng::derive(seed, stream::kDirect, static_cast<std::uint64_t>(k)));
        cs.h_direct[k].resize(M);
        for (auto& z : cs.h_direct[k]) z = detail::cscg(rng_b, cs.loss_path[k]);

        CounterRng rng_r(CounterRng::derive(seed, stream::kRis, static_cast<std::uint64_t>(k)));
        cs.h_ris[k].resize(N);
        for (auto& z : cs.h_ris[k]) z = detail::cscg(rng_r, var_ris);
    }

    // Rician BS-RIS link: unit-modulus ULA steering outer product (half
    // wavelength spacing, broadside angles uniform on [0, pi)) plus a
    // scattered CSCG part, mixed by the K-factor and scaled by the link loss.
    const double d_br = distance(c.bs_position, c.ris_position);
    const double loss_br = path_loss(d_br, c.bs_ris_loss_exponent);
    const double los_w = std::sqrt(c.rician_factor / (1.0 + c.rician_factor));
    const double nlos_w = std::sqrt(1.0 / (1.0 + c.rician_factor));

    CounterRng rng_h(CounterRng::derive(seed, stream::kBsRis));
    const double phi_r = rng_h.uniform(0.0, std::numbers::pi);
    const double phi_t = rng_h.uniform(0.0, std::numbers::pi);
    const auto steer = [](int count, double phi) {
        CVec a(count);
        for (int i = 0; i < count; ++i) {
            a[i] = std::polar(1.0, std::numbers::pi * i * std::cos(phi));
        }
        return a;
    };
    const CVec a_r = steer(N, phi_r);
    const CVec a_t = steer(M, phi_t);

    cs.h_bru.assign(N, CVec(M));
    const double scale = std::sqrt(loss_br);
    for (int n = 0; n < N; ++n) {
        for (int m = 0; m < M; ++m) {
            const std::complex<double> los = a_r[n] * std::conj(a_t[m]);
            cs.h_bru[n][m] = scale * (los_w * los + nlos_w * detail::cscg(rng_h, 1.0));
        }
    }
    return cs;
}

inline CombinedChannel combined_channel(const ChannelSet& cs, const PhaseShift& phase) {
    const int N = static_cast<int>(cs.h_bru.size());
    const int M = N > 0 ? static_cast<int>(cs.h_bru[0].size()) : 0;
    const int K = static_cast<int>(cs.h_direct.size());
    if (static_cast<int>(phase.theta.size()) != N) {
        throw DimensionMismatch("combined_channel: phase vector length != N");
    }

    CVec ejt(N);
    for (int n = 0; n < N; ++n) ejt[n] = std::polar(1.0, phase.theta[n]);

    CombinedChannel out;
    out.h.resize(K);
    for (int k = 0; k < K; ++k) {
        out.h[k].resize(M);
        for (int m = 0; m < M; ++m) {
            // row[m] = h_k^H entry m; the stored column is its conjugate.
            std::complex<double> row = std::conj(cs.h_direct[k][m]);
            for (int n = 0; n < N; ++n) {
                row += std::conj(cs.h_ris[k][n]) * ejt[n] * cs.h_bru[n][m];
            }
            out.h[k][m] = std::conj(row);
        }
    }
    return out;
}

// Phase-independent parts of the combined-channel map, lifted onto a tape
// once so repeated evaluations at different theta reuse the constants.
// coef[k][n][m] = conj(h_{R,k}[n]) * H_BR[n][m]; base[k][m] = h_{B,k}[m]^H
// entry, i.e. conj(h_direct).
struct LiftedChannels {
    Tape* tape = nullptr;
    int K = 0, N = 0, M = 0;
    std::vector<CVar> base;  // K*M, row-major [k][m]
    std::vector<CVar> coef;  // K*N*M, row-major [k][n][m]
};

inline LiftedChannels lift_channels(Tape& tape, const ChannelSet& cs) {
    LiftedChannels lc;
    lc.tape = &tape;
    lc.N = static_cast<int>(cs.h_bru.size());
    lc.M = lc.N > 0 ? static_cast<int>(cs.h_bru[0].size()) : 0;
    lc.K = static_cast<int>(cs.h_direct.size());
    lc.base.reserve(static_cast<std::size_t>(lc.K) * lc.M);
    lc.coef.reserve(static_cast<std::size_t>(lc.K) * lc.N * lc.M);
    for (int k = 0; k < lc.K; ++k) {
        for (int m = 0; m < lc.M; ++m) {
            lc.base.push_back(lift(tape, std::conj(cs.h_direct[k][m])));
        }
    }
    for (int k = 0; k < lc.K; ++k) {
        for (int n = 0; n < lc.N; ++n) {
            for (int m = 0; m < lc.M; ++m) {
                lc.coef.push_back(lift(tape, std::conj(cs.h_ris[k][n]) * cs.h_bru[n][m]));
            }
        }
    }
    return lc;
}

// Tape-valued combined channel: returns the K column vectors h_k, each entry
// differentiable in theta.
inline std::vector<std::vector<CVar>> combined_channel_on_tape(const LiftedChannels& lc,
                                                               std::span<const Var> theta) {
    if (static_cast<int>(theta.size()) != lc.N) {
        throw DimensionMismatch("combined_channel_on_tape: phase vector length != N");
    }
    std::vector<CVar> ejt(lc.N);
    for (int n = 0; n < lc.N; ++n) {
        ejt[n] = CVar{cos(theta[n]), sin(theta[n])};
    }

    std::vector<std::vector<CVar>> h(lc.K);
    for (int k = 0; k < lc.K; ++k) {
        h[k].resize(lc.M);
        for (int m = 0; m < lc.M; ++m) {
            CVar row = lc.base[static_cast<std::size_t>(k) * lc.M + m];
            for (int n = 0; n < lc.N; ++n) {
                const CVar& c = lc.coef[(static_cast<std::size_t>(k) * lc.N + n) * lc.M + m];
                row = row + c * ejt[n];
            }
            h[k][m] = conj(row);
        }
    }
    return h;
}

}  // namespace rnm
