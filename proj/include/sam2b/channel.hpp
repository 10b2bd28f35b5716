#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "sam2b/core.hpp"
#include "sam2b/trajectory.hpp"

namespace sam2b {

using cd = std::complex<double>;

/// UAV placed exactly at the array origin (or otherwise degenerate geometry).
struct GeometryError : Error {
    using Error::Error;
};

struct ChannelConfig {
    std::size_t M = 16;        // BS uniform linear array size
    std::size_t K = 8;         // OFDM subcarriers
    std::size_t Q = 32;        // codebook size
    std::size_t D = 4;         // cyclic prefix length; metadata only
    double antenna_spacing = 0.5;  // in wavelengths
    double P = 1.0;            // transmit symbol power (linear)
    double sigma2 = 1e-6;      // noise power (linear)
    std::size_t L = 3;         // NLoS path count
    double rician_K_dB = 12.0; // LoS-to-NLoS power ratio
    double delay_spread = 1e-7;  // seconds; drives per-subcarrier rotation

    void validate() const {
        if (M < 1 || K < 1 || Q < 1) throw ConfigError("channel: M, K, Q must be >= 1");
        if (P <= 0.0) throw ConfigError("channel: P must be positive");
        if (sigma2 <= 0.0) throw ConfigError("channel: sigma2 must be positive");
        if (antenna_spacing <= 0.0) throw ConfigError("channel: antenna_spacing must be positive");
        if (delay_spread < 0.0) throw ConfigError("channel: delay_spread must be >= 0");
    }
};

// OFDM subcarrier spacing used to turn path delays into per-subcarrier phase
// rotations (mmWave numerology).
inline constexpr double kSubcarrierSpacingHz = 120e3;

/// Array response of the ULA for sine-space direction u = sin(azimuth)
/// measured from broadside, entries of unit magnitude.
inline std::vector<cd> steering_vector(std::size_t m_antennas, double spacing, double u) {
    std::vector<cd> a(m_antennas);
    for (std::size_t m = 0; m < m_antennas; ++m) {
        const double phase = 2.0 * std::numbers::pi * spacing * static_cast<double>(m) * u;
        a[m] = cd(std::cos(phase), std::sin(phase));
    }
    return a;
}

struct Codebook {
    std::vector<std::vector<cd>> vectors;  // Q unit-norm M-vectors
    std::vector<double> grid;              // sine-space steering directions

    std::size_t size() const { return vectors.size(); }
};

/// Q unit-norm steering vectors on a uniform sine-space grid over
/// [-pi/2, pi/2] (cell centers, so beams are distinct at the ends).
/// Deterministic.
inline Codebook make_codebook(std::size_t m_antennas, std::size_t q_beams,
                              double spacing = 0.5) {
    if (m_antennas < 1 || q_beams < 1) throw ConfigError("codebook: M and Q must be >= 1");
    Codebook cb;
    cb.vectors.reserve(q_beams);
    cb.grid.reserve(q_beams);
    const double norm = 1.0 / std::sqrt(static_cast<double>(m_antennas));
    for (std::size_t q = 0; q < q_beams; ++q) {
        const double u = -1.0 + (2.0 * static_cast<double>(q) + 1.0) / static_cast<double>(q_beams);
        auto v = steering_vector(m_antennas, spacing, u);
        for (auto& x : v) x *= norm;
        cb.grid.push_back(u);
        cb.vectors.push_back(std::move(v));
    }
    return cb;
}

/// Per-subcarrier downlink channel between the BS array and the UAV.
struct ChannelRealization {
    std::vector<std::vector<cd>> h;  // K vectors of M entries
    UAVState meta;
};

/// Geometric Rician multipath channel: a LoS steering component at the UAV's
/// sine-space direction (free-space 1/r amplitude) plus L random-angle NLoS
/// paths, each with its own delay driving the per-subcarrier phase
/// exp(-j 2 pi tau_l k df). Pure function of (state, cfg, rng state).
inline ChannelRealization synth_channel(const UAVState& state, const ChannelConfig& cfg,
                                        Rng& rng) {
    cfg.validate();
    const double r = state.distance();
    if (r < 1e-9)
        throw GeometryError("synth_channel: UAV coincides with the array origin");

    // Direction cosine seen by a ULA along the y axis (broadside +x):
    // u = sin(azimuth) * cos(elevation) = y / r.
    const double u_los = state.position[1] / r;
    const double amplitude = 1.0 / r;  // free-space, unit gain at 1 m

    const double k_lin = std::pow(10.0, cfg.rician_K_dB / 10.0);
    const double los_coef = amplitude * std::sqrt(k_lin / (k_lin + 1.0));
    const double nlos_total = amplitude * std::sqrt(1.0 / (k_lin + 1.0));

    struct Path {
        cd gain;
        double u;
        double tau;
    };
    std::vector<Path> paths;
    paths.push_back({cd(los_coef, 0.0), u_los, 0.0});
    if (cfg.L > 0) {
        const double per_path = nlos_total / std::sqrt(static_cast<double>(cfg.L));
        for (std::size_t l = 0; l < cfg.L; ++l) {
            Path p;
            const double re = rng.gaussian() / std::sqrt(2.0);
            const double im = rng.gaussian() / std::sqrt(2.0);
            p.gain = per_path * cd(re, im);
            p.u = rng.uniform(-1.0, 1.0);
            p.tau = rng.uniform(0.0, cfg.delay_spread);
            paths.push_back(p);
        }
    }

    ChannelRealization out;
    out.meta = state;
    out.h.assign(cfg.K, std::vector<cd>(cfg.M, cd(0.0, 0.0)));
    for (const Path& p : paths) {
        const auto a = steering_vector(cfg.M, cfg.antenna_spacing, p.u);
        for (std::size_t k = 0; k < cfg.K; ++k) {
            const double phase = -2.0 * std::numbers::pi * p.tau *
                                 static_cast<double>(k) * kSubcarrierSpacingHz;
            const cd rot = p.gain * cd(std::cos(phase), std::sin(phase));
            auto& hk = out.h[k];
            for (std::size_t m = 0; m < cfg.M; ++m) hk[m] += rot * a[m];
        }
    }
    return out;
}

/// Average receive SNR of beam f over all subcarriers:
/// (1/K) sum_k (P / sigma2) |h_k^H f|^2.
inline double avg_snr(const ChannelRealization& ch, const std::vector<cd>& f, double p_tx,
                      double sigma2) {
    double acc = 0.0;
    for (const auto& hk : ch.h) {
        if (hk.size() != f.size())
            throw DimensionError("avg_snr: channel has " + std::to_string(hk.size()) +
                                 " antennas, beam has " + std::to_string(f.size()));
        cd ip(0.0, 0.0);
        for (std::size_t m = 0; m < f.size(); ++m) ip += std::conj(hk[m]) * f[m];
        acc += std::norm(ip);
    }
    return (p_tx / sigma2) * acc / static_cast<double>(ch.h.size());
}

/// Ground-truth beam: the codebook index maximizing avg_snr. Ties broken by
/// the lowest index.
inline std::size_t oracle_beam(const ChannelRealization& ch, const Codebook& cb, double p_tx,
                               double sigma2) {
    std::size_t best = 0;
    double best_snr = -1.0;
    for (std::size_t q = 0; q < cb.size(); ++q) {
        const double s = avg_snr(ch, cb.vectors[q], p_tx, sigma2);
        if (s > best_snr) {
            best_snr = s;
            best = q;
        }
    }
    return best;
}

}  // namespace sam2b
