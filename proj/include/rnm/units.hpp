#pragma once

#include <cmath>

#include "rnm/errors.hpp"

namespace rnm {

// dBm -> watts. All configs accept dBm and store watts; this is the single
// conversion point.
inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

inline double watts_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

// Thermal noise power over `bandwidth` for a spectral density given in
// dBm/Hz.
inline double noise_power(double noise_psd_dbm_per_hz, double bandwidth_hz) {
    return dbm_to_watts(noise_psd_dbm_per_hz) * bandwidth_hz;
}

// Large-scale attenuation d^{-alpha}.
inline double path_loss(double distance_m, double alpha) {
    if (distance_m <= 0.0) {
        throw InvalidDistance("path_loss: distance must be positive");
    }
    return std::pow(distance_m, -alpha);
}

}  // namespace rnm
