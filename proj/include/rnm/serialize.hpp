#pragma once

// Text fixtures for Scenario and ChannelSet: one record per line, complex
// values as "re,im" pairs, doubles printed with %.17g so round-trips are
// exact.
//
//   scenario
//   config <area_width> <bs_x> <bs_y> <ris_x> <ris_y> <M> <N> <K> <alpha>
//          <bs_ris_exp> <kappa> <bandwidth> <noise_psd_dbm> <p_max>
//          <qos_low> <qos_high>          (single line)
//   mu <k> <x> <y>                       (K lines)
//   qos <k> <bit_per_s>                  (K lines)
//   end
//
//   channels <N> <M> <K>
//   hbr <n> <re,im> x M
//   hb <k> <re,im> x M
//   hr <k> <re,im> x N
//   pl <k> <loss>
//   end

#include <complex>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rnm/channel.hpp"
#include "rnm/errors.hpp"

namespace rnm {

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_complex(std::complex<double> z) {
    return fmt_double(z.real()) + "," + fmt_double(z.imag());
}

inline double parse_double(const std::string& tok, int line) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ParseError("bad number '" + tok + "'", line);
    }
}

inline std::complex<double> parse_complex(const std::string& tok, int line) {
    const auto comma = tok.find(',');
    if (comma == std::string::npos) {
        throw ParseError("expected re,im pair, got '" + tok + "'", line);
    }
    return {parse_double(tok.substr(0, comma), line), parse_double(tok.substr(comma + 1), line)};
}

}  // namespace detail

inline void save_scenario(const Scenario& s, std::ostream& os) {
    using detail::fmt_double;
    const TopologyConfig& c = s.config;
    os << "scenario\n";
    os << "config " << fmt_double(c.area_width) << ' ' << fmt_double(c.bs_position[0]) << ' '
       << fmt_double(c.bs_position[1]) << ' ' << fmt_double(c.ris_position[0]) << ' '
       << fmt_double(c.ris_position[1]) << ' ' << c.num_antennas << ' ' << c.num_elements << ' '
       << c.num_users << ' ' << fmt_double(c.path_loss_exponent) << ' '
       << fmt_double(c.bs_ris_loss_exponent) << ' ' << fmt_double(c.rician_factor) << ' '
       << fmt_double(c.bandwidth) << ' ' << fmt_double(c.noise_psd_dbm) << ' '
       << fmt_double(c.p_max) << ' ' << fmt_double(c.qos_low_mbps) << ' '
       << fmt_double(c.qos_high_mbps) << '\n';
    for (std::size_t k = 0; k < s.mu_positions.size(); ++k) {
        os << "mu " << k << ' ' << fmt_double(s.mu_positions[k][0]) << ' '
           << fmt_double(s.mu_positions[k][1]) << '\n';
    }
    for (std::size_t k = 0; k < s.qos.size(); ++k) {
        os << "qos " << k << ' ' << fmt_double(s.qos[k]) << '\n';
    }
    os << "end\n";
}

inline Scenario load_scenario(std::istream& is) {
    Scenario s;
    std::string line;
    int line_no = 0;
    bool saw_header = false, saw_config = false, saw_end = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (!saw_header) {
            if (tag != "scenario") throw ParseError("expected 'scenario' header", line_no);
            saw_header = true;
            continue;
        }
        if (tag == "config") {
            std::vector<std::string> tok;
            std::string t;
            while (ls >> t) tok.push_back(t);
            if (tok.size() != 16) throw ParseError("config needs 16 fields", line_no);
            TopologyConfig& c = s.config;
            int i = 0;
            const auto num = [&] { return detail::parse_double(tok[i++], line_no); };
            c.area_width = num();
            c.bs_position = {num(), num()};
            c.ris_position = {num(), num()};
            c.num_antennas = static_cast<int>(num());
            c.num_elements = static_cast<int>(num());
            c.num_users = static_cast<int>(num());
            c.path_loss_exponent = num();
            c.bs_ris_loss_exponent = num();
            c.rician_factor = num();
            c.bandwidth = num();
            c.noise_psd_dbm = num();
            c.p_max = num();
            c.qos_low_mbps = num();
            c.qos_high_mbps = num();
            s.mu_positions.resize(c.num_users);
            s.qos.resize(c.num_users);
            s.noise_power_w = noise_power(c.noise_psd_dbm, c.bandwidth);
            saw_config = true;
        } else if (tag == "mu" || tag == "qos") {
            if (!saw_config) throw ParseError("record before config line", line_no);
            std::string ks, rest;
            ls >> ks;
            std::size_t k = static_cast<std::size_t>(detail::parse_double(ks, line_no));
            if (k >= s.qos.size()) throw ParseError("user index out of range", line_no);
            if (tag == "mu") {
                std::string xs, ys;
                ls >> xs >> ys;
                s.mu_positions[k] = {detail::parse_double(xs, line_no),
                                     detail::parse_double(ys, line_no)};
            } else {
                ls >> rest;
                s.qos[k] = detail::parse_double(rest, line_no);
            }
        } else if (tag == "end") {
            saw_end = true;
            break;
        } else {
            throw ParseError("unknown record '" + tag + "'", line_no);
        }
    }
    if (!saw_end) throw ParseError("missing 'end'", line_no);
    return s;
}

inline void save_channels(const ChannelSet& cs, std::ostream& os) {
    using detail::fmt_complex;
    const int N = static_cast<int>(cs.h_bru.size());
    const int M = N > 0 ? static_cast<int>(cs.h_bru[0].size()) : 0;
    const int K = static_cast<int>(cs.h_direct.size());
    os << "channels " << N << ' ' << M << ' ' << K << '\n';
    for (int n = 0; n < N; ++n) {
        os << "hbr " << n;
        for (int m = 0; m < M; ++m) os << ' ' << fmt_complex(cs.h_bru[n][m]);
        os << '\n';
    }
    for (int k = 0; k < K; ++k) {
        os << "hb " << k;
        for (const auto& z : cs.h_direct[k]) os << ' ' << fmt_complex(z);
        os << '\n';
    }
    for (int k = 0; k < K; ++k) {
        os << "hr " << k;
        for (const auto& z : cs.h_ris[k]) os << ' ' << fmt_complex(z);
        os << '\n';
    }
    for (int k = 0; k < K; ++k) {
        os << "pl " << k << ' ' << detail::fmt_double(cs.loss_path[k]) << '\n';
    }
    os << "end\n";
}

inline ChannelSet load_channels(std::istream& is) {
    ChannelSet cs;
    std::string line;
    int line_no = 0;
    int N = -1, M = -1, K = -1;
    bool saw_end = false;
    const auto read_row = [&](std::istringstream& ls, int count) {
        CVec row;
        std::string tok;
        while (ls >> tok) row.push_back(detail::parse_complex(tok, line_no));
        if (static_cast<int>(row.size()) != count) {
            throw ParseError("wrong entry count in row", line_no);
        }
        return row;
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (N < 0) {
            if (tag != "channels") throw ParseError("expected 'channels' header", line_no);
            ls >> N >> M >> K;
            if (!ls || N < 0 || M < 0 || K < 0) throw ParseError("bad dims", line_no);
            cs.h_bru.assign(N, CVec());
            cs.h_direct.assign(K, CVec());
            cs.h_ris.assign(K, CVec());
            cs.loss_path.assign(K, 0.0);
            continue;
        }
        if (tag == "end") {
            saw_end = true;
            break;
        }
        int idx = -1;
        ls >> idx;
        if (!ls) throw ParseError("missing index", line_no);
        if (tag == "hbr") {
            if (idx < 0 || idx >= N) throw ParseError("row index out of range", line_no);
            cs.h_bru[idx] = read_row(ls, M);
        } else if (tag == "hb") {
            if (idx < 0 || idx >= K) throw ParseError("user index out of range", line_no);
            cs.h_direct[idx] = read_row(ls, M);
        } else if (tag == "hr") {
            if (idx < 0 || idx >= K) throw ParseError("user index out of range", line_no);
            cs.h_ris[idx] = read_row(ls, N);
        } else if (tag == "pl") {
            if (idx < 0 || idx >= K) throw ParseError("user index out of range", line_no);
            std::string tok;
            ls >> tok;
            cs.loss_path[idx] = detail::parse_double(tok, line_no);
        } else {
            throw ParseError("unknown record '" + tag + "'", line_no);
        }
    }
    if (!saw_end) throw ParseError("missing 'end'", line_no);
    return cs;
}

inline void save_scenario(const Scenario& s, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    save_scenario(s, f);
    if (!f) throw IoError("write failed: " + path);
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return load_scenario(f);
}

inline void save_channels(const ChannelSet& cs, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    save_channels(cs, f);
    if (!f) throw IoError("write failed: " + path);
}

inline ChannelSet load_channels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return load_channels(f);
}

}  // namespace rnm
