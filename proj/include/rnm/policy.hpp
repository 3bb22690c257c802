#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "rnm/channel.hpp"
#include "rnm/complex.hpp"
#include "rnm/errors.hpp"
#include "rnm/rng.hpp"
#include "rnm/tape.hpp"

namespace rnm {

// Layered parameters of the power-allocation network. weights[i] is the
// row-major [out x in] matrix of layer i, biases[i] its bias vector. The
// output dimension is K+1: K power logits plus one slack logit.
struct NetworkWeights {
    std::vector<std::uint32_t> layer_dims;        // input, hidden..., output
    std::vector<std::vector<double>> weights;     // per layer, out*in
    std::vector<std::vector<double>> biases;      // per layer, out

    std::size_t num_layers() const { return weights.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
        return n;
    }

    void check_dims() const {
        if (layer_dims.size() < 2) throw DimensionMismatch("network needs >= 2 layer dims");
        if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size()) {
            throw DimensionMismatch("layer count mismatch");
        }
        for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
            if (layer_dims[i] == 0) throw DimensionMismatch("zero layer dim");
            const std::size_t want = static_cast<std::size_t>(layer_dims[i]) * layer_dims[i + 1];
            if (weights[i].size() != want || biases[i].size() != layer_dims[i + 1]) {
                throw DimensionMismatch("matrix size inconsistent with dims");
            }
        }
        if (layer_dims.back() == 0) throw DimensionMismatch("zero layer dim");
    }
};

inline std::size_t encoding_length(int K, int M) {
    return static_cast<std::size_t>(2 * K * M + 2 * K);
}

// Glorot-uniform matrices, zero biases.
inline NetworkWeights init_weights(std::span<const std::uint32_t> layer_dims,
                                   std::uint64_t seed) {
    NetworkWeights w;
    w.layer_dims.assign(layer_dims.begin(), layer_dims.end());
    if (layer_dims.size() < 2) throw DimensionMismatch("network needs >= 2 layer dims");
    for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
        const std::uint32_t fan_in = layer_dims[i];
        const std::uint32_t fan_out = layer_dims[i + 1];
        const double a = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
        CounterRng rng(CounterRng::derive(seed, stream::kInitWeights, i));
        std::vector<double> mat(static_cast<std::size_t>(fan_in) * fan_out);
        for (auto& v : mat) v = rng.uniform(-a, a);
        w.weights.push_back(std::move(mat));
        w.biases.emplace_back(fan_out, 0.0);
    }
    w.check_dims();
    return w;
}

// Flattening order: for each user (in the order given), the M antenna
// entries as re, im pairs; then all QoS values in Mbit/s; then all path
// losses as log10. Fixed so that serialized inputs are stable.
inline std::vector<double> encode_inputs(const std::vector<CVec>& h,
                                         std::span<const double> qos_bps,
                                         std::span<const double> loss_path) {
    std::vector<double> x;
    const std::size_t K = h.size();
    x.reserve(encoding_length(static_cast<int>(K), h.empty() ? 0 : static_cast<int>(h[0].size())));
    for (const auto& hk : h) {
        for (const auto& z : hk) {
            x.push_back(z.real());
            x.push_back(z.imag());
        }
    }
    for (std::size_t k = 0; k < K; ++k) x.push_back(qos_bps[k] / 1e6);
    for (std::size_t k = 0; k < K; ++k) x.push_back(std::log10(loss_path[k]));
    return x;
}

// Tape-valued encoding: channel entries stay differentiable; QoS and path
// loss enter as constants.
inline std::vector<Var> encode_inputs_on_tape(Tape& tape,
                                              const std::vector<std::vector<CVar>>& h,
                                              std::span<const double> qos_bps,
                                              std::span<const double> loss_path) {
    std::vector<Var> x;
    const std::size_t K = h.size();
    x.reserve(encoding_length(static_cast<int>(K), h.empty() ? 0 : static_cast<int>(h[0].size())));
    for (const auto& hk : h) {
        for (const auto& z : hk) {
            x.push_back(z.re);
            x.push_back(z.im);
        }
    }
    for (std::size_t k = 0; k < K; ++k) x.push_back(tape.constant(qos_bps[k] / 1e6));
    for (std::size_t k = 0; k < K; ++k) x.push_back(tape.constant(std::log10(loss_path[k])));
    return x;
}

// Weights lifted onto a tape as leaf nodes, reusable across the unrolled
// inner steps. `flat` lists every parameter Var in serialization order
// (matrix then bias, layer by layer) for gradient extraction.
struct LiftedWeights {
    std::vector<std::vector<Var>> weights;
    std::vector<std::vector<Var>> biases;
    std::vector<Var> flat;
    const NetworkWeights* source = nullptr;
};

inline LiftedWeights lift_weights(Tape& tape, const NetworkWeights& w) {
    w.check_dims();
    LiftedWeights lw;
    lw.source = &w;
    lw.flat.reserve(w.parameter_count());
    for (std::size_t i = 0; i < w.num_layers(); ++i) {
        std::vector<Var> mat;
        mat.reserve(w.weights[i].size());
        for (double v : w.weights[i]) {
            mat.push_back(tape.constant(v));
            lw.flat.push_back(mat.back());
        }
        lw.weights.push_back(std::move(mat));
        std::vector<Var> bias;
        bias.reserve(w.biases[i].size());
        for (double v : w.biases[i]) {
            bias.push_back(tape.constant(v));
            lw.flat.push_back(bias.back());
        }
        lw.biases.push_back(std::move(bias));
    }
    return lw;
}

// Affine layers with tanh on hidden layers, identity output.
inline std::vector<Var> forward(const LiftedWeights& lw, std::span<const Var> input) {
    const NetworkWeights& w = *lw.source;
    if (input.size() != w.layer_dims.front()) {
        throw DimensionMismatch("forward: input length != first layer dim");
    }
    std::vector<Var> x(input.begin(), input.end());
    for (std::size_t layer = 0; layer < lw.weights.size(); ++layer) {
        const std::size_t in = w.layer_dims[layer];
        const std::size_t out = w.layer_dims[layer + 1];
        std::vector<Var> y(out);
        for (std::size_t o = 0; o < out; ++o) {
            Var acc = lw.biases[layer][o];
            const Var* row = &lw.weights[layer][o * in];
            for (std::size_t i = 0; i < in; ++i) {
                acc = acc + row[i] * x[i];
            }
            y[o] = layer + 1 < lw.weights.size() ? tanh(acc) : acc;
        }
        x = std::move(y);
    }
    return x;
}

// Softmax power mapping with a slack share: p_k = P_max softmax(z)_k for
// k < K, the last share left unallocated, so sum p < P_max strictly for any
// finite logits. Stabilized by subtracting the max logit (a no-op on the
// function value by shift invariance).
inline std::vector<Var> map_to_power(std::span<const Var> logits, double p_max) {
    const std::size_t n = logits.size();
    if (n < 2) throw DimensionMismatch("map_to_power: need at least one power + slack logit");
    std::size_t arg_max = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (logits[i].value() > logits[arg_max].value()) arg_max = i;
    }
    std::vector<Var> e(n);
    Var denom = logits[0].tape->constant(0.0);
    for (std::size_t i = 0; i < n; ++i) {
        e[i] = exp(logits[i] - logits[arg_max]);
        denom = denom + e[i];
    }
    std::vector<Var> p(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        p[i] = e[i] * p_max / denom;
    }
    return p;
}

inline std::vector<double> map_to_power_values(std::span<const double> logits, double p_max) {
    Tape tape;
    std::vector<Var> lv;
    for (double z : logits) lv.push_back(tape.constant(z));
    const auto pv = map_to_power(lv, p_max);
    std::vector<double> p;
    for (const Var& v : pv) p.push_back(v.value());
    return p;
}

// ---------------------------------------------------------------------------
// Model file I/O. Layout: magic "RNM1"; dim count then dims as u32 LE; all
// matrices and biases row-major as f64 LE, layer by layer (matrix then
// bias); trailing u64 LE checksum = sum of all preceding bytes mod 2^64.

namespace detail {

inline constexpr char kModelMagic[4] = {'R', 'N', 'M', '1'};

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline std::uint64_t byte_sum(const std::string& s) {
    std::uint64_t acc = 0;
    for (unsigned char c : s) acc += c;
    return acc;
}

class ByteReader {
public:
    ByteReader(const std::string& data) : data_(data) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
                    << (8 * i);
        }
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > data_.size()) throw IoError("model file truncated");
    }
    const std::string& data_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_weights(const NetworkWeights& w, const std::string& path) {
    w.check_dims();
    std::string payload;
    payload.append(detail::kModelMagic, 4);
    detail::put_u32(payload, static_cast<std::uint32_t>(w.layer_dims.size()));
    for (std::uint32_t d : w.layer_dims) detail::put_u32(payload, d);
    for (std::size_t i = 0; i < w.num_layers(); ++i) {
        for (double v : w.weights[i]) detail::put_f64(payload, v);
        for (double v : w.biases[i]) detail::put_f64(payload, v);
    }
    std::string check;
    std::uint64_t sum = detail::byte_sum(payload);
    for (int i = 0; i < 8; ++i) check.push_back(static_cast<char>((sum >> (8 * i)) & 0xFF));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    f.write(check.data(), static_cast<std::streamsize>(check.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline NetworkWeights load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (data.size() < 8 || std::memcmp(data.data(), detail::kModelMagic, 4) != 0) {
        throw FormatVersionMismatch("not a model file (bad magic)");
    }
    detail::ByteReader rd(data);
    (void)rd.u32();  // magic, already checked
    const std::uint32_t ndims = rd.u32();
    if (ndims < 2 || ndims > 64) throw DimensionMismatch("implausible layer count");
    NetworkWeights w;
    w.layer_dims.resize(ndims);
    std::size_t values = 0;
    for (auto& d : w.layer_dims) {
        d = rd.u32();
        if (d == 0) throw DimensionMismatch("zero layer dim in header");
    }
    for (std::size_t i = 0; i + 1 < ndims; ++i) {
        values += static_cast<std::size_t>(w.layer_dims[i]) * w.layer_dims[i + 1] +
                  w.layer_dims[i + 1];
    }
    const std::size_t expected = rd.pos() + values * 8 + 8;
    if (data.size() > expected) {
        throw DimensionMismatch("payload size does not match dims header");
    }

    for (std::size_t i = 0; i + 1 < ndims; ++i) {
        const std::size_t in = w.layer_dims[i], out = w.layer_dims[i + 1];
        std::vector<double> mat(in * out);
        for (auto& v : mat) v = rd.f64();
        w.weights.push_back(std::move(mat));
        std::vector<double> bias(out);
        for (auto& v : bias) v = rd.f64();
        w.biases.push_back(std::move(bias));
    }

    if (rd.remaining() < 8) throw IoError("model file truncated");
    const std::string body = data.substr(0, rd.pos());
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) {
        stored |= static_cast<std::uint64_t>(
                      static_cast<unsigned char>(data[rd.pos() + static_cast<std::size_t>(i)]))
                  << (8 * i);
    }
    if (stored != detail::byte_sum(body)) {
        throw FormatVersionMismatch("model checksum mismatch");
    }
    w.check_dims();
    return w;
}

}  // namespace rnm
