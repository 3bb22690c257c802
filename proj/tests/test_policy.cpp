#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rnm/policy.hpp"

using namespace rnm;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& data) {
    std::ofstream f(path, std::ios::binary);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

// Plain-double reference forward pass, written independently of the tape.
std::vector<double> plain_forward(const NetworkWeights& w, const std::vector<double>& input) {
    std::vector<double> x = input;
    for (std::size_t layer = 0; layer < w.num_layers(); ++layer) {
        const std::size_t in = w.layer_dims[layer], out = w.layer_dims[layer + 1];
        std::vector<double> y(out);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = w.biases[layer][o];
            for (std::size_t i = 0; i < in; ++i) acc += w.weights[layer][o * in + i] * x[i];
            y[o] = layer + 1 < w.num_layers() ? std::tanh(acc) : acc;
        }
        x = std::move(y);
    }
    return x;
}

std::vector<Var> forward_on_fresh_tape(Tape& tape, const NetworkWeights& w,
                                       const std::vector<double>& input) {
    const LiftedWeights lw = lift_weights(tape, w);
    std::vector<Var> in;
    for (double v : input) in.push_back(tape.constant(v));
    return forward(lw, std::span<const Var>(in.data(), in.size()));
}

}  // namespace

TEST_CASE("input encoding order and scaling") {
    const std::vector<CVec> h{{{1.0, 2.0}}};
    const std::vector<double> qos{1e6};
    const std::vector<double> loss{1e-3};
    const std::vector<double> x = encode_inputs(h, qos, loss);
    REQUIRE(x == std::vector<double>{1.0, 2.0, 1.0, -3.0});
}

TEST_CASE("zero channel encodes to zeros in the channel block") {
    const std::vector<CVec> h{{{0.0, 0.0}, {0.0, 0.0}}, {{0.0, 0.0}, {0.0, 0.0}}};
    const std::vector<double> qos{2e6, 1e6};
    const std::vector<double> loss{1e-2, 1e-4};
    const std::vector<double> x = encode_inputs(h, qos, loss);
    REQUIRE(x.size() == encoding_length(2, 2));
    for (std::size_t i = 0; i < 8; ++i) REQUIRE(x[i] == 0.0);
    REQUIRE(x[8] == 2.0);
    REQUIRE(x[9] == 1.0);
    REQUIRE(x[10] == -2.0);
    REQUIRE(x[11] == -4.0);
}

TEST_CASE("encoding length formula") {
    REQUIRE(encoding_length(8, 16) == 272);
    std::vector<CVec> h(8, CVec(16, {0.1, 0.2}));
    std::vector<double> qos(8, 1e6), loss(8, 1e-3);
    REQUIRE(encode_inputs(h, qos, loss).size() == 272);
}

TEST_CASE("weight initialization is seeded and Glorot-scaled") {
    const std::vector<std::uint32_t> dims{10, 20, 5};
    const NetworkWeights a = init_weights(dims, 7);
    const NetworkWeights b = init_weights(dims, 7);
    REQUIRE(a.weights == b.weights);
    const NetworkWeights c = init_weights(dims, 8);
    REQUIRE(a.weights != c.weights);

    for (const auto& bias : a.biases) {
        for (double v : bias) REQUIRE(v == 0.0);
    }

    const std::vector<std::uint32_t> big{256, 256};
    const NetworkWeights w = init_weights(big, 3);
    const double bound = std::sqrt(6.0 / 512.0);
    double acc = 0.0;
    for (double v : w.weights[0]) {
        REQUIRE(std::abs(v) <= bound);
        acc += v * v;
    }
    const double var = acc / static_cast<double>(w.weights[0].size());
    const double want = bound * bound / 3.0;
    REQUIRE(std::abs(var - want) / want < 0.10);
}

TEST_CASE("forward pass basics") {
    NetworkWeights zero;
    zero.layer_dims = {3, 4, 2};
    zero.weights = {std::vector<double>(12, 0.0), std::vector<double>(8, 0.0)};
    zero.biases = {std::vector<double>(4, 0.0), std::vector<double>(2, 0.0)};
    Tape tape;
    const auto out = forward_on_fresh_tape(tape, zero, {0.5, -0.3, 0.9});
    for (const Var& v : out) REQUIRE(v.value() == 0.0);

    // Single affine layer selecting the input prefix.
    NetworkWeights sel;
    sel.layer_dims = {4, 3};
    sel.weights = {std::vector<double>(12, 0.0)};
    sel.biases = {std::vector<double>(3, 0.0)};
    for (int i = 0; i < 3; ++i) sel.weights[0][i * 4 + i] = 1.0;
    Tape tape2;
    const auto sel_out = forward_on_fresh_tape(tape2, sel, {0.1, 0.2, 0.3, 0.4});
    REQUIRE(sel_out[0].value() == 0.1);
    REQUIRE(sel_out[1].value() == 0.2);
    REQUIRE(sel_out[2].value() == 0.3);
}

TEST_CASE("forward matches the plain reference and its weight gradients check out") {
    const std::vector<std::uint32_t> dims{3, 4, 3};
    NetworkWeights w = init_weights(dims, 11);
    for (auto& b : w.biases[0]) b = 0.1;  // nonzero biases too
    const std::vector<double> input{0.7, -0.2, 0.4};

    Tape tape;
    const LiftedWeights lw = lift_weights(tape, w);
    std::vector<Var> in;
    for (double v : input) in.push_back(tape.constant(v));
    const auto out = forward(lw, std::span<const Var>(in.data(), in.size()));

    const auto ref = plain_forward(w, input);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        REQUIRE_THAT(out[i].value(), Catch::Matchers::WithinRel(ref[i], 1e-12));
    }

    // d logit_1 / d (a few parameters) vs central finite differences of the
    // plain reference.
    const auto grad = backward(tape, out[1], std::span<const Var>(lw.flat.data(), lw.flat.size()));
    struct Probe {
        std::size_t layer, index;
        bool bias;
    };
    const std::vector<Probe> probes{{0, 2, false}, {0, 9, false}, {0, 1, true},
                                    {1, 5, false}, {1, 1, true}};
    std::size_t flat_base = 0;
    for (std::size_t layer = 0; layer < w.num_layers(); ++layer) {
        for (const Probe& pr : probes) {
            if (pr.layer != layer) continue;
            const std::size_t flat_idx =
                flat_base + (pr.bias ? w.weights[layer].size() + pr.index : pr.index);
            const double h = 1e-6;
            NetworkWeights lo = w, hi = w;
            (pr.bias ? lo.biases[layer][pr.index] : lo.weights[layer][pr.index]) -= h;
            (pr.bias ? hi.biases[layer][pr.index] : hi.weights[layer][pr.index]) += h;
            const double fd = (plain_forward(hi, input)[1] - plain_forward(lo, input)[1]) / (2 * h);
            INFO("layer " << layer << (pr.bias ? " bias " : " weight ") << pr.index);
            REQUIRE(std::abs(grad[flat_idx] - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
        }
        flat_base += w.weights[layer].size() + w.biases[layer].size();
    }
}

TEST_CASE("power mapping is a scaled softmax with slack") {
    const double p_max = 0.1;
    const auto equal = map_to_power_values(std::vector<double>{1.0, 1.0, 1.0, 1.0}, p_max);
    REQUIRE(equal.size() == 3);
    double total = 0.0;
    for (double p : equal) {
        REQUIRE_THAT(p, Catch::Matchers::WithinRel(p_max / 4.0, 1e-12));
        total += p;
    }
    REQUIRE_THAT(total, Catch::Matchers::WithinRel(0.75 * p_max, 1e-12));

    const auto slacky = map_to_power_values(std::vector<double>{0.0, 0.0, 0.0, 50.0}, p_max);
    double total_slack = 0.0;
    for (double p : slacky) total_slack += p;
    REQUIRE(total_slack < 1e-18);

    CounterRng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(5);
        for (auto& z : logits) z = rng.uniform(-12.0, 12.0);
        const auto p = map_to_power_values(logits, p_max);
        double sum = 0.0;
        for (double v : p) {
            REQUIRE(v > 0.0);
            sum += v;
        }
        REQUIRE(sum < p_max);

        std::vector<double> shifted = logits;
        for (auto& z : shifted) z += 13.7;
        const auto q = map_to_power_values(shifted, p_max);
        for (std::size_t i = 0; i < p.size(); ++i) {
            REQUIRE_THAT(q[i], Catch::Matchers::WithinRel(p[i], 1e-12));
        }
    }

    // When the slack share underflows past machine epsilon the float sum
    // saturates at exactly p_max; the budget is still never exceeded.
    const auto extreme = map_to_power_values(std::vector<double>{30.0, 30.0, 30.0, -30.0}, p_max);
    double sat = 0.0;
    for (double v : extreme) sat += v;
    REQUIRE(sat <= p_max);
}

TEST_CASE("power mapping gradients match finite differences") {
    const double p_max = 0.1;
    const std::vector<double> logits{0.3, -1.2, 0.8, 0.1};
    Tape tape;
    std::vector<Var> lv;
    for (double z : logits) lv.push_back(tape.constant(z));
    const auto p = map_to_power(lv, p_max);
    const auto grad = backward(tape, p[0], std::span<const Var>(lv.data(), lv.size()));
    for (std::size_t j = 0; j < logits.size(); ++j) {
        const double h = 1e-6;
        std::vector<double> lo = logits, hi = logits;
        lo[j] -= h;
        hi[j] += h;
        const double fd =
            (map_to_power_values(hi, p_max)[0] - map_to_power_values(lo, p_max)[0]) / (2 * h);
        REQUIRE(std::abs(grad[j] - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
    }
}

TEST_CASE("model files round-trip bit-exactly") {
    const NetworkWeights w = init_weights(std::vector<std::uint32_t>{6, 8, 5}, 23);
    const std::string path = temp_path("rnm_model_roundtrip.bin");
    save_weights(w, path);
    const NetworkWeights r = load_weights(path);
    REQUIRE(r.layer_dims == w.layer_dims);
    REQUIRE(r.weights == w.weights);
    REQUIRE(r.biases == w.biases);
    std::filesystem::remove(path);
}

TEST_CASE("model file error handling") {
    const NetworkWeights w = init_weights(std::vector<std::uint32_t>{4, 3}, 29);
    const std::string path = temp_path("rnm_model_errors.bin");
    save_weights(w, path);
    const std::string good = slurp(path);

    // Bad magic.
    std::string bad = good;
    bad[0] = 'X';
    spit(path, bad);
    REQUIRE_THROWS_AS(load_weights(path), FormatVersionMismatch);

    // Truncated to a couple of bytes: unreadable header.
    spit(path, good.substr(0, 2));
    REQUIRE_THROWS_AS(load_weights(path), FormatVersionMismatch);

    // Truncated mid-payload.
    spit(path, good.substr(0, good.size() - 12));
    REQUIRE_THROWS_AS(load_weights(path), IoError);

    // Extra payload bytes contradict the dims header.
    spit(path, good + std::string(16, '\0'));
    REQUIRE_THROWS_AS(load_weights(path), DimensionMismatch);

    // Flipped payload byte fails the checksum.
    std::string corrupt = good;
    corrupt[good.size() - 9] = static_cast<char>(corrupt[good.size() - 9] ^ 0x40);
    spit(path, corrupt);
    REQUIRE_THROWS_AS(load_weights(path), FormatVersionMismatch);

    // Zero dim in header.
    std::string zero_dim = good;
    zero_dim[8] = zero_dim[9] = zero_dim[10] = zero_dim[11] = '\0';
    spit(path, zero_dim);
    REQUIRE_THROWS_AS(load_weights(path), DimensionMismatch);

    std::filesystem::remove(path);
    REQUIRE_THROWS_AS(load_weights(path), IoError);
}

TEST_CASE("forward supports double-backward through its activations") {
    const std::vector<std::uint32_t> dims{2, 3, 2};
    const NetworkWeights w = init_weights(dims, 31);
    const std::vector<double> input{0.4, -0.6};

    Tape tape;
    const LiftedWeights lw = lift_weights(tape, w);
    std::vector<Var> in;
    for (double v : input) in.push_back(tape.constant(v));
    const auto out = forward(lw, std::span<const Var>(in.data(), in.size()));
    const Var score = out[0] * out[0] + out[1];
    const auto g =
        backward_as_graph(tape, score, std::span<const Var>(lw.flat.data(), lw.flat.size()));

    // Hessian diagonal entry vs finite difference of the first-order
    // gradient for one early weight.
    const std::size_t probe = 1;
    const auto hess_row = backward(tape, g[probe], std::span<const Var>(lw.flat.data(), lw.flat.size()));

    const auto first_grad = [&](const NetworkWeights& wts) {
        Tape t2;
        const LiftedWeights lw2 = lift_weights(t2, wts);
        std::vector<Var> in2;
        for (double v : input) in2.push_back(t2.constant(v));
        const auto o2 = forward(lw2, std::span<const Var>(in2.data(), in2.size()));
        const Var s2 = o2[0] * o2[0] + o2[1];
        return backward(t2, s2, std::span<const Var>(lw2.flat.data(), lw2.flat.size()));
    };

    const double h = 1e-6;
    NetworkWeights lo = w, hi = w;
    lo.weights[0][probe] -= h;
    hi.weights[0][probe] += h;
    const double fd = (first_grad(hi)[probe] - first_grad(lo)[probe]) / (2 * h);
    REQUIRE(std::abs(hess_row[probe] - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
}
