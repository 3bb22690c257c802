#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "rnm/complex.hpp"
#include "rnm/tape.hpp"

using rnm::backward;
using rnm::backward_as_graph;
using rnm::CVar;
using rnm::OpKind;
using rnm::Tape;
using rnm::Var;

namespace {

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// Central finite difference with the step scaling used throughout the suite.
template <class F>
double central_fd(F f, double x) {
    const double h = 1e-6 * std::max(1.0, std::abs(x));
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("recording evaluates eagerly and grows the tape") {
    Tape tape;
    const Var x = tape.constant(3.0);
    const std::size_t before = tape.size();
    const Var y = x * x;
    REQUIRE(y.value() == 9.0);
    REQUIRE(tape.size() == before + 1);

    const Var e = exp(tape.constant(0.0));
    REQUIRE(e.value() == 1.0);

    const Var one = tape.constant(1.0);
    const Var zero = tape.constant(0.0);
    REQUIRE_THROWS_AS(one / zero, rnm::NonFiniteValue);

    REQUIRE_THROWS_AS(log(zero), rnm::NonFiniteValue);
    REQUIRE_THROWS_AS(sqrt(tape.constant(-1.0)), rnm::NonFiniteValue);
}

TEST_CASE("tape node operands precede the node itself") {
    Tape tape;
    Var a = tape.constant(0.3);
    Var b = tape.constant(1.7);
    Var f = sin(a) * b + exp(a / b) - tanh(b);
    (void)f;
    for (std::size_t i = 0; i < tape.size(); ++i) {
        const auto& n = tape.node(i);
        if (n.kind == OpKind::Constant) continue;
        REQUIRE(n.a < i);
        REQUIRE(n.b <= i);  // unary ops leave b at 0
    }
    REQUIRE(tape.replay_matches());
}

TEST_CASE("backward on simple forms") {
    Tape tape;
    const Var x = tape.constant(3.0);
    const Var f = x * x;
    const auto g = backward(tape, f, {x});
    REQUIRE(g.size() == 1);
    REQUIRE(g[0] == 6.0);

    const Var a = tape.constant(0.0);
    const Var b = tape.constant(5.0);
    const Var s = exp(a) + b;
    const auto gs = backward(tape, s, {a, b});
    REQUIRE(gs[0] == 1.0);
    REQUIRE(gs[1] == 1.0);
}

TEST_CASE("backward leaves the tape unchanged") {
    Tape tape;
    const Var x = tape.constant(0.5);
    const Var f = tanh(x) * exp(x);
    const std::size_t before = tape.size();
    (void)backward(tape, f, {x});
    REQUIRE(tape.size() == before);
    REQUIRE(tape.replay_matches());
}

TEST_CASE("tanh gradient matches central finite difference") {
    Tape tape;
    const Var x = tape.constant(0.5);
    const Var f = tanh(x);
    const double got = backward(tape, f, {x})[0];
    const double h = 1e-6;
    const double fd = (std::tanh(0.5 + h) - std::tanh(0.5 - h)) / (2.0 * h);
    REQUIRE(rel_err(got, fd) < 1e-7);
}

TEST_CASE("gradient of a mixed expression matches finite differences") {
    // Exercises every smooth op plus an active and an inactive hinge branch.
    const auto eval = [](const std::vector<double>& v) {
        const double a = v[0], b = v[1], c = v[2], d = v[3];
        const double hinge1 = std::max(a * d - c, 0.0);  // inactive at the test point
        const double hinge2 = std::max(a + d, 0.0);      // active
        return std::sin(a) * std::log(b) + std::sqrt(c) / std::tanh(d) + std::pow(b, 1.7) -
               hinge1 + hinge2 + std::exp(-b) * std::cos(c * a);
    };
    const std::vector<double> p{0.8, 1.3, 2.1, 0.6};

    Tape tape;
    std::vector<Var> in;
    for (double v : p) in.push_back(tape.constant(v));
    const Var a = in[0], b = in[1], c = in[2], d = in[3];
    const Var f = sin(a) * log(b) + sqrt(c) / tanh(d) + pow(b, 1.7) - relu(a * d - c) +
                  relu(a + d) + exp(-b) * cos(c * a);
    const auto grad = backward(tape, f, std::span<const Var>(in.data(), in.size()));

    for (std::size_t i = 0; i < p.size(); ++i) {
        const double fd = central_fd(
            [&](double xi) {
                std::vector<double> q = p;
                q[i] = xi;
                return eval(q);
            },
            p[i]);
        INFO("input " << i);
        REQUIRE(rel_err(grad[i], fd) < 1e-5);
    }
}

TEST_CASE("hinge subgradient at zero is zero") {
    Tape tape;
    const Var x = tape.constant(0.0);
    const Var f = relu(x);
    REQUIRE(f.value() == 0.0);
    REQUIRE(backward(tape, f, {x})[0] == 0.0);
}

TEST_CASE("double-backward of x cubed") {
    Tape tape;
    const Var x = tape.constant(2.0);
    const Var f = x * x * x;
    const std::size_t before = tape.size();
    const auto g = backward_as_graph(tape, f, {x});
    REQUIRE(tape.size() > before);  // adjoint nodes were appended
    REQUIRE_THAT(g[0].value(), Catch::Matchers::WithinRel(12.0, 1e-12));
    const double g2 = backward(tape, g[0], {x})[0];
    REQUIRE_THAT(g2, Catch::Matchers::WithinRel(12.0, 1e-12));
    REQUIRE(tape.replay_matches());
}

TEST_CASE("cross partial of x*y") {
    Tape tape;
    const Var x = tape.constant(2.0);
    const Var y = tape.constant(3.0);
    const Var f = x * y;
    const auto gx = backward_as_graph(tape, f, {x});
    REQUIRE(gx[0].value() == 3.0);
    REQUIRE(backward(tape, gx[0], {y})[0] == 1.0);
}

TEST_CASE("second-order derivatives of a tiny network match finite differences") {
    // L(w1, b1, w2, b2) = (w2 tanh(w1 x + b1) + b2 - t)^2 at fixed x, t.
    const double x0 = 0.9, t0 = 0.5;
    const std::vector<double> theta{0.7, -0.2, 1.1, 0.3};

    const auto grad_at = [&](const std::vector<double>& th) {
        Tape tape;
        std::vector<Var> p;
        for (double v : th) p.push_back(tape.constant(v));
        const Var r = p[2] * tanh(p[0] * x0 + p[1]) + p[3] - t0;
        const Var loss = r * r;
        return backward(tape, loss, std::span<const Var>(p.data(), p.size()));
    };

    Tape tape;
    std::vector<Var> p;
    for (double v : theta) p.push_back(tape.constant(v));
    const Var r = p[2] * tanh(p[0] * x0 + p[1]) + p[3] - t0;
    const Var loss = r * r;
    const auto g = backward_as_graph(tape, loss, std::span<const Var>(p.data(), p.size()));

    for (std::size_t i = 0; i < theta.size(); ++i) {
        const auto hess_row = backward(tape, g[i], std::span<const Var>(p.data(), p.size()));
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double fd = central_fd(
                [&](double xj) {
                    std::vector<double> q = theta;
                    q[j] = xj;
                    return grad_at(q)[i];
                },
                theta[j]);
            INFO("d2L / d" << i << " d" << j);
            REQUIRE(rel_err(hess_row[j], fd) < 1e-5);
        }
    }
    REQUIRE(tape.replay_matches());
}

TEST_CASE("gradient-of-gradient matches finite differences across random points") {
    // Homogeneous property check over a batch of random two-input functions.
    std::mt19937_64 gen(42);
    std::uniform_real_distribution<double> dist(0.2, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
        const double ax = dist(gen), ay = dist(gen);
        const auto grad_x = [&](double vx, double vy) {
            Tape t;
            const Var x = t.constant(vx);
            const Var y = t.constant(vy);
            const Var f = exp(x * y) / (1.0 + x * x) + sin(y) * sqrt(x);
            return backward(t, f, {x, y});
        };

        Tape tape;
        const Var x = tape.constant(ax);
        const Var y = tape.constant(ay);
        const Var f = exp(x * y) / (1.0 + x * x) + sin(y) * sqrt(x);
        const auto g = backward_as_graph(tape, f, {x, y});
        const auto hxx = backward(tape, g[0], {x, y});
        const auto hyx = backward(tape, g[1], {x, y});

        const double fd_xx = central_fd([&](double v) { return grad_x(v, ay)[0]; }, ax);
        const double fd_xy = central_fd([&](double v) { return grad_x(ax, v)[0]; }, ay);
        const double fd_yy = central_fd([&](double v) { return grad_x(ax, v)[1]; }, ay);

        INFO("trial " << trial << " at (" << ax << ", " << ay << ")");
        REQUIRE(rel_err(hxx[0], fd_xx) < 1e-4);
        REQUIRE(rel_err(hxx[1], fd_xy) < 1e-4);
        REQUIRE(rel_err(hyx[1], fd_yy) < 1e-4);
        // Symmetry of mixed partials.
        REQUIRE(rel_err(hxx[1], hyx[0]) < 1e-9);
    }
}

namespace {

// Independent plain-complex elimination used as the oracle for solve_on_tape.
std::vector<std::complex<double>> plain_solve(std::vector<std::vector<std::complex<double>>> A,
                                              std::vector<std::complex<double>> b) {
    const std::size_t n = A.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        }
        std::swap(A[piv], A[c]);
        std::swap(b[piv], b[c]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const std::complex<double> f = A[r][c] / A[c][c];
            for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<std::complex<double>> x(n);
    for (std::size_t r = n; r-- > 0;) {
        std::complex<double> acc = b[r];
        for (std::size_t k = r + 1; k < n; ++k) acc -= A[r][k] * x[k];
        x[r] = acc / A[r][r];
    }
    return x;
}

}  // namespace

TEST_CASE("solve_on_tape identity and diagonal cases") {
    Tape tape;
    const auto I = [&](double re, double im) { return rnm::lift(tape, {re, im}); };

    std::vector<std::vector<CVar>> A{{I(1, 0), I(0, 0)}, {I(0, 0), I(1, 0)}};
    std::vector<CVar> b{I(1, 0), I(0, 2)};
    auto x = rnm::solve_on_tape(A, b);
    REQUIRE(rnm::value(x[0]) == std::complex<double>(1, 0));
    REQUIRE(rnm::value(x[1]) == std::complex<double>(0, 2));

    std::vector<std::vector<CVar>> D{{I(2, 0), I(0, 0)}, {I(0, 0), I(4, 0)}};
    std::vector<CVar> d{I(2, 0), I(4, 0)};
    auto y = rnm::solve_on_tape(D, d);
    REQUIRE(rnm::value(y[0]) == std::complex<double>(1, 0));
    REQUIRE(rnm::value(y[1]) == std::complex<double>(1, 0));
}

TEST_CASE("solve_on_tape rejects a singular system") {
    Tape tape;
    const auto I = [&](double re, double im) { return rnm::lift(tape, {re, im}); };
    std::vector<std::vector<CVar>> A{{I(1, 0), I(1, 0)}, {I(1, 0), I(1, 0)}};
    std::vector<CVar> b{I(1, 0), I(2, 0)};
    REQUIRE_THROWS_AS(rnm::solve_on_tape(A, b), rnm::SingularMatrix);
}

TEST_CASE("solve_on_tape on a random Hermitian PD system") {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> nrm(0.0, 1.0);
    const std::size_t n = 3;

    // A(t) = B^H B + I + t E with E Hermitian, b(t) = b0 + t e0.
    std::vector<std::vector<std::complex<double>>> B(n, std::vector<std::complex<double>>(n));
    std::vector<std::complex<double>> b0(n);
    for (auto& row : B) {
        for (auto& z : row) z = {nrm(gen), nrm(gen)};
    }
    for (auto& z : b0) z = {nrm(gen), nrm(gen)};

    const auto assemble = [&](double t) {
        std::vector<std::vector<std::complex<double>>> A(n,
                                                         std::vector<std::complex<double>>(n));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                std::complex<double> s = 0;
                for (std::size_t k = 0; k < n; ++k) s += std::conj(B[k][i]) * B[k][j];
                A[i][j] = s;
                if (i == j) A[i][j] += 1.0 + 0.1 * t;
                if (i + 1 == j) A[i][j] += std::complex<double>(0.0, 0.2 * t);
                if (j + 1 == i) A[i][j] += std::complex<double>(0.0, -0.2 * t);
            }
        }
        std::vector<std::complex<double>> b = b0;
        b[0] += 0.3 * t;
        return std::pair(A, b);
    };

    const double t0 = 0.4;
    Tape tape;
    const Var t = tape.constant(t0);

    const auto [A0, bb0] = assemble(0.0);
    std::vector<std::vector<CVar>> A(n, std::vector<CVar>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            CVar base = rnm::lift(tape, A0[i][j]);
            if (i == j) base.re = base.re + 0.1 * t;
            if (i + 1 == j) base.im = base.im + 0.2 * t;
            if (j + 1 == i) base.im = base.im - 0.2 * t;
            A[i][j] = base;
        }
    }
    std::vector<CVar> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = rnm::lift(tape, bb0[i]);
    b[0].re = b[0].re + 0.3 * t;

    const auto x = rnm::solve_on_tape(A, b);

    // Residual against the independently assembled system.
    const auto [At, bt] = assemble(t0);
    double resid = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::complex<double> acc = -bt[i];
        for (std::size_t j = 0; j < n; ++j) acc += At[i][j] * rnm::value(x[j]);
        resid += std::norm(acc);
    }
    REQUIRE(std::sqrt(resid) < 1e-10);

    // Cross-check the values against the plain-complex solver.
    const auto xo = plain_solve(At, bt);
    for (std::size_t i = 0; i < n; ++i) {
        REQUIRE(std::abs(rnm::value(x[i]) - xo[i]) < 1e-10);
    }

    // d/dt [Re x0 + Im x2] against finite differences of the plain solver.
    const Var functional = x[0].re + x[2].im;
    const double got = backward(tape, functional, {t})[0];
    const double fd = central_fd(
        [&](double tv) {
            const auto [Af, bf] = assemble(tv);
            const auto xs = plain_solve(Af, bf);
            return xs[0].real() + xs[2].imag();
        },
        t0);
    REQUIRE(rel_err(got, fd) < 1e-5);
    REQUIRE(tape.replay_matches());
}
