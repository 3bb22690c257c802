#pragma once

#include <bit>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "rnm/errors.hpp"

namespace rnm {

// Elementary operations recorded on the tape. Relu is the hinge max(x, 0)
// with subgradient 0 at x = 0; Pow is x^p with the exponent as a second
// operand (normally a constant node).
enum class OpKind : std::uint8_t {
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Sqrt,
    Relu,
    Pow,
};

struct TapeNode {
    double value;
    std::uint32_t a;
    std::uint32_t b;
    OpKind kind;
};

class Tape;

// Handle to one node of one tape. Cheap to copy; invalid when tape == nullptr.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t index = 0;

    bool valid() const { return tape != nullptr; }
    double value() const;
};

namespace detail {

// Single forward evaluation routine shared by record and replay, so a replay
// reproduces every stored value bit-exactly.
inline double eval_op(OpKind kind, double a, double b) {
    switch (kind) {
        case OpKind::Constant: return a;
        case OpKind::Add: return a + b;
        case OpKind::Sub: return a - b;
        case OpKind::Mul: return a * b;
        case OpKind::Div: return a / b;
        case OpKind::Neg: return -a;
        case OpKind::Exp: return std::exp(a);
        case OpKind::Log: return std::log(a);
        case OpKind::Sin: return std::sin(a);
        case OpKind::Cos: return std::cos(a);
        case OpKind::Tanh: return std::tanh(a);
        case OpKind::Sqrt: return std::sqrt(a);
        case OpKind::Relu: return a > 0.0 ? a : 0.0;
        case OpKind::Pow: return std::pow(a, b);
    }
    return 0.0;
}

inline bool is_unary(OpKind kind) {
    switch (kind) {
        case OpKind::Neg:
        case OpKind::Exp:
        case OpKind::Log:
        case OpKind::Sin:
        case OpKind::Cos:
        case OpKind::Tanh:
        case OpKind::Sqrt:
        case OpKind::Relu:
            return true;
        default:
            return false;
    }
}

}  // namespace detail

// Append-only record of a scalar computation. Nodes reference only earlier
// nodes, so the sequence is a topological order by construction; appending
// never touches existing nodes. Values are evaluated eagerly at record time
// and any non-finite result raises NonFiniteValue immediately.
class Tape {
public:
    Tape() { nodes_.reserve(1 << 12); }

    std::size_t size() const { return nodes_.size(); }
    const TapeNode& node(std::size_t i) const { return nodes_[i]; }
    double value(std::size_t i) const { return nodes_[i].value; }

    void clear() { nodes_.clear(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

    Var constant(double v) { return push(OpKind::Constant, 0, 0, v); }

    Var unary(OpKind kind, Var x) {
        assert(x.tape == this && x.index < nodes_.size());
        return push(kind, x.index, 0, detail::eval_op(kind, nodes_[x.index].value, 0.0));
    }

    Var binary(OpKind kind, Var x, Var y) {
        assert(x.tape == this && y.tape == this);
        assert(x.index < nodes_.size() && y.index < nodes_.size());
        return push(kind, x.index, y.index,
                    detail::eval_op(kind, nodes_[x.index].value, nodes_[y.index].value));
    }

    // Recompute every node from its operands and compare bit-exactly against
    // the stored values.
    bool replay_matches() const {
        for (const TapeNode& n : nodes_) {
            const double a = n.kind == OpKind::Constant ? n.value : nodes_[n.a].value;
            const double b = detail::is_unary(n.kind) || n.kind == OpKind::Constant
                                 ? 0.0
                                 : nodes_[n.b].value;
            const double v = detail::eval_op(n.kind, a, b);
            if (std::bit_cast<std::uint64_t>(v) != std::bit_cast<std::uint64_t>(n.value)) {
                return false;
            }
        }
        return true;
    }

private:
    Var push(OpKind kind, std::uint32_t a, std::uint32_t b, double v) {
        if (!std::isfinite(v)) {
            throw NonFiniteValue("non-finite value recorded (op " +
                                 std::to_string(static_cast<int>(kind)) + ")");
        }
        nodes_.push_back(TapeNode{v, a, b, kind});
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::vector<TapeNode> nodes_;
};

inline double Var::value() const { return tape->value(index); }

// ---------------------------------------------------------------------------
// Operator sugar. Mixed Var/double forms lift the double as a constant node.

inline Var operator+(Var x, Var y) { return x.tape->binary(OpKind::Add, x, y); }
inline Var operator-(Var x, Var y) { return x.tape->binary(OpKind::Sub, x, y); }
inline Var operator*(Var x, Var y) { return x.tape->binary(OpKind::Mul, x, y); }
inline Var operator/(Var x, Var y) { return x.tape->binary(OpKind::Div, x, y); }
inline Var operator-(Var x) { return x.tape->unary(OpKind::Neg, x); }

inline Var operator+(Var x, double c) { return x + x.tape->constant(c); }
inline Var operator+(double c, Var x) { return x.tape->constant(c) + x; }
inline Var operator-(Var x, double c) { return x - x.tape->constant(c); }
inline Var operator-(double c, Var x) { return x.tape->constant(c) - x; }
inline Var operator*(Var x, double c) { return x * x.tape->constant(c); }
inline Var operator*(double c, Var x) { return x.tape->constant(c) * x; }
inline Var operator/(Var x, double c) { return x / x.tape->constant(c); }
inline Var operator/(double c, Var x) { return x.tape->constant(c) / x; }

inline Var exp(Var x) { return x.tape->unary(OpKind::Exp, x); }
inline Var log(Var x) { return x.tape->unary(OpKind::Log, x); }
inline Var sin(Var x) { return x.tape->unary(OpKind::Sin, x); }
inline Var cos(Var x) { return x.tape->unary(OpKind::Cos, x); }
inline Var tanh(Var x) { return x.tape->unary(OpKind::Tanh, x); }
inline Var sqrt(Var x) { return x.tape->unary(OpKind::Sqrt, x); }
inline Var relu(Var x) { return x.tape->unary(OpKind::Relu, x); }
inline Var pow(Var x, Var p) { return x.tape->binary(OpKind::Pow, x, p); }
inline Var pow(Var x, double p) { return pow(x, x.tape->constant(p)); }

namespace detail {

// Marks every node reachable forward from the given seeds, up to and
// including `last`. Used to prune adjoint propagation to the nodes that can
// actually carry gradient to the requested inputs.
inline std::vector<unsigned char> dependency_mask(const Tape& tape, std::span<const Var> seeds,
                                                  std::uint32_t last) {
    std::vector<unsigned char> mask(static_cast<std::size_t>(last) + 1, 0);
    for (const Var& v : seeds) {
        assert(v.tape != nullptr);
        if (v.index <= last) mask[v.index] = 1;
    }
    for (std::uint32_t i = 0; i <= last; ++i) {
        const TapeNode& n = tape.node(i);
        if (n.kind == OpKind::Constant || mask[i]) continue;
        if (mask[n.a] || (!is_unary(n.kind) && mask[n.b])) mask[i] = 1;
    }
    return mask;
}

}  // namespace detail

// Reverse accumulation of d(output)/d(wrt_i). Pure read: the tape is left
// unchanged.
inline std::vector<double> backward(const Tape& tape, Var output, std::span<const Var> wrt) {
    assert(output.tape == &tape && output.index < tape.size());
    const std::uint32_t last = output.index;
    const auto active = detail::dependency_mask(tape, wrt, last);

    std::vector<double> adj(static_cast<std::size_t>(last) + 1, 0.0);
    adj[last] = 1.0;
    if (active[last]) {
        for (std::uint32_t i = last + 1; i-- > 0;) {
            const double g = adj[i];
            if (g == 0.0 || !active[i]) continue;
            const TapeNode& n = tape.node(i);
            switch (n.kind) {
                case OpKind::Constant:
                    break;
                case OpKind::Add:
                    if (active[n.a]) adj[n.a] += g;
                    if (active[n.b]) adj[n.b] += g;
                    break;
                case OpKind::Sub:
                    if (active[n.a]) adj[n.a] += g;
                    if (active[n.b]) adj[n.b] -= g;
                    break;
                case OpKind::Mul:
                    if (active[n.a]) adj[n.a] += g * tape.value(n.b);
                    if (active[n.b]) adj[n.b] += g * tape.value(n.a);
                    break;
                case OpKind::Div:
                    if (active[n.a]) adj[n.a] += g / tape.value(n.b);
                    if (active[n.b]) adj[n.b] -= g * n.value / tape.value(n.b);
                    break;
                case OpKind::Neg:
                    if (active[n.a]) adj[n.a] -= g;
                    break;
                case OpKind::Exp:
                    if (active[n.a]) adj[n.a] += g * n.value;
                    break;
                case OpKind::Log:
                    if (active[n.a]) adj[n.a] += g / tape.value(n.a);
                    break;
                case OpKind::Sin:
                    if (active[n.a]) adj[n.a] += g * std::cos(tape.value(n.a));
                    break;
                case OpKind::Cos:
                    if (active[n.a]) adj[n.a] -= g * std::sin(tape.value(n.a));
                    break;
                case OpKind::Tanh:
                    if (active[n.a]) adj[n.a] += g * (1.0 - n.value * n.value);
                    break;
                case OpKind::Sqrt:
                    if (active[n.a]) adj[n.a] += g / (2.0 * n.value);
                    break;
                case OpKind::Relu:
                    if (active[n.a] && tape.value(n.a) > 0.0) adj[n.a] += g;
                    break;
                case OpKind::Pow: {
                    const double base = tape.value(n.a);
                    const double expo = tape.value(n.b);
                    if (active[n.a]) adj[n.a] += g * expo * std::pow(base, expo - 1.0);
                    if (active[n.b] && base > 0.0) adj[n.b] += g * n.value * std::log(base);
                    break;
                }
            }
        }
    }

    std::vector<double> out;
    out.reserve(wrt.size());
    for (const Var& v : wrt) out.push_back(v.index <= last ? adj[v.index] : 0.0);
    return out;
}

// Same reverse sweep, but the adjoint arithmetic itself is appended to the
// tape, so the returned gradients are Vars that can be differentiated again.
// Only nodes on a wrt -> output path get adjoint nodes; partials reuse
// existing nodes where the derivative is already on the tape (e.g. d exp = the
// exp node itself).
inline std::vector<Var> backward_as_graph(Tape& tape, Var output, std::span<const Var> wrt) {
    assert(output.tape == &tape && output.index < tape.size());
    const std::uint32_t last = output.index;
    const auto active = detail::dependency_mask(tape, wrt, last);

    constexpr std::uint32_t kNone = 0xFFFFFFFFu;
    std::vector<std::uint32_t> adj(static_cast<std::size_t>(last) + 1, kNone);
    const Var one = tape.constant(1.0);
    const Var zero = tape.constant(0.0);
    adj[last] = one.index;

    const auto var_of = [&tape](std::uint32_t i) { return Var{&tape, i}; };
    const auto accumulate = [&](std::uint32_t target, Var term) {
        adj[target] = adj[target] == kNone ? term.index : (var_of(adj[target]) + term).index;
    };
    const auto accumulate_neg = [&](std::uint32_t target, Var term) {
        adj[target] =
            adj[target] == kNone ? (-term).index : (var_of(adj[target]) - term).index;
    };

    if (active[last]) {
        for (std::uint32_t i = last + 1; i-- > 0;) {
            if (!active[i] || adj[i] == kNone) continue;
            const TapeNode n = tape.node(i);  // copy: the vector may reallocate below
            const Var g = var_of(adj[i]);
            switch (n.kind) {
                case OpKind::Constant:
                    break;
                case OpKind::Add:
                    if (active[n.a]) accumulate(n.a, g);
                    if (active[n.b]) accumulate(n.b, g);
                    break;
                case OpKind::Sub:
                    if (active[n.a]) accumulate(n.a, g);
                    if (active[n.b]) accumulate_neg(n.b, g);
                    break;
                case OpKind::Mul:
                    if (active[n.a]) accumulate(n.a, g * var_of(n.b));
                    if (active[n.b]) accumulate(n.b, g * var_of(n.a));
                    break;
                case OpKind::Div:
                    if (active[n.a]) accumulate(n.a, g / var_of(n.b));
                    if (active[n.b]) accumulate_neg(n.b, g * var_of(i) / var_of(n.b));
                    break;
                case OpKind::Neg:
                    if (active[n.a]) accumulate_neg(n.a, g);
                    break;
                case OpKind::Exp:
                    if (active[n.a]) accumulate(n.a, g * var_of(i));
                    break;
                case OpKind::Log:
                    if (active[n.a]) accumulate(n.a, g / var_of(n.a));
                    break;
                case OpKind::Sin:
                    if (active[n.a]) accumulate(n.a, g * cos(var_of(n.a)));
                    break;
                case OpKind::Cos:
                    if (active[n.a]) accumulate_neg(n.a, g * sin(var_of(n.a)));
                    break;
                case OpKind::Tanh: {
                    if (active[n.a]) {
                        const Var t = var_of(i);
                        accumulate(n.a, g - g * (t * t));
                    }
                    break;
                }
                case OpKind::Sqrt:
                    if (active[n.a]) {
                        const Var r = var_of(i);
                        accumulate(n.a, g / (r + r));
                    }
                    break;
                case OpKind::Relu:
                    if (active[n.a] && tape.value(n.a) > 0.0) accumulate(n.a, g);
                    break;
                case OpKind::Pow: {
                    const Var base = var_of(n.a);
                    const Var expo = var_of(n.b);
                    if (active[n.a]) {
                        accumulate(n.a, g * expo * pow(base, expo - 1.0));
                    }
                    if (active[n.b] && tape.value(n.a) > 0.0) {
                        accumulate(n.b, g * var_of(i) * log(base));
                    }
                    break;
                }
            }
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& v : wrt) {
        out.push_back(v.index <= last && adj[v.index] != kNone ? var_of(adj[v.index]) : zero);
    }
    return out;
}

inline std::vector<double> backward(const Tape& tape, Var output, std::initializer_list<Var> wrt) {
    return backward(tape, output, std::span<const Var>(wrt.begin(), wrt.size()));
}

inline std::vector<Var> backward_as_graph(Tape& tape, Var output, std::initializer_list<Var> wrt) {
    return backward_as_graph(tape, output, std::span<const Var>(wrt.begin(), wrt.size()));
}

}  // namespace rnm
