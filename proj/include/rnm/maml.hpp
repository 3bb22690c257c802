#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rnm/channel.hpp"
#include "rnm/errors.hpp"
#include "rnm/noma.hpp"
#include "rnm/policy.hpp"
#include "rnm/rng.hpp"
#include "rnm/threading.hpp"

namespace rnm {

// Loss L = w1 * sum of rates + w2 * sum of QoS shortfalls, rates in Mbit/s.
// w1 < 0 rewards throughput; w2 > 0 penalizes unmet QoS (max(R_QoS - R, 0)).
struct LossWeights {
    double w1 = -1.0;
    double w2 = 10.0;

    void validate() const {
        if (!(w1 < 0.0) || !(w2 > 0.0)) {
            throw InvalidConfig("loss weights need w1 < 0 and w2 > 0");
        }
    }
};

enum class PhaseUpdate { Wrap, Clip };
enum class ClusterScheme { Qos, ChannelGain };
enum class AccessScheme { Noma, Oma };

struct TrainingConfig {
    int inner_steps = 5;             // J
    double gamma_theta_init = 0.01;  // initial inner step size (meta-learned)
    double gamma_eta = 1e-3;         // outer learning rate
    int episodes = 2000;
    int batch_size = 16;             // scenarios per outer update
    bool second_order = true;
    // Episode gradients are heavy-tailed (near-singular ZF Grams inflate the
    // SINR derivatives by orders of magnitude), so the outer update clips the
    // batch-mean gradient to this global norm. 0 disables clipping.
    double grad_clip_norm = 100.0;
    std::uint64_t seed = 1;
    std::vector<std::uint32_t> hidden_dims{128, 128};
    PhaseUpdate phase_update = PhaseUpdate::Wrap;
    ClusterScheme cluster_scheme = ClusterScheme::Qos;
    AccessScheme access = AccessScheme::Noma;
    LossWeights loss_weights;

    void validate() const {
        if (inner_steps < 1) throw InvalidConfig("inner_steps must be >= 1");
        if (gamma_theta_init <= 0.0) throw InvalidConfig("gamma_theta_init must be positive");
        if (gamma_eta <= 0.0) throw InvalidConfig("gamma_eta must be positive");
        if (episodes < 0) throw InvalidConfig("episodes must be nonnegative");
        if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
        if (!(grad_clip_norm >= 0.0)) throw InvalidConfig("grad_clip_norm must be >= 0");
        if (hidden_dims.empty()) throw InvalidConfig("need at least one hidden layer");
        loss_weights.validate();
    }
};

// Inner step size gamma_theta = exp(g); the exponential keeps it positive
// under unconstrained meta-updates.
struct LearnedStepSize {
    double g = std::log(0.01);

    double gamma() const { return std::exp(g); }
    static LearnedStepSize from_gamma(double gamma_theta) {
        return LearnedStepSize{std::log(gamma_theta)};
    }
};

// One scenario with everything derived from it that the pipeline needs:
// clustering and the canonical user ordering (cluster-interleaved for NOMA,
// identity for OMA).
struct ScenarioBundle {
    Scenario scenario;
    ChannelSet channels;
    Clustering clustering;
    std::vector<int> order;
    AccessScheme access = AccessScheme::Noma;
};

inline ScenarioBundle prepare_bundle(Scenario scenario, ChannelSet channels,
                                     ClusterScheme cluster_scheme, AccessScheme access) {
    ScenarioBundle b;
    b.access = access;
    if (access == AccessScheme::Noma) {
        if (cluster_scheme == ClusterScheme::Qos) {
            b.clustering = cluster_by_qos(scenario.qos);
        } else {
            std::vector<double> gains(channels.h_direct.size());
            for (std::size_t k = 0; k < gains.size(); ++k) {
                double acc = 0.0;
                for (const auto& z : channels.h_direct[k]) acc += std::norm(z);
                gains[k] = acc;
            }
            b.clustering = cluster_by_channel(gains);
        }
        b.order = b.clustering.user_order();
    } else {
        b.order.resize(scenario.config.num_users);
        for (int k = 0; k < scenario.config.num_users; ++k) b.order[k] = k;
    }
    b.scenario = std::move(scenario);
    b.channels = std::move(channels);
    return b;
}

// Record of one inner-loop run. The loss trajectory has J+1 entries
// (including the starting point); rates in the report are bit/s.
struct EpisodeResult {
    std::vector<double> loss_trajectory;
    std::vector<double> step_sum_rates_mbps;  // J+1 entries
    std::vector<double> theta_final;
    std::vector<double> power_final;          // indexed like `order`
    RateReport report;
    int power_violations = 0;  // sum p > P_max occurrences across steps
    int phase_violations = 0;  // theta outside its box after an update
};

namespace detail {

struct StepNodes {
    Var loss;
    std::vector<Var> powers;  // pipeline order
    RateNodes rates;
};

// One full evaluation of L(theta, eta): combined channel -> encoding ->
// network -> power mapping -> rates -> loss. Everything lands on the tape.
inline StepNodes eval_step(Tape& tape, const LiftedChannels& lc, const LiftedWeights& lw,
                           std::span<const Var> theta, const ScenarioBundle& b,
                           const LossWeights& weights) {
    const Scenario& sc = b.scenario;
    const auto h = combined_channel_on_tape(lc, theta);

    const std::size_t K = h.size();
    std::vector<std::vector<CVar>> h_ordered(K);
    std::vector<double> qos_ordered(K), loss_ordered(K);
    for (std::size_t i = 0; i < K; ++i) {
        const int user = b.order[i];
        h_ordered[i] = h[user];
        qos_ordered[i] = sc.qos[user];
        loss_ordered[i] = b.channels.loss_path[user];
    }

    const auto input = encode_inputs_on_tape(tape, h_ordered, qos_ordered, loss_ordered);
    const auto logits = forward(lw, input);
    StepNodes out;
    out.powers = map_to_power(logits, sc.config.p_max);

    if (b.access == AccessScheme::Noma) {
        out.rates = noma_rate_nodes(tape, h, b.clustering, out.powers, sc.qos,
                                    sc.noise_power_w, sc.config.bandwidth);
    } else {
        out.rates = oma_rate_nodes(tape, h, out.powers, sc.qos, sc.noise_power_w,
                                   sc.config.bandwidth);
    }

    Var shortfall = tape.constant(0.0);
    for (const Var& v : out.rates.violation_mbps) shortfall = shortfall + v;
    out.loss = weights.w1 * out.rates.sum_rate_mbps + weights.w2 * shortfall;
    return out;
}

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Value-level wrap into [0, 2pi).
inline double wrap_value(double v) {
    double k = std::floor(v / kTwoPi);
    double r = v - kTwoPi * k;
    if (r >= kTwoPi) {
        k += 1.0;
        r = v - kTwoPi * k;
    }
    if (r < 0.0) {
        k -= 1.0;
        r = v - kTwoPi * k;
    }
    return r;
}

// Wrap on the tape: subtracting the constant 2*pi*k keeps d(wrapped)/dx = 1,
// so gradients pass through untouched.
inline Var wrap_on_tape(Var x) {
    const double v = x.value();
    double k = std::floor(v / kTwoPi);
    if (v - kTwoPi * k >= kTwoPi) k += 1.0;
    if (v - kTwoPi * k < 0.0) k -= 1.0;
    if (k == 0.0) return x;
    return x - (kTwoPi * k);
}

// Clipping to [0, 2pi] written with hinges so it records on the tape;
// gradient is zero outside the box and one inside.
inline Var clip_on_tape(Var x) { return relu(x) - relu(x - kTwoPi); }

inline bool phase_in_box(double v, PhaseUpdate mode) {
    return mode == PhaseUpdate::Wrap ? (v >= 0.0 && v < kTwoPi) : (v >= 0.0 && v <= kTwoPi);
}

}  // namespace detail

struct InnerLoopResult {
    std::vector<Var> theta;  // theta^{(J)} on the tape
    Var loss;                // L(theta^{(J)}, eta)
    detail::StepNodes final_step;
    EpisodeResult episode;
};

// J gradient-descent steps of theta with step size exp(g), unrolled on the
// tape. With second_order on, each step's gradient is recorded via
// backward_as_graph, so the returned loss stays differentiable in the
// network weights and in g through the whole unroll. With it off, steps are
// detached (theta re-enters as constants): the outer gradient then sees only
// the direct dependence of the final loss on eta, and none on g.
inline InnerLoopResult inner_loop(Tape& tape, const ScenarioBundle& bundle,
                                  const LiftedWeights& lw, Var g,
                                  std::span<const double> theta0, const TrainingConfig& cfg) {
    cfg.validate();
    const int N = bundle.scenario.config.num_elements;
    if (static_cast<int>(theta0.size()) != N) {
        throw DimensionMismatch("inner_loop: theta0 length != num_elements");
    }

    const LiftedChannels lc = lift_channels(tape, bundle.channels);
    const Var gamma = exp(g);

    InnerLoopResult out;
    out.theta.reserve(N);
    for (double t : theta0) out.theta.push_back(tape.constant(t));

    EpisodeResult& ep = out.episode;
    const double p_max = bundle.scenario.config.p_max;

    const auto note_feasibility = [&](const detail::StepNodes& step) {
        double total = 0.0;
        for (const Var& p : step.powers) total += p.value();
        if (total > p_max) ++ep.power_violations;
    };

    for (int j = 0; j < cfg.inner_steps; ++j) {
        const detail::StepNodes step =
            detail::eval_step(tape, lc, lw, out.theta, bundle, cfg.loss_weights);
        ep.loss_trajectory.push_back(step.loss.value());
        ep.step_sum_rates_mbps.push_back(step.rates.sum_rate_mbps.value());
        note_feasibility(step);

        if (cfg.second_order) {
            const auto grad = backward_as_graph(
                tape, step.loss, std::span<const Var>(out.theta.data(), out.theta.size()));
            for (int n = 0; n < N; ++n) {
                Var updated = out.theta[n] - gamma * grad[n];
                out.theta[n] = cfg.phase_update == PhaseUpdate::Wrap
                                   ? detail::wrap_on_tape(updated)
                                   : detail::clip_on_tape(updated);
            }
        } else {
            const auto grad = backward(
                tape, step.loss, std::span<const Var>(out.theta.data(), out.theta.size()));
            const double gv = gamma.value();
            for (int n = 0; n < N; ++n) {
                const double raw = out.theta[n].value() - gv * grad[n];
                const double boxed = cfg.phase_update == PhaseUpdate::Wrap
                                         ? detail::wrap_value(raw)
                                         : std::clamp(raw, 0.0, detail::kTwoPi);
                out.theta[n] = tape.constant(boxed);
            }
        }
        for (const Var& t : out.theta) {
            if (!detail::phase_in_box(t.value(), cfg.phase_update)) ++ep.phase_violations;
        }
    }

    out.final_step = detail::eval_step(tape, lc, lw, out.theta, bundle, cfg.loss_weights);
    out.loss = out.final_step.loss;
    ep.loss_trajectory.push_back(out.loss.value());
    ep.step_sum_rates_mbps.push_back(out.final_step.rates.sum_rate_mbps.value());
    note_feasibility(out.final_step);

    ep.theta_final.reserve(N);
    for (const Var& t : out.theta) ep.theta_final.push_back(t.value());
    ep.power_final.reserve(out.final_step.powers.size());
    for (const Var& p : out.final_step.powers) ep.power_final.push_back(p.value());
    ep.report = detail::report_from_nodes(out.final_step.rates);
    return out;
}

// Inference: the inner loop only, no outer update, first-order arithmetic
// (nothing needs to stay differentiable).
inline EpisodeResult infer(const NetworkWeights& weights, const LearnedStepSize& step_size,
                           const ScenarioBundle& bundle, std::span<const double> theta0,
                           const TrainingConfig& cfg) {
    TrainingConfig run = cfg;
    run.second_order = false;
    Tape tape;
    const LiftedWeights lw = lift_weights(tape, weights);
    const Var g = tape.constant(step_size.g);
    return inner_loop(tape, bundle, lw, g, theta0, run).episode;
}

// Per-scenario contribution to the outer update: exact gradients of the
// final loss with respect to every network parameter and the log step size.
struct EpisodeGradients {
    std::vector<double> d_weights;  // flat, serialization order
    double d_g = 0.0;
    double loss = 0.0;
    EpisodeResult episode;
};

inline EpisodeGradients episode_gradients(const NetworkWeights& weights,
                                          const LearnedStepSize& step_size,
                                          const ScenarioBundle& bundle,
                                          std::span<const double> theta0,
                                          const TrainingConfig& cfg) {
    static thread_local Tape tape;
    tape.clear();
    const LiftedWeights lw = lift_weights(tape, weights);
    const Var g = tape.constant(step_size.g);
    const InnerLoopResult inner = inner_loop(tape, bundle, lw, g, theta0, cfg);

    std::vector<Var> wrt = lw.flat;
    wrt.push_back(g);
    const auto grad = backward(tape, inner.loss, std::span<const Var>(wrt.data(), wrt.size()));

    EpisodeGradients out;
    out.d_weights.assign(grad.begin(), grad.end() - 1);
    out.d_g = grad.back();
    out.loss = inner.loss.value();
    out.episode = inner.episode;
    return out;
}

struct OuterBatchItem {
    ScenarioBundle bundle;
    std::vector<double> theta0;
};

struct OuterStepResult {
    double mean_loss = 0.0;
    double mean_sum_rate_mbps = 0.0;
    int failed_scenarios = 0;
    int power_violations = 0;
    int phase_violations = 0;
    bool updated = false;
};

// One meta-update: batch-mean gradients through the unrolled inner loops,
// then plain gradient steps on eta and g. Scenarios run in parallel on
// independent tapes; accumulation happens afterwards in index order, so the
// result is independent of scheduling.
inline OuterStepResult outer_step(NetworkWeights& weights, LearnedStepSize& step_size,
                                  std::span<const OuterBatchItem> batch,
                                  const TrainingConfig& cfg) {
    if (batch.empty()) throw InvalidConfig("outer_step: empty batch");

    struct Slot {
        EpisodeGradients grads;
        bool ok = false;
    };
    std::vector<Slot> slots(batch.size());
    parallel_for(batch.size(), [&](std::size_t i) {
        try {
            slots[i].grads =
                episode_gradients(weights, step_size, batch[i].bundle, batch[i].theta0, cfg);
            slots[i].ok = true;
        } catch (const SingularMatrix&) {
            slots[i].ok = false;
        } catch (const NonFiniteValue&) {
            slots[i].ok = false;
        }
    });

    OuterStepResult res;
    std::vector<double> acc(weights.parameter_count(), 0.0);
    double acc_g = 0.0;
    int ok_count = 0;
    for (const Slot& s : slots) {
        if (!s.ok) {
            ++res.failed_scenarios;
            continue;
        }
        ++ok_count;
        for (std::size_t p = 0; p < acc.size(); ++p) acc[p] += s.grads.d_weights[p];
        acc_g += s.grads.d_g;
        res.mean_loss += s.grads.loss;
        res.mean_sum_rate_mbps += s.grads.episode.step_sum_rates_mbps.back();
        res.power_violations += s.grads.episode.power_violations;
        res.phase_violations += s.grads.episode.phase_violations;
    }
    if (ok_count == 0) return res;

    const double inv = 1.0 / ok_count;
    res.mean_loss *= inv;
    res.mean_sum_rate_mbps *= inv;

    // Clip the mean gradient (weights and g jointly) to keep the rare
    // huge-gradient scenario from throwing the weights out of the stable
    // region for good.
    double scale = inv;
    if (cfg.grad_clip_norm > 0.0) {
        double sq = acc_g * acc_g;
        for (double v : acc) sq += v * v;
        const double norm = std::sqrt(sq) * inv;
        if (norm > cfg.grad_clip_norm) scale *= cfg.grad_clip_norm / norm;
    }

    std::size_t p = 0;
    for (std::size_t layer = 0; layer < weights.num_layers(); ++layer) {
        for (double& w : weights.weights[layer]) w -= cfg.gamma_eta * acc[p++] * scale;
        for (double& b : weights.biases[layer]) b -= cfg.gamma_eta * acc[p++] * scale;
    }
    step_size.g -= cfg.gamma_eta * acc_g * scale;
    res.updated = true;
    return res;
}

struct TrainLogRow {
    int episode = 0;
    double mean_loss = 0.0;
    double mean_sum_rate_mbps = 0.0;
    double gamma_theta = 0.0;
    int skipped_episodes = 0;  // cumulative episodes with no usable scenario
};

struct TrainResult {
    NetworkWeights weights;
    LearnedStepSize step_size;
    std::vector<TrainLogRow> log;
    int power_violations = 0;
    int phase_violations = 0;
    int failed_scenarios = 0;
};

inline std::vector<std::uint32_t> network_dims(const TopologyConfig& topo,
                                               const TrainingConfig& cfg) {
    std::vector<std::uint32_t> dims;
    dims.push_back(static_cast<std::uint32_t>(
        encoding_length(topo.num_users, topo.num_antennas)));
    for (std::uint32_t h : cfg.hidden_dims) dims.push_back(h);
    dims.push_back(static_cast<std::uint32_t>(topo.num_users + 1));
    return dims;
}

inline OuterBatchItem draw_training_item(const TopologyConfig& topo, const TrainingConfig& cfg,
                                         int episode, int slot) {
    const auto e = static_cast<std::uint64_t>(episode);
    const auto b = static_cast<std::uint64_t>(slot);
    Scenario sc = generate_topology(topo, CounterRng::derive(cfg.seed, stream::kTrainScenario, e, b));
    ChannelSet ch = sample_channels(sc, CounterRng::derive(cfg.seed, stream::kTrainChannels, e, b));
    OuterBatchItem item;
    item.bundle = prepare_bundle(std::move(sc), std::move(ch), cfg.cluster_scheme, cfg.access);
    CounterRng rng(CounterRng::derive(cfg.seed, stream::kTrainTheta, e, b));
    item.theta0.resize(topo.num_elements);
    for (double& t : item.theta0) t = rng.uniform(0.0, detail::kTwoPi);
    return item;
}

// Algorithm: per episode, draw a fresh batch of scenarios and starting
// phases, run the unrolled inner loops, apply one outer update. Deterministic
// per seed. Episodes where every scenario fails (singular ZF) are skipped
// and counted.
inline TrainResult train(const TopologyConfig& topo, const TrainingConfig& cfg) {
    topo.validate();
    cfg.validate();
    if (cfg.access == AccessScheme::Oma && topo.num_antennas < topo.num_users) {
        throw InvalidConfig("OMA training expects num_antennas >= num_users");
    }

    TrainResult res;
    res.weights = init_weights(network_dims(topo, cfg), cfg.seed);
    res.step_size = LearnedStepSize::from_gamma(cfg.gamma_theta_init);
    res.log.reserve(cfg.episodes);

    int skipped = 0;
    for (int episode = 0; episode < cfg.episodes; ++episode) {
        std::vector<OuterBatchItem> batch;
        batch.reserve(cfg.batch_size);
        for (int slot = 0; slot < cfg.batch_size; ++slot) {
            batch.push_back(draw_training_item(topo, cfg, episode, slot));
        }
        const OuterStepResult step = outer_step(res.weights, res.step_size, batch, cfg);
        res.power_violations += step.power_violations;
        res.phase_violations += step.phase_violations;
        res.failed_scenarios += step.failed_scenarios;
        if (!step.updated) ++skipped;

        res.log.push_back(TrainLogRow{episode, step.mean_loss, step.mean_sum_rate_mbps,
                                      res.step_size.gamma(), skipped});
    }
    return res;
}

}  // namespace rnm
