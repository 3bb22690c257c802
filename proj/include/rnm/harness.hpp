#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rnm/channel.hpp"
#include "rnm/errors.hpp"
#include "rnm/maml.hpp"
#include "rnm/policy.hpp"
#include "rnm/threading.hpp"
#include "rnm/units.hpp"

namespace rnm {

enum class RunMode { Train, Eval, Sweep };

// Everything one run needs: base topology and training settings plus the
// experiment-level knobs. Parsed from key=value text, overridable from the
// command line.
struct ExperimentConfig {
    RunMode mode = RunMode::Train;
    TopologyConfig topology;
    TrainingConfig training;
    int trials = 100;                       // evaluation scenarios per point
    std::string sweep_variable;             // K, N, P_max_dbm, clustering, access
    std::vector<std::string> sweep_values;  // raw tokens, validated per variable
    std::string out_dir = "results";
    std::string model_path;                 // eval input
    std::string train_out = "model.bin";    // train output
    bool timing = true;                     // off zeroes wall_s for byte-stable output

    void validate() const {
        topology.validate();
        training.validate();
        if (trials < 1) throw InvalidConfig("trials must be >= 1");
        if (mode == RunMode::Sweep) {
            if (sweep_variable.empty()) throw InvalidConfig("sweep mode needs vary=<variable>");
            if (sweep_values.empty()) throw InvalidConfig("sweep mode needs a nonempty values list");
        }
        if (mode == RunMode::Eval && model_path.empty()) {
            throw InvalidConfig("eval mode needs model=<path>");
        }
    }
};

struct ResultRow {
    std::string sweep_var;
    std::string value;        // original token, e.g. "16" or "qos"
    double mean_rate_mbps = 0.0;
    double stderr_mbps = 0.0;
    double mean_violation_mbps = 0.0;
    int trials = 0;           // trials that produced a result
    double wall_s = 0.0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline long long parse_int(std::string_view v, const std::string& key, int line) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ParseError("expected an integer for '" + key + "', got '" + std::string(v) + "'",
                         line);
    }
    return out;
}

inline double parse_double(std::string_view v, const std::string& key, int line) {
    const std::string s(v);
    char* end = nullptr;
    const double out = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw ParseError("expected a number for '" + key + "', got '" + s + "'", line);
    }
    return out;
}

inline bool parse_bool(std::string_view v, const std::string& key, int line) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ParseError("expected a boolean for '" + key + "', got '" + std::string(v) + "'", line);
}

inline std::vector<std::string> split_list(std::string_view v) {
    std::vector<std::string> out;
    while (!v.empty()) {
        const std::size_t comma = v.find(',');
        out.emplace_back(trim(v.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    out.erase(std::remove_if(out.begin(), out.end(),
                             [](const std::string& s) { return s.empty(); }),
              out.end());
    return out;
}

// Single key table shared by file parsing and command-line overrides, so
// precedence is just "apply later".
inline void apply_key(ExperimentConfig& cfg, const std::string& key, std::string_view value,
                      int line) {
    TopologyConfig& topo = cfg.topology;
    TrainingConfig& tr = cfg.training;
    if (key == "mode") {
        if (value == "train") cfg.mode = RunMode::Train;
        else if (value == "eval") cfg.mode = RunMode::Eval;
        else if (value == "sweep") cfg.mode = RunMode::Sweep;
        else throw ParseError("mode must be train, eval, or sweep", line);
    } else if (key == "M") {
        topo.num_antennas = static_cast<int>(parse_int(value, key, line));
    } else if (key == "N") {
        topo.num_elements = static_cast<int>(parse_int(value, key, line));
    } else if (key == "K") {
        topo.num_users = static_cast<int>(parse_int(value, key, line));
    } else if (key == "P_max_dbm") {
        topo.p_max = dbm_to_watts(parse_double(value, key, line));
    } else if (key == "bandwidth_hz") {
        topo.bandwidth = parse_double(value, key, line);
    } else if (key == "noise_psd_dbm") {
        topo.noise_psd_dbm = parse_double(value, key, line);
    } else if (key == "alpha") {
        topo.path_loss_exponent = parse_double(value, key, line);
    } else if (key == "rician_factor") {
        topo.rician_factor = parse_double(value, key, line);
    } else if (key == "area_width") {
        topo.area_width = parse_double(value, key, line);
    } else if (key == "qos_low_mbps") {
        topo.qos_low_mbps = parse_double(value, key, line);
    } else if (key == "qos_high_mbps") {
        topo.qos_high_mbps = parse_double(value, key, line);
    } else if (key == "episodes") {
        tr.episodes = static_cast<int>(parse_int(value, key, line));
    } else if (key == "batch_size") {
        tr.batch_size = static_cast<int>(parse_int(value, key, line));
    } else if (key == "inner_steps") {
        tr.inner_steps = static_cast<int>(parse_int(value, key, line));
    } else if (key == "gamma_theta") {
        tr.gamma_theta_init = parse_double(value, key, line);
    } else if (key == "gamma_eta") {
        tr.gamma_eta = parse_double(value, key, line);
    } else if (key == "grad_clip") {
        tr.grad_clip_norm = parse_double(value, key, line);
    } else if (key == "second_order") {
        tr.second_order = parse_bool(value, key, line);
    } else if (key == "w1") {
        tr.loss_weights.w1 = parse_double(value, key, line);
    } else if (key == "w2") {
        tr.loss_weights.w2 = parse_double(value, key, line);
    } else if (key == "hidden") {
        tr.hidden_dims.clear();
        for (const std::string& tok : split_list(value)) {
            const long long dim = parse_int(tok, key, line);
            if (dim < 1) throw ParseError("hidden layer dims must be positive", line);
            tr.hidden_dims.push_back(static_cast<std::uint32_t>(dim));
        }
        if (tr.hidden_dims.empty()) throw ParseError("hidden needs at least one dim", line);
    } else if (key == "phase_update") {
        if (value == "wrap") tr.phase_update = PhaseUpdate::Wrap;
        else if (value == "clip") tr.phase_update = PhaseUpdate::Clip;
        else throw ParseError("phase_update must be wrap or clip", line);
    } else if (key == "clustering") {
        if (value == "qos") tr.cluster_scheme = ClusterScheme::Qos;
        else if (value == "channel") tr.cluster_scheme = ClusterScheme::ChannelGain;
        else throw ParseError("clustering must be qos or channel", line);
    } else if (key == "access") {
        if (value == "noma") tr.access = AccessScheme::Noma;
        else if (value == "oma") tr.access = AccessScheme::Oma;
        else throw ParseError("access must be noma or oma", line);
    } else if (key == "seed") {
        tr.seed = static_cast<std::uint64_t>(parse_int(value, key, line));
    } else if (key == "trials") {
        cfg.trials = static_cast<int>(parse_int(value, key, line));
    } else if (key == "vary") {
        cfg.sweep_variable = std::string(value);
    } else if (key == "values") {
        cfg.sweep_values = split_list(value);
    } else if (key == "out_dir") {
        cfg.out_dir = std::string(value);
    } else if (key == "model") {
        cfg.model_path = std::string(value);
    } else if (key == "out") {
        cfg.train_out = std::string(value);
    } else if (key == "timing") {
        cfg.timing = parse_bool(value, key, line);
    } else {
        throw UnknownKey("unknown config key '" + key + "'");
    }
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string_view stripped = detail::trim(raw);
        if (stripped.empty() || stripped.front() == '#') continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError("expected key=value", line);
        }
        const std::string key{detail::trim(stripped.substr(0, eq))};
        const std::string_view value = detail::trim(stripped.substr(eq + 1));
        if (key.empty()) throw ParseError("empty key", line);
        detail::apply_key(cfg, key, value, line);
    }
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    return parse_config(in);
}

// Command-line override, same grammar as one config line. Reported line 0.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ParseError("override must look like key=value: '" + std::string(assignment) + "'",
                         0);
    }
    const std::string key{detail::trim(assignment.substr(0, eq))};
    detail::apply_key(cfg, key, detail::trim(assignment.substr(eq + 1)), 0);
}

// ---------------------------------------------------------------------------
// Evaluation of one model on fresh test scenarios.

struct TrialOutcome {
    double sum_rate_mbps = std::numeric_limits<double>::quiet_NaN();
    double start_rate_mbps = std::numeric_limits<double>::quiet_NaN();
    double violation_mbps = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
};

struct EvalSummary {
    std::vector<TrialOutcome> trials;
    double mean_rate_mbps = std::numeric_limits<double>::quiet_NaN();
    double stderr_mbps = std::numeric_limits<double>::quiet_NaN();
    double mean_violation_mbps = std::numeric_limits<double>::quiet_NaN();
    int ok_count = 0;
};

// Test scenarios come from dedicated streams keyed by (seed, point, trial),
// disjoint from the training streams by construction.
inline EvalSummary evaluate_model(const TopologyConfig& topo, const TrainingConfig& training,
                                  const NetworkWeights& weights, LearnedStepSize step_size,
                                  int trials, std::uint64_t seed, std::uint64_t point = 0) {
    EvalSummary out;
    out.trials.resize(trials);
    parallel_for(static_cast<std::size_t>(trials), [&](std::size_t t) {
        TrialOutcome& slot = out.trials[t];
        try {
            Scenario sc = generate_topology(
                topo, CounterRng::derive(seed, stream::kEvalScenario, point, t));
            ChannelSet cs = sample_channels(
                sc, CounterRng::derive(seed, stream::kEvalChannels, point, t));
            ScenarioBundle bundle = prepare_bundle(std::move(sc), std::move(cs),
                                                   training.cluster_scheme, training.access);
            CounterRng rng(CounterRng::derive(seed, stream::kEvalTheta, point, t));
            std::vector<double> theta0(topo.num_elements);
            for (double& th : theta0) th = rng.uniform(0.0, detail::kTwoPi);

            const EpisodeResult ep = infer(weights, step_size, bundle, theta0, training);
            slot.sum_rate_mbps = ep.report.sum_rate / 1e6;
            slot.start_rate_mbps = ep.step_sum_rates_mbps.front();
            double viol = 0.0;
            for (double v : ep.report.qos_violation) viol += v;
            slot.violation_mbps = viol / 1e6;
            slot.ok = true;
        } catch (const SingularMatrix&) {
        } catch (const NonFiniteValue&) {
        }
    });

    double rate = 0.0, viol = 0.0;
    for (const TrialOutcome& t : out.trials) {
        if (!t.ok) continue;
        ++out.ok_count;
        rate += t.sum_rate_mbps;
        viol += t.violation_mbps;
    }
    if (out.ok_count == 0) return out;
    out.mean_rate_mbps = rate / out.ok_count;
    out.mean_violation_mbps = viol / out.ok_count;
    if (out.ok_count == 1) {
        out.stderr_mbps = 0.0;
    } else {
        double ss = 0.0;
        for (const TrialOutcome& t : out.trials) {
            if (t.ok) ss += (t.sum_rate_mbps - out.mean_rate_mbps) *
                            (t.sum_rate_mbps - out.mean_rate_mbps);
        }
        out.stderr_mbps = std::sqrt(ss / (out.ok_count - 1)) / std::sqrt(out.ok_count);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps: one trained model per point, evaluated on fresh scenarios.

struct SweepPoint {
    ResultRow row;
    EvalSummary eval;
    TrainResult training;
    TopologyConfig topology;      // after applying the sweep value
    TrainingConfig train_config;  // after applying the sweep value
};

struct SweepOutcome {
    std::vector<SweepPoint> points;

    std::vector<ResultRow> rows() const {
        std::vector<ResultRow> out;
        out.reserve(points.size());
        for (const SweepPoint& p : points) out.push_back(p.row);
        return out;
    }
};

namespace detail {

inline void apply_sweep_value(TopologyConfig& topo, TrainingConfig& tr,
                              const std::string& variable, const std::string& value) {
    if (variable == "K") {
        topo.num_users = static_cast<int>(parse_int(value, variable, 0));
    } else if (variable == "N") {
        topo.num_elements = static_cast<int>(parse_int(value, variable, 0));
    } else if (variable == "P_max_dbm") {
        topo.p_max = dbm_to_watts(parse_double(value, variable, 0));
    } else if (variable == "clustering") {
        if (value == "qos") tr.cluster_scheme = ClusterScheme::Qos;
        else if (value == "channel") tr.cluster_scheme = ClusterScheme::ChannelGain;
        else throw InvalidConfig("clustering sweep values must be qos or channel");
    } else if (variable == "access") {
        if (value == "noma") tr.access = AccessScheme::Noma;
        else if (value == "oma") tr.access = AccessScheme::Oma;
        else throw InvalidConfig("access sweep values must be noma or oma");
    } else {
        throw InvalidConfig("unknown sweep variable '" + variable +
                            "' (expected K, N, P_max_dbm, clustering, or access)");
    }
}

}  // namespace detail

inline SweepOutcome run_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    SweepOutcome out;
    out.points.reserve(cfg.sweep_values.size());

    for (std::size_t point = 0; point < cfg.sweep_values.size(); ++point) {
        const std::string& value = cfg.sweep_values[point];
        SweepPoint sp;
        sp.topology = cfg.topology;
        sp.train_config = cfg.training;
        detail::apply_sweep_value(sp.topology, sp.train_config, cfg.sweep_variable, value);
        // Give each point its own training streams; evaluation streams are
        // keyed by the point index below.
        sp.train_config.seed =
            CounterRng::derive(cfg.training.seed, stream::kSweepTrain, point);

        const auto t0 = std::chrono::steady_clock::now();
        sp.training = train(sp.topology, sp.train_config);
        sp.eval = evaluate_model(sp.topology, sp.train_config, sp.training.weights,
                                 sp.training.step_size, cfg.trials, cfg.training.seed, point);
        const auto t1 = std::chrono::steady_clock::now();

        sp.row.sweep_var = cfg.sweep_variable;
        sp.row.value = value;
        sp.row.mean_rate_mbps = sp.eval.mean_rate_mbps;
        sp.row.stderr_mbps = sp.eval.stderr_mbps;
        sp.row.mean_violation_mbps = sp.eval.mean_violation_mbps;
        sp.row.trials = sp.eval.ok_count;  // 0 with NaN means marks a failed point
        sp.row.wall_s = cfg.timing ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
        out.points.push_back(std::move(sp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// File emission. All text is UTF-8 with LF endings; doubles are %.17g so a
// parse-back reproduces values exactly.

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);  // binary keeps LF on every platform
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::string sanitize_label(std::string_view s) {
    std::string out;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '+';
        out.push_back(ok ? c : '_');
    }
    return out;
}

}  // namespace detail

inline constexpr const char* kResultsHeader =
    "sweep_var,value,mean_rate_mbps,stderr,mean_violation_mbps,trials,wall_s";

inline std::string results_csv_text(const std::vector<ResultRow>& rows) {
    std::string out = std::string(kResultsHeader) + "\n";
    for (const ResultRow& r : rows) {
        out += r.sweep_var + "," + r.value + "," + detail::format_double(r.mean_rate_mbps) +
               "," + detail::format_double(r.stderr_mbps) + "," +
               detail::format_double(r.mean_violation_mbps) + "," + std::to_string(r.trials) +
               "," + detail::format_double(r.wall_s) + "\n";
    }
    return out;
}

// Two whitespace-separated columns per series; series separated by blank
// lines so gnuplot can address them with `index`.
inline std::string plot_data_text(const std::vector<ResultRow>& rows) {
    std::string out;
    out += "# series 0: value mean_rate_mbps\n";
    for (const ResultRow& r : rows) {
        out += r.value + " " + detail::format_double(r.mean_rate_mbps) + "\n";
    }
    out += "\n\n# series 1: value mean_violation_mbps\n";
    for (const ResultRow& r : rows) {
        out += r.value + " " + detail::format_double(r.mean_violation_mbps) + "\n";
    }
    return out;
}

inline std::string train_log_csv_text(const std::vector<TrainLogRow>& log) {
    std::string out = "episode,mean_loss,mean_sum_rate_mbps,gamma_theta,skipped_episodes\n";
    for (const TrainLogRow& r : log) {
        out += std::to_string(r.episode) + "," + detail::format_double(r.mean_loss) + "," +
               detail::format_double(r.mean_sum_rate_mbps) + "," +
               detail::format_double(r.gamma_theta) + "," + std::to_string(r.skipped_episodes) +
               "\n";
    }
    return out;
}

inline void write_results(const std::vector<ResultRow>& rows, const std::string& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
    detail::write_text_file(out_dir + "/results.csv", results_csv_text(rows));
    detail::write_text_file(out_dir + "/plot_data.txt", plot_data_text(rows));
}

// Persist everything a sweep produced: results, plot data, and one model +
// training log per point.
inline void write_sweep_outputs(const SweepOutcome& sweep, const ExperimentConfig& cfg) {
    write_results(sweep.rows(), cfg.out_dir);
    for (const SweepPoint& p : sweep.points) {
        const std::string tag =
            detail::sanitize_label(p.row.sweep_var) + "_" + detail::sanitize_label(p.row.value);
        save_weights(p.training.weights, cfg.out_dir + "/model_" + tag + ".bin");
        detail::write_text_file(cfg.out_dir + "/train_log_" + tag + ".csv",
                                train_log_csv_text(p.training.log));
    }
}

// Parse-back of results.csv, mainly so tests and downstream tools can verify
// the round trip.
inline std::vector<ResultRow> read_results_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kResultsHeader) throw ParseError("unexpected results header", 1);
    std::vector<ResultRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 7) throw ParseError("expected 7 columns", line_no);
        ResultRow r;
        r.sweep_var = cells[0];
        r.value = cells[1];
        r.mean_rate_mbps = detail::parse_double(cells[2], "mean_rate_mbps", line_no);
        r.stderr_mbps = detail::parse_double(cells[3], "stderr", line_no);
        r.mean_violation_mbps = detail::parse_double(cells[4], "mean_violation_mbps", line_no);
        r.trials = static_cast<int>(detail::parse_int(cells[5], "trials", line_no));
        r.wall_s = detail::parse_double(cells[6], "wall_s", line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace rnm
