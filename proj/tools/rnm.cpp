// Command-line front end: train a power-allocation model, evaluate a saved
// model on fresh scenarios, or run a sweep over one experiment variable.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.
// RNM_THREADS caps the worker pool.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rnm/harness.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<int> n_elements, k_users, m_antennas, episodes;
    std::optional<double> gamma_theta;
    std::vector<std::string> overrides;  // raw key=value pairs
};

void add_common(CLI::App& cmd, CommonFlags& f) {
    cmd.add_option("--config", f.config_path, "key=value config file")->required();
    cmd.add_option("--seed", f.seed, "RNG seed (overrides the config)");
    cmd.add_option("--trials", f.trials, "evaluation scenarios per point");
    cmd.add_option("--N", f.n_elements, "RIS element count");
    cmd.add_option("--K", f.k_users, "user count (even)");
    cmd.add_option("--M", f.m_antennas, "BS antenna count");
    cmd.add_option("--episodes", f.episodes, "training episodes");
    cmd.add_option("--gamma-theta", f.gamma_theta, "inner-loop step size");
    cmd.add_option("--set", f.overrides, "extra key=value override (repeatable)");
}

rnm::ExperimentConfig build_config(const CommonFlags& f, rnm::RunMode mode) {
    rnm::ExperimentConfig cfg = rnm::parse_config_file(f.config_path);
    cfg.mode = mode;  // the subcommand wins over any mode= key
    if (f.seed) rnm::apply_override(cfg, "seed=" + std::to_string(*f.seed));
    if (f.trials) rnm::apply_override(cfg, "trials=" + std::to_string(*f.trials));
    if (f.n_elements) rnm::apply_override(cfg, "N=" + std::to_string(*f.n_elements));
    if (f.k_users) rnm::apply_override(cfg, "K=" + std::to_string(*f.k_users));
    if (f.m_antennas) rnm::apply_override(cfg, "M=" + std::to_string(*f.m_antennas));
    if (f.episodes) rnm::apply_override(cfg, "episodes=" + std::to_string(*f.episodes));
    if (f.gamma_theta) {
        rnm::apply_override(cfg, "gamma_theta=" + rnm::detail::format_double(*f.gamma_theta));
    }
    for (const std::string& kv : f.overrides) rnm::apply_override(cfg, kv);
    return cfg;
}

std::string train_log_path(const std::string& model_out) {
    std::filesystem::path p(model_out);
    p.replace_extension();
    return p.string() + "_train_log.csv";
}

int run_train(const rnm::ExperimentConfig& cfg) {
    cfg.topology.validate();
    cfg.training.validate();
    const rnm::TrainResult res = rnm::train(cfg.topology, cfg.training);
    rnm::save_weights(res.weights, cfg.train_out);
    rnm::detail::write_text_file(train_log_path(cfg.train_out),
                                 rnm::train_log_csv_text(res.log));
    if (!res.log.empty()) {
        const rnm::TrainLogRow& last = res.log.back();
        std::printf("episodes=%zu final_mean_loss=%.6g final_mean_sum_rate_mbps=%.6g "
                    "gamma_theta=%.6g skipped_episodes=%d\n",
                    res.log.size(), last.mean_loss, last.mean_sum_rate_mbps,
                    last.gamma_theta, last.skipped_episodes);
    }
    std::printf("model written to %s\n", cfg.train_out.c_str());
    std::printf("training log written to %s\n", train_log_path(cfg.train_out).c_str());
    return 0;
}

int run_eval(const rnm::ExperimentConfig& cfg) {
    cfg.validate();
    const rnm::NetworkWeights weights = rnm::load_weights(cfg.model_path);
    const auto want = rnm::network_dims(cfg.topology, cfg.training);
    if (weights.layer_dims != want) {
        throw rnm::InvalidConfig("model dimensions do not match the config (model " +
                                 std::to_string(weights.layer_dims.front()) + "-> ... ->" +
                                 std::to_string(weights.layer_dims.back()) + ")");
    }
    const auto step = rnm::LearnedStepSize::from_gamma(cfg.training.gamma_theta_init);
    const rnm::EvalSummary summary =
        rnm::evaluate_model(cfg.topology, cfg.training, weights, step, cfg.trials,
                            cfg.training.seed);
    if (summary.ok_count == 0) {
        std::fprintf(stderr, "all %d evaluation trials failed\n", cfg.trials);
        return 2;
    }
    std::printf("mean_rate_mbps=%.17g\n", summary.mean_rate_mbps);
    std::printf("stderr_mbps=%.17g\n", summary.stderr_mbps);
    std::printf("mean_violation_mbps=%.17g\n", summary.mean_violation_mbps);
    std::printf("trials=%d\n", summary.ok_count);
    return 0;
}

int run_sweep_cmd(const rnm::ExperimentConfig& cfg) {
    const rnm::SweepOutcome sweep = rnm::run_sweep(cfg);
    rnm::write_sweep_outputs(sweep, cfg);
    for (const rnm::SweepPoint& p : sweep.points) {
        if (p.row.trials == 0) {
            std::printf("point %s=%s: all trials failed\n", p.row.sweep_var.c_str(),
                        p.row.value.c_str());
        } else {
            std::printf("point %s=%s: mean_rate_mbps=%.6g stderr=%.3g trials=%d wall_s=%.3g\n",
                        p.row.sweep_var.c_str(), p.row.value.c_str(), p.row.mean_rate_mbps,
                        p.row.stderr_mbps, p.row.trials, p.row.wall_s);
        }
    }
    std::printf("results written to %s/results.csv\n", cfg.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RIS-assisted NOMA downlink simulator and meta-trainer"};
    app.require_subcommand(1);

    CommonFlags train_flags, eval_flags, sweep_flags;
    std::string model_out = "model.bin";
    std::string model_in;
    std::string vary_spec;
    std::string out_dir;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model and save it");
    add_common(*train_cmd, train_flags);
    train_cmd->add_option("--out", model_out, "output model path");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a saved model");
    add_common(*eval_cmd, eval_flags);
    eval_cmd->add_option("--model", model_in, "model file to load")->required();

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "train and evaluate across one variable");
    add_common(*sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--vary", vary_spec,
                          "sweep spec, e.g. N=8,16,32,64 or access=noma,oma");
    sweep_cmd->add_option("--out-dir", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;  // --help exits 0, bad flags exit 1
    }

    rnm::ExperimentConfig cfg;
    try {
        if (train_cmd->parsed()) {
            cfg = build_config(train_flags, rnm::RunMode::Train);
            if (train_cmd->count("--out") > 0) cfg.train_out = model_out;
        } else if (eval_cmd->parsed()) {
            cfg = build_config(eval_flags, rnm::RunMode::Eval);
            cfg.model_path = model_in;
        } else {
            cfg = build_config(sweep_flags, rnm::RunMode::Sweep);
            if (!vary_spec.empty()) {
                const std::size_t eq = vary_spec.find('=');
                if (eq == std::string::npos) {
                    throw rnm::InvalidConfig("--vary expects var=v1,v2,... got '" + vary_spec +
                                             "'");
                }
                rnm::apply_override(cfg, "vary=" + vary_spec.substr(0, eq));
                rnm::apply_override(cfg, "values=" + vary_spec.substr(eq + 1));
            }
            if (!out_dir.empty()) cfg.out_dir = out_dir;
        }
    } catch (const rnm::Error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    }

    try {
        if (train_cmd->parsed()) return run_train(cfg);
        if (eval_cmd->parsed()) return run_eval(cfg);
        return run_sweep_cmd(cfg);
    } catch (const rnm::ParseError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const rnm::UnknownKey& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const rnm::InvalidConfig& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
