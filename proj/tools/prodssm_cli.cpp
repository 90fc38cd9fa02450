// prodssm command-line front end.
//
// Every subcommand reads an optional flat key = value config file, applies
// command-line overrides on top, and writes CSV/JSON outputs to --out.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prodssm/harness.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<long long> seed;
    std::vector<std::string> sets;
};

struct Override {
    std::string key;
    std::string value;
};

prodssm::Config build_config(const CommonOptions& opts, const std::vector<Override>& flags) {
    prodssm::Config cfg =
        opts.config_path.empty() ? prodssm::Config() : prodssm::Config::load(opts.config_path);
    for (const std::string& kv : opts.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw prodssm::ConfigError("--set expects key=value, got '" + kv + "'");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const Override& o : flags) {
        if (!o.value.empty()) cfg.set(o.key, o.value);
    }
    if (opts.seed) cfg.set("seed", std::to_string(*opts.seed));
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moment-matching inference and training for probabilistic deep state-space models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("prodssm ") + prodssm::kToolVersion);

    CommonOptions opts;
    std::string scheme, method, noise, horizon, samples, iterations, model, observations,
        ground_truth, weight_var, dims;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "Flat key = value config file")
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", opts.seed, "Random seed");
        sub->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();
        sub->add_option("--set", opts.sets, "Config override key=value (repeatable)");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "Simulate kink or model trajectories");
    add_common(simulate);
    simulate->add_option("--model", model, "Model file (default: kink system)");
    simulate->add_option("--noise", noise, "Kink emission variance r");

    CLI::App* propagate = app.add_subcommand("propagate", "Moment matching vs. MC propagation");
    add_common(propagate);
    propagate->add_option("--scheme", scheme, "local | global");
    propagate->add_option("--horizon", horizon, "Number of steps");
    propagate->add_option("--samples", samples, "MC sample count");

    CLI::App* filter = app.add_subcommand("filter-bench", "Filtering benchmark on kink ground truths");
    add_common(filter);
    filter->add_option("--noise", noise, "Emission variance r");
    filter->add_option("--method", method, "Comma list of ours|ukf|mc[-local|-global]");
    filter->add_option("--ground-truth", ground_truth, "deterministic | local | global");
    filter->add_option("--weight-var", weight_var, "Ground-truth weight variance");

    CLI::App* train = app.add_subcommand("train-kink", "Learn the kink dynamics");
    add_common(train);
    train->add_option("--noise", noise, "Emission variance r");
    train->add_option("--scheme", scheme, "local | global");
    train->add_option("--iterations", iterations, "Optimizer iterations");

    CLI::App* regress = app.add_subcommand("regress", "Deep-stochastic-layer regression");
    add_common(regress);
    regress->add_option("--scheme", scheme, "local | global");
    regress->add_option("--iterations", iterations, "Optimizer iterations");

    CLI::App* predict = app.add_subcommand("predict", "Predictive distribution after filtering");
    add_common(predict);
    predict->add_option("--model", model, "Model file");
    predict->add_option("--observations", observations, "CSV with one observation row per step");
    predict->add_option("--horizon", horizon, "Prediction horizon");

    CLI::App* bench = app.add_subcommand("bench-runtime", "Runtime scaling of one prediction step");
    add_common(bench);
    bench->add_option("--dims", dims, "Comma list of dimensions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::vector<Override> flags{{"scheme", scheme},         {"method", method},
                                      {"noise", noise},           {"horizon", horizon},
                                      {"samples", samples},       {"iterations", iterations},
                                      {"model", model},           {"observations", observations},
                                      {"ground_truth", ground_truth}, {"weight_var", weight_var},
                                      {"dims", dims}};
    try {
        const prodssm::Config cfg = build_config(opts, flags);
        if (simulate->parsed()) {
            prodssm::run_simulate(cfg, opts.out_dir);
        } else if (propagate->parsed()) {
            prodssm::run_propagate(cfg, opts.out_dir);
        } else if (filter->parsed()) {
            const auto r = prodssm::run_filter_bench(cfg, opts.out_dir);
            for (std::size_t m = 0; m < r.methods.size(); ++m) {
                std::cout << r.methods[m] << " mse " << r.mse[m].mean << " (" << r.mse[m].se
                          << ") nll " << r.nll[m].mean << " (" << r.nll[m].se << ")\n";
            }
        } else if (train->parsed()) {
            const auto r = prodssm::run_train_kink(cfg, opts.out_dir);
            std::cout << "grid nll " << r.grid_nll << " mse " << r.grid_mse << " after "
                      << r.iterations << " iterations\n";
        } else if (regress->parsed()) {
            const auto r = prodssm::run_regress(cfg, opts.out_dir);
            std::cout << "objective " << r.objective << " test nll " << r.test_nll << " test mse "
                      << r.test_mse << '\n';
        } else if (predict->parsed()) {
            prodssm::run_predict(cfg, opts.out_dir);
        } else if (bench->parsed()) {
            for (const auto& row : prodssm::run_bench_runtime(cfg, opts.out_dir)) {
                std::cout << row.method << " D=" << row.dim << " S=" << row.samples << " "
                          << row.wall_ns * 1e-6 << " ms\n";
            }
        }
    } catch (const prodssm::NonPsdCovariance& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const prodssm::NonFiniteObjective& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const prodssm::NegativeVariance& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const prodssm::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
