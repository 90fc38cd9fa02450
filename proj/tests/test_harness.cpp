#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "prodssm/harness.hpp"
#include "test_support.hpp"

using namespace prodssm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "prodssm_test_harness" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<double>> read_rows(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);  // schema
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("kink_mean values") {
    CHECK(kink_mean(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(std::abs(kink_mean(-10.0) - (-10.0 + 1.0)) <= 1e-6);
    const long double x = 1.0L;
    const long double oracle = 0.8L + (x + 0.2L) * (1.0L - 5.0L / (1.0L + std::exp(-2.0L * x)));
    CHECK(std::abs(kink_mean(1.0) - static_cast<double>(oracle)) <= 1e-14);
    CHECK(kink_mean(1.0) == doctest::Approx(-3.2847825).epsilon(1e-7));
}

TEST_CASE("kink system simulation") {
    KinkSystem sys;
    sys.length = 50;
    sys.q = 0.0;
    sys.r = 0.08;
    CHECK_THROWS(sys.validate());
    sys.q = 0.05 * 0.05;
    const Trajectory t = sys.simulate(3);
    REQUIRE(t.length() == 50);
    double resid = 0.0;
    Vec prev = t.initial_latent;
    for (std::size_t k = 0; k < t.length(); ++k) {
        const double e = t.latents[k](0) - kink_mean(prev(0));
        resid += e * e;
        prev = t.latents[k];
    }
    CHECK(resid / 50.0 == doctest::Approx(sys.q).epsilon(0.5));
    CHECK(sys.simulate(3).observations[10] == t.observations[10]);
    sys.trajectories = 4;
    CHECK(sys.simulate_many(0).size() == 4);
}

TEST_CASE("kink network fit tracks the kink function") {
    const Vec params = fit_kink_network(50);
    KinkSystem sys;
    const ProDssmModel<double> m = kink_model(sys, 50, WeightScheme::Local, 0.0);
    CHECK(m.weights.mean.size() == params.size());
    double worst = 0.0;
    for (double x = -4.0; x <= 2.5; x += 0.05) {
        worst = std::max(worst, std::abs(transition_mean(m, Vec::Constant(1, x), m.weights.mean)(0) - kink_mean(x)));
    }
    CHECK(worst < 0.05);
}

TEST_CASE("Config parsing") {
    const Config c = Config::parse(
        "# comment\n"
        "noise = 0.08  # trailing\n"
        "  scheme=global\n"
        "\n"
        "hidden = 8, 16\n"
        "flag = true\n"
        "seed = 42\n");
    CHECK(c.get_double("noise", 0.0) == 0.08);
    CHECK(c.get_string("scheme", "") == "global");
    CHECK(c.get_int_list("hidden", {}) == std::vector<long long>{8, 16});
    CHECK(c.get_bool("flag", false));
    CHECK(c.get_seed("seed", 0) == 42);
    CHECK(c.get_int("missing", 7) == 7);
    CHECK_THROWS_AS(Config::parse("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(Config::parse(" = 3\n"), ConfigError);
    CHECK_THROWS_AS(c.get_double("scheme", 0.0), ConfigError);
    CHECK_THROWS_AS(Config::load("/nonexistent/prodssm.cfg"), ConfigError);
}

TEST_CASE("CSV files carry a versioned schema line") {
    const fs::path dir = scratch("csv");
    {
        CsvWriter w((dir / "x.csv").string(), "demo", {"a", "b"});
        w << 1 << 0.5;
        w.end_row();
    }
    std::ifstream in(dir / "x.csv");
    std::string first, second, third;
    std::getline(in, first);
    std::getline(in, second);
    std::getline(in, third);
    CHECK(first == schema_comment("demo"));
    CHECK(first.find(kToolVersion) != std::string::npos);
    CHECK(second == "a,b");
    CHECK(third == "1,0.5");
}

TEST_CASE("aggregate and log-log slope") {
    const Aggregate a = aggregate({1.0, 2.0, 3.0, 4.0});
    CHECK(a.mean == doctest::Approx(2.5));
    CHECK(a.se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
    CHECK(loglog_slope({1, 2, 4, 8}, {3, 24, 192, 1536}) == doctest::Approx(3.0));
}

TEST_CASE("score_latents") {
    FilterResult<double> f;
    Trajectory truth;
    for (double x : {0.0, 1.0}) {
        AugmentedBelief<double> b;
        b.state_mean = Vec::Constant(1, 0.5);
        b.state_cov = Mat::Constant(1, 1, 0.25);
        f.posteriors.push_back(b);
        truth.latents.push_back(Vec::Constant(1, x));
        truth.observations.push_back(Vec::Zero(1));
    }
    const LatentScore s = score_latents(f, truth);
    CHECK(s.mse == doctest::Approx(0.25));
    CHECK(s.nll == doctest::Approx(0.5 * std::log(2 * M_PI * 0.25) + 0.5));
}

TEST_CASE("read_observations") {
    const fs::path dir = scratch("obs");
    std::ofstream(dir / "y.csv") << "# comment\n0.5,1\n-2,3e-1\n";
    const Trajectory t = read_observations((dir / "y.csv").string());
    REQUIRE(t.length() == 2);
    CHECK(t.observations[1](0) == -2.0);
    CHECK(t.observations[1](1) == 0.3);
}

TEST_CASE("train-kink evaluation grid spans the simulated latent path") {
    const fs::path dir = scratch("train");
    Config cfg;
    cfg.set("iterations", "2");
    cfg.set("hidden", "4");
    cfg.set("length", "40");
    cfg.set("eval_samples", "4");
    cfg.set("seed", "3");
    const TrainKinkResult r = run_train_kink(cfg, dir.string());
    CHECK(std::isfinite(r.grid_nll));
    KinkSystem sys;
    sys.r = 0.008;
    sys.length = 40;
    const Trajectory traj = sys.simulate(3);
    double lo = traj.initial_latent(0), hi = lo;
    for (const Vec& x : traj.latents) {
        lo = std::min(lo, x(0));
        hi = std::max(hi, x(0));
    }
    const auto rows = read_rows(dir / "kink_grid.csv");
    REQUIRE(rows.size() == 70);
    CHECK(rows.front()[1] == doctest::Approx(lo).epsilon(1e-15));
    CHECK(rows.back()[1] == doctest::Approx(hi).epsilon(1e-15));
    CHECK(fs::exists(dir / "run.json"));
}

TEST_SUITE("invariants") {
    TEST_CASE("experiments are reproducible from config and seed") {
        Config cfg;
        cfg.set("horizon", "8");
        cfg.set("samples", "500");
        cfg.set("seed", "7");
        const fs::path a = scratch("prop_a"), b = scratch("prop_b");
        run_propagate(cfg, a.string());
        run_propagate(cfg, b.string());
        CHECK(slurp(a / "propagate.csv") == slurp(b / "propagate.csv"));

        Config fc;
        fc.set("trajectories", "2");
        fc.set("length", "30");
        fc.set("method", "ours,ukf,mc");
        fc.set("mc_samples", "16");
        const fs::path c = scratch("filter_a"), d = scratch("filter_b");
        run_filter_bench(fc, c.string());
        run_filter_bench(fc, d.string());
        CHECK(slurp(c / "filter_bench.csv") == slurp(d / "filter_bench.csv"));
        CHECK(slurp(c / "filter_bench_summary.csv") == slurp(d / "filter_bench_summary.csv"));

        Config sc;
        sc.set("trajectories", "2");
        sc.set("length", "25");
        const fs::path e = scratch("sim_a"), f = scratch("sim_b");
        run_simulate(sc, e.string());
        run_simulate(sc, f.string());
        CHECK(slurp(e / "simulate.csv") == slurp(f / "simulate.csv"));
    }

    TEST_CASE("every CSV output starts with its schema line") {
        const fs::path dir = scratch("schema");
        Config cfg;
        cfg.set("horizon", "3");
        cfg.set("samples", "50");
        run_propagate(cfg, dir.string());
        cfg.set("trajectories", "1");
        cfg.set("length", "10");
        run_simulate(cfg, dir.string());
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() != ".csv") continue;
            std::ifstream in(entry.path());
            std::string first;
            std::getline(in, first);
            CHECK(first == schema_comment(entry.path().stem().string()));
        }
    }
}
