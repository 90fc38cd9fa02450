#include "prodssm/harness.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "prodssm/serialization.hpp"

namespace prodssm {

namespace {

// exp(-1000) underflows to exactly 0, so weights with this log-variance are deterministic.

std::string join_path(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw ConfigError("output directory not writable: " + dir);
    }
}

WeightScheme scheme_of(const Config& cfg, const std::string& fallback) {
    return parse_scheme(cfg.get_string("scheme", fallback));
}

std::vector<Eigen::Index> to_index_list(const std::vector<long long>& v) {
    std::vector<Eigen::Index> out;
    for (long long x : v) {
        if (x <= 0) throw ConfigError("layer widths must be positive");
        out.push_back(static_cast<Eigen::Index>(x));
    }
    return out;
}

std::size_t positive_count(const Config& cfg, const std::string& key, long long fallback) {
    const long long v = cfg.get_int(key, fallback);
    if (v < 1) throw ConfigError(key + " must be >= 1");
    return static_cast<std::size_t>(v);
}

long long peak_rss_bytes() {
    rusage usage{};
    if (getrusage(RUSAGE_SELF, &usage) != 0) return -1;
    return static_cast<long long>(usage.ru_maxrss) * 1024;
}

double normal_nll(double x, double mean, double var) {
    const double d = x - mean;
    return 0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

}  // namespace

double kink_mean(double x) { return 0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + std::exp(-2.0 * x))); }

void KinkSystem::validate() const {
    if (!(q > 0.0)) throw ConfigError("kink: transition variance must be positive");
    if (!(r > 0.0)) throw ConfigError("kink: emission variance must be positive");
    if (!(x0_var >= 0.0)) throw ConfigError("kink: initial variance must be non-negative");
    if (length < 1) throw ConfigError("kink: trajectory length must be >= 1");
    if (trajectories < 1) throw ConfigError("kink: trajectory count must be >= 1");
}

Trajectory KinkSystem::simulate(std::uint64_t seed) const {
    validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Trajectory traj;
    double x = x0_mean + std::sqrt(x0_var) * normal(rng);
    traj.initial_latent = Vec::Constant(1, x);
    for (std::size_t t = 0; t < length; ++t) {
        x = kink_mean(x) + std::sqrt(q) * normal(rng);
        traj.latents.push_back(Vec::Constant(1, x));
        traj.observations.push_back(Vec::Constant(1, x + std::sqrt(r) * normal(rng)));
    }
    return traj;
}

std::vector<Trajectory> KinkSystem::simulate_many(std::uint64_t seed) const {
    std::vector<Trajectory> out;
    for (std::size_t i = 0; i < trajectories; ++i) out.push_back(simulate(seed + i));
    return out;
}

Vec fit_kink_network(Eigen::Index hidden, double lo, double hi) {
    if (hidden < 2) throw ConfigError("kink network needs at least 2 hidden units");
    const NetworkSpec spec = NetworkSpec::mlp(1, {hidden}, 1);
    const WeightLayout layout = spec.layout(0, spec.weight_count());
    const AffineSlot& first = layout.layers[0];
    const AffineSlot& second = layout.layers[1];
    Vec w = Vec::Zero(spec.weight_count());

    // Alternate rising and falling hinges over [lo, hi].
    for (Eigen::Index j = 0; j < hidden; ++j) {
        const double c = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(hidden - 1);
        const double s = (j % 2 == 0) ? 1.0 : -1.0;
        w(first.a_index(j, 0)) = s;
        w(first.b_index(j)) = -s * c;
    }

    const Eigen::Index n = 2000;
    Mat features(n, hidden + 1);
    Vec target(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        for (Eigen::Index j = 0; j < hidden; ++j) {
            features(i, j) = std::max(0.0, w(first.a_index(j, 0)) * x + w(first.b_index(j)));
        }
        features(i, hidden) = 1.0;
        target(i) = kink_mean(x);
    }
    const Mat gram = features.transpose() * features +
                     1e-8 * Mat::Identity(hidden + 1, hidden + 1);
    const Vec coef = gram.ldlt().solve(features.transpose() * target);
    for (Eigen::Index j = 0; j < hidden; ++j) w(second.a_index(0, j)) = coef(j);
    w(second.b_index(0)) = coef(hidden);
    return w;
}

ProDssmModel<double> kink_model(const KinkSystem& system, Eigen::Index hidden, WeightScheme scheme,
                                double weight_var) {
    system.validate();
    if (!(weight_var >= 0.0)) throw ConfigError("weight variance must be non-negative");
    ModelShape shape;
    shape.f_hidden = {hidden};
    shape.scheme = scheme;
    ProDssmModel<double> m = make_model(shape, 0);
    m.weights.mean = fit_kink_network(hidden);
    m.weights.log_var =
        Vec::Constant(m.weight_dim(), weight_var > 0.0 ? std::log(weight_var) : kDeterministicLogVar);
    m.variance.log_var = Vec::Constant(1, std::log(system.q));
    m.log_r = Vec::Constant(1, std::log(system.r));
    m.initial_mean = Vec::Constant(1, system.x0_mean);
    m.initial_chol = Mat::Constant(1, 1, std::sqrt(system.x0_var));
    m.validate();
    return m;
}

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
}

long long Config::get_int(const std::string& key, long long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        const long long v = std::stoll(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + it->second + "'");
    }
}

std::uint64_t Config::get_seed(const std::string& key, std::uint64_t fallback) const {
    const long long v = get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError("config key '" + key + "': seed must be non-negative");
    return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + it->second + "'");
}

std::vector<long long> Config::get_int_list(const std::string& key,
                                            const std::vector<long long>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<long long> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
        Config tmp;
        tmp.set(key, item);
        out.push_back(tmp.get_int(key, 0));
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

std::string schema_comment(const std::string& name) {
    return "# schema: prodssm." + name + "/1 tool: prodssm " + kToolVersion;
}

CsvWriter::CsvWriter(const std::string& path, const std::string& schema,
                     const std::vector<std::string>& columns)
    : out_(path), columns_(columns.size()) {
    if (!out_) throw ConfigError("cannot write " + path);
    out_ << schema_comment(schema) << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << '\n';
}

void CsvWriter::separator() {
    if (field_ > 0) out_ << ',';
    ++field_;
}

CsvWriter& CsvWriter::operator<<(double v) {
    separator();
    out_ << format_double(v);
    return *this;
}

CsvWriter& CsvWriter::operator<<(long long v) {
    separator();
    out_ << v;
    return *this;
}

CsvWriter& CsvWriter::operator<<(std::size_t v) {
    separator();
    out_ << v;
    return *this;
}

CsvWriter& CsvWriter::operator<<(const std::string& v) {
    separator();
    out_ << v;
    return *this;
}

void CsvWriter::end_row() {
    if (field_ != columns_) throw DimensionMismatch("csv row has wrong number of fields");
    out_ << '\n';
    field_ = 0;
}

void write_metadata(const std::string& path, const std::string& command, const Config& cfg,
                    const std::map<std::string, double>& summary) {
    nlohmann::ordered_json j;
    j["tool"] = "prodssm";
    j["version"] = kToolVersion;
    j["command"] = command;
    j["config"] = cfg.values();
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [k, v] : summary) {
        if (std::isfinite(v)) s[k] = v;
        else s[k] = format_double(v);
    }
    j["summary"] = s;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << '\n';
}

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    const double n = static_cast<double>(values.size());
    for (double v : values) a.mean += v;
    a.mean /= n;
    if (values.size() < 2) return a;
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    return a;
}

LatentScore score_latents(const FilterResult<double>& result, const Trajectory& truth) {
    detail::require_dims(truth.has_latents() && truth.length() == result.length(),
                         "score: trajectory needs latents for every step");
    LatentScore s;
    const double steps = static_cast<double>(truth.length());
    for (std::size_t t = 0; t < truth.length(); ++t) {
        const GaussianBelief<double> marginal = result.posteriors[t].state_belief();
        s.mse += (truth.latents[t] - marginal.mean).squaredNorm() /
                 static_cast<double>(marginal.dim());
        s.nll -= log_density(marginal, truth.latents[t]) / static_cast<double>(marginal.dim());
    }
    s.mse /= steps;
    s.nll /= steps;
    return s;
}

std::vector<PropagateRow> run_propagate(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const std::uint64_t seed = cfg.get_seed("seed", 0);
    const std::size_t horizon = positive_count(cfg, "horizon", 30);
    McConfig mc;
    mc.samples = positive_count(cfg, "samples", 10000);
    mc.seed = seed;

    ModelShape shape;
    shape.state_dim = static_cast<Eigen::Index>(positive_count(cfg, "state_dim", 1));
    shape.obs_dim = shape.state_dim;
    shape.f_hidden = to_index_list(cfg.get_int_list("hidden", {16}));
    shape.residual = cfg.get_bool("residual", false);
    shape.scheme = scheme_of(cfg, "local");
    shape.initial_log_weight_var = std::log(cfg.get_double("weight_var", 0.01));
    shape.initial_log_process_var = std::log(cfg.get_double("process_var", 0.01));
    shape.initial_state_var = cfg.get_double("initial_var", 0.1);
    ProDssmModel<double> model = make_model(shape, seed);
    // He-scaled means give expansive dynamics; shrink them to keep rollouts bounded.
    model.weights.mean *= cfg.get_double("mean_scale", 0.5);

    const AugmentedBelief<double> initial = model.initial_augmented();
    const PredictiveResult<double> det = det_predict(model, initial, horizon);
    const McMoments sampled = mc_moments(model, initial, horizon, mc);

    CsvWriter csv(join_path(out_dir, "propagate.csv"), "propagate",
                  {"t", "dim", "det_mean", "det_var", "mc_mean", "mc_var", "mc_se_mean", "mc_se_var"});
    std::vector<PropagateRow> rows;
    for (std::size_t t = 0; t < horizon; ++t) {
        for (Eigen::Index d = 0; d < model.state_dim(); ++d) {
            PropagateRow row{t + 1,
                             d,
                             det.states[t].state_mean(d),
                             det.states[t].state_cov(d, d),
                             sampled.mean[t](d),
                             sampled.cov[t](d, d),
                             sampled.mean_se[t](d),
                             sampled.cov_se[t](d, d)};
            csv << row.t << static_cast<long long>(row.dim) << row.det_mean << row.det_var
                << row.mc_mean << row.mc_var << row.mc_se_mean << row.mc_se_var;
            csv.end_row();
            rows.push_back(row);
        }
    }
    save_model(model, join_path(out_dir, "model.json"));
    write_metadata(join_path(out_dir, "run.json"), "propagate", cfg,
                   {{"horizon", static_cast<double>(horizon)},
                    {"samples", static_cast<double>(mc.samples)}});
    return rows;
}

namespace {

struct MethodSpec {
    std::string name;
    std::string kind;  // ours | ukf | mc
    WeightScheme scheme;
};

MethodSpec parse_method(const std::string& text, WeightScheme fallback) {
    MethodSpec m{text, text, fallback};
    const auto dash = text.find('-');
    if (dash != std::string::npos) {
        m.kind = text.substr(0, dash);
        m.scheme = parse_scheme(text.substr(dash + 1));
    }
    if (m.kind != "ours" && m.kind != "ukf" && m.kind != "mc") {
        throw ConfigError("unknown filter method '" + text + "'");
    }
    return m;
}

}  // namespace

FilterBenchResult run_filter_bench(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    KinkSystem sys;
    sys.r = cfg.get_double("noise", 0.8);
    sys.length = positive_count(cfg, "length", 120);
    sys.trajectories = positive_count(cfg, "trajectories", 10);
    sys.x0_var = cfg.get_double("x0_var", 1.0);
    sys.validate();
    const std::uint64_t seed = cfg.get_seed("seed", 0);

    // Data always come from the kink system. The filtered model is the fitted
    // kink network, with deterministic weights or Σ^w = weight_var * I.
    const std::string truth = cfg.get_string("ground_truth", "deterministic");
    const std::vector<Trajectory> data = sys.simulate_many(seed);
    WeightScheme truth_scheme = WeightScheme::Local;
    ProDssmModel<double> model;
    if (truth == "deterministic") {
        const Eigen::Index hidden = static_cast<Eigen::Index>(positive_count(cfg, "hidden", 50));
        model = kink_model(sys, hidden, WeightScheme::Local, 0.0);
    } else {
        truth_scheme = parse_scheme(truth);
        const Eigen::Index hidden = static_cast<Eigen::Index>(positive_count(cfg, "hidden", 8));
        model = kink_model(sys, hidden, truth_scheme, cfg.get_double("weight_var", 0.3));
    }

    std::vector<std::string> names;
    {
        std::stringstream ss(cfg.get_string("method", "ours,ukf,mc"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) names.push_back(item);
        }
    }
    McConfig mc;
    mc.samples = positive_count(cfg, "mc_samples", 64);

    FilterBenchResult result;
    CsvWriter csv(join_path(out_dir, "filter_bench.csv"), "filter_bench",
                  {"method", "trajectory", "mse", "nll"});
    for (const std::string& name : names) {
        const MethodSpec method = parse_method(name, truth_scheme);
        ProDssmModel<double> filter_model = model;
        filter_model.scheme = method.scheme;
        const AugmentedBelief<double> initial = filter_model.initial_augmented();
        std::vector<LatentScore> scores;
        std::vector<double> mses, nlls;
        for (std::size_t i = 0; i < data.size(); ++i) {
            FilterResult<double> fr;
            if (method.kind == "ours") {
                fr = det_filter(filter_model, data[i], initial);
            } else if (method.kind == "ukf") {
                fr = ukf_filter(filter_model, data[i], initial);
            } else {
                mc.seed = seed * 1000003 + i;
                fr = mc_filter(filter_model, data[i], initial, mc);
            }
            const LatentScore s = score_latents(fr, data[i]);
            csv << name << i << s.mse << s.nll;
            csv.end_row();
            scores.push_back(s);
            mses.push_back(s.mse);
            nlls.push_back(s.nll);
        }
        result.methods.push_back(name);
        result.scores.push_back(std::move(scores));
        result.mse.push_back(aggregate(mses));
        result.nll.push_back(aggregate(nlls));
    }

    CsvWriter summary(join_path(out_dir, "filter_bench_summary.csv"), "filter_bench_summary",
                      {"method", "mse_mean", "mse_se", "nll_mean", "nll_se"});
    std::map<std::string, double> meta;
    for (std::size_t m = 0; m < result.methods.size(); ++m) {
        summary << result.methods[m] << result.mse[m].mean << result.mse[m].se << result.nll[m].mean
                << result.nll[m].se;
        summary.end_row();
        meta[result.methods[m] + ".mse"] = result.mse[m].mean;
        meta[result.methods[m] + ".nll"] = result.nll[m].mean;
    }
    write_metadata(join_path(out_dir, "run.json"), "filter-bench", cfg, meta);
    return result;
}

void evaluate_kink_grid(const ProDssmModel<double>& model, double lo, double hi,
                        std::size_t points, std::size_t samples, std::uint64_t seed, double& nll,
                        double& mse, std::vector<std::array<double, 4>>* rows) {
    detail::require_dims(model.state_dim() == 1, "kink grid: model must be one-dimensional");
    if (points < 2 || samples < 1) throw ConfigError("kink grid: need >= 2 points and >= 1 sample");
    std::mt19937_64 rng(seed);
    std::vector<Vec> draws;
    for (std::size_t s = 0; s < samples; ++s) draws.push_back(sample_weights(model, rng));
    nll = 0.0;
    mse = 0.0;
    for (std::size_t i = 0; i < points; ++i) {
        const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
        const Vec xv = Vec::Constant(1, x);
        double sum = 0.0, sum_sq = 0.0, noise = 0.0;
        for (const Vec& w : draws) {
            const double f = transition_mean(model, xv, w)(0);
            sum += f;
            sum_sq += f * f;
            noise += transition_variance(model, xv, w)(0);
        }
        const double n = static_cast<double>(samples);
        const double mean = sum / n;
        const double var = std::max(0.0, sum_sq / n - mean * mean) + noise / n;
        const double truth = kink_mean(x);
        nll += normal_nll(truth, mean, var);
        mse += (truth - mean) * (truth - mean);
        if (rows) rows->push_back({x, truth, mean, var});
    }
    nll /= static_cast<double>(points);
    mse /= static_cast<double>(points);
}

TrainKinkResult run_train_kink(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const auto start = std::chrono::steady_clock::now();
    KinkSystem sys;
    sys.r = cfg.get_double("noise", 0.008);
    sys.length = positive_count(cfg, "length", 120);
    sys.x0_var = cfg.get_double("x0_var", 1.0);
    sys.validate();
    const std::uint64_t seed = cfg.get_seed("seed", 0);
    const std::size_t runs = positive_count(cfg, "runs", 1);

    TrainConfig tc;
    tc.learning_rate = cfg.get_double("learning_rate", 0.03);
    tc.iterations = positive_count(cfg, "iterations", 3000);
    tc.plateau_patience = static_cast<std::size_t>(cfg.get_int("patience", 200));
    tc.tolerance = cfg.get_double("tolerance", 1e-6);
    tc.groups.emission = false;
    tc.validate();

    ModelShape shape;
    shape.f_hidden = to_index_list(cfg.get_int_list("hidden", {50}));
    shape.scheme = scheme_of(cfg, "local");
    shape.initial_log_weight_var = std::log(cfg.get_double("initial_weight_var", 1e-4));

    const std::size_t points = positive_count(cfg, "grid_points", 70);
    const std::size_t samples = positive_count(cfg, "eval_samples", 256);

    CsvWriter grid_csv(join_path(out_dir, "kink_grid.csv"), "kink_grid",
                       {"run", "x", "f_true", "mean", "var"});
    CsvWriter log_csv(join_path(out_dir, "train_log.csv"), "train_log",
                      {"run", "iteration", "objective", "grad_norm", "wall_ms"});
    CsvWriter summary(join_path(out_dir, "train_kink.csv"), "train_kink",
                      {"run", "grid_nll", "grid_mse", "iterations", "final_objective"});

    TrainKinkResult result;
    std::vector<double> nlls, mses;
    for (std::size_t run = 0; run < runs; ++run) {
        const Trajectory traj = sys.simulate(seed + run);
        SsmObjective objective(make_model(shape, seed + 1000 + run), {traj});
        TrainConfig run_cfg = tc;
        run_cfg.seed = seed + run;
        const FitResult fitted = fit(objective, run_cfg);
        if (fitted.trace.aborted) {
            throw NonFiniteObjective("training aborted: " + fitted.trace.abort_reason);
        }
        for (const IterationRecord& rec : fitted.trace.history) {
            log_csv << run << rec.iteration << rec.objective << rec.gradient_norm << rec.wall_ms;
            log_csv.end_row();
        }

        double lo = traj.initial_latent(0), hi = traj.initial_latent(0);
        for (const Vec& x : traj.latents) {
            lo = std::min(lo, x(0));
            hi = std::max(hi, x(0));
        }
        double nll = 0.0, mse = 0.0;
        std::vector<std::array<double, 4>> rows;
        evaluate_kink_grid(fitted.model, lo, hi, points, samples, seed + 2000 + run, nll, mse, &rows);
        for (const auto& row : rows) {
            grid_csv << run << row[0] << row[1] << row[2] << row[3];
            grid_csv.end_row();
        }
        summary << run << nll << mse << fitted.trace.history.size() << fitted.trace.best_objective;
        summary.end_row();
        nlls.push_back(nll);
        mses.push_back(mse);
        if (run == 0) {
            save_model(fitted.model, join_path(out_dir, "model.json"));
            result.model = fitted.model;
            result.history = fitted.trace.history;
            result.iterations = fitted.trace.history.size();
        }
    }
    result.grid_nll = aggregate(nlls).mean;
    result.grid_mse = aggregate(mses).mean;
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_metadata(join_path(out_dir, "run.json"), "train-kink", cfg,
                   {{"grid_nll", result.grid_nll}, {"grid_mse", result.grid_mse}});
    return result;
}

RegressResult run_regress(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const std::uint64_t seed = cfg.get_seed("seed", 0);
    const std::size_t n_train = positive_count(cfg, "points", 200);
    const std::size_t n_test = positive_count(cfg, "test_points", 100);
    const double noise = cfg.get_double("noise", 0.1);
    const std::size_t depth = positive_count(cfg, "depth", 3);
    if (!(noise > 0.0)) throw ConfigError("noise must be positive");

    // y = sin(4x) + N(0, noise^2), x ~ U(-1, 1)
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto make_data = [&](std::size_t n, std::vector<Vec>& xs, std::vector<Vec>& ys) {
        for (std::size_t i = 0; i < n; ++i) {
            const double x = uniform(rng);
            xs.push_back(Vec::Constant(1, x));
            ys.push_back(Vec::Constant(1, std::sin(4.0 * x) + noise * normal(rng)));
        }
    };
    std::vector<Vec> x_train, y_train, x_test, y_test;
    make_data(n_train, x_train, y_train);
    make_data(n_test, x_test, y_test);

    ModelShape shape;
    shape.f_hidden = to_index_list(cfg.get_int_list("hidden", {16}));
    shape.residual = cfg.get_bool("residual", true);
    shape.scheme = scheme_of(cfg, "local");
    shape.initial_log_process_var = std::log(cfg.get_double("process_var", 1e-3));
    RegressionObjective objective(make_model(shape, seed + 1), x_train, y_train, depth);

    TrainConfig tc;
    tc.learning_rate = cfg.get_double("learning_rate", 1e-2);
    tc.iterations = positive_count(cfg, "iterations", 500);
    tc.batch_size = static_cast<std::size_t>(cfg.get_int("batch_size", 0));
    tc.seed = seed;
    tc.groups.initial_state = false;
    const FitResult fitted = fit(objective, tc);
    if (fitted.trace.aborted) throw NonFiniteObjective("training aborted: " + fitted.trace.abort_reason);

    RegressResult result;
    result.objective = fitted.trace.best_objective;
    CsvWriter csv(join_path(out_dir, "regress.csv"), "regress",
                  {"x", "y", "pred_mean", "pred_var"});
    for (std::size_t i = 0; i < n_test; ++i) {
        const PredictiveResult<double> p =
            det_predict(fitted.model, point_belief(fitted.model, x_test[i]), depth);
        const GaussianBelief<double>& yb = p.observations.back();
        result.test_nll -= log_density(yb, y_test[i]);
        result.test_mse += (yb.mean - y_test[i]).squaredNorm();
        csv << x_test[i](0) << y_test[i](0) << yb.mean(0) << yb.cov(0, 0);
        csv.end_row();
    }
    result.test_nll /= static_cast<double>(n_test);
    result.test_mse /= static_cast<double>(n_test);
    save_model(fitted.model, join_path(out_dir, "model.json"));
    write_metadata(join_path(out_dir, "run.json"), "regress", cfg,
                   {{"objective", result.objective},
                    {"test_nll", result.test_nll},
                    {"test_mse", result.test_mse}});
    return result;
}

ProDssmModel<double> runtime_model(Eigen::Index dim, WeightScheme scheme, std::uint64_t seed) {
    ModelShape shape;
    shape.state_dim = dim;
    shape.obs_dim = dim;
    shape.f_hidden = {dim};
    shape.scheme = scheme;
    return make_model(shape, seed);
}

AugmentedBelief<double> runtime_belief(const ProDssmModel<double>& model, std::uint64_t seed) {
    AugmentedBelief<double> b = model.initial_augmented();
    if (model.scheme == WeightScheme::Global) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1e-6);
        b.state_weight_cov = Mat::NullaryExpr(model.state_dim(), model.weight_dim(),
                                              [&]() { return normal(rng); });
    }
    return b;
}

double time_det_prediction(const ProDssmModel<double>& model, const AugmentedBelief<double>& belief,
                           std::size_t repeats) {
    std::vector<double> times;
    for (std::size_t k = 0; k < repeats; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        const AugmentedBelief<double> next = augmented_step(belief, model);
        const EmissionMoments<double> em = emission_moments(next, model);
        const auto t1 = std::chrono::steady_clock::now();
        if (!em.mean.allFinite()) throw NonFiniteObjective("runtime bench produced non-finite moments");
        times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

namespace {

double time_mc_prediction(const ProDssmModel<double>& model, const AugmentedBelief<double>& belief,
                          std::size_t samples, std::size_t repeats) {
    std::vector<double> times;
    const Eigen::Index n = model.state_dim();
    const Mat factor = belief.state_cov.llt().matrixL();
    for (std::size_t k = 0; k < repeats; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        Mat ys(model.obs_dim(), static_cast<Eigen::Index>(samples));
        for (std::size_t s = 0; s < samples; ++s) {
            std::mt19937_64 rng = particle_rng(k, s);
            const Vec x = belief.state_mean + factor * standard_normal_vector(n, rng);
            const Vec next = sample_transition(model, x, sample_weights(model, rng), rng);
            ys.col(static_cast<Eigen::Index>(s)) = emission_mean(model, next);
        }
        const Vec mean = ys.rowwise().mean();
        const Mat centered = ys.colwise() - mean;
        const Mat cov = centered * centered.transpose() / static_cast<double>(samples);
        const auto t1 = std::chrono::steady_clock::now();
        if (!cov.allFinite()) throw NonFiniteObjective("runtime bench produced non-finite moments");
        times.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

}  // namespace

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    detail::require_dims(x.size() == y.size() && x.size() >= 2, "loglog_slope: need >= 2 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

std::vector<RuntimeRow> run_bench_runtime(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const std::uint64_t seed = cfg.get_seed("seed", 0);
    const std::vector<long long> dims = cfg.get_int_list("dims", {8, 16, 32, 64, 128, 256});
    const std::size_t repeats = positive_count(cfg, "repeats", 3);
    std::vector<std::string> methods;
    {
        std::stringstream ss(cfg.get_string("methods", "det-local,det-global,mc"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item != "det-local" && item != "det-global" && item != "mc") {
                throw ConfigError("unknown runtime method '" + item + "'");
            }
            methods.push_back(item);
        }
    }

    std::vector<RuntimeRow> rows;
    CsvWriter csv(join_path(out_dir, "bench_runtime.csv"), "bench_runtime",
                  {"method", "dim", "samples", "wall_ns", "peak_bytes"});
    for (long long dl : dims) {
        if (dl < 1) throw ConfigError("dims must be positive");
        const Eigen::Index d = static_cast<Eigen::Index>(dl);
        for (const std::string& method : methods) {
            if (method == "mc") {
                const ProDssmModel<double> model = runtime_model(d, WeightScheme::Local, seed);
                const AugmentedBelief<double> belief = runtime_belief(model, seed);
                for (std::size_t s : {static_cast<std::size_t>(std::max<Eigen::Index>(1, d / 4)),
                                      static_cast<std::size_t>(d), static_cast<std::size_t>(4 * d)}) {
                    const double ns = time_mc_prediction(model, belief, s, repeats);
                    rows.push_back({"mc", d, s, ns, peak_rss_bytes()});
                }
            } else {
                const WeightScheme scheme =
                    method == "det-local" ? WeightScheme::Local : WeightScheme::Global;
                const ProDssmModel<double> model = runtime_model(d, scheme, seed);
                const AugmentedBelief<double> belief = runtime_belief(model, seed);
                const double ns = time_det_prediction(model, belief, repeats);
                rows.push_back({method, d, 0, ns, peak_rss_bytes()});
            }
        }
    }
    for (const RuntimeRow& r : rows) {
        csv << r.method << static_cast<long long>(r.dim) << r.samples << r.wall_ns << r.peak_bytes;
        csv.end_row();
    }
    write_metadata(join_path(out_dir, "run.json"), "bench-runtime", cfg,
                   {{"measurements", static_cast<double>(rows.size())}});
    return rows;
}

void run_simulate(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const std::uint64_t seed = cfg.get_seed("seed", 0);
    const std::size_t count = positive_count(cfg, "trajectories", 1);
    std::vector<Trajectory> data;
    if (cfg.has("model")) {
        const ProDssmModel<double> model = load_model(cfg.get_string("model", ""));
        const std::size_t length = positive_count(cfg, "length", 120);
        for (std::size_t i = 0; i < count; ++i) data.push_back(simulate(model, length, seed + i));
    } else {
        KinkSystem sys;
        sys.r = cfg.get_double("noise", 0.8);
        sys.length = positive_count(cfg, "length", 120);
        sys.trajectories = count;
        sys.x0_var = cfg.get_double("x0_var", 1.0);
        data = sys.simulate_many(seed);
    }
    const Eigen::Index dx = data.front().latents.front().size();
    const Eigen::Index dy = data.front().observations.front().size();
    std::vector<std::string> cols{"trajectory", "t"};
    for (Eigen::Index i = 0; i < dx; ++i) cols.push_back("x" + std::to_string(i));
    for (Eigen::Index i = 0; i < dy; ++i) cols.push_back("y" + std::to_string(i));
    CsvWriter csv(join_path(out_dir, "simulate.csv"), "simulate", cols);
    for (std::size_t n = 0; n < data.size(); ++n) {
        for (std::size_t t = 0; t < data[n].length(); ++t) {
            csv << n << (t + 1);
            for (Eigen::Index i = 0; i < dx; ++i) csv << data[n].latents[t](i);
            for (Eigen::Index i = 0; i < dy; ++i) csv << data[n].observations[t](i);
            csv.end_row();
        }
    }
    write_metadata(join_path(out_dir, "run.json"), "simulate", cfg,
                   {{"trajectories", static_cast<double>(data.size())}});
}

Trajectory read_observations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read observations file " + path);
    Trajectory traj;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        bool numeric = true;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (used != cell.size()) numeric = false;
            } catch (const std::exception&) {
                numeric = false;
            }
        }
        if (!numeric) {
            if (header_seen || !traj.observations.empty()) {
                throw ConfigError("observations file: non-numeric row in " + path);
            }
            header_seen = true;
            continue;
        }
        const Vec y = Eigen::Map<const Vec>(row.data(), static_cast<Eigen::Index>(row.size()));
        if (!traj.observations.empty() && y.size() != traj.observations.front().size()) {
            throw ConfigError("observations file: ragged rows in " + path);
        }
        traj.observations.push_back(y);
    }
    if (traj.observations.empty()) throw ConfigError("observations file is empty: " + path);
    return traj;
}

void run_predict(const Config& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    if (!cfg.has("model")) throw ConfigError("predict needs model = PATH");
    if (!cfg.has("observations")) throw ConfigError("predict needs observations = PATH");
    const ProDssmModel<double> model = load_model(cfg.get_string("model", ""));
    const Trajectory history = read_observations(cfg.get_string("observations", ""));
    const std::size_t horizon = positive_count(cfg, "horizon", 10);
    const PredictiveResult<double> pred = predictive_distribution(model, history, horizon);
    CsvWriter csv(join_path(out_dir, "predict.csv"), "predict",
                  {"t", "kind", "dim", "mean", "var"});
    for (std::size_t t = 0; t < horizon; ++t) {
        const AugmentedBelief<double>& x = pred.states[t];
        for (Eigen::Index i = 0; i < x.state_dim(); ++i) {
            csv << (t + 1) << "x" << static_cast<long long>(i) << x.state_mean(i) << x.state_cov(i, i);
            csv.end_row();
        }
        const GaussianBelief<double>& y = pred.observations[t];
        for (Eigen::Index i = 0; i < y.dim(); ++i) {
            csv << (t + 1) << "y" << static_cast<long long>(i) << y.mean(i) << y.cov(i, i);
            csv.end_row();
        }
    }
    write_metadata(join_path(out_dir, "run.json"), "predict", cfg,
                   {{"history_length", static_cast<double>(history.length())},
                    {"horizon", static_cast<double>(horizon)}});
}

}  // namespace prodssm
