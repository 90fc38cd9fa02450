#ifndef PRODSSM_HARNESS_HPP
#define PRODSSM_HARNESS_HPP

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "prodssm/baselines.hpp"

namespace prodssm {

inline constexpr const char* kToolVersion = "0.1.0";

/// Kink nonlinearity 0.8 + (x + 0.2)(1 - 5 / (1 + e^{-2x})).
double kink_mean(double x);

/// Data-generating kink system: x_{t+1} ~ N(kink(x_t), q), y_t ~ N(x_t, r).
struct KinkSystem {
    double q = 0.05 * 0.05;
    double r = 0.8;
    std::size_t length = 120;
    std::size_t trajectories = 10;
    double x0_mean = 0.0;
    double x0_var = 1.0;

    void validate() const;
    Trajectory simulate(std::uint64_t seed) const;
    std::vector<Trajectory> simulate_many(std::uint64_t seed) const;
};

/// Least-squares fit of a 1 -> hidden -> 1 ReLU network to the kink function
/// on [lo, hi], using fixed knot features relu(±(x - c)). Returns the packed
/// weight vector (f layout of NetworkSpec::mlp(1, {hidden}, 1)).
Vec fit_kink_network(Eigen::Index hidden, double lo = -5.0, double hi = 3.0);

/// ProDSSM whose transition mean is the fitted kink network, with transition
/// variance q, identity emission with variance r, and weight variance
/// `weight_var` on every weight (0 gives deterministic weights).
ProDssmModel<double> kink_model(const KinkSystem& system, Eigen::Index hidden, WeightScheme scheme,
                                double weight_var);

/// Flat key = value configuration; '#' starts a comment.
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<long long> get_int_list(const std::string& key,
                                        const std::vector<long long>& fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

/// CSV file with a versioned schema comment as its first line.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& schema,
              const std::vector<std::string>& columns);

    CsvWriter& operator<<(double v);
    CsvWriter& operator<<(long long v);
    CsvWriter& operator<<(std::size_t v);
    CsvWriter& operator<<(int v) { return *this << static_cast<long long>(v); }
    CsvWriter& operator<<(const std::string& v);
    CsvWriter& operator<<(const char* v) { return *this << std::string(v); }
    void end_row();

private:
    void separator();
    std::ofstream out_;
    std::size_t columns_;
    std::size_t field_ = 0;
};

std::string schema_comment(const std::string& name);
std::string format_double(double v);

/// Writes run metadata (config echo, tool version, seed, summary values).
void write_metadata(const std::string& path, const std::string& command, const Config& cfg,
                    const std::map<std::string, double>& summary);

/// Mean and standard error (sample sd / sqrt(n)).
struct Aggregate {
    double mean = 0.0;
    double se = 0.0;
};
Aggregate aggregate(const std::vector<double>& values);

/// Latent MSE and Gaussian NLL of the true latents under the filter marginals.
struct LatentScore {
    double mse = 0.0;
    double nll = 0.0;
};
LatentScore score_latents(const FilterResult<double>& result, const Trajectory& truth);

// Experiments. Each writes its files under `out_dir` and returns a summary.

struct PropagateRow {
    std::size_t t;
    Eigen::Index dim;
    double det_mean, det_var, mc_mean, mc_var, mc_se_mean, mc_se_var;
};
std::vector<PropagateRow> run_propagate(const Config& cfg, const std::string& out_dir);

struct FilterBenchResult {
    std::vector<std::string> methods;
    std::vector<std::vector<LatentScore>> scores;  ///< [method][trajectory]
    std::vector<Aggregate> mse, nll;               ///< per method
};
FilterBenchResult run_filter_bench(const Config& cfg, const std::string& out_dir);

struct TrainKinkResult {
    double grid_nll = 0.0;
    double grid_mse = 0.0;
    std::size_t iterations = 0;
    double seconds = 0.0;
    std::vector<IterationRecord> history;
    ProDssmModel<double> model;
};
/// Grid NLL/MSE of a transition model against the kink function, with mean and
/// variance over `samples` weight draws plus the learned transition variance.
void evaluate_kink_grid(const ProDssmModel<double>& model, double lo, double hi,
                        std::size_t points, std::size_t samples, std::uint64_t seed,
                        double& nll, double& mse, std::vector<std::array<double, 4>>* rows = nullptr);
TrainKinkResult run_train_kink(const Config& cfg, const std::string& out_dir);

struct RegressResult {
    double objective = 0.0;
    double test_nll = 0.0;
    double test_mse = 0.0;
};
RegressResult run_regress(const Config& cfg, const std::string& out_dir);

struct RuntimeRow {
    std::string method;
    Eigen::Index dim;
    std::size_t samples;
    double wall_ns;
    long long peak_bytes;
};
std::vector<RuntimeRow> run_bench_runtime(const Config& cfg, const std::string& out_dir);

/// Model with D_x = D_y = hidden = dim for runtime measurements.
ProDssmModel<double> runtime_model(Eigen::Index dim, WeightScheme scheme, std::uint64_t seed);
/// Belief for runtime measurements; Global carries a random nonzero Cov[x, w].
AugmentedBelief<double> runtime_belief(const ProDssmModel<double>& model, std::uint64_t seed);
/// Median wall time of one augmented_step + emission_moments, in nanoseconds.
double time_det_prediction(const ProDssmModel<double>& model, const AugmentedBelief<double>& belief,
                           std::size_t repeats);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

void run_simulate(const Config& cfg, const std::string& out_dir);
void run_predict(const Config& cfg, const std::string& out_dir);

/// Observations from a CSV with one row per time step (comment lines skipped).
Trajectory read_observations(const std::string& path);

}  // namespace prodssm

#endif  // PRODSSM_HARNESS_HPP
