#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kinkcert/montecarlo.hpp"
#include "kinkcert/trial.hpp"

namespace kinkcert {

struct ExperimentRow {
    std::string variant;
    int m = 0;
    long n = 0;
    long trials = 0;
    long crossings = 0;
    double p_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    long max_steps_hits = 0;
};

enum class ComparisonVariant { Gd, GdEs, SgdEs, SgdEsSmallH };

inline const char* variant_name(ComparisonVariant v) {
    switch (v) {
        case ComparisonVariant::Gd: return "gd";
        case ComparisonVariant::GdEs: return "gd_es";
        case ComparisonVariant::SgdEs: return "sgd_es";
        case ComparisonVariant::SgdEsSmallH: return "sgd_es_small_h";
    }
    return "unknown";
}

inline TrialConfig comparison_config(ComparisonVariant variant, int m, std::uint64_t seed,
                                     double shift = 0.0) {
    TrialConfig cfg;
    cfg.m = m;
    cfg.n = static_cast<long>(m) * m;
    cfg.seed = seed;
    cfg.dist = example_distribution(shift);
    switch (variant) {
        case ComparisonVariant::Gd:
            cfg.optimizer = Optimizer::Gd;
            break;
        case ComparisonVariant::GdEs:
            cfg.optimizer = Optimizer::Gd;
            cfg.early_stop = true;
            break;
        case ComparisonVariant::SgdEs:
            cfg.optimizer = Optimizer::Sgd;
            cfg.early_stop = true;
            break;
        case ComparisonVariant::SgdEsSmallH:
            cfg.optimizer = Optimizer::Sgd;
            cfg.early_stop = true;
            cfg.h_mode = HMode::scaled(0.01);
            break;
    }
    return cfg;
}

inline ExperimentRow row_from_report(const std::string& variant, int m,
                                     const MonteCarloReport& rep) {
    ExperimentRow row;
    row.variant = variant;
    row.m = m;
    row.n = rep.config.resolved_n();
    row.trials = rep.trials;
    row.crossings = rep.crossings;
    row.p_hat = rep.p_hat;
    row.ci_lo = rep.ci_lo;
    row.ci_hi = rep.ci_hi;
    row.max_steps_hits = rep.counts.max_steps;
    return row;
}

// Crossing probability versus width for one optimization/termination variant.
inline std::vector<ExperimentRow> experiment_comparison(const std::vector<int>& m_list,
                                                        ComparisonVariant variant, long trials,
                                                        std::uint64_t seed, int threads = 0) {
    std::vector<ExperimentRow> rows;
    for (int m : m_list) {
        TrialConfig cfg = comparison_config(variant, m, split_seed(seed, m));
        rows.push_back(row_from_report(variant_name(variant), m, monte_carlo(cfg, trials, threads)));
    }
    return rows;
}

// Crossing probability for the distribution shifted upward by delta, plain GD.
inline std::vector<ExperimentRow> experiment_shift(const std::vector<int>& m_list, double delta,
                                                   long trials, std::uint64_t seed,
                                                   int threads = 0) {
    std::vector<ExperimentRow> rows;
    for (int m : m_list) {
        TrialConfig cfg = comparison_config(ComparisonVariant::Gd, m, split_seed(seed, m), delta);
        std::string name = "gd_delta=" + detail::format_double(delta);
        rows.push_back(row_from_report(name, m, monte_carlo(cfg, trials, threads)));
    }
    return rows;
}

inline void write_rows_csv(const std::vector<ExperimentRow>& rows, std::ostream& os) {
    os << "variant,m,n,trials,crossings,p_hat,ci_lo,ci_hi,max_steps_hits\n";
    for (const auto& r : rows) {
        os << r.variant << ',' << r.m << ',' << r.n << ',' << r.trials << ',' << r.crossings
           << ',' << detail::format_double(r.p_hat) << ',' << detail::format_double(r.ci_lo)
           << ',' << detail::format_double(r.ci_hi) << ',' << r.max_steps_hits << '\n';
    }
}

struct TrajectoryPoint {
    long k = 0;
    double loss_gap = 0.0;
    Vec4 gap{}; // (p+ , p-, q+, q-) minus the per-side regression optima
    std::vector<double> kinks;
};

struct TrajectoryResult {
    std::vector<TrajectoryPoint> points;
    double loss_opt = 0.0; // two-sided affine regression optimum
    std::optional<long> certified_step;
    std::optional<long> crossed_step;
    double resolved_h = 0.0;
};

// Best achievable loss by fitting each side with its own affine function.
inline double two_sided_affine_optimum(const Dataset& data, const RegressionSummary& summary) {
    double yy = 0.0;
    for (const auto& p : data.points) yy += p.y * p.y;
    yy /= static_cast<double>(data.size());
    double fitted = 0.0;
    for (int sign : {+1, -1}) {
        const SideSummary& s = summary.side(sign);
        if (s.opt) fitted += dot(s.moment_y, *s.opt);
    }
    return 0.5 * (yy - fitted);
}

// Single-run trajectory on a fixed dataset, logged at k = floor(1.1^l) - 1.
// The run continues past crossings/certification so the whole path is visible.
inline TrajectoryResult trajectory_run(const Dataset& data, const TrialConfig& cfg) {
    cfg.validate();
    InitSpec init{cfg.dist_a, cfg.dist_w, split_seed(cfg.seed, 3)};
    Hyperparams params{cfg.alpha, cfg.m, 0.0};
    Weights w0 = init_weights(init, params);
    RegressionSummary summary = regression_summary(data);

    std::optional<ReferenceOperator> op;
    try {
        op = reference_operator(w0, summary, cfg.alpha);
    } catch (const SingularError&) {
        if (cfg.h_mode.kind == HMode::Kind::Auto) throw;
    }
    switch (cfg.h_mode.kind) {
        case HMode::Kind::Auto: params.h = auto_step_size(*op); break;
        case HMode::Kind::Fixed: params.h = cfg.h_mode.value; break;
        case HMode::Kind::Scaled: params.h = cfg.h_mode.value / cfg.m; break;
    }

    Trainer trainer(params, data, std::move(w0), op);
    TrajectoryResult out;
    out.loss_opt = two_sided_affine_optimum(trainer.data(), summary);
    out.resolved_h = params.h;

    const long max_steps = cfg.max_steps > 0 ? cfg.max_steps : 20000;
    std::vector<long> schedule;
    for (double t = 1.0; ; t *= 1.1) {
        long k = static_cast<long>(std::floor(t)) - 1;
        if (schedule.empty() || k > schedule.back()) schedule.push_back(k);
        if (k >= max_steps) break;
    }

    auto record = [&](long k) {
        TrajectoryPoint pt;
        pt.k = k;
        pt.loss_gap = trainer.training_loss() - out.loss_opt;
        pt.gap = summary.both_invertible() ? trainer.current_gap() : Vec4{};
        pt.kinks.assign(cfg.m, std::numeric_limits<double>::quiet_NaN());
        for (const auto& kk : trainer.kink_report(cfg.x_target).kinks)
            pt.kinks[kk.neuron] = kk.position;
        return pt;
    };

    std::size_t next_log = 0;
    for (long k = 0; k <= max_steps; ++k) {
        if (next_log < schedule.size() && k == schedule[next_log]) {
            out.points.push_back(record(k));
            ++next_log;
        }
        if (!out.certified_step && trainer.can_certify() && k % cfg.cert_period == 0 &&
            trainer.try_certify(cfg.x_target))
            out.certified_step = k;
        if (k == max_steps) break;
        trainer.gd_step_once();
        if (!out.crossed_step && trainer.crossed(cfg.x_target)) out.crossed_step = k + 1;
    }
    return out;
}

inline void write_trajectory_csv(const TrajectoryResult& traj, int m, std::ostream& os) {
    os << "k,loss_gap,p1bar,pm1bar,q1bar,qm1bar";
    for (int i = 0; i < m; ++i) os << ",kink_" << i;
    os << '\n';
    for (const auto& pt : traj.points) {
        os << pt.k << ',' << detail::format_double(pt.loss_gap);
        for (int j = 0; j < 4; ++j) os << ',' << detail::format_double(pt.gap[j]);
        for (double kink : pt.kinks) os << ',' << detail::format_double(kink);
        os << '\n';
    }
}

// Stand-in dataset for trajectory demos: inputs away from zero on both sides,
// a mildly oscillating conditional mean, Gaussian noise. Not from any
// published source; purely illustrative.
inline Dataset stand_in_trajectory_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset out;
    out.points.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        double mag = rng.uniform(1.5, 4.0);
        double x = (rng.uniform01() < 0.5) ? -mag : mag;
        double mean = x < 0.0 ? -1.75 + x / 6.0 + 0.5 * std::sin(3.0 * x)
                              : 1.0 + 0.4 * std::sin(3.0 * x);
        out.points.push_back({x, mean + 0.15 * rng.standard_normal()});
    }
    return out;
}

struct SpectraInfo {
    int m = 0;
    std::uint64_t seed = 0;
    Vec4 eigvals{};
    double inv_lambda_max = 0.0;
    double s_total = 0.0;
    double s_top = 0.0;
};

// Reference-operator spectrum for one (dataset sample, initialization) pair
// drawn exactly as a trial would draw them.
inline SpectraInfo spectra_for_config(const TrialConfig& cfg) {
    cfg.validate();
    Dataset data = sample(cfg.dist, static_cast<std::size_t>(cfg.resolved_n()),
                          split_seed(cfg.seed, 1));
    InitSpec init{cfg.dist_a, cfg.dist_w, split_seed(cfg.seed, 3)};
    Hyperparams params{cfg.alpha, cfg.m, 0.0};
    Weights w0 = init_weights(init, params);
    RegressionSummary summary = regression_summary(data);
    ReferenceOperator op = reference_operator(w0, summary, cfg.alpha);
    SpectraInfo info;
    info.m = cfg.m;
    info.seed = cfg.seed;
    info.eigvals = op.eigvals;
    info.inv_lambda_max = 1.0 / op.lambda_max();
    ReferenceSums sums = reference_sum_bounds(op, auto_step_size(op));
    info.s_total = sums.total;
    info.s_top = sums.top;
    return info;
}

} // namespace kinkcert
