#pragma once

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "kinkcert/trial.hpp"

namespace kinkcert {

struct OutcomeCounts {
    long crossed = 0;
    long certified = 0;
    long early_stopped = 0;
    long max_steps = 0;
    long aborted = 0;

    void add(Outcome o) {
        switch (o) {
            case Outcome::Crossed: ++crossed; break;
            case Outcome::CertifiedNever: ++certified; break;
            case Outcome::EarlyStoppedNoCross: ++early_stopped; break;
            case Outcome::MaxStepsNoCross: ++max_steps; break;
            case Outcome::Aborted: ++aborted; break;
        }
    }
};

// 95% Wilson score interval for a binomial proportion.
inline std::pair<double, double> wilson_interval_95(long successes, long trials) {
    if (trials <= 0) return {0.0, 1.0};
    const double z = 1.959963984540054;
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct MonteCarloReport {
    long trials = 0;
    long crossings = 0;
    double p_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 1.0;
    OutcomeCounts counts;
    TrialConfig config; // echo of the trial configuration
};

// Runs independent trials with per-trial derived seeds. The report is a pure
// function of (cfg, trials); the thread count only affects wall time.
inline MonteCarloReport monte_carlo(const TrialConfig& cfg, long trials, int threads = 0) {
    if (trials < 1) throw ConfigError("need at least one trial");
    cfg.validate();
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    threads = static_cast<int>(std::min<long>(threads, trials));

    std::vector<Outcome> outcomes(trials, Outcome::Aborted);
    std::atomic<long> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&]() {
        for (;;) {
            long i = next.fetch_add(1);
            if (i >= trials) return;
            try {
                TrialConfig c = cfg;
                c.seed = split_seed(cfg.seed, static_cast<std::uint64_t>(i));
                outcomes[i] = run_trial(c).outcome;
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(trials);
                return;
            }
        }
    };

    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    MonteCarloReport report;
    report.trials = trials;
    report.config = cfg;
    for (Outcome o : outcomes) report.counts.add(o);
    report.crossings = report.counts.crossed;
    report.p_hat = static_cast<double>(report.crossings) / static_cast<double>(trials);
    auto ci = wilson_interval_95(report.crossings, trials);
    report.ci_lo = ci.first;
    report.ci_hi = ci.second;
    return report;
}

} // namespace kinkcert
