#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kinkcert/certify.hpp"
#include "kinkcert/dataset.hpp"
#include "kinkcert/model.hpp"
#include "kinkcert/reduced.hpp"

namespace kinkcert {

enum class Optimizer { Gd, Sgd };

struct HMode {
    enum class Kind { Auto, Fixed, Scaled };
    Kind kind = Kind::Auto;
    double value = 0.0; // Fixed: the step size itself; Scaled: c in h = c/m

    static HMode automatic() { return {Kind::Auto, 0.0}; }
    static HMode fixed(double h) { return {Kind::Fixed, h}; }
    static HMode scaled(double c) { return {Kind::Scaled, c}; }
};

struct EarlyStopParams {
    int patience = 10;
    double min_delta = 1e-8;
    long check_period = 1000;   // epochs for GD, batches for SGD
    long validation_size = 0;   // 0 -> same as the training size
};

// Keeps a reference loss; a check counts as improvement only when the
// validation loss undercuts it by more than min_delta.
class EarlyStopMonitor {
  public:
    EarlyStopMonitor(double initial_reference, int patience, double min_delta)
        : reference_(initial_reference), patience_(patience), min_delta_(min_delta) {}

    // Returns true when training should stop.
    bool check(double validation_loss) {
        if (validation_loss < reference_ - min_delta_) {
            reference_ = validation_loss;
            strikes_ = 0;
        } else {
            ++strikes_;
        }
        return strikes_ >= patience_;
    }

    double reference() const { return reference_; }
    int strikes() const { return strikes_; }

  private:
    double reference_;
    int strikes_ = 0;
    int patience_;
    double min_delta_;
};

struct TrialConfig {
    int m = 16;
    long n = 0; // 0 -> m^2
    Optimizer optimizer = Optimizer::Gd;
    HMode h_mode = HMode::automatic();
    double alpha = 0.0;
    DistSpec dist_a{};
    DistSpec dist_w{};
    FiniteDistribution dist = example_distribution();
    bool early_stop = false;
    EarlyStopParams es{};
    long max_steps = 0; // 0 -> 200000 GD steps / 1000000 SGD batches
    double x_target = 1.0;
    std::uint64_t seed = 0;
    int batch_size = 16;
    long cert_period = 1000;
    bool use_certificate = true; // GD only; SGD never certifies

    long resolved_n() const { return n > 0 ? n : static_cast<long>(m) * m; }
    long resolved_max_steps() const {
        if (max_steps > 0) return max_steps;
        return optimizer == Optimizer::Gd ? 200000 : 1000000;
    }

    void validate() const {
        if (m < 1) throw ConfigError("m must be at least 1");
        if (resolved_n() < 1) throw ConfigError("n must be at least 1");
        if (alpha == 1.0 || alpha == -1.0) throw ConfigError("alpha must not be +-1");
        dist_a.validate();
        dist_w.validate();
        dist.validate();
        if (!(x_target > 0.0)) throw ConfigError("x_target must be positive");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
        if (cert_period < 1) throw ConfigError("certificate period must be at least 1");
        if (es.patience < 1) throw ConfigError("patience must be at least 1");
        if (es.check_period < 1) throw ConfigError("check period must be at least 1");
        if (h_mode.kind != HMode::Kind::Auto && !(h_mode.value > 0.0))
            throw ConfigError("step size must resolve to a positive value");
    }
};

enum class Outcome {
    Crossed,
    CertifiedNever,
    EarlyStoppedNoCross,
    MaxStepsNoCross,
    Aborted,
};

inline const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::Crossed: return "crossed";
        case Outcome::CertifiedNever: return "certified_never";
        case Outcome::EarlyStoppedNoCross: return "early_stopped_no_cross";
        case Outcome::MaxStepsNoCross: return "max_steps_no_cross";
        case Outcome::Aborted: return "aborted";
    }
    return "unknown";
}

struct TrialResult {
    Outcome outcome = Outcome::Aborted;
    long steps_run = 0;
    std::optional<long> first_crossing_step;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double kappa_u_final = 0.0;
    double wall_time_s = 0.0; // measurement only, not part of the deterministic contract
    std::string error;

    bool same_outcome(const TrialResult& other) const {
        bool loss_equal = final_loss == other.final_loss ||
                          (std::isnan(final_loss) && std::isnan(other.final_loss));
        return outcome == other.outcome && steps_run == other.steps_run &&
               first_crossing_step == other.first_crossing_step && loss_equal &&
               kappa_u_final == other.kappa_u_final;
    }
};

// Drives true gradient descent on one network/dataset pair. While the weights
// provably keep every neuron's data-side signs at their initial pattern, the
// true gradient collapses to the per-side affine form and one step costs
// O(m); otherwise the step falls back to the direct O(m*n) gradient. Both
// paths compute the exact analytic gradient of the true loss.
class Trainer {
  public:
    Trainer(const Hyperparams& params, Dataset data, Weights w0,
            std::optional<ReferenceOperator> op = std::nullopt)
        : params_(params), data_(std::move(data)), w_(std::move(w0)) {
        params_.validate();
        w_.validate();
        data_.validate();
        if (data_.empty()) throw DomainError("training needs a nonempty dataset");
        for (const auto& p : data_.points)
            if (p.x == 0.0) throw DomainError("training data must keep away from x = 0");
        if (w_.size() != params_.m) throw ConfigError("width mismatch between weights and params");
        summary_ = regression_summary(data_);
        x_data_ = summary_.x_min;
        pat_ = activation_pattern(w_);
        cur_pat_ = pat_;
        w0_ = w_;
        if (op) {
            op_ = std::move(op);
            try {
                sums_ = reference_sum_bounds(*op_, params_.h);
                acc_ = make_accumulator(w_, pat_, *sums_);
                cert_allowed_ = pat_.zero_count == 0;
            } catch (const DomainError&) {
                op_.reset(); // h too large for the certificate machinery
            } catch (const SingularError&) {
                op_.reset();
            }
        }
        if (!acc_) {
            acc_ = make_accumulator(w_, pat_, ReferenceSums{});
            cert_allowed_ = false;
        }
    }

    const Weights& weights() const { return w_; }
    const Weights& initial_weights() const { return w0_; }
    const Dataset& data() const { return data_; }
    const Hyperparams& params() const { return params_; }
    const RegressionSummary& summary() const { return summary_; }
    const ActivationPattern& pattern() const { return pat_; }
    const CertificateAccumulator& accumulator() const { return *acc_; }
    const std::optional<ReferenceOperator>& reference() const { return op_; }
    const std::optional<ReferenceSums>& reference_sums() const { return sums_; }
    long steps() const { return steps_; }
    double kappa_u() const { return acc_->kappa_u; }
    bool certificate_available() const { return cert_allowed_; }

    // The fast-path validity condition at the current weights: every neuron
    // matches the tracked sign pattern and keeps its kink strictly inside the
    // data gap, which makes the per-side affine gradient exact.
    bool pattern_valid() const {
        if (cur_pat_.zero_count > 0 || !(x_data_ > 0.0)) return false;
        for (int i = 0; i < w_.size(); ++i) {
            double signed_a = cur_pat_.tau[i] > 0 ? w_.a[i] : -w_.a[i];
            if (!(signed_a > 0.0)) return false;
            if (!(std::fabs(w_.b[i]) < signed_a * x_data_)) return false;
        }
        return true;
    }

    void gd_step_once() {
        if (ensure_pattern()) {
            fast_step(summary_.pos.moment, summary_.pos.moment_y, summary_.neg.moment,
                      summary_.neg.moment_y);
        } else {
            slow_step(data_);
        }
        ++steps_;
    }

    void sgd_step_once(const Dataset& batch) {
        if (batch.empty()) throw DomainError("sgd step needs a nonempty batch");
        cert_allowed_ = false; // no sound certificate under stochastic gradients
        if (ensure_pattern()) {
            Mat2 m_pos{}, m_neg{};
            Vec2 u_pos{}, u_neg{};
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (const auto& p : batch.points) {
                Mat2& mm = p.x > 0.0 ? m_pos : m_neg;
                Vec2& uu = p.x > 0.0 ? u_pos : u_neg;
                mm[0][0] += inv * p.x * p.x;
                mm[0][1] += inv * p.x;
                mm[1][1] += inv;
                uu[0] += inv * p.x * p.y;
                uu[1] += inv * p.y;
            }
            m_pos[1][0] = m_pos[0][1];
            m_neg[1][0] = m_neg[0][1];
            fast_step(m_pos, u_pos, m_neg, u_neg);
        } else {
            slow_step(batch);
        }
        ++steps_;
    }

    bool crossed(double x_target) const {
        for (int i = 0; i < w_.size(); ++i) {
            if (w_.a[i] == 0.0) continue;
            if (std::fabs(w_.b[i]) >= x_target * std::fabs(w_.a[i])) return true;
        }
        return false;
    }

    KinkReport kink_report(double x_target) const { return kinks(w_, x_target); }

    bool can_certify() const {
        return cert_allowed_ && op_.has_value() && sums_.has_value() &&
               summary_.both_invertible();
    }

    // Gap of the outer affine pieces under the tracked pattern (equal to the
    // initial pattern for as long as the certificate machinery is alive).
    Vec4 current_gap() const {
        return u_vectors(reduced_state(w_, cur_pat_), summary_, params_.alpha).gap;
    }

    // Attempts the run-forever certificate at the current step. Confinement
    // is proven for the tighter of the crossing target and the data gap, so
    // the fixed-pattern dynamics provably persists.
    bool try_certify(double x_target) {
        if (!can_certify() || !pattern_valid()) return false;
        double x_confine = std::min(x_target, x_data_);
        CertifyResult res = certify_forever(*acc_, *op_, w_, sigma_moments(w_, cur_pat_),
                                            current_gap(), x_confine, params_);
        return res.certified;
    }

    double training_loss() const { return empirical_loss(w_, params_, data_); }

  private:
    // Keeps the tracked sign pattern aligned with the weights: when a slope
    // changed sign, the pattern is rebuilt from the current signs (the fast
    // path stays exact under the rebuilt pattern) and the certificate, which
    // is tied to the initial pattern, is permanently disabled for this run.
    bool ensure_pattern() {
        if (pattern_valid()) return true;
        cert_allowed_ = false;
        ActivationPattern fresh = activation_pattern(w_);
        if (fresh.zero_count > 0) return false;
        cur_pat_ = std::move(fresh);
        ++pattern_rebuilds_;
        return pattern_valid();
    }

    void fast_step(const Mat2& m_pos, const Vec2& u0_pos, const Mat2& m_neg, const Vec2& u0_neg) {
        double wa_pos = 0.0, wb_pos = 0.0, wa_neg = 0.0, wb_neg = 0.0;
        for (int i : cur_pat_.pos) {
            wa_pos += w_.w[i] * w_.a[i];
            wb_pos += w_.w[i] * w_.b[i];
        }
        for (int i : cur_pat_.neg) {
            wa_neg += w_.w[i] * w_.a[i];
            wb_neg += w_.w[i] * w_.b[i];
        }
        const double alpha = params_.alpha;
        double p_pos = wa_pos + alpha * wa_neg;
        double p_neg = wa_neg + alpha * wa_pos;
        double q_pos = w_.c + wb_pos + alpha * wb_neg;
        double q_neg = w_.c + wb_neg + alpha * wb_pos;

        double rhat_pos = u0_pos[0] - (m_pos[0][0] * p_pos + m_pos[0][1] * q_pos);
        double shat_pos = u0_pos[1] - (m_pos[1][0] * p_pos + m_pos[1][1] * q_pos);
        double rhat_neg = u0_neg[0] - (m_neg[0][0] * p_neg + m_neg[0][1] * q_neg);
        double shat_neg = u0_neg[1] - (m_neg[1][0] * p_neg + m_neg[1][1] * q_neg);

        Vec4 u{rhat_pos + alpha * rhat_neg, rhat_neg + alpha * rhat_pos,
               shat_pos + alpha * shat_neg, shat_neg + alpha * shat_pos};
        const double h = params_.h;
        for (int k = 0; k < 2; ++k) {
            double r = u[k];
            double s = u[2 + k];
            for (int i : (k == 0 ? cur_pat_.pos : cur_pat_.neg)) {
                double a_old = w_.a[i];
                double b_old = w_.b[i];
                w_.a[i] += h * r * w_.w[i];
                w_.b[i] += h * s * w_.w[i];
                w_.w[i] += h * (r * a_old + s * b_old);
            }
        }
        w_.c += h * (shat_pos + shat_neg);
        update_accumulator(*acc_, u, params_);
    }

    void slow_step(const Dataset& batch) {
        Gradient g = gradient(w_, params_, batch);
        // Diagnostic only here; outside the tracked pattern the residual
        // vector no longer drives the certificate.
        Vec4 uhat = uhat_from_residuals(w_, params_, batch, cur_pat_);
        Vec4 u{uhat[0] + params_.alpha * uhat[1], uhat[1] + params_.alpha * uhat[0],
               uhat[2] + params_.alpha * uhat[3], uhat[3] + params_.alpha * uhat[2]};
        const double h = params_.h;
        for (int i = 0; i < w_.size(); ++i) {
            w_.a[i] -= h * g.a[i];
            w_.b[i] -= h * g.b[i];
            w_.w[i] -= h * g.w[i];
        }
        w_.c -= h * g.c;
        update_accumulator(*acc_, u, params_);
    }

    Hyperparams params_;
    Dataset data_;
    Weights w_;
    Weights w0_;
    RegressionSummary summary_;
    ActivationPattern pat_;     // pattern frozen at initialization
    ActivationPattern cur_pat_; // pattern tracking the current slope signs
    double x_data_ = 0.0;
    long steps_ = 0;
    long pattern_rebuilds_ = 0;
    bool cert_allowed_ = false;
    std::optional<ReferenceOperator> op_;
    std::optional<ReferenceSums> sums_;
    std::optional<CertificateAccumulator> acc_;
};

struct TrialRun {
    TrialResult result;
    std::optional<Trainer> trainer;
    double resolved_h = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
}

} // namespace detail

// Runs one full trial: sample data, initialize, resolve the step size, train
// until crossing / certification / early stop / step cap. Fully deterministic
// given the config (wall time aside). Seed usage: stream 1 samples the
// training set, 2 the validation set, 3 the weights, 4 the batch shuffling.
inline TrialRun run_trial_full(const TrialConfig& cfg) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    TrialRun run;
    TrialResult& result = run.result;

    const long n = cfg.resolved_n();
    Dataset data = sample(cfg.dist, static_cast<std::size_t>(n), split_seed(cfg.seed, 1));
    InitSpec init{cfg.dist_a, cfg.dist_w, split_seed(cfg.seed, 3)};
    Hyperparams params{cfg.alpha, cfg.m, 0.0};
    Weights w0 = init_weights(init, params);
    RegressionSummary summary = regression_summary(data);

    const bool want_cert = cfg.optimizer == Optimizer::Gd && cfg.use_certificate;
    std::optional<ReferenceOperator> op;
    if (cfg.h_mode.kind == HMode::Kind::Auto || want_cert) {
        try {
            op = reference_operator(w0, summary, cfg.alpha);
        } catch (const SingularError& e) {
            if (cfg.h_mode.kind == HMode::Kind::Auto) {
                result.outcome = Outcome::Aborted;
                result.error = std::string("auto step size failed: ") + e.what();
                result.wall_time_s = std::chrono::duration<double>(
                                         std::chrono::steady_clock::now() - t0)
                                         .count();
                return run;
            }
        }
    }
    switch (cfg.h_mode.kind) {
        case HMode::Kind::Auto: params.h = auto_step_size(*op); break;
        case HMode::Kind::Fixed: params.h = cfg.h_mode.value; break;
        case HMode::Kind::Scaled: params.h = cfg.h_mode.value / cfg.m; break;
    }
    run.resolved_h = params.h;

    run.trainer.emplace(params, std::move(data), std::move(w0),
                        want_cert ? op : std::nullopt);
    Trainer& trainer = *run.trainer;

    std::optional<EarlyStopMonitor> monitor;
    Dataset validation;
    if (cfg.early_stop) {
        long vn = cfg.es.validation_size > 0 ? cfg.es.validation_size : n;
        validation = sample(cfg.dist, static_cast<std::size_t>(vn), split_seed(cfg.seed, 2));
        monitor.emplace(empirical_loss(trainer.weights(), params, validation), cfg.es.patience,
                        cfg.es.min_delta);
    }

    const long max_steps = cfg.resolved_max_steps();
    result.outcome = Outcome::MaxStepsNoCross;
    result.steps_run = max_steps;

    if (cfg.optimizer == Optimizer::Gd) {
        for (long k = 0; k < max_steps; ++k) {
            if (want_cert && k % cfg.cert_period == 0 && trainer.try_certify(cfg.x_target)) {
                result.outcome = Outcome::CertifiedNever;
                result.steps_run = k;
                break;
            }
            trainer.gd_step_once();
            if (trainer.crossed(cfg.x_target)) {
                result.outcome = Outcome::Crossed;
                result.steps_run = k + 1;
                result.first_crossing_step = k + 1;
                break;
            }
            if (monitor && (k + 1) % cfg.es.check_period == 0 &&
                monitor->check(empirical_loss(trainer.weights(), params, validation))) {
                result.outcome = Outcome::EarlyStoppedNoCross;
                result.steps_run = k + 1;
                break;
            }
        }
    } else {
        Rng shuffle_rng(split_seed(cfg.seed, 4));
        std::vector<std::size_t> order(trainer.data().size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Dataset batch;
        long batches = 0;
        bool done = false;
        while (!done && batches < max_steps) {
            detail::shuffle_indices(order, shuffle_rng);
            for (std::size_t start = 0; start < order.size() && batches < max_steps;
                 start += cfg.batch_size) {
                std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                batch.points.clear();
                for (std::size_t t = start; t < stop; ++t)
                    batch.points.push_back(trainer.data().points[order[t]]);
                trainer.sgd_step_once(batch);
                ++batches;
                if (trainer.crossed(cfg.x_target)) {
                    result.outcome = Outcome::Crossed;
                    result.steps_run = batches;
                    result.first_crossing_step = batches;
                    done = true;
                    break;
                }
                if (monitor && batches % cfg.es.check_period == 0 &&
                    monitor->check(empirical_loss(trainer.weights(), params, validation))) {
                    result.outcome = Outcome::EarlyStoppedNoCross;
                    result.steps_run = batches;
                    done = true;
                    break;
                }
            }
        }
        if (!done) result.steps_run = batches;
    }

    result.final_loss = trainer.training_loss();
    result.kappa_u_final = trainer.kappa_u();
    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

inline TrialResult run_trial(const TrialConfig& cfg) { return run_trial_full(cfg).result; }

} // namespace kinkcert
