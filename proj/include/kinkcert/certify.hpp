#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "kinkcert/model.hpp"
#include "kinkcert/reduced.hpp"
#include "kinkcert/smallmat.hpp"

namespace kinkcert {

struct KinkInfo {
    int neuron = 0;
    double position = 0.0; // -b_i / a_i
};

struct KinkReport {
    std::vector<KinkInfo> kinks;
    std::vector<int> zero_slope; // neurons with a_i == 0 (no kink)
    bool crossed = false;
    std::optional<long> first_crossing_step; // filled by the training loop
};

// Kink positions and the crossing flag against the symmetric target interval.
// A kink exactly on the boundary counts as crossed.
inline KinkReport kinks(const Weights& weights, double x_bound) {
    if (!(x_bound > 0.0)) throw DomainError("kink bound must be positive");
    KinkReport rep;
    rep.kinks.reserve(weights.size());
    for (int i = 0; i < weights.size(); ++i) {
        if (weights.a[i] == 0.0) {
            rep.zero_slope.push_back(i);
            continue;
        }
        double pos = -weights.b[i] / weights.a[i];
        rep.kinks.push_back({i, pos});
        if (std::fabs(pos) >= x_bound) rep.crossed = true;
    }
    return rep;
}

// Worst-case drift envelopes for a neuron triple, evaluated at a given total
// residual weight kappa: |theta_k - theta_0| <= kappa * Q|theta_0| +
// 2 kappa^2 e^(2 kappa) ||theta_0||_inf componentwise.
struct ThetaEnvelope {
    double a = 0.0, b = 0.0, w = 0.0;
};

inline ThetaEnvelope theta_envelope(double kappa, double a0_abs, double b0_abs, double w0_abs) {
    double inf0 = std::max({a0_abs, b0_abs, w0_abs});
    double second = 2.0 * kappa * kappa * std::exp(2.0 * kappa) * inf0;
    ThetaEnvelope env;
    env.a = kappa * w0_abs + second;
    env.b = kappa * w0_abs + second;
    env.w = kappa * (a0_abs + b0_abs) + second;
    return env;
}

// Elementwise envelope for a 3x3 Gram matrix:
// kappa * (Q|S0| + |S0|Q) + 8 kappa^2 e^(4 kappa) ||S0||_inf.
inline Mat3 gram_envelope(double kappa, const Mat3& linear_part, double gram0_inf_norm) {
    double second = 8.0 * kappa * kappa * std::exp(4.0 * kappa) * gram0_inf_norm;
    Mat3 env;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) env[r][c] = kappa * linear_part[r][c] + second;
    return env;
}

// Exact elementwise drift envelope: for any product P of factors (I + h Q_l)
// whose step weights h*||u_l||_inf sum to at most kappa, |P - I| <= E(kappa)
// elementwise with E(kappa) = exp(kappa * Q) - I for the update sparsity
// pattern Q = [[0,0,1],[0,0,1],[1,1,0]]. Closed form via Q^3 = 2Q.
inline Mat3 coupling_envelope(double kappa) {
    const double root2 = std::sqrt(2.0);
    double s = std::sinh(root2 * kappa) / root2;
    double c = 0.5 * (std::cosh(root2 * kappa) - 1.0);
    return Mat3{{{c, c, s}, {c, c, s}, {s, s, 2.0 * c}}};
}

// |S_future - S_now| <= E|S| + |S|E + E|S|E elementwise, S the current Gram.
inline Mat3 gram_drift_envelope(const Mat3& gram_now, const Mat3& env) {
    Mat3 g_abs;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) g_abs[r][c] = std::fabs(gram_now[r][c]);
    Mat3 eg = env * g_abs;
    return eg + g_abs * env + eg * env;
}

// Running certificate state for one training run. The envelope inputs are
// frozen at initialization; kappa_u accumulates h * ||u_l||_inf over steps.
struct CertificateAccumulator {
    double kappa_u = 0.0;
    long step = 0;

    // per-neuron initialization magnitudes
    std::vector<double> a0_abs, w0_abs;
    // per-side envelope ingredients (index 0 = positive sign, 1 = negative)
    Mat3 gram_linear[2]{};   // Q|S0| + |S0|Q
    double gram_inf[2]{};    // ||S0||_inf (induced)
    double wa0_abs[2]{};
    double wb0_abs[2]{};

    // reference-system bounds, fixed once the step size is known
    double s_total = std::numeric_limits<double>::infinity();
    double s_top = std::numeric_limits<double>::infinity();

    // diagnostics from the last certification attempt
    double delta_hat = std::numeric_limits<double>::quiet_NaN();
    double kappa_hat = std::numeric_limits<double>::quiet_NaN();
};

inline CertificateAccumulator make_accumulator(const Weights& w0, const ActivationPattern& pat,
                                               const ReferenceSums& sums) {
    CertificateAccumulator acc;
    acc.a0_abs.resize(w0.size());
    acc.w0_abs.resize(w0.size());
    for (int i = 0; i < w0.size(); ++i) {
        acc.a0_abs[i] = std::fabs(w0.a[i]);
        acc.w0_abs[i] = std::fabs(w0.w[i]);
    }
    SecondMoments gram0 = sigma_moments(w0, pat);
    const Mat3 q{{{0, 0, 1}, {0, 0, 1}, {1, 1, 0}}};
    for (int k = 0; k < 2; ++k) {
        const Mat3& g = k == 0 ? gram0.pos : gram0.neg;
        Mat3 g_abs;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) g_abs[r][c] = std::fabs(g[r][c]);
        acc.gram_linear[k] = q * g_abs + g_abs * q;
        acc.gram_inf[k] = inf_norm(g_abs);
        acc.wa0_abs[k] = std::fabs(g[0][2]);
        acc.wb0_abs[k] = std::fabs(g[1][2]);
    }
    acc.s_total = sums.total;
    acc.s_top = sums.top;
    return acc;
}

inline void update_accumulator(CertificateAccumulator& acc, const Vec4& u,
                               const Hyperparams& params) {
    acc.kappa_u += params.h * inf_norm(u);
    ++acc.step;
}

struct CertifyResult {
    bool certified = false;
    double kappa_hat = std::numeric_limits<double>::quiet_NaN();
    double delta_hat = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Upper-rounding safety factor absorbing floating-point error in the
// certificate arithmetic.
constexpr double kCertSafety = 1.0 + 1e-9;

// Bound on ||(A_l - A_bar) M||_inf over all future steps, where A_bar is the
// current system matrix without its discretization part and the future Gram
// drift is controlled by the envelope at tail weight kappa_tail.
inline double anchored_deviation_bound(const SecondMoments& gram_now, double kappa_tail,
                                       double b_inf, double m_inf) {
    Mat3 env = coupling_envelope(kappa_tail);
    double dev_w = 0.0, dev_ab = 0.0, dev_cross = 0.0;
    for (int k = 0; k < 2; ++k) {
        const Mat3& g = k == 0 ? gram_now.pos : gram_now.neg;
        Mat3 drift = gram_drift_envelope(g, env);
        dev_w = std::max(dev_w, drift[2][2]);
        dev_ab = std::max(dev_ab,
                          std::max(drift[0][0] + drift[0][1], drift[0][1] + drift[1][1]));
        // h |r_l| and h |s_l| are each at most the tail weight.
        dev_cross = std::max(dev_cross, kappa_tail * (std::fabs(g[0][2]) + drift[0][2] +
                                                      std::fabs(g[1][2]) + drift[1][2]));
    }
    return b_inf * b_inf * (dev_w + dev_ab + dev_cross) * m_inf * kCertSafety;
}

// Every kink stays strictly inside (-x_confine, x_confine) for all future
// steps when each neuron's future bias stays below its future slope margin.
inline bool kinks_confined(const Weights& w_now, const Mat3& env, double x_confine) {
    for (int i = 0; i < w_now.size(); ++i) {
        double a = std::fabs(w_now.a[i]);
        double b = std::fabs(w_now.b[i]);
        double ww = std::fabs(w_now.w[i]);
        double da = env[0][0] * a + env[0][1] * b + env[0][2] * ww;
        double db = env[1][0] * a + env[1][1] * b + env[1][2] * ww;
        double margin = a - da * kCertSafety;
        if (!(b + db * kCertSafety < margin * x_confine)) return false;
    }
    return true;
}

} // namespace detail

// Sound run-forever certificate, anchored at the current step: the remaining
// run is compared against the frozen current system via the perturbed-series
// bound, the future drift envelopes are restarted from the observed state at
// the tail weight kappa_tail, and certification requires a self-consistent
// kappa_tail whose envelopes confine every kink to (-x_confine, x_confine).
// The fixed point is searched with at most 50 damped iterations; true means
// no kink can ever reach +-x_confine if gradient descent continues forever.
inline CertifyResult certify_forever(CertificateAccumulator& acc, const ReferenceOperator& op,
                                     const Weights& w_now, const SecondMoments& gram_now,
                                     const Vec4& gap_now, double x_confine,
                                     const Hyperparams& params) {
    if (params.h * op.lambda_max() > 1.0 + 1e-12)
        throw DomainError("certificate requires h <= 1/lambda_max");
    if (!(x_confine > 0.0)) throw DomainError("certificate target bound must be positive");

    CertifyResult res;
    const double b_inf = (1.0 + std::fabs(params.alpha)) * detail::kCertSafety;
    const double m_inf = inf_norm(op.moment) * detail::kCertSafety;
    const double gap_inf = inf_norm(gap_now) * detail::kCertSafety;

    if (gap_inf == 0.0) {
        // Exact fixed point: nothing will ever move again.
        res.kappa_hat = acc.kappa_u;
        res.delta_hat = 0.0;
        res.certified = detail::kinks_confined(w_now, coupling_envelope(0.0), x_confine);
        acc.kappa_hat = res.kappa_hat;
        acc.delta_hat = res.delta_hat;
        return res;
    }

    // Geometric sum bound for the frozen comparator, in the infinity norm.
    Mat4 a_bar = assemble_A(gram_now, Vec4{}, 0.0, params.alpha);
    Mat4 sym = op.moment_sqrt * a_bar * op.moment_sqrt;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) {
            double v = 0.5 * (sym[i][j] + sym[j][i]);
            sym[i][j] = sym[j][i] = v;
        }
    EigenSym<4> dyn = eigen_sym(sym);
    double rho = 0.0;
    for (double lam : dyn.values) rho = std::max(rho, std::fabs(1.0 - params.h * lam));
    if (!(rho < 1.0)) return res;
    EigenSym<4> m_eig = eigen_sym(op.moment);
    if (!(m_eig.values[3] > 0.0)) return res;
    double cond_sqrt = std::sqrt(m_eig.values[0] / m_eig.values[3]);
    double sum_bound =
        2.0 * cond_sqrt * params.h / (1.0 - rho) * detail::kCertSafety; // h*sum ||K^j||_inf

    double kappa_tail = 0.0;
    bool consistent = false;
    double delta_hat = std::numeric_limits<double>::quiet_NaN();
    for (int iter = 0; iter < 50; ++iter) {
        delta_hat =
            sum_bound * detail::anchored_deviation_bound(gram_now, kappa_tail, b_inf, m_inf);
        if (!(delta_hat < 1.0)) break;
        double required =
            b_inf * m_inf / (1.0 - delta_hat) * sum_bound * gap_inf * detail::kCertSafety;
        if (required <= kappa_tail) {
            consistent = true;
            break;
        }
        // Overshoot the proposal a little so the monotone iteration can land
        // strictly above the fixed point; a larger tail bound is conservative.
        kappa_tail = required * (1.0 + 1e-6);
    }
    res.kappa_hat = acc.kappa_u + kappa_tail;
    res.delta_hat = delta_hat;
    acc.kappa_hat = res.kappa_hat;
    acc.delta_hat = delta_hat;
    if (!consistent) return res;

    res.certified =
        detail::kinks_confined(w_now, coupling_envelope(kappa_tail), x_confine);
    return res;
}

} // namespace kinkcert
