#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "kinkcert/dataset.hpp"
#include "kinkcert/errors.hpp"
#include "kinkcert/model.hpp"
#include "kinkcert/smallmat.hpp"

namespace kinkcert {

// Neuron signs frozen at initialization. Neurons with a_{i,0} == 0 (an event
// of probability zero under the admissible initializations) belong to neither
// index set; they are excluded from the reduced quantities and counted here.
struct ActivationPattern {
    std::vector<int> tau;      // sgn(a_{i,0})
    std::vector<int> pos, neg; // index sets for tau == +1 / -1
    int zero_count = 0;

    const std::vector<int>& side(int sign) const { return sign > 0 ? pos : neg; }
};

inline ActivationPattern activation_pattern(const Weights& w0) {
    ActivationPattern pat;
    pat.tau.resize(w0.size());
    for (int i = 0; i < w0.size(); ++i) {
        int t = w0.a[i] > 0.0 ? 1 : (w0.a[i] < 0.0 ? -1 : 0);
        pat.tau[i] = t;
        if (t > 0) pat.pos.push_back(i);
        else if (t < 0) pat.neg.push_back(i);
        else ++pat.zero_count;
    }
    return pat;
}

// Per-sign 3x3 Gram matrices of the neuron triples (a_i, b_i, w_i).
// Index order inside each matrix: 0 = a, 1 = b, 2 = w.
struct SecondMoments {
    Mat3 pos{}, neg{};

    const Mat3& side(int sign) const { return sign > 0 ? pos : neg; }
    Mat3& side(int sign) { return sign > 0 ? pos : neg; }
};

inline SecondMoments sigma_moments(const Weights& weights, const ActivationPattern& pat) {
    SecondMoments out;
    for (int sign : {+1, -1}) {
        Mat3& g = out.side(sign);
        for (int i : pat.side(sign)) {
            const double t[3] = {weights.a[i], weights.b[i], weights.w[i]};
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) g[r][c] += t[r] * t[c];
        }
    }
    return out;
}

// State of the closed low-dimensional training dynamics.
struct ReducedState {
    SecondMoments gram;
    double bias = 0.0;
};

inline ReducedState reduced_state(const Weights& weights, const ActivationPattern& pat) {
    return ReducedState{sigma_moments(weights, pat), weights.c};
}

// Slope/intercept of the network's two outer affine pieces. With the pattern
// fixed, f(x) = p_sign(x) * x + q_sign(x) beyond the innermost kinks.
struct AffinePieces {
    double p_pos = 0.0, p_neg = 0.0;
    double q_pos = 0.0, q_neg = 0.0;

    double p(int sign) const { return sign > 0 ? p_pos : p_neg; }
    double q(int sign) const { return sign > 0 ? q_pos : q_neg; }
};

inline AffinePieces outer_pieces(const ReducedState& state, double alpha) {
    const Mat3& gp = state.gram.pos;
    const Mat3& gn = state.gram.neg;
    AffinePieces out;
    out.p_pos = gp[0][2] + alpha * gn[0][2];
    out.p_neg = gn[0][2] + alpha * gp[0][2];
    out.q_pos = state.bias + gp[1][2] + alpha * gn[1][2];
    out.q_neg = state.bias + gn[1][2] + alpha * gp[1][2];
    return out;
}

inline AffinePieces outer_pieces(const Weights& weights, const ActivationPattern& pat,
                                 double alpha) {
    double wa_pos = 0.0, wa_neg = 0.0, wb_pos = 0.0, wb_neg = 0.0;
    for (int i : pat.pos) {
        wa_pos += weights.w[i] * weights.a[i];
        wb_pos += weights.w[i] * weights.b[i];
    }
    for (int i : pat.neg) {
        wa_neg += weights.w[i] * weights.a[i];
        wb_neg += weights.w[i] * weights.b[i];
    }
    AffinePieces out;
    out.p_pos = wa_pos + alpha * wa_neg;
    out.p_neg = wa_neg + alpha * wa_pos;
    out.q_pos = weights.c + wb_pos + alpha * wb_neg;
    out.q_neg = weights.c + wb_neg + alpha * wb_pos;
    return out;
}

// Loss with the activation slopes frozen to the initial pattern.
inline double fixed_pattern_loss(const Weights& weights, const Hyperparams& params,
                                 const Dataset& data, const ActivationPattern& pat) {
    if (data.empty()) throw DomainError("loss needs a nonempty dataset");
    AffinePieces pieces = outer_pieces(weights, pat, params.alpha);
    double sum = 0.0;
    for (const auto& p : data.points) {
        int sign = p.x > 0.0 ? 1 : -1; // sgn(0) treated as -1; x == 0 is rejected upstream
        double r = p.y - (pieces.p(sign) * p.x + pieces.q(sign));
        sum += r * r;
    }
    return sum / (2.0 * static_cast<double>(data.size()));
}

// Negative per-side residual moments: uhat_sigma = -(1/n) sum over the side
// of (f_pattern(x_j) - y_j) * (x_j, 1). Computed from the data directly; the
// closed route below recovers the same vector as -M_sigma * gap_sigma.
struct ResidualVectors {
    Vec4 uhat{}; // (rhat_+, rhat_-, shat_+, shat_-)
    Vec4 u{};    // (r_+, r_-, s_+, s_-) = mixing applied to uhat
    Vec4 gap{};  // (p - p_opt, q - q_opt), ordering (p_+, p_-, q_+, q_-)
};

inline Vec4 uhat_from_residuals(const Weights& weights, const Hyperparams& params,
                                const Dataset& data, const ActivationPattern& pat) {
    AffinePieces pieces = outer_pieces(weights, pat, params.alpha);
    const double inv_n = 1.0 / static_cast<double>(data.size());
    Vec4 uhat{};
    for (const auto& p : data.points) {
        if (p.x == 0.0) continue;
        int sign = p.x > 0.0 ? 1 : -1;
        double res = pieces.p(sign) * p.x + pieces.q(sign) - p.y;
        int k = sign > 0 ? 0 : 1;
        uhat[k] -= inv_n * res * p.x;
        uhat[2 + k] -= inv_n * res;
    }
    return uhat;
}

inline ResidualVectors u_vectors(const ReducedState& state, const RegressionSummary& summary,
                                 double alpha) {
    if (!summary.both_invertible())
        throw SingularError("reduced dynamics need both side moment matrices invertible");
    AffinePieces pieces = outer_pieces(state, alpha);
    ResidualVectors out;
    out.gap[0] = pieces.p_pos - (*summary.pos.opt)[0];
    out.gap[1] = pieces.p_neg - (*summary.neg.opt)[0];
    out.gap[2] = pieces.q_pos - (*summary.pos.opt)[1];
    out.gap[3] = pieces.q_neg - (*summary.neg.opt)[1];
    for (int k = 0; k < 2; ++k) {
        const Mat2& m = (k == 0 ? summary.pos : summary.neg).moment;
        out.uhat[k] = -(m[0][0] * out.gap[k] + m[0][1] * out.gap[2 + k]);
        out.uhat[2 + k] = -(m[1][0] * out.gap[k] + m[1][1] * out.gap[2 + k]);
    }
    out.u[0] = out.uhat[0] + alpha * out.uhat[1];
    out.u[1] = out.uhat[1] + alpha * out.uhat[0];
    out.u[2] = out.uhat[2] + alpha * out.uhat[3];
    out.u[3] = out.uhat[3] + alpha * out.uhat[2];
    return out;
}

// W is inside the sign-stability region around W0 for the given data bound:
// every |b_i| < (|a_{i,0}| - |a_{i,0} - a_i|) * x_bound. Membership implies
// that true and fixed-pattern gradients coincide.
inline bool in_region(const Weights& weights, const Weights& w0, double x_bound) {
    if (!(x_bound > 0.0)) throw DomainError("region bound must be positive");
    for (int i = 0; i < weights.size(); ++i) {
        double margin = std::fabs(w0.a[i]) - std::fabs(w0.a[i] - weights.a[i]);
        if (!(std::fabs(weights.b[i]) < margin * x_bound)) return false;
    }
    return true;
}

// Gradient of the fixed-pattern loss, for comparison against the true one.
inline Gradient fixed_pattern_gradient(const Weights& weights, const Hyperparams& params,
                                       const Dataset& data, const ActivationPattern& pat) {
    Vec4 uhat = uhat_from_residuals(weights, params, data, pat);
    double r_pos = uhat[0] + params.alpha * uhat[1];
    double r_neg = uhat[1] + params.alpha * uhat[0];
    double s_pos = uhat[2] + params.alpha * uhat[3];
    double s_neg = uhat[3] + params.alpha * uhat[2];
    Gradient g;
    g.a.assign(weights.size(), 0.0);
    g.b.assign(weights.size(), 0.0);
    g.w.assign(weights.size(), 0.0);
    g.c = -(uhat[2] + uhat[3]);
    for (int sign : {+1, -1}) {
        double r = sign > 0 ? r_pos : r_neg;
        double s = sign > 0 ? s_pos : s_neg;
        for (int i : pat.side(sign)) {
            g.a[i] = -r * weights.w[i];
            g.b[i] = -s * weights.w[i];
            g.w[i] = -(r * weights.a[i] + s * weights.b[i]);
        }
    }
    return g;
}

// The two-sided 4x4 moment matrix in the (p_+, p_-, q_+, q_-) ordering.
inline Mat4 moment4(const RegressionSummary& summary) {
    Mat4 m{};
    for (int k = 0; k < 2; ++k) {
        const Mat2& s = (k == 0 ? summary.pos : summary.neg).moment;
        m[k][k] = s[0][0];
        m[k][2 + k] = s[0][1];
        m[2 + k][k] = s[1][0];
        m[2 + k][2 + k] = s[1][1];
    }
    return m;
}

inline Mat4 mixing_matrix(double alpha) {
    Mat4 b{};
    b[0][0] = b[1][1] = b[2][2] = b[3][3] = 1.0;
    b[0][1] = b[1][0] = b[2][3] = b[3][2] = alpha;
    return b;
}

inline Mat4 bias_coupling_matrix() {
    Mat4 c{};
    c[2][2] = c[2][3] = c[3][2] = c[3][3] = 1.0;
    return c;
}

// System matrix of the gap recursion gap' = (I - h*A*M) gap.
inline Mat4 assemble_A(const SecondMoments& gram, const Vec4& u, double h, double alpha) {
    Mat4 inner{};
    for (int k = 0; k < 2; ++k) {
        const Mat3& g = k == 0 ? gram.pos : gram.neg;
        double discretization = h * (u[k] * g[0][2] + u[2 + k] * g[1][2]);
        inner[k][k] = g[2][2] + g[0][0] + discretization;
        inner[2 + k][2 + k] = g[2][2] + g[1][1] + discretization;
        inner[k][2 + k] = g[0][1];
        inner[2 + k][k] = g[0][1];
    }
    Mat4 b = mixing_matrix(alpha);
    return b * inner * b + bias_coupling_matrix();
}

// One step of the exact reduced dynamics: sandwich update of both Gram
// matrices and the scalar bias recursion.
inline ReducedState step_reduced(const ReducedState& state, const RegressionSummary& summary,
                                 const Hyperparams& params) {
    ResidualVectors rv = u_vectors(state, summary, params.alpha);
    ReducedState next = state;
    for (int k = 0; k < 2; ++k) {
        double r = rv.u[k];
        double s = rv.u[2 + k];
        Mat3 t = identity<3>();
        t[0][2] += params.h * r;
        t[1][2] += params.h * s;
        t[2][0] += params.h * r;
        t[2][1] += params.h * s;
        Mat3& g = k == 0 ? next.gram.pos : next.gram.neg;
        g = t * g * t;
    }
    next.bias += params.h * (rv.uhat[2] + rv.uhat[3]);
    return next;
}

// Initialization-time linearization of the gap dynamics and its spectrum.
struct ReferenceOperator {
    Mat4 mixing{};        // the alpha coupling between the two signs
    Mat4 bias_coupling{}; // rank-one effect of the output bias
    Mat4 moment{};        // two-sided moment matrix
    Mat4 moment_sqrt{};
    Mat4 a_ref{};         // block-diagonal reference system matrix
    Mat4 sym{};           // moment_sqrt * a_ref * moment_sqrt
    Vec4 eigvals{};       // eigenvalues of sym, descending
    Mat4 eigvecs{};       // corresponding orthonormal columns

    double lambda_max() const { return eigvals[0]; }
    double lambda_min() const { return eigvals[3]; }
};

inline ReferenceOperator reference_operator(const Weights& w0, const RegressionSummary& summary,
                                            double alpha) {
    for (double b : w0.b)
        if (b != 0.0) throw DomainError("reference operator requires zero-bias weights");
    if (!summary.both_invertible())
        throw SingularError("reference operator needs both side moment matrices invertible");

    ReferenceOperator op;
    op.mixing = mixing_matrix(alpha);
    op.bias_coupling = bias_coupling_matrix();
    op.moment = moment4(summary);
    op.moment_sqrt = sym_sqrt(op.moment);

    ActivationPattern pat = activation_pattern(w0);
    SecondMoments gram = sigma_moments(w0, pat);
    op.a_ref = assemble_A(gram, Vec4{}, 0.0, alpha);

    op.sym = op.moment_sqrt * op.a_ref * op.moment_sqrt;
    // Symmetrize before the eigensolve; the products are symmetric up to
    // rounding only.
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) {
            double v = 0.5 * (op.sym[i][j] + op.sym[j][i]);
            op.sym[i][j] = op.sym[j][i] = v;
        }
    EigenSym<4> eig = eigen_sym(op.sym);
    op.eigvals = eig.values;
    op.eigvecs = eig.vectors;
    return op;
}

// The largest admissible step size, h = 1/lambda_max(sym).
inline double auto_step_size(const ReferenceOperator& op) {
    if (!(op.lambda_max() > 0.0)) throw NumericError("reference operator has no positive spectrum");
    return 1.0 / op.lambda_max();
}

struct ReferenceSums {
    double total = 0.0; // upper bound on h * sum over all powers of the inf norm
    double top = 0.0;   // same bound with the two large eigenvalues only
};

// Closed-form bounds on h * sum_l ||(I - h A_ref M)^l||_inf, valid for every
// future step, via the spectral sum and the norm equivalence factor 2 in
// dimension four.
inline ReferenceSums reference_sum_bounds(const ReferenceOperator& op, double h) {
    if (!(h > 0.0)) throw DomainError("step size must be positive");
    if (h * op.lambda_max() > 1.0 + 1e-12) throw DomainError("step size exceeds 1/lambda_max");
    EigenSym<4> m_eig = eigen_sym(op.moment);
    if (!(m_eig.values[3] > 0.0)) throw SingularError("moment matrix not positive definite");
    double cond_sqrt = std::sqrt(m_eig.values[0] / m_eig.values[3]);
    ReferenceSums out;
    out.total = op.lambda_min() > 0.0 ? 2.0 * cond_sqrt / op.lambda_min()
                                      : std::numeric_limits<double>::infinity();
    out.top = op.eigvals[1] > 0.0 ? 2.0 * cond_sqrt / op.eigvals[1]
                                  : std::numeric_limits<double>::infinity();
    return out;
}

} // namespace kinkcert
