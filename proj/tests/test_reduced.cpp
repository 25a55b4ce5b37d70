#include "catch_amalgamated.hpp"

#include <cmath>

#include "kinkcert/dataset.hpp"
#include "kinkcert/model.hpp"
#include "kinkcert/reduced.hpp"
#include "multid.hpp"

using namespace kinkcert;

namespace {

Weights seeded_init(int m, std::uint64_t seed) {
    return init_weights(InitSpec{{DistSpec::Kind::Normal, 2.0}, {DistSpec::Kind::Normal, 2.0},
                                 seed},
                        Hyperparams{0.0, m, 0.0});
}

double max_abs_diff(const Gradient& x, const Gradient& y) {
    double worst = std::fabs(x.c - y.c);
    for (int i = 0; i < x.size(); ++i)
        worst = std::max({worst, std::fabs(x.a[i] - y.a[i]), std::fabs(x.b[i] - y.b[i]),
                          std::fabs(x.w[i] - y.w[i])});
    return worst;
}

} // namespace

TEST_CASE("activation pattern splits by slope sign") {
    Weights w{{1.5, -0.2, 0.0}, {0.0, 0.0, 0.0}, 0.0, {1.0, 1.0, 1.0}};
    ActivationPattern pat = activation_pattern(w);
    REQUIRE(pat.tau == std::vector<int>{1, -1, 0});
    REQUIRE(pat.pos == std::vector<int>{0});
    REQUIRE(pat.neg == std::vector<int>{1});
    REQUIRE(pat.zero_count == 1);

    Weights all_pos{{0.5, 2.0}, {0.0, 0.0}, 0.0, {1.0, 1.0}};
    REQUIRE(activation_pattern(all_pos).neg.empty());
}

TEST_CASE("continuous initialization never lands on a zero sign") {
    Weights w = seeded_init(1000000, 31337);
    REQUIRE(activation_pattern(w).zero_count == 0);
}

TEST_CASE("sigma moments are per-sign Gram matrices") {
    Weights w{{2.0}, {0.0}, 0.0, {3.0}};
    ActivationPattern pat = activation_pattern(w);
    SecondMoments sm = sigma_moments(w, pat);
    REQUIRE(sm.pos[0][0] == 4.0);
    REQUIRE(sm.pos[0][2] == 6.0);
    REQUIRE(sm.pos[2][2] == 9.0);
    REQUIRE(sm.pos[0][1] == 0.0);
    REQUIRE(sm.pos[1][1] == 0.0);
    REQUIRE(sm.neg == Mat3{});

    Weights many = seeded_init(40, 8);
    SecondMoments g = sigma_moments(many, activation_pattern(many));
    for (const Mat3* side : {&g.pos, &g.neg}) {
        auto eig = eigen_sym<3>(*side);
        REQUIRE(eig.values[2] >= -1e-10);
        // b == 0 at initialization wipes the b row and column.
        REQUIRE((*side)[0][1] == 0.0);
        REQUIRE((*side)[1][1] == 0.0);
        REQUIRE((*side)[1][2] == 0.0);
    }
}

TEST_CASE("fixed pattern loss equals the true loss inside the region") {
    Dataset data = example_dataset();
    Hyperparams params{0.25, 12, 0.0};
    Rng rng(55);
    for (int rep = 0; rep < 10; ++rep) {
        Weights w = seeded_init(12, 100 + rep);
        ActivationPattern pat = activation_pattern(w);
        Weights w0 = w;
        // Perturb mildly so b != 0 but the region constraint still holds.
        for (int i = 0; i < w.size(); ++i) {
            w.a[i] += 0.05 * std::fabs(w0.a[i]) * rng.uniform(-1.0, 1.0);
            w.b[i] = 0.5 * std::fabs(w0.a[i]) * rng.uniform(-1.0, 1.0);
        }
        w.c += rng.uniform(-0.2, 0.2);
        REQUIRE(in_region(w, w0, data.x_min()));
        double lhs = fixed_pattern_loss(w, params, data, pat);
        double rhs = empirical_loss(w, params, data);
        REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12));

        Gradient fixed = fixed_pattern_gradient(w, params, data, pat);
        Gradient true_grad = gradient(w, params, data);
        REQUIRE(max_abs_diff(fixed, true_grad) < 1e-12);
    }

    Weights zero{{0.0, 0.0}, {0.0, 0.0}, 0.0, {0.0, 0.0}};
    zero.a = {1.0, -1.0};
    ActivationPattern pat = activation_pattern(zero);
    zero.a = {0.0, 0.0};
    REQUIRE(fixed_pattern_loss(zero, params, data, pat) ==
            Catch::Approx(empirical_loss(zero, params, data)));
}

TEST_CASE("in_region boundary cases") {
    Weights w0{{1.0, -0.5}, {0.0, 0.0}, 0.0, {1.0, 1.0}};
    REQUIRE(in_region(w0, w0, 1.0)); // b == 0, a unchanged

    Weights moved = w0;
    moved.a[0] = -0.1; // |a0 - a| >= |a0|
    REQUIRE_FALSE(in_region(moved, w0, 1.0));

    Weights biased = w0;
    biased.b[0] = 0.99;
    REQUIRE(in_region(biased, w0, 1.0));
    biased.b[0] = 1.0;
    REQUIRE_FALSE(in_region(biased, w0, 1.0)); // strict inequality
}

TEST_CASE("u vectors: linearity, alpha=0 collapse, residual route") {
    Dataset data = sample(example_distribution(), 128, 17);
    RegressionSummary summary = regression_summary(data);
    REQUIRE(summary.both_invertible());

    Weights w = seeded_init(10, 4242);
    for (double alpha : {0.0, 0.3}) {
        Hyperparams params{alpha, 10, 0.0};
        ActivationPattern pat = activation_pattern(w);
        ReducedState state = reduced_state(w, pat);
        ResidualVectors rv = u_vectors(state, summary, alpha);

        Vec4 direct = uhat_from_residuals(w, params, data, pat);
        for (int j = 0; j < 4; ++j)
            REQUIRE(rv.uhat[j] == Catch::Approx(direct[j]).margin(1e-10));
        if (alpha == 0.0)
            for (int j = 0; j < 4; ++j) REQUIRE(rv.u[j] == rv.uhat[j]);
    }

    // gap == 0 forces uhat == u == 0: build a state matching the optimum.
    Dataset d = example_dataset();
    RegressionSummary s = regression_summary(d);
    ReducedState state;
    state.gram.pos = Mat3{};
    state.gram.neg = Mat3{};
    state.bias = 0.0; // optimum of the example data is identically zero
    ResidualVectors rv = u_vectors(state, s, 0.0);
    REQUIRE(inf_norm(rv.gap) == 0.0);
    REQUIRE(inf_norm(rv.uhat) == 0.0);
    REQUIRE(inf_norm(rv.u) == 0.0);
}

TEST_CASE("assemble_A structure") {
    Weights w0 = seeded_init(16, 7);
    ActivationPattern pat = activation_pattern(w0);
    SecondMoments gram = sigma_moments(w0, pat);

    Dataset data = example_dataset();
    RegressionSummary summary = regression_summary(data);
    ReferenceOperator op = reference_operator(w0, summary, 0.2);

    // h = 0 with zero-bias moments reproduces the reference matrix.
    Mat4 a0 = assemble_A(gram, Vec4{}, 0.0, 0.2);
    REQUIRE(max_abs(a0 - op.a_ref) == 0.0);

    // u == 0 removes the step-size dependence entirely.
    Mat4 a_h = assemble_A(gram, Vec4{}, 0.7, 0.2);
    REQUIRE(max_abs(a_h - a0) == 0.0);

    // The discretization term only shifts diagonals; A stays symmetric.
    Vec4 u{0.3, -0.2, 0.1, 0.4};
    Mat4 a_u = assemble_A(gram, u, 0.05, 0.2);
    REQUIRE(max_asymmetry(a_u) < 1e-12 * std::max(1.0, max_abs(a_u)));
}

TEST_CASE("reference operator block structure, spectrum, and scaling") {
    Dataset data = example_dataset();
    RegressionSummary summary = regression_summary(data);

    Weights w0 = seeded_init(64, 3);
    ReferenceOperator op = reference_operator(w0, summary, 0.0);
    for (int i = 0; i < 2; ++i)
        for (int j = 2; j < 4; ++j) {
            REQUIRE(op.a_ref[i][j] == 0.0);
            REQUIRE(op.a_ref[j][i] == 0.0);
        }
    for (double lam : op.eigvals) REQUIRE(lam > 0.0);
    REQUIRE(max_asymmetry(op.sym) == 0.0);

    // Similarity check: columns of M^{-1/2} U are eigenvectors of A_ref * M.
    EigenSym<4> meig = eigen_sym(op.moment);
    Mat4 m_inv_sqrt{};
    for (int k = 0; k < 4; ++k)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                m_inv_sqrt[i][j] +=
                    meig.vectors[i][k] * meig.vectors[j][k] / std::sqrt(meig.values[k]);
    Mat4 am = op.a_ref * op.moment;
    for (int k = 0; k < 4; ++k) {
        Vec4 u_col{op.eigvecs[0][k], op.eigvecs[1][k], op.eigvecs[2][k], op.eigvecs[3][k]};
        Vec4 w_col = m_inv_sqrt * u_col;
        Vec4 resid = am * w_col - op.eigvals[k] * w_col;
        REQUIRE(inf_norm(resid) < 1e-8 * op.eigvals[k] * inf_norm(w_col) + 1e-12);
    }

    // Top pair grows linearly with the width, bottom pair stays put.
    auto mean_eigs = [&](int m) {
        Vec4 acc{};
        for (std::uint64_t s = 0; s < 10; ++s) {
            ReferenceOperator o = reference_operator(seeded_init(m, 1000 + s), summary, 0.0);
            for (int j = 0; j < 4; ++j) acc[j] += o.eigvals[j] / 10.0;
        }
        return acc;
    };
    Vec4 e64 = mean_eigs(64), e1024 = mean_eigs(1024);
    REQUIRE(e1024[0] / e64[0] > 8.0);
    REQUIRE(e1024[0] / e64[0] < 32.0);
    REQUIRE(e1024[1] / e64[1] > 8.0);
    REQUIRE(e1024[3] / e64[3] > 1.0 / 3.0);
    REQUIRE(e1024[3] / e64[3] < 3.0);

    // Rough location of the auto step size (the acceptance suite pins it).
    double mean_inv = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s)
        mean_inv += 1.0 / reference_operator(seeded_init(64, 2000 + s), summary, 0.0).lambda_max();
    mean_inv /= 10.0;
    REQUIRE(mean_inv > 0.2 / 64.0);
    REQUIRE(mean_inv < 0.7 / 64.0);
}

TEST_CASE("reference sum bounds dominate the truncated series") {
    Dataset data = sample(example_distribution(), 256, 5);
    RegressionSummary summary = regression_summary(data);
    Weights w0 = seeded_init(32, 11);
    ReferenceOperator op = reference_operator(w0, summary, 0.0);
    double h = auto_step_size(op);
    ReferenceSums sums = reference_sum_bounds(op, h);

    Mat4 step = identity<4>() - h * (op.a_ref * op.moment);
    Mat4 power = identity<4>();
    double series = 0.0;
    for (int l = 0; l < 100000; ++l) {
        series += h * inf_norm(power);
        power = power * step;
        if (inf_norm(power) < 1e-300) break;
    }
    REQUIRE(series <= sums.total);
    REQUIRE(sums.top <= sums.total);

    // h beyond the admissible range is rejected.
    REQUIRE_THROWS_AS(reference_sum_bounds(op, 1.5 * h), DomainError);
}

TEST_CASE("reference sums degenerate case and monotonicity") {
    ReferenceOperator op;
    op.moment = identity<4>();
    op.moment_sqrt = identity<4>();
    op.a_ref = identity<4>();
    op.sym = identity<4>();
    op.eigvals = {1.0, 1.0, 1.0, 1.0};
    op.eigvecs = identity<4>();
    ReferenceSums sums = reference_sum_bounds(op, 1.0);
    REQUIRE(sums.total == 2.0);

    op.eigvals = {1.0, 1.0, 1.0, 0.5};
    REQUIRE(reference_sum_bounds(op, 1.0).total == 4.0);
}

TEST_CASE("reduced trajectory tracks full-weight gradient descent") {
    Dataset data = sample(example_distribution(), 96, 21);
    RegressionSummary summary = regression_summary(data);
    REQUIRE(summary.both_invertible());

    for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
        Weights w = seeded_init(24, seed);
        Weights w0 = w;
        ActivationPattern pat = activation_pattern(w);
        ReferenceOperator op = reference_operator(w, summary, 0.0);
        Hyperparams params{0.0, 24, auto_step_size(op)};

        ReducedState state = reduced_state(w, pat);
        double worst_rel = 0.0, worst_recur = 0.0;
        for (int k = 0; k < 2000; ++k) {
            if (!in_region(w, w0, data.x_min())) break;
            ResidualVectors full_rv = u_vectors(reduced_state(w, pat), summary, 0.0);
            ResidualVectors red_rv = u_vectors(state, summary, 0.0);
            double scale = std::max(inf_norm(full_rv.gap), 1e-300);
            worst_rel = std::max(worst_rel, inf_norm(red_rv.gap - full_rv.gap) / scale);

            // One-step recursion identity: gap' = (I - h A M) gap.
            Mat4 a = assemble_A(state.gram, red_rv.u, params.h, 0.0);
            Vec4 predicted = red_rv.gap - params.h * ((a * moment4(summary)) * red_rv.gap);
            state = step_reduced(state, summary, params);
            ResidualVectors after = u_vectors(state, summary, 0.0);
            worst_recur = std::max(worst_recur, inf_norm(after.gap - predicted));

            w = gd_step(w, params, data);
        }
        REQUIRE(worst_rel < 1e-10);
        REQUIRE(worst_recur < 1e-12);
    }
}

TEST_CASE("reduced step fixed point at the regression optimum") {
    Dataset data = example_dataset();
    RegressionSummary summary = regression_summary(data);
    ReducedState state;
    // Rank-one Grams with zero w-a cross terms keep the gap at zero.
    state.gram.pos = Mat3{};
    state.gram.neg = Mat3{};
    state.gram.pos[2][2] = 1.0;
    state.gram.neg[2][2] = 0.5;
    state.bias = 0.0;
    Hyperparams params{0.0, 2, 0.01};
    ResidualVectors rv = u_vectors(state, summary, 0.0);
    REQUIRE(inf_norm(rv.gap) == 0.0);
    ReducedState next = step_reduced(state, summary, params);
    REQUIRE(max_abs(next.gram.pos - state.gram.pos) == 0.0);
    REQUIRE(max_abs(next.gram.neg - state.gram.neg) == 0.0);
    REQUIRE(next.bias == state.bias);
}

TEST_CASE("loss identity: fixed-pattern loss is the quadratic form plus optimum") {
    Dataset data = sample(example_distribution(0.02), 192, 33);
    RegressionSummary summary = regression_summary(data);
    REQUIRE(summary.both_invertible());

    double yy = 0.0;
    for (const auto& p : data.points) yy += p.y * p.y;
    yy /= static_cast<double>(data.size());
    double loss_opt = 0.5 * (yy - dot(summary.pos.moment_y, *summary.pos.opt) -
                             dot(summary.neg.moment_y, *summary.neg.opt));

    Weights w = seeded_init(20, 77);
    ActivationPattern pat = activation_pattern(w);
    Hyperparams params{0.0, 20, 0.0};
    Rng rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        for (int i = 0; i < w.size(); ++i) w.b[i] = 0.2 * rng.uniform(-1.0, 1.0);
        w.c = rng.uniform(-1.0, 1.0);
        ResidualVectors rv = u_vectors(reduced_state(w, pat), summary, 0.0);
        double quad = 0.5 * dot(rv.gap, moment4(summary) * rv.gap);
        double lhs = fixed_pattern_loss(w, params, data, pat) - loss_opt;
        REQUIRE(lhs == Catch::Approx(quad).margin(1e-10));
    }
}

TEST_CASE("gram matrices stay symmetric psd along the reduced iteration") {
    Dataset data = sample(example_distribution(), 64, 3);
    RegressionSummary summary = regression_summary(data);
    Weights w0 = seeded_init(16, 5);
    ReferenceOperator op = reference_operator(w0, summary, 0.0);
    Hyperparams params{0.0, 16, auto_step_size(op)};
    ReducedState state = reduced_state(w0, activation_pattern(w0));
    for (int k = 0; k < 3000; ++k) state = step_reduced(state, summary, params);
    for (const Mat3* g : {&state.gram.pos, &state.gram.neg}) {
        REQUIRE(max_asymmetry(*g) < 1e-12 * std::max(1.0, max_abs(*g)));
        REQUIRE(eigen_sym<3>(*g).values[2] >= -1e-8);
    }
}

TEST_CASE("initialization statistics of the second-moment sums") {
    const int m = 4096;
    const double var = 2.0;
    int ok_a = 0, ok_w = 0, ok_wa = 0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
        Weights w = seeded_init(m, 9000 + s);
        for (double b : w.b) REQUIRE(b == 0.0);
        REQUIRE(w.c == 0.0);
        SecondMoments g = sigma_moments(w, activation_pattern(w));
        bool a_ok = true, w_ok = true, wa_ok = true;
        for (const Mat3* side : {&g.pos, &g.neg}) {
            a_ok = a_ok && (*side)[0][0] >= m * var / 4.0 && (*side)[0][0] <= m * var;
            w_ok = w_ok && (*side)[2][2] >= var / 4.0 && (*side)[2][2] <= var;
            wa_ok = wa_ok && std::fabs((*side)[0][2]) <= std::pow(m, 0.25);
        }
        ok_a += a_ok;
        ok_w += w_ok;
        ok_wa += wa_ok;
    }
    REQUIRE(ok_a >= 99);
    REQUIRE(ok_w >= 99);
    REQUIRE(ok_wa >= 99);
}

TEST_CASE("embedded training matches the collapsed one-dimensional run") {
    using namespace kinkcert::testing;
    Dataset data = example_dataset();
    std::vector<double> z{0.6, 0.8};
    EmbeddedDataset edata = embed(data, z);

    MultiWeights mw = multi_init(2, 8, {DistSpec::Kind::Normal, 2.0},
                                 {DistSpec::Kind::Normal, 2.0}, 51);
    Weights w = collapse(mw, z);
    RegressionSummary summary = regression_summary(data);
    ReferenceOperator op = reference_operator(w, summary, 0.0);
    Hyperparams params{0.0, 8, auto_step_size(op)};

    double worst = 0.0;
    for (int k = 0; k < 200; ++k) {
        for (double x : {-3.0, -1.0, 0.4, 2.2}) {
            std::vector<double> xz{x * z[0], x * z[1]};
            worst = std::max(worst,
                             std::fabs(multi_forward(mw, 0.0, xz) - forward(w, params, x)));
        }
        multi_gd_step(mw, 0.0, params.h, edata);
        w = gd_step(w, params, data);
    }
    REQUIRE(worst < 1e-9);
}
