// Shared independent oracles for the test binaries: finite-difference
// gradients and random problem generators.
#pragma once

#include <algorithm>
#include <cmath>

#include "kinkcert/dataset.hpp"
#include "kinkcert/model.hpp"
#include "kinkcert/rng.hpp"

namespace kinkcert::testing {

// Independent long-double evaluation of the loss. Away from the kinks the
// loss is exactly quadratic in each coordinate, so central differences carry
// no truncation error and the extended precision keeps the cancellation
// noise far below the comparison tolerance.
inline long double loss_ld(const Weights& w, const Hyperparams& params, const Dataset& data) {
    long double sum = 0.0L;
    for (const auto& p : data.points) {
        long double f = w.c;
        for (int i = 0; i < w.size(); ++i) {
            long double z = static_cast<long double>(w.a[i]) * p.x + w.b[i];
            f += static_cast<long double>(w.w[i]) *
                 (z >= 0.0L ? z : static_cast<long double>(params.alpha) * z);
        }
        long double r = p.y - f;
        sum += r * r;
    }
    return sum / (2.0L * static_cast<long double>(data.size()));
}

// Central finite differences of the empirical loss, fixed step.
inline Gradient finite_difference_gradient(const Weights& w, const Hyperparams& params,
                                           const Dataset& data, double step = 1e-6) {
    Gradient g;
    g.a.assign(w.size(), 0.0);
    g.b.assign(w.size(), 0.0);
    g.w.assign(w.size(), 0.0);
    auto central = [&](auto&& set) {
        Weights hi = w, lo = w;
        set(hi, step);
        set(lo, -step);
        return static_cast<double>((loss_ld(hi, params, data) - loss_ld(lo, params, data)) /
                                   (2.0L * static_cast<long double>(step)));
    };
    for (int i = 0; i < w.size(); ++i) {
        g.a[i] = central([&](Weights& x, double d) { x.a[i] += d; });
        g.b[i] = central([&](Weights& x, double d) { x.b[i] += d; });
        g.w[i] = central([&](Weights& x, double d) { x.w[i] += d; });
    }
    g.c = central([&](Weights& x, double d) { x.c += d; });
    return g;
}

// Worst per-coordinate relative mismatch, floored at 1e-6 of the gradient
// scale so coordinates tiny relative to the whole are compared
// semi-absolutely (finite differences cannot resolve below that).
inline double gradient_mismatch(const Gradient& got, const Gradient& want) {
    double scale = std::fabs(want.c);
    for (int i = 0; i < want.size(); ++i)
        scale = std::max({scale, std::fabs(want.a[i]), std::fabs(want.b[i]),
                          std::fabs(want.w[i])});
    scale = std::max(scale, 1e-12);
    double worst = 0.0;
    auto upd = [&](double g, double f) {
        worst = std::max(worst, std::fabs(g - f) / std::max(std::fabs(f), 1e-6 * scale));
    };
    upd(got.c, want.c);
    for (int i = 0; i < want.size(); ++i) {
        upd(got.a[i], want.a[i]);
        upd(got.b[i], want.b[i]);
        upd(got.w[i], want.w[i]);
    }
    return worst;
}

inline Weights random_weights(int m, Rng& rng) {
    Weights w;
    w.a.resize(m);
    w.b.resize(m);
    w.w.resize(m);
    for (int i = 0; i < m; ++i) {
        w.a[i] = rng.uniform(-2.0, 2.0);
        w.b[i] = rng.uniform(-0.5, 0.5);
        w.w[i] = rng.uniform(-1.0, 1.0);
    }
    w.c = rng.uniform(-0.5, 0.5);
    return w;
}

inline Dataset random_dataset(std::size_t n, Rng& rng) {
    Dataset d;
    for (std::size_t j = 0; j < n; ++j) {
        double mag = rng.uniform(0.5, 3.0);
        double x = rng.uniform01() < 0.5 ? -mag : mag;
        d.points.push_back({x, rng.uniform(-2.0, 2.0)});
    }
    return d;
}

// All pre-activations clear of the kink by the given margin.
inline bool clear_of_kinks(const Weights& w, const Dataset& d, double margin = 1e-3) {
    for (int i = 0; i < w.size(); ++i)
        for (const auto& p : d.points)
            if (std::fabs(w.a[i] * p.x + w.b[i]) <= margin) return false;
    return true;
}

} // namespace kinkcert::testing
