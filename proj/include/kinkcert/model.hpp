#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "kinkcert/dataset.hpp"
#include "kinkcert/errors.hpp"
#include "kinkcert/rng.hpp"

namespace kinkcert {

struct Hyperparams {
    double alpha = 0.0; // LeakyReLU slope for negative inputs; must not be +-1
    int m = 1;          // hidden width
    double h = 0.0;     // step size

    void validate() const {
        if (alpha == 1.0 || alpha == -1.0) throw ConfigError("alpha must not be +-1");
        if (m < 1) throw ConfigError("width m must be at least 1");
        if (!(h >= 0.0) || !std::isfinite(h)) throw ConfigError("step size must be finite and >= 0");
    }
};

// phi(t) = t for t >= 0, alpha*t for t < 0. The derivative at the kink is
// fixed to the right branch, phi'(0) = 1; training never lands there for
// data off the kinks, so the choice is arbitrary but must be consistent.
inline double activation(double t, double alpha) { return t >= 0.0 ? t : alpha * t; }
inline double activation_slope(double t, double alpha) { return t >= 0.0 ? 1.0 : alpha; }

struct Weights {
    std::vector<double> a; // first-layer weights
    std::vector<double> b; // first-layer biases
    double c = 0.0;        // output bias
    std::vector<double> w; // second-layer weights

    int size() const { return static_cast<int>(a.size()); }

    void validate() const {
        if (b.size() != a.size() || w.size() != a.size())
            throw DomainError("weight arrays must share one length");
        auto finite = [](const std::vector<double>& v) {
            for (double x : v)
                if (!std::isfinite(x)) return false;
            return true;
        };
        if (!finite(a) || !finite(b) || !finite(w) || !std::isfinite(c))
            throw DomainError("weights contain a non-finite value");
    }

    bool operator==(const Weights& other) const = default;
};

// Gradient has the same shape as the weights it differentiates.
using Gradient = Weights;

struct DistSpec {
    enum class Kind { Normal, Uniform };
    Kind kind = Kind::Normal;
    // Normal: variance of N(0, param). Uniform: half-width of U(-param, param).
    double param = 2.0;

    void validate() const {
        if (!(param > 0.0) || !std::isfinite(param))
            throw ConfigError("distribution parameter must be positive and finite");
    }

    double variance() const {
        return kind == Kind::Normal ? param : param * param / 3.0;
    }

    double draw(Rng& rng) const {
        if (kind == Kind::Normal) return std::sqrt(param) * rng.standard_normal();
        return rng.uniform(-param, param);
    }
};

struct InitSpec {
    DistSpec dist_a{};
    DistSpec dist_w{};
    std::uint64_t seed = 0;

    void validate() const {
        dist_a.validate();
        dist_w.validate();
    }
};

// Zero-bias initialization: b = 0, c = 0, a_i i.i.d. from dist_a, and
// w_i = (1/sqrt(m)) * draw from dist_w. Stream layout: the m draws for a
// first, then the m draws for w.
inline Weights init_weights(const InitSpec& spec, const Hyperparams& params) {
    spec.validate();
    params.validate();
    Rng rng(spec.seed);
    Weights weights;
    weights.a.resize(params.m);
    weights.b.assign(params.m, 0.0);
    weights.w.resize(params.m);
    weights.c = 0.0;
    for (int i = 0; i < params.m; ++i) weights.a[i] = spec.dist_a.draw(rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.m));
    for (int i = 0; i < params.m; ++i) weights.w[i] = scale * spec.dist_w.draw(rng);
    return weights;
}

inline double forward(const Weights& weights, const Hyperparams& params, double x) {
    double out = weights.c;
    for (int i = 0; i < weights.size(); ++i)
        out += weights.w[i] * activation(weights.a[i] * x + weights.b[i], params.alpha);
    return out;
}

// (1/2n) sum of squared residuals.
inline double empirical_loss(const Weights& weights, const Hyperparams& params,
                             const Dataset& data) {
    if (data.empty()) throw DomainError("loss needs a nonempty dataset");
    double sum = 0.0;
    for (const auto& p : data.points) {
        double r = p.y - forward(weights, params, p.x);
        sum += r * r;
    }
    return sum / (2.0 * static_cast<double>(data.size()));
}

// Exact analytic gradient of empirical_loss.
inline Gradient gradient(const Weights& weights, const Hyperparams& params, const Dataset& data) {
    if (data.empty()) throw DomainError("gradient needs a nonempty dataset");
    const double inv_n = 1.0 / static_cast<double>(data.size());
    const int m = weights.size();

    std::vector<double> residual(data.size());
    for (std::size_t j = 0; j < data.size(); ++j)
        residual[j] = forward(weights, params, data.points[j].x) - data.points[j].y;

    Gradient g;
    g.a.assign(m, 0.0);
    g.b.assign(m, 0.0);
    g.w.assign(m, 0.0);
    g.c = 0.0;
    for (std::size_t j = 0; j < data.size(); ++j) g.c += inv_n * residual[j];
    for (int i = 0; i < m; ++i) {
        double da = 0.0, db = 0.0, dw = 0.0;
        for (std::size_t j = 0; j < data.size(); ++j) {
            double x = data.points[j].x;
            double z = weights.a[i] * x + weights.b[i];
            double slope = activation_slope(z, params.alpha);
            double rs = residual[j] * slope;
            da += rs * x;
            db += rs;
            dw += residual[j] * activation(z, params.alpha);
        }
        g.a[i] = inv_n * weights.w[i] * da;
        g.b[i] = inv_n * weights.w[i] * db;
        g.w[i] = inv_n * dw;
    }
    return g;
}

inline Weights gd_step(const Weights& weights, const Hyperparams& params, const Dataset& data) {
    Gradient g = gradient(weights, params, data);
    Weights next = weights;
    for (int i = 0; i < weights.size(); ++i) {
        next.a[i] -= params.h * g.a[i];
        next.b[i] -= params.h * g.b[i];
        next.w[i] -= params.h * g.w[i];
    }
    next.c -= params.h * g.c;
    return next;
}

// One step on the batch's own empirical loss (1/(2*batch_size) normalization).
inline Weights sgd_step(const Weights& weights, const Hyperparams& params, const Dataset& batch) {
    if (batch.empty()) throw DomainError("sgd step needs a nonempty batch");
    return gd_step(weights, params, batch);
}

} // namespace kinkcert
