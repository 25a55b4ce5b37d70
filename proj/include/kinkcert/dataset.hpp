#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kinkcert/errors.hpp"
#include "kinkcert/rng.hpp"
#include "kinkcert/smallmat.hpp"

namespace kinkcert {

struct DataPoint {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const DataPoint&) const = default;
};

struct Dataset {
    std::vector<DataPoint> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    // Points with sign(x) == sign, order preserved. Points with x == 0 belong
    // to neither side.
    std::vector<DataPoint> side(int sign) const {
        std::vector<DataPoint> out;
        for (const auto& p : points)
            if ((sign > 0 && p.x > 0.0) || (sign < 0 && p.x < 0.0)) out.push_back(p);
        return out;
    }

    // min_j |x_j|; 0 for an empty dataset.
    double x_min() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& p : points) m = std::min(m, std::fabs(p.x));
        return points.empty() ? 0.0 : m;
    }

    void validate() const {
        for (const auto& p : points)
            if (!std::isfinite(p.x) || !std::isfinite(p.y))
                throw DomainError("dataset contains a non-finite value");
    }
};

struct Atom {
    double x = 0.0;
    double y = 0.0;
    double prob = 0.0;
};

// Finitely supported data distribution; shift is added to every sampled y.
struct FiniteDistribution {
    std::vector<Atom> atoms;
    double shift = 0.0;

    void validate() const {
        if (atoms.empty()) throw ConfigError("distribution has no atoms");
        double total = 0.0;
        for (const auto& a : atoms) {
            if (!std::isfinite(a.x) || !std::isfinite(a.y) || !std::isfinite(a.prob))
                throw ConfigError("distribution atom is non-finite");
            if (a.prob <= 0.0) throw ConfigError("atom probabilities must be positive");
            total += a.prob;
        }
        if (std::fabs(total - 1.0) > 1e-12) throw ConfigError("atom probabilities must sum to 1");
        if (!std::isfinite(shift)) throw ConfigError("shift must be finite");
    }
};

// The six-point dataset ((-3,-1), (-2,2), (-1,-1), (1,1), (2,-2), (3,1)).
inline Dataset example_dataset() {
    return Dataset{{{-3.0, -1.0}, {-2.0, 2.0}, {-1.0, -1.0}, {1.0, 1.0}, {2.0, -2.0}, {3.0, 1.0}}};
}

// Uniform distribution on the points of example_dataset(), shifted by `shift`.
inline FiniteDistribution example_distribution(double shift = 0.0) {
    FiniteDistribution dist;
    for (const auto& p : example_dataset().points) dist.atoms.push_back({p.x, p.y, 1.0 / 6.0});
    dist.shift = shift;
    return dist;
}

inline Dataset sample(const FiniteDistribution& dist, std::size_t n, std::uint64_t seed) {
    dist.validate();
    if (n < 1) throw DomainError("sample size must be at least 1");
    std::vector<double> cumulative;
    cumulative.reserve(dist.atoms.size());
    double acc = 0.0;
    for (const auto& a : dist.atoms) {
        acc += a.prob;
        cumulative.push_back(acc);
    }
    cumulative.back() = 1.0;

    Rng rng(seed);
    Dataset out;
    out.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.uniform01();
        std::size_t k = std::lower_bound(cumulative.begin(), cumulative.end(), u) -
                        cumulative.begin();
        if (k >= dist.atoms.size()) k = dist.atoms.size() - 1;
        out.points.push_back({dist.atoms[k].x, dist.atoms[k].y + dist.shift});
    }
    return out;
}

// Per-side second-moment data of the affine regression problem.
struct SideSummary {
    Mat2 moment{};                 // (1/n) sum of [[x^2, x], [x, 1]] over the side
    Vec2 moment_y{};               // (1/n) sum of (x*y, y) over the side
    std::optional<Vec2> opt;       // (slope, intercept) of the optimal affine fit
    double lambda_min = 0.0;
    double lambda_max = 0.0;
};

struct RegressionSummary {
    SideSummary pos, neg;
    double psi_p = 0.0;   // max absolute optimal slope (NaN if a side is singular)
    double psi_q = 0.0;   // max absolute optimal intercept (NaN likewise)
    double x_min = 0.0;   // distance of the data to zero

    const SideSummary& side(int sign) const { return sign > 0 ? pos : neg; }
    bool both_invertible() const { return pos.opt.has_value() && neg.opt.has_value(); }
};

namespace detail {

// det < 1e-12 * (trace/2)^2 is treated as singular.
inline bool moment_invertible(const Mat2& m) {
    double tr = m[0][0] + m[1][1];
    double threshold = 1e-12 * (tr / 2.0) * (tr / 2.0);
    return det(m) > threshold;
}

inline void finish_side(SideSummary& s) {
    auto eig = eigen_sym<2>(s.moment);
    s.lambda_max = eig.values[0];
    s.lambda_min = eig.values[1];
    if (moment_invertible(s.moment)) s.opt = inverse(s.moment) * s.moment_y;
}

inline void finish_summary(RegressionSummary& r) {
    finish_side(r.pos);
    finish_side(r.neg);
    if (r.both_invertible()) {
        r.psi_p = std::max(std::fabs((*r.pos.opt)[0]), std::fabs((*r.neg.opt)[0]));
        r.psi_q = std::max(std::fabs((*r.pos.opt)[1]), std::fabs((*r.neg.opt)[1]));
    } else {
        r.psi_p = std::numeric_limits<double>::quiet_NaN();
        r.psi_q = std::numeric_limits<double>::quiet_NaN();
    }
}

} // namespace detail

// Moment summary of a dataset. Normalization is 1/n with n the FULL dataset
// size on both sides; sums are normalized once at the end so that exact
// cancellations in the raw sums survive.
inline RegressionSummary regression_summary(const Dataset& data) {
    RegressionSummary r;
    for (const auto& p : data.points) {
        if (p.x == 0.0) continue;
        SideSummary& s = p.x > 0.0 ? r.pos : r.neg;
        s.moment[0][0] += p.x * p.x;
        s.moment[0][1] += p.x;
        s.moment[1][1] += 1.0;
        s.moment_y[0] += p.x * p.y;
        s.moment_y[1] += p.y;
    }
    const double inv_n = 1.0 / static_cast<double>(data.size());
    for (SideSummary* s : {&r.pos, &r.neg}) {
        s->moment[0][0] *= inv_n;
        s->moment[0][1] *= inv_n;
        s->moment[1][1] *= inv_n;
        s->moment[1][0] = s->moment[0][1];
        s->moment_y[0] *= inv_n;
        s->moment_y[1] *= inv_n;
    }
    r.x_min = data.x_min();
    detail::finish_summary(r);
    return r;
}

// Exact population moments of a finite distribution (shift applied to y).
inline RegressionSummary distribution_summary(const FiniteDistribution& dist) {
    dist.validate();
    RegressionSummary r;
    double xmin = std::numeric_limits<double>::infinity();
    for (const auto& a : dist.atoms) {
        xmin = std::min(xmin, std::fabs(a.x));
        if (a.x == 0.0) continue;
        double y = a.y + dist.shift;
        SideSummary& s = a.x > 0.0 ? r.pos : r.neg;
        s.moment[0][0] += a.prob * a.x * a.x;
        s.moment[0][1] += a.prob * a.x;
        s.moment[1][1] += a.prob;
        s.moment_y[0] += a.prob * a.x * y;
        s.moment_y[1] += a.prob * y;
    }
    r.pos.moment[1][0] = r.pos.moment[0][1];
    r.neg.moment[1][0] = r.neg.moment[0][1];
    r.x_min = xmin;
    detail::finish_summary(r);
    return r;
}

struct AssumptionReport {
    bool p1_invertible_pos = false;
    bool p1_invertible_neg = false;
    double p2_gap = 0.0;     // largest delta with P_X((-delta, delta)) = 0
    bool p3_psi_q_zero = false;
    double p4_excess = 0.0;  // best risk over two-sided affine functions minus Bayes risk

    bool p1() const { return p1_invertible_pos && p1_invertible_neg; }
    bool all() const { return p1() && p2_gap > 0.0 && p3_psi_q_zero && p4_excess > 0.0; }
};

namespace detail {

// min over v of (1/2)(v' M v - 2 u' v + yy). The normal equations are always
// consistent for moment systems, so singular directions are simply dropped.
inline double quadratic_min(const Mat2& m, const Vec2& u, double yy) {
    auto eig = eigen_sym<2>(m);
    double tol = 1e-14 * std::max(eig.values[0], 0.0);
    double reduced = 0.0;
    for (int k = 0; k < 2; ++k) {
        if (eig.values[k] <= tol) continue;
        double proj = eig.vectors[0][k] * u[0] + eig.vectors[1][k] * u[1];
        reduced += proj * proj / eig.values[k];
    }
    return 0.5 * (yy - reduced);
}

} // namespace detail

// Computable form of the distribution assumptions for finite support:
// per-side invertibility, the data gap around zero, psi_q = 0, and the excess
// of the best two-sided-affine risk over the Bayes risk.
inline AssumptionReport check_assumptions(const FiniteDistribution& dist) {
    dist.validate();
    RegressionSummary summary = distribution_summary(dist);
    AssumptionReport rep;
    rep.p1_invertible_pos = summary.pos.opt.has_value();
    rep.p1_invertible_neg = summary.neg.opt.has_value();
    rep.p2_gap = summary.x_min;
    rep.p3_psi_q_zero = summary.both_invertible() && summary.psi_q <= 1e-12;

    double yy_pos = 0.0, yy_neg = 0.0;
    double bayes = 0.0;
    double zero_group = 0.0;
    std::map<double, std::pair<double, double>> groups; // x -> (prob, prob*y)
    for (const auto& a : dist.atoms) {
        double y = a.y + dist.shift;
        if (a.x > 0.0) yy_pos += a.prob * y * y;
        else if (a.x < 0.0) yy_neg += a.prob * y * y;
        auto& g = groups[a.x];
        g.first += a.prob;
        g.second += a.prob * y;
    }
    for (const auto& a : dist.atoms) {
        double y = a.y + dist.shift;
        const auto& g = groups.at(a.x);
        double mean = g.second / g.first;
        double contrib = 0.5 * a.prob * (y - mean) * (y - mean);
        bayes += contrib;
        if (a.x == 0.0) zero_group += contrib; // f(0) is unconstrained in F_0
    }

    double best_f0 = detail::quadratic_min(summary.pos.moment, summary.pos.moment_y, yy_pos) +
                     detail::quadratic_min(summary.neg.moment, summary.neg.moment_y, yy_neg) +
                     zero_group;
    rep.p4_excess = best_f0 - bayes;
    return rep;
}

namespace detail {

// Unnormalized side moments; normalization cancels in the optimum.
struct RawSide {
    Mat2 m{};
    Vec2 u{};
    double outermost = 0.0; // x farthest from zero on this side
    bool empty = true;

    void add(double x, double y) {
        m[0][0] += x * x;
        m[0][1] += x;
        m[1][0] += x;
        m[1][1] += 1.0;
        u[0] += x * y;
        u[1] += y;
        outermost = empty ? x : (std::fabs(x) > std::fabs(outermost) ? x : outermost);
        empty = false;
    }
};

// One corrective point for the given side, if needed: x' one unit beyond the
// outermost point, y' solving intercept == 0.
inline std::optional<DataPoint> augment_side(const RawSide& side, int sign) {
    if (!side.empty && moment_invertible(side.m)) {
        Vec2 opt = inverse(side.m) * side.u;
        if (std::fabs(opt[1]) <=
            1e-12 * std::max(1.0, std::fabs(opt[0]) * std::fabs(side.outermost)))
            return std::nullopt;
    }
    double xp = sign > 0 ? side.outermost + 1.0 : side.outermost - 1.0;
    RawSide grown = side;
    grown.add(xp, 0.0);
    if (!moment_invertible(grown.m))
        throw NumericError("augmentation produced a singular side moment matrix");
    Mat2 inv = inverse(grown.m);
    // intercept(y') = base + y' * coef; the proof guarantees coef != 0.
    double base = inv[1][0] * grown.u[0] + inv[1][1] * grown.u[1];
    double coef = inv[1][0] * xp + inv[1][1];
    if (std::fabs(coef) < 1e-12)
        throw NumericError("augmentation intercept coefficient vanished");
    return DataPoint{xp, -base / coef};
}

} // namespace detail

// Adds at most three points so that both side moment matrices become
// invertible and both optimal intercepts vanish. Requires all x_j != 0.
inline Dataset augment_three_points(const Dataset& data) {
    for (const auto& p : data.points)
        if (p.x == 0.0) throw DomainError("augmentation requires all x_j != 0");

    Dataset out = data;
    detail::RawSide pos, neg;
    for (const auto& p : out.points) (p.x > 0.0 ? pos : neg).add(p.x, p.y);
    if (pos.empty) {
        pos.add(1.0, 0.0);
        out.points.push_back({1.0, 0.0});
    } else if (neg.empty) {
        neg.add(-1.0, 0.0);
        out.points.push_back({-1.0, 0.0});
    }
    if (auto p = detail::augment_side(pos, +1)) out.points.push_back(*p);
    if (auto p = detail::augment_side(neg, -1)) out.points.push_back(*p);
    return out;
}

struct EmbeddedPoint {
    std::vector<double> x;
    double y = 0.0;
};

struct EmbeddedDataset {
    std::size_t dim = 0;
    std::vector<EmbeddedPoint> points;
};

// Places the 1-d inputs on the line spanned by the unit vector z.
inline EmbeddedDataset embed(const Dataset& data, const std::vector<double>& z) {
    double norm2 = 0.0;
    for (double v : z) norm2 += v * v;
    if (std::fabs(std::sqrt(norm2) - 1.0) > 1e-12)
        throw DomainError("embedding direction must be a unit vector");
    EmbeddedDataset out;
    out.dim = z.size();
    out.points.reserve(data.size());
    for (const auto& p : data.points) {
        EmbeddedPoint e;
        e.x.reserve(z.size());
        for (double v : z) e.x.push_back(p.x * v);
        e.y = p.y;
        out.points.push_back(std::move(e));
    }
    return out;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_double(const std::string& s) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw ConfigError("trailing characters in number: " + s);
        return v;
    } catch (const std::invalid_argument&) {
        throw ConfigError("not a number: '" + s + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("number out of range: '" + s + "'");
    }
}

} // namespace detail

inline void write_csv(const Dataset& data, std::ostream& os) {
    os << "x,y\n";
    for (const auto& p : data.points)
        os << detail::format_double(p.x) << ',' << detail::format_double(p.y) << '\n';
}

inline void write_csv(const EmbeddedDataset& data, std::ostream& os) {
    for (std::size_t d = 0; d < data.dim; ++d) os << 'x' << (d + 1) << ',';
    os << "y\n";
    for (const auto& p : data.points) {
        for (double v : p.x) os << detail::format_double(v) << ',';
        os << detail::format_double(p.y) << '\n';
    }
}

inline void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    write_csv(data, os);
}

inline Dataset read_dataset_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty dataset file");
    auto header = detail::split_csv_line(line);
    if (header.size() != 2 || header[0] != "x" || header[1] != "y")
        throw ConfigError("expected dataset header 'x,y'");
    Dataset out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 2) throw ConfigError("expected two columns per dataset row");
        out.points.push_back({detail::parse_double(fields[0]), detail::parse_double(fields[1])});
    }
    out.validate();
    return out;
}

inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open dataset file: " + path);
    return read_dataset_csv(is);
}

inline EmbeddedDataset read_embedded_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty dataset file");
    auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header.back() != "y")
        throw ConfigError("expected header 'x1,...,xd,y'");
    std::size_t dim = header.size() - 1;
    for (std::size_t d = 0; d < dim; ++d)
        if (header[d] != "x" + std::to_string(d + 1))
            throw ConfigError("expected header 'x1,...,xd,y'");
    EmbeddedDataset out;
    out.dim = dim;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != dim + 1) throw ConfigError("wrong column count in dataset row");
        EmbeddedPoint p;
        for (std::size_t d = 0; d < dim; ++d) p.x.push_back(detail::parse_double(fields[d]));
        p.y = detail::parse_double(fields[dim]);
        out.points.push_back(std::move(p));
    }
    return out;
}

} // namespace kinkcert
