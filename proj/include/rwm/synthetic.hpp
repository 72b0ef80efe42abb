#pragma once

// Seeded generators for the two-dimensional toy problems.

#include "rwm/common.hpp"
#include "rwm/data.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace rwm::synthetic {

namespace detail {

inline Schema planar_schema(std::vector<std::string> classes) {
    return Schema{{Column{"x1", ColumnKind::continuous, {}}, Column{"x2", ColumnKind::continuous, {}},
                   Column{"y", ColumnKind::label, std::move(classes)}}};
}

inline Sample point(double x, double y, int label) {
    Sample s;
    s.continuous = Vector(2);
    s.continuous << x, y;
    s.label = label;
    return s;
}

// Draws one sample from N(mean, cov) for a 2x2 covariance via its Cholesky factor.
inline Sample gaussian_point(Rng& rng, double mx, double my, double sxx, double sxy, double syy, int label) {
    const double l11 = std::sqrt(sxx);
    const double l21 = sxy / l11;
    const double l22 = std::sqrt(syy - l21 * l21);
    const double u = standard_normal(rng);
    const double v = standard_normal(rng);
    return point(mx + l11 * u, my + l21 * u + l22 * v, label);
}

}  // namespace detail

/// Two concentric isotropic Gaussians at the origin with variances 0.07
/// (class "inner") and 1.93 (class "outer"), n/2 samples each.
inline Dataset concentric_gaussians(std::size_t n = 800, std::uint64_t seed = 1) {
    Dataset ds;
    ds.schema = detail::planar_schema({"inner", "outer"});
    ds.class_ids = {"inner", "outer"};
    Rng rng = make_rng(seed, 0xC0C0);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = i < n / 2 ? 0 : 1;
        const double var = label == 0 ? 0.07 : 1.93;
        ds.samples.push_back(detail::gaussian_point(rng, 0.0, 0.0, var, 0.0, var, label));
    }
    return ds;
}

/// Two interleaving half circles with additive Gaussian noise.
inline Dataset two_moons(std::size_t n = 800, double noise = 0.1, std::uint64_t seed = 1) {
    Dataset ds;
    ds.schema = detail::planar_schema({"upper", "lower"});
    ds.class_ids = {"upper", "lower"};
    Rng rng = make_rng(seed, 0x300);
    constexpr double pi = 3.14159265358979323846;
    const std::size_t n_upper = n / 2;
    const std::size_t n_lower = n - n_upper;
    for (std::size_t i = 0; i < n_upper; ++i) {
        const double t = n_upper > 1 ? pi * static_cast<double>(i) / static_cast<double>(n_upper - 1) : 0.0;
        ds.samples.push_back(detail::point(std::cos(t) + noise * standard_normal(rng),
                                           std::sin(t) + noise * standard_normal(rng), 0));
    }
    for (std::size_t i = 0; i < n_lower; ++i) {
        const double t = n_lower > 1 ? pi * static_cast<double>(i) / static_cast<double>(n_lower - 1) : 0.0;
        ds.samples.push_back(detail::point(1.0 - std::cos(t) + noise * standard_normal(rng),
                                           0.5 - std::sin(t) + noise * standard_normal(rng), 1));
    }
    return ds;
}

/// Five Gaussian processes assigned to three classes.
inline Dataset five_processes(std::size_t per_process = 120, std::uint64_t seed = 1) {
    struct Process {
        double mx, my, sxx, sxy, syy;
        int label;
    };
    static constexpr std::array<Process, 5> processes{{
        {-2.0, 2.0, 0.30, 0.10, 0.20, 0},
        {2.0, 2.0, 0.25, -0.08, 0.35, 1},
        {0.0, 0.0, 0.50, 0.00, 0.15, 2},
        {-2.0, -2.0, 0.20, 0.05, 0.40, 1},
        {2.0, -2.0, 0.35, -0.12, 0.25, 0},
    }};
    Dataset ds;
    ds.schema = detail::planar_schema({"a", "b", "c"});
    ds.class_ids = {"a", "b", "c"};
    Rng rng = make_rng(seed, 0x5555);
    for (const auto& p : processes)
        for (std::size_t i = 0; i < per_process; ++i)
            ds.samples.push_back(detail::gaussian_point(rng, p.mx, p.my, p.sxx, p.sxy, p.syy, p.label));
    return ds;
}

}  // namespace rwm::synthetic
