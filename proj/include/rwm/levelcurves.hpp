#pragma once

// Distance fields around an anchor point in the plane and their contour
// lines, extracted with marching squares.

#include "rwm/common.hpp"
#include "rwm/gmm.hpp"
#include "rwm/similarity.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rwm {

enum class Measure { euclidean, gmm, rwm };

inline std::string measure_name(Measure m) {
    switch (m) {
        case Measure::euclidean: return "euclidean";
        case Measure::gmm: return "gmm";
        case Measure::rwm: return "rwm";
    }
    return "?";
}

inline Measure parse_measure(std::string_view s) {
    if (s == "euclidean") return Measure::euclidean;
    if (s == "gmm") return Measure::gmm;
    if (s == "rwm") return Measure::rwm;
    throw invalid_argument("unknown measure '" + std::string{s} + "' (expected euclidean, gmm or rwm)");
}

struct BoundingBox {
    double xmin = -3.0;
    double xmax = 3.0;
    double ymin = -3.0;
    double ymax = 3.0;
};

/// Values on a regular nx x ny lattice; values(j, i) sits at (x[i], y[j]).
struct LevelGrid {
    BoundingBox box;
    std::size_t nx = 400;
    std::size_t ny = 400;
    Matrix values;

    [[nodiscard]] double x(std::size_t i) const {
        return box.xmin + (box.xmax - box.xmin) * static_cast<double>(i) / static_cast<double>(nx - 1);
    }
    [[nodiscard]] double y(std::size_t j) const {
        return box.ymin + (box.ymax - box.ymin) * static_cast<double>(j) / static_cast<double>(ny - 1);
    }
    /// Largest lattice spacing.
    [[nodiscard]] double resolution() const {
        return std::max((box.xmax - box.xmin) / static_cast<double>(nx - 1),
                        (box.ymax - box.ymin) / static_cast<double>(ny - 1));
    }
};

struct Polyline {
    double level = 0.0;
    bool closed = false;
    std::vector<std::pair<double, double>> points;
};

/// measure(anchor, p) for every lattice point p. The mixture is required for
/// gmm and rwm and must be two-dimensional.
inline LevelGrid evaluate_grid(Measure measure, const MixtureModel* model, const Vector& anchor, const BoundingBox& box,
                               std::size_t nx = 400, std::size_t ny = 400) {
    if (nx < 2 || ny < 2) throw invalid_argument("levelcurves: grid needs at least 2 x 2 points");
    if (!(box.xmax > box.xmin) || !(box.ymax > box.ymin)) throw invalid_argument("levelcurves: empty bounding box");
    if (anchor.size() != 2) throw invalid_argument("levelcurves: anchor must be two-dimensional");
    if (measure != Measure::euclidean) {
        if (model == nullptr) throw invalid_argument("levelcurves: measure '" + measure_name(measure) + "' needs a model");
        if (model->dim() != anchor.size())
            throw invalid_argument("levelcurves: anchor dimension " + std::to_string(anchor.size()) +
                                   " does not match model dimension " + std::to_string(model->dim()));
    }
    LevelGrid g{box, nx, ny, Matrix(static_cast<Eigen::Index>(ny), static_cast<Eigen::Index>(nx))};
    const Vector rho_a = measure == Measure::rwm ? responsibilities(*model, anchor) : Vector{};
    Vector p(2);
    for (std::size_t j = 0; j < ny; ++j)
        for (std::size_t i = 0; i < nx; ++i) {
            p << g.x(i), g.y(j);
            double v = 0.0;
            switch (measure) {
                case Measure::euclidean: v = euclidean(anchor, p); break;
                case Measure::gmm: v = gmm_distance(*model, anchor, p); break;
                case Measure::rwm: v = rwm_similarity(*model, anchor, p, rho_a, responsibilities(*model, p)); break;
            }
            g.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    return g;
}

namespace detail {

// Crossing points are keyed by the lattice edge they lie on, so segments from
// neighbouring cells meet at identical keys. Horizontal edge (i, j)-(i+1, j)
// has key 2 * (j * nx + i); vertical edge (i, j)-(i, j+1) has key + 1.
struct ContourBuilder {
    const LevelGrid& g;
    double level;
    std::map<std::uint64_t, std::pair<double, double>> point;
    std::map<std::uint64_t, std::vector<std::uint64_t>> adj;

    [[nodiscard]] double at(std::size_t i, std::size_t j) const {
        return g.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    }

    std::uint64_t h_edge(std::size_t i, std::size_t j) {
        const std::uint64_t key = 2 * (static_cast<std::uint64_t>(j) * g.nx + i);
        if (!point.contains(key)) {
            const double a = at(i, j);
            const double b = at(i + 1, j);
            const double t = (level - a) / (b - a);
            point[key] = {g.x(i) + t * (g.x(i + 1) - g.x(i)), g.y(j)};
        }
        return key;
    }

    std::uint64_t v_edge(std::size_t i, std::size_t j) {
        const std::uint64_t key = 2 * (static_cast<std::uint64_t>(j) * g.nx + i) + 1;
        if (!point.contains(key)) {
            const double a = at(i, j);
            const double b = at(i, j + 1);
            const double t = (level - a) / (b - a);
            point[key] = {g.x(i), g.y(j) + t * (g.y(j + 1) - g.y(j))};
        }
        return key;
    }

    void link(std::uint64_t a, std::uint64_t b) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }

    void cell(std::size_t i, std::size_t j) {
        // Corner order: 0 = (i, j), 1 = (i+1, j), 2 = (i+1, j+1), 3 = (i, j+1).
        const double v0 = at(i, j);
        const double v1 = at(i + 1, j);
        const double v2 = at(i + 1, j + 1);
        const double v3 = at(i, j + 1);
        const unsigned code = (v0 >= level ? 1U : 0U) | (v1 >= level ? 2U : 0U) | (v2 >= level ? 4U : 0U) |
                              (v3 >= level ? 8U : 0U);
        if (code == 0 || code == 15) return;
        auto bottom = [&] { return h_edge(i, j); };
        auto top = [&] { return h_edge(i, j + 1); };
        auto left = [&] { return v_edge(i, j); };
        auto right = [&] { return v_edge(i + 1, j); };
        const bool centre_high = 0.25 * (v0 + v1 + v2 + v3) >= level;
        switch (code) {
            case 1: case 14: link(left(), bottom()); break;
            case 2: case 13: link(bottom(), right()); break;
            case 3: case 12: link(left(), right()); break;
            case 4: case 11: link(right(), top()); break;
            case 6: case 9: link(bottom(), top()); break;
            case 7: case 8: link(left(), top()); break;
            case 5:
                if (centre_high) {
                    link(left(), top());
                    link(bottom(), right());
                } else {
                    link(left(), bottom());
                    link(right(), top());
                }
                break;
            case 10:
                if (centre_high) {
                    link(left(), bottom());
                    link(right(), top());
                } else {
                    link(left(), top());
                    link(bottom(), right());
                }
                break;
            default: break;
        }
    }

    // Every crossing lies on at most two cells, so nodes have degree 1 (on
    // the lattice border) or 2 and the curves are simple paths or cycles.
    std::vector<Polyline> trace() {
        std::vector<Polyline> out;
        std::map<std::uint64_t, bool> seen;
        auto walk = [&](std::uint64_t start) {
            Polyline pl;
            pl.level = level;
            std::uint64_t prev = start;
            std::uint64_t cur = start;
            for (;;) {
                seen[cur] = true;
                pl.points.push_back(point[cur]);
                std::uint64_t next = cur;
                for (const auto n : adj[cur])
                    if (n != prev && !seen[n]) next = n;
                if (next == cur) {
                    pl.closed = pl.points.size() > 2 && adj[cur].size() == 2;
                    break;
                }
                prev = cur;
                cur = next;
            }
            return pl;
        };
        for (const auto& [node, nbrs] : adj)
            if (nbrs.size() == 1 && !seen[node]) out.push_back(walk(node));
        for (const auto& [node, nbrs] : adj)
            if (!seen[node]) out.push_back(walk(node));
        return out;
    }
};

}  // namespace detail

/// Contour polylines of the grid at the given level. Saddle cells are resolved
/// with the cell-centre average.
inline std::vector<Polyline> marching_squares(const LevelGrid& g, double level) {
    detail::ContourBuilder b{g, level, {}, {}};
    for (std::size_t j = 0; j + 1 < g.ny; ++j)
        for (std::size_t i = 0; i + 1 < g.nx; ++i) b.cell(i, j);
    return b.trace();
}

inline std::vector<Polyline> contour_levels(const LevelGrid& g, const std::vector<double>& levels) {
    std::vector<Polyline> out;
    for (const double l : levels) {
        auto c = marching_squares(g, l);
        out.insert(out.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
    }
    return out;
}

/// Plot-ready text. The optional grid block lists "x y value" rows; each
/// contour is a "curve <id> level <l> closed <0|1> points <n>" header
/// followed by "x y" rows.
inline void write_levelcurves(std::ostream& os, Measure measure, const Vector& anchor, const LevelGrid& g,
                              const std::vector<Polyline>& curves, bool include_grid) {
    os << "levelcurves 1\n";
    os << "measure " << measure_name(measure) << '\n';
    os << "anchor " << format_real(anchor(0)) << ' ' << format_real(anchor(1)) << '\n';
    os << "box " << format_real(g.box.xmin) << ' ' << format_real(g.box.xmax) << ' ' << format_real(g.box.ymin) << ' '
       << format_real(g.box.ymax) << '\n';
    os << "resolution " << g.nx << ' ' << g.ny << '\n';
    if (include_grid) {
        os << "grid " << g.nx * g.ny << '\n';
        for (std::size_t j = 0; j < g.ny; ++j)
            for (std::size_t i = 0; i < g.nx; ++i)
                os << format_real(g.x(i)) << ' ' << format_real(g.y(j)) << ' '
                   << format_real(g.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i))) << '\n';
    }
    os << "curves " << curves.size() << '\n';
    for (std::size_t c = 0; c < curves.size(); ++c) {
        os << "curve " << c << " level " << format_real(curves[c].level) << " closed " << (curves[c].closed ? 1 : 0)
           << " points " << curves[c].points.size() << '\n';
        for (const auto& [x, y] : curves[c].points) os << format_real(x) << ' ' << format_real(y) << '\n';
    }
}

}  // namespace rwm
