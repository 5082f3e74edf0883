#pragma once
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "expfam.hpp"
#include "numerics.hpp"

namespace typei {

/*
 * Set of hypothesis indices (at most 64 hypotheses). Bit p is set when
 * hypothesis p belongs to the set.
 */
struct HypothesisSet {
    std::uint64_t bits = 0;

    static constexpr std::size_t max_hypotheses = 64;

    bool test(std::size_t p) const { return (bits >> p) & 1u; }
    void set(std::size_t p, bool on = true) {
        if (on) {
            bits |= std::uint64_t{1} << p;
        } else {
            bits &= ~(std::uint64_t{1} << p);
        }
    }
    bool any() const { return bits != 0; }
    bool none() const { return bits == 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::popcount(bits)); }
    bool subset_of(HypothesisSet other) const { return (bits & ~other.bits) == 0; }
    bool intersects(HypothesisSet other) const { return (bits & other.bits) != 0; }
    bool operator==(const HypothesisSet&) const = default;

    // One character per hypothesis, hypothesis 0 first.
    std::string to_string(std::size_t n) const {
        std::string s(n, '0');
        for (std::size_t p = 0; p < n; ++p)
            if (test(p)) s[p] = '1';
        return s;
    }
    static HypothesisSet from_string(const std::string& s) {
        HypothesisSet h;
        if (s.size() > max_hypotheses) throw domain_error("hypothesis signature too long");
        for (std::size_t p = 0; p < s.size(); ++p) {
            if (s[p] == '1') {
                h.set(p);
            } else if (s[p] != '0') {
                throw domain_error("hypothesis signature must be a 0/1 string");
            }
        }
        return h;
    }
};

enum class Direction { at_most, at_least };

/* Null set {theta : theta[coord_index] <= cutoff} (or >=). */
struct Hypothesis {
    std::size_t coord_index;
    double cutoff;
    Direction direction = Direction::at_most;

    bool is_null_at(std::span<const double> theta) const {
        double t = theta[coord_index];
        return direction == Direction::at_most ? t <= cutoff : t >= cutoff;
    }
};

/* Axis-aligned box Theta_0. */
struct Region {
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t dim() const { return lower.size(); }

    void validate() const {
        if (lower.empty() || lower.size() != upper.size())
            throw domain_error("region: lower and upper must be nonempty and of equal length");
        for (std::size_t i = 0; i < lower.size(); ++i) {
            if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] < upper[i]))
                throw domain_error("region: empty or non-finite extent on coordinate " +
                                   std::to_string(i));
        }
    }
};

struct Tile {
    std::size_t index = 0;
    std::vector<double> center;
    std::vector<double> half_widths;
    HypothesisSet null_signature;

    std::size_t dim() const { return center.size(); }

    // Pure-alternative tiles carry no Type I Error and are not simulated.
    bool skippable() const { return null_signature.none(); }

    double lower(std::size_t i) const { return center[i] - half_widths[i]; }
    double upper(std::size_t i) const { return center[i] + half_widths[i]; }

    std::vector<Interval> box() const {
        std::vector<Interval> b(dim());
        for (std::size_t i = 0; i < dim(); ++i) b[i] = {lower(i), upper(i)};
        return b;
    }

    // Closed-box membership.
    bool contains(std::span<const double> theta) const {
        for (std::size_t i = 0; i < dim(); ++i)
            if (theta[i] < lower(i) || theta[i] > upper(i)) return false;
        return true;
    }

    // Box restricted to coordinates [offset, offset + n).
    std::vector<Interval> box_slice(std::size_t offset, std::size_t n) const {
        std::vector<Interval> b(n);
        for (std::size_t i = 0; i < n; ++i) b[i] = {lower(offset + i), upper(offset + i)};
        return b;
    }
};

namespace domain {

namespace detail {

inline std::vector<double> axis_edges(double lo, double hi, std::size_t steps,
                                      const std::vector<double>& cutoffs) {
    std::vector<double> edges(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i)
        edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps);
    edges.back() = hi;
    double tol = 1e-12 * (hi - lo);
    for (double c : cutoffs) {
        auto it = std::lower_bound(edges.begin(), edges.end(), c);
        if (it != edges.end() && std::fabs(*it - c) <= tol) {
            *it = c;
        } else if (it != edges.begin() && std::fabs(*(it - 1) - c) <= tol) {
            *(it - 1) = c;
        } else {
            edges.insert(it, c);
        }
    }
    return edges;
}

}  // namespace detail

/*
 * Uniform grid with `steps[i]` cells along coordinate i, with any cell
 * containing a hypothesis cutoff split at that cutoff so that every
 * hypothesis boundary is a tile face. Tiles are ordered with the last
 * coordinate varying fastest.
 */
inline std::vector<Tile> build_grid(const Region& region, std::span<const std::size_t> steps,
                                    std::span<const Hypothesis> hypotheses) {
    region.validate();
    std::size_t d = region.dim();
    if (steps.size() != d) throw domain_error("build_grid: steps must have one entry per dimension");
    for (std::size_t s : steps)
        if (s < 1) throw domain_error("build_grid: steps must be >= 1");
    if (hypotheses.size() > HypothesisSet::max_hypotheses)
        throw domain_error("build_grid: at most 64 hypotheses are supported");

    std::vector<std::vector<double>> cutoffs(d);
    for (const auto& h : hypotheses) {
        if (h.coord_index >= d) throw domain_error("build_grid: hypothesis coordinate out of range");
        if (!(h.cutoff >= region.lower[h.coord_index] && h.cutoff <= region.upper[h.coord_index]))
            throw domain_error("build_grid: hypothesis cutoff outside region");
        cutoffs[h.coord_index].push_back(h.cutoff);
    }

    std::vector<std::vector<double>> edges(d);
    std::size_t total = 1;
    for (std::size_t i = 0; i < d; ++i) {
        std::sort(cutoffs[i].begin(), cutoffs[i].end());
        edges[i] = detail::axis_edges(region.lower[i], region.upper[i], steps[i], cutoffs[i]);
        total *= edges[i].size() - 1;
    }

    std::vector<Tile> tiles;
    tiles.reserve(total);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t t = 0; t < total; ++t) {
        Tile tile;
        tile.index = t;
        tile.center.resize(d);
        tile.half_widths.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
            double a = edges[i][idx[i]];
            double b = edges[i][idx[i] + 1];
            tile.center[i] = 0.5 * (a + b);
            tile.half_widths[i] = 0.5 * (b - a);
        }
        for (std::size_t p = 0; p < hypotheses.size(); ++p) {
            const auto& h = hypotheses[p];
            std::size_t c = h.coord_index;
            double a = edges[c][idx[c]];
            double b = edges[c][idx[c] + 1];
            bool null = h.direction == Direction::at_most ? b <= h.cutoff : a >= h.cutoff;
            tile.null_signature.set(p, null);
        }
        tiles.push_back(std::move(tile));
        for (std::size_t i = d; i-- > 0;) {
            if (++idx[i] < edges[i].size() - 1) break;
            idx[i] = 0;
        }
    }
    return tiles;
}

inline constexpr std::size_t default_corner_cap = 12;

/* Offsets from the tile center to each of its 2^d corners. */
inline std::vector<std::vector<double>> corners(const Tile& tile,
                                                std::size_t corner_cap = default_corner_cap) {
    std::size_t d = tile.dim();
    if (d > corner_cap)
        throw domain_error("corners: dimension " + std::to_string(d) + " exceeds corner cap " +
                           std::to_string(corner_cap));
    std::size_t n = std::size_t{1} << d;
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t i = 0; i < d; ++i)
            out[m][i] = ((m >> i) & 1u) ? tile.half_widths[i] : -tile.half_widths[i];
    return out;
}

}  // namespace domain
}  // namespace typei
