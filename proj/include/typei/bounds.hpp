#pragma once
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "designs.hpp"
#include "domain.hpp"
#include "engine.hpp"

namespace typei {

struct TileBound {
    std::size_t tile_index = 0;
    double delta_I = 0.0;
    double delta_II = 0.0;
    double delta_III = 0.0;
    double total = 0.0;
    std::uint64_t n_sims = 0;
    std::uint64_t false_rej = 0;  // event count of the generating summary
};

enum class SurfaceKind { upper, lower };

struct SurfaceMetadata {
    std::string design_id;
    std::uint64_t master_seed = 0;
    std::string grid;
    double lambda = 0.0;
    SurfaceKind kind = SurfaceKind::upper;
};

/*
 * Tile-wise constant bound g over the region. For an upper surface each
 * TileBound holds the three terms of the false rejection bound and
 * total = min(1, sum). For a lower surface the terms bound the complement
 * event and total = max(0, 1 - min(1, sum)).
 */
struct BoundSurface {
    std::vector<Tile> tiles;
    std::vector<TileBound> bounds;  // one per non-skipped tile, in tile order
    double confidence = 0.0;        // 1 - delta, pointwise
    SurfaceMetadata meta;

    const TileBound* bound_for(std::size_t tile_index) const {
        auto it = std::lower_bound(bounds.begin(), bounds.end(), tile_index,
                                   [](const TileBound& b, std::size_t i) { return b.tile_index < i; });
        return it != bounds.end() && it->tile_index == tile_index ? &*it : nullptr;
    }

    /*
     * g(theta): the largest total among bounded tiles containing theta,
     * or nothing where only pure-alternative tiles (or none) contain it.
     * Lower surfaces take the smallest value instead.
     */
    std::optional<double> evaluate(std::span<const double> theta) const {
        std::optional<double> g;
        for (const auto& tile : tiles) {
            if (!tile.contains(theta)) continue;
            const TileBound* b = bound_for(tile.index);
            if (!b) continue;
            if (!g) {
                g = b->total;
            } else {
                g = meta.kind == SurfaceKind::upper ? std::max(*g, b->total) : std::min(*g, b->total);
            }
        }
        return g;
    }

    double max_total() const {
        double m = 0.0;
        for (const auto& b : bounds) m = std::max(m, b.total);
        return m;
    }
};

struct BoundOptions {
    double delta = 0.01;
    double delta_I_share = 0.5;  // fraction of delta spent on delta_I; the rest goes to delta_II
    bool normal_approx = false;  // Wald interval for delta_I instead of Clopper-Pearson
    std::optional<double> grad_l1_cap;  // deterministic bound on ||grad f||_1, if known
    std::size_t corner_cap = domain::default_corner_cap;

    double delta_I_budget() const { return delta * delta_I_share; }
    double delta_II_budget() const { return delta * (1.0 - delta_I_share); }

    void validate() const {
        if (!(delta > 0.0 && delta < 1.0)) throw domain_error("delta must lie in (0, 1)");
        if (!(delta_I_share > 0.0 && delta_I_share < 1.0)) throw domain_error("delta_I_share must lie in (0, 1)");
        if (grad_l1_cap && !(*grad_l1_cap >= 0.0)) throw domain_error("grad_l1_cap must be nonnegative");
    }
};

namespace bounds {

inline double quad_form(std::span<const double> v, const Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) s += v[i] * m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * v[j];
    return s;
}

/* Upper confidence bound on f(theta_j) from the event count. */
inline double delta_I(const TileSummary& summary, double budget, bool normal_approx = false) {
    return normal_approx ? engine::normal_approx_upper(summary.false_rej_count, summary.n_sims, budget)
                         : engine::clopper_pearson_upper(summary.false_rej_count, summary.n_sims, budget);
}

/* Cantelli width sqrt(v' H v / n * (1 / budget - 1)). */
inline double cantelli_width(double quad, std::uint64_t n_sims, double budget) {
    return std::sqrt(quad / static_cast<double>(n_sims) * (1.0 / budget - 1.0));
}

/*
 * Upper confidence bound on sup_{theta in tile} grad f(theta_j)' (theta - theta_j).
 * For each corner offset v_m, c_m = v_m' (score_sum / n) plus the Cantelli
 * width under the variance bound v_m' hess_at_center v_m / n, optionally
 * capped by det_caps[m]. The result is floored at 0.
 */
inline double delta_II(const TileSummary& summary, const Tile& tile, const Matrix& hess_at_center,
                       double budget, std::span<const double> det_caps = {},
                       std::size_t corner_cap = domain::default_corner_cap) {
    std::size_t d = tile.dim();
    if (summary.score_sum.size() != d || static_cast<std::size_t>(hess_at_center.rows()) != d)
        throw domain_error("delta_II: dimension mismatch");
    if (!(budget > 0.0 && budget <= 1.0)) throw domain_error("delta_II: budget must lie in (0, 1]");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(hess_at_center, Eigen::EigenvaluesOnly);
    double scale = std::max(1.0, hess_at_center.cwiseAbs().maxCoeff());
    if ((hess_at_center - hess_at_center.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale ||
        eig.eigenvalues().minCoeff() < -1e-12 * scale)
        throw internal_error("delta_II: variance bound matrix is not symmetric PSD");
    auto offsets = domain::corners(tile, corner_cap);
    if (!det_caps.empty() && det_caps.size() != offsets.size())
        throw domain_error("delta_II: need one deterministic cap per corner");
    double n = static_cast<double>(summary.n_sims);
    double best = 0.0;
    for (std::size_t m = 0; m < offsets.size(); ++m) {
        const auto& v = offsets[m];
        double y = 0.0;
        for (std::size_t i = 0; i < d; ++i) y += v[i] * (summary.score_sum[i] / n);
        double c = y + cantelli_width(quad_form(v, hess_at_center), summary.n_sims, budget);
        if (!det_caps.empty()) c = std::min(c, det_caps[m]);
        best = std::max(best, c);
    }
    return best;
}

/* Second-order remainder bound: max over corners of v' M v / 2. */
inline double delta_III(const Matrix& tile_max_hessian, const Tile& tile,
                        std::size_t corner_cap = domain::default_corner_cap) {
    double best = 0.0;
    for (const auto& v : domain::corners(tile, corner_cap)) best = std::max(best, 0.5 * quad_form(v, tile_max_hessian));
    return best;
}

inline double delta_III(const DesignSpec& spec, const Tile& tile,
                        std::size_t corner_cap = domain::default_corner_cap) {
    return delta_III(designs::hess_tau_max_tile(spec, tile), tile, corner_cap);
}

/* Per-corner caps v_m' grad f <= ||v_m||_inf * ||grad f||_1. */
inline std::vector<double> l1_gradient_caps(const Tile& tile, double grad_l1_cap, std::size_t corner_cap) {
    std::vector<double> caps;
    for (const auto& v : domain::corners(tile, corner_cap)) {
        double vmax = 0.0;
        for (double x : v) vmax = std::max(vmax, std::fabs(x));
        caps.push_back(vmax * grad_l1_cap);
    }
    return caps;
}

/* The three terms for one tile; `total` is their capped sum. */
inline TileBound tile_bound(const DesignSpec& spec, const Tile& tile, const TileSummary& summary,
                            const BoundOptions& opt) {
    if (summary.tile_index != tile.index) throw domain_error("tile_bound: summary belongs to another tile");
    TileBound b;
    b.tile_index = tile.index;
    b.n_sims = summary.n_sims;
    b.false_rej = summary.false_rej_count;
    b.delta_I = delta_I(summary, opt.delta_I_budget(), opt.normal_approx);
    std::vector<double> caps;
    if (opt.grad_l1_cap) caps = l1_gradient_caps(tile, *opt.grad_l1_cap, opt.corner_cap);
    b.delta_II = delta_II(summary, tile, designs::hess_tau_max(spec, tile.center), opt.delta_II_budget(), caps,
                          opt.corner_cap);
    b.delta_III = delta_III(spec, tile, opt.corner_cap);
    b.total = std::min(1.0, b.delta_I + b.delta_II + b.delta_III);
    return b;
}

namespace detail {
inline BoundSurface assemble(const DesignSpec& spec, std::span<const Tile> tiles,
                             std::span<const TileSummary> summaries, const BoundOptions& opt, SurfaceKind kind) {
    opt.validate();
    BoundSurface s;
    s.tiles.assign(tiles.begin(), tiles.end());
    s.confidence = 1.0 - opt.delta;
    s.meta.design_id = spec.id;
    s.meta.lambda = spec.lambda;
    s.meta.kind = kind;
    std::size_t next = 0;
    for (const auto& tile : tiles) {
        if (tile.skippable()) continue;
        while (next < summaries.size() && summaries[next].tile_index < tile.index) ++next;
        if (next >= summaries.size() || summaries[next].tile_index != tile.index)
            throw domain_error("assemble_surface: missing summary for tile " + std::to_string(tile.index));
        TileBound b = tile_bound(spec, tile, summaries[next], opt);
        if (kind == SurfaceKind::lower) b.total = std::max(0.0, 1.0 - b.total);
        s.bounds.push_back(b);
    }
    return s;
}
}  // namespace detail

/*
 * Upper bound surface from one false-rejection summary per non-skipped
 * tile (summaries sorted by tile index). Pointwise: for each fixed theta,
 * P(f(theta) > g(theta)) <= delta.
 */
inline BoundSurface assemble_surface(const DesignSpec& spec, std::span<const Tile> tiles,
                                     std::span<const TileSummary> summaries, const BoundOptions& opt) {
    return detail::assemble(spec, tiles, summaries, opt, SurfaceKind::upper);
}

/* Lower bound surface from summaries of the no-false-rejection event. */
inline BoundSurface lower_surface(const DesignSpec& spec, std::span<const Tile> tiles,
                                  std::span<const TileSummary> complement_summaries, const BoundOptions& opt) {
    return detail::assemble(spec, tiles, complement_summaries, opt, SurfaceKind::lower);
}

/* ------------------------------------------------------------------------ */

struct RedesignViolation {
    std::size_t tile_index;
    double margin;  // (g1- + alpha) - (g2+ + g0+), negative on violation
};

struct RedesignReport {
    bool pass = true;
    double min_margin = 0.0;
    std::vector<RedesignViolation> violations;
    double combined_confidence = 0.0;  // 1 - delta0 - delta1 - delta2
};

/*
 * Checks g2+(theta) <= g1-(theta) + alpha - g0+(theta) on every tile.
 * Evaluated as g2+ + g0+ <= g1- + alpha so that exact equality survives
 * rounding.
 */
inline RedesignReport check_redesign(const BoundSurface& g2_plus, const BoundSurface& g1_minus,
                                     const BoundSurface& g0_plus, double alpha) {
    auto same_tiling = [](const BoundSurface& a, const BoundSurface& b) {
        if (a.tiles.size() != b.tiles.size() || a.bounds.size() != b.bounds.size()) return false;
        for (std::size_t i = 0; i < a.tiles.size(); ++i)
            if (a.tiles[i].center != b.tiles[i].center || a.tiles[i].half_widths != b.tiles[i].half_widths)
                return false;
        for (std::size_t i = 0; i < a.bounds.size(); ++i)
            if (a.bounds[i].tile_index != b.bounds[i].tile_index) return false;
        return true;
    };
    if (!same_tiling(g2_plus, g1_minus) || !same_tiling(g2_plus, g0_plus))
        throw domain_error("check_redesign: surfaces use different tilings");
    if (g2_plus.meta.kind != SurfaceKind::upper || g0_plus.meta.kind != SurfaceKind::upper ||
        g1_minus.meta.kind != SurfaceKind::lower)
        throw domain_error("check_redesign: expected upper, lower, upper surfaces");
    RedesignReport r;
    r.combined_confidence = 1.0 - (1.0 - g0_plus.confidence) - (1.0 - g1_minus.confidence) - (1.0 - g2_plus.confidence);
    r.min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g2_plus.bounds.size(); ++i) {
        double margin = (g1_minus.bounds[i].total + alpha) - (g2_plus.bounds[i].total + g0_plus.bounds[i].total);
        r.min_margin = std::min(r.min_margin, margin);
        if (margin < 0.0) r.violations.push_back({g2_plus.bounds[i].tile_index, margin});
    }
    r.pass = r.violations.empty();
    return r;
}

/* ------------------------------------------------------------------------ */

struct LadderAudit {
    double lambda;
    double max_total;
    double min_headroom;  // min over tiles of alpha(tile) - total
    bool passes;
};

struct CalibrationResult {
    bool success = false;
    double lambda_prime = 0.0;
    BoundSurface surface;  // at lambda_prime
    std::vector<LadderAudit> audit;
    std::vector<std::vector<TileSummary>> base;  // per tile, per ladder value
};

/*
 * Safe calibration over an ascending lambda ladder. One simulation base is
 * drawn (trials are run once per replication with fixed sampling
 * decisions) and every ladder value re-thresholds the same outcomes.
 * lambda' is the largest ladder value whose whole ladder prefix keeps
 * g_lambda <= alpha on every tile. If even the first value fails, the
 * first (most conservative) value is returned with success = false.
 */
template <TrialDesign Design, class WithLambda>
CalibrationResult calibrate(const Design& design, WithLambda&& with_lambda, std::span<const Tile> tiles,
                            const SeedPolicy& seeds, std::span<const double> ladder,
                            const std::function<double(const Tile&)>& alpha, const BoundOptions& opt,
                            engine::RunOptions run) {
    if (ladder.empty()) throw domain_error("calibrate: empty lambda ladder");
    for (std::size_t i = 1; i < ladder.size(); ++i)
        if (!(ladder[i - 1] < ladder[i])) throw domain_error("calibrate: ladder must be strictly increasing");
    run.lambdas.assign(ladder.begin(), ladder.end());
    run.event = Event::false_rejection;
    CalibrationResult res;
    res.base = engine::simulate_tiles(design, tiles, seeds, run);

    std::vector<BoundSurface> surfaces;
    std::size_t prefix = 0;
    bool broken = false;
    for (std::size_t l = 0; l < ladder.size(); ++l) {
        std::vector<TileSummary> sums;
        for (const auto& per_tile : res.base)
            if (!per_tile.empty()) sums.push_back(per_tile[l]);
        auto tuned = with_lambda(design, ladder[l]);
        BoundSurface s = assemble_surface(tuned.spec(), tiles, sums, opt);
        s.meta.master_seed = seeds.master_seed;
        LadderAudit a{ladder[l], s.max_total(), std::numeric_limits<double>::infinity(), true};
        for (const auto& b : s.bounds) {
            double head = alpha(tiles[b.tile_index]) - b.total;
            a.min_headroom = std::min(a.min_headroom, head);
            if (head < 0.0) a.passes = false;
        }
        if (!broken && a.passes) {
            prefix = l + 1;
        } else {
            broken = true;
        }
        res.audit.push_back(a);
        surfaces.push_back(std::move(s));
    }
    res.success = prefix > 0;
    std::size_t pick = res.success ? prefix - 1 : 0;
    res.lambda_prime = ladder[pick];
    res.surface = std::move(surfaces[pick]);
    return res;
}

/* Share of the bound at one tile attributable to each source of slack. */
struct SlackBreakdown {
    std::size_t tile_index;
    double estimate;      // false_rej / n_sims
    double cp_margin;     // delta_I - estimate
    double gradient;      // delta_II
    double curvature;     // delta_III
    double total;
};

inline SlackBreakdown slack_breakdown(const TileBound& b) {
    double est = static_cast<double>(b.false_rej) / static_cast<double>(b.n_sims);
    return {b.tile_index, est, b.delta_I - est, b.delta_II, b.delta_III, b.total};
}

}  // namespace bounds
}  // namespace typei
