#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "domain.hpp"
#include "expfam.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace typei {

/* One arm of a design: its family, where its slice of theta starts, and its sample cap. */
struct Arm {
    expfam::CanonicalFamily family;
    std::size_t offset = 0;
    std::size_t tau_max = 0;

    std::size_t dim() const { return expfam::param_dim(family); }
    std::span<const double> slice(std::span<const double> theta) const {
        return theta.subspan(offset, dim());
    }
};

/*
 * Arms, hypothesis count and rejection tuning shared by every design.
 * lambda = 0 is the untuned design; larger lambda never removes a rejection.
 */
struct DesignSpec {
    std::string id;
    std::vector<Arm> arms;
    std::size_t n_hypotheses = 0;
    double lambda = 0.0;

    std::size_t dim() const {
        std::size_t d = 0;
        for (const auto& a : arms) d += a.dim();
        return d;
    }

    void require_domain(std::span<const double> theta, const char* who) const {
        if (theta.size() != dim()) throw domain_error(std::string(who) + ": wrong parameter dimension");
        for (const auto& a : arms) expfam::require_domain(a.family, a.slice(theta), who);
    }
};

/* Result of one simulated trial. */
struct TrialOutcome {
    HypothesisSet rejections;
    std::vector<double> statistics;  // per-hypothesis test statistic, re-thresholded for other lambdas
    Vector suff_stat;                // T(X_tau), stacked across arms
    std::vector<std::size_t> arm_counts;
};

template <class D>
concept TrialDesign = requires(const D& d, std::span<const double> theta, Substream& s,
                               TrialOutcome& out, double lambda) {
    { d.spec() } -> std::convertible_to<const DesignSpec&>;
    d.run_trial(theta, s, out);
    { d.rejections_at(out, lambda) } -> std::same_as<HypothesisSet>;
    { d.max_stream_blocks() } -> std::convertible_to<std::uint64_t>;
    { d.null_hypotheses() } -> std::convertible_to<std::vector<Hypothesis>>;
};

namespace designs {

/* Stacked sum_k n_{tau,k} * grad_A_k(theta_j). */
inline Vector grad_A_tau(const DesignSpec& spec, const TrialOutcome& outcome,
                         std::span<const double> theta_j) {
    spec.require_domain(theta_j, "grad_A_tau");
    Vector g(spec.dim());
    for (std::size_t k = 0; k < spec.arms.size(); ++k) {
        const auto& arm = spec.arms[k];
        g.segment(arm.offset, arm.dim()) =
            static_cast<double>(outcome.arm_counts[k]) * expfam::grad_A(arm.family, arm.slice(theta_j));
    }
    return g;
}

/* The stopped score T(X_tau) - grad A_tau(theta_j). */
inline Vector score_vector(const DesignSpec& spec, const TrialOutcome& outcome,
                           std::span<const double> theta_j) {
    return outcome.suff_stat - grad_A_tau(spec, outcome, theta_j);
}

/*
 * Precomputed per-arm grad_A at a fixed theta_j, so that the score of many
 * outcomes can be formed without re-evaluating the family.
 */
class ScoreEvaluator {
   public:
    ScoreEvaluator(const DesignSpec& spec, std::span<const double> theta_j) : spec_(&spec) {
        spec.require_domain(theta_j, "ScoreEvaluator");
        for (const auto& arm : spec.arms) means_.push_back(expfam::grad_A(arm.family, arm.slice(theta_j)));
    }

    template <class Out>
    void operator()(const TrialOutcome& outcome, Out&& out) const {
        for (std::size_t k = 0; k < spec_->arms.size(); ++k) {
            const auto& arm = spec_->arms[k];
            double n = static_cast<double>(outcome.arm_counts[k]);
            for (std::size_t i = 0; i < arm.dim(); ++i)
                out[arm.offset + i] = outcome.suff_stat[arm.offset + i] - n * means_[k][i];
        }
    }

   private:
    const DesignSpec* spec_;
    std::vector<Vector> means_;
};

/* Cov(T(X_tau_max)) = sum_k tau_max[k] * hess_A_k(theta), block diagonal. */
inline Matrix hess_tau_max(const DesignSpec& spec, std::span<const double> theta) {
    spec.require_domain(theta, "hess_tau_max");
    Matrix h = Matrix::Zero(spec.dim(), spec.dim());
    for (const auto& arm : spec.arms)
        h.block(arm.offset, arm.offset, arm.dim(), arm.dim()) =
            static_cast<double>(arm.tau_max) * expfam::hess_A(arm.family, arm.slice(theta));
    return h;
}

/* Block-diagonal PSD upper bound on Cov(T(X_tau_max)) over the whole tile. */
inline Matrix hess_tau_max_tile(const DesignSpec& spec, const Tile& tile) {
    if (tile.dim() != spec.dim()) throw domain_error("hess_tau_max_tile: wrong tile dimension");
    Matrix h = Matrix::Zero(spec.dim(), spec.dim());
    for (const auto& arm : spec.arms) {
        auto box = tile.box_slice(arm.offset, arm.dim());
        h.block(arm.offset, arm.offset, arm.dim(), arm.dim()) =
            static_cast<double>(arm.tau_max) * expfam::hess_A_tile_max(arm.family, box);
    }
    return h;
}

/* ------------------------------------------------------------------------ */

/*
 * K independent one-sample z-tests run in parallel, n patients each,
 * known sigma. Arm k rejects H_k : mu_k <= mu0 when
 * (ybar_k - mu0) / (sigma / sqrt(n)) > z_{1-alpha} - lambda.
 *
 * Each arm's outcome sum is drawn directly as n * mu + sigma * sqrt(n) * z,
 * which has exactly the distribution of the sum of n draws.
 */
class GaussianParallelDesign {
   public:
    struct Params {
        std::size_t n_arms = 2;
        std::size_t n_per_arm = 10;
        double sigma = 1.0;
        double mu0 = 0.0;
        double alpha = 0.025;
        double lambda = 0.0;
    };

    explicit GaussianParallelDesign(Params p) : p_(p) {
        if (p.n_arms < 1 || p.n_arms > HypothesisSet::max_hypotheses)
            throw domain_error("gaussian design: n_arms must lie in [1, 64]");
        if (p.n_per_arm < 1) throw domain_error("gaussian design: n_per_arm must be >= 1");
        if (!(p.sigma > 0.0)) throw domain_error("gaussian design: sigma must be positive");
        if (!(p.alpha > 0.0 && p.alpha < 1.0)) throw domain_error("gaussian design: alpha must lie in (0, 1)");
        if (!std::isfinite(p.mu0) || !std::isfinite(p.lambda))
            throw domain_error("gaussian design: mu0 and lambda must be finite");
        z_crit_ = numerics::normal_quantile(1.0 - p.alpha);
        spec_.id = "gaussian_parallel";
        spec_.n_hypotheses = p.n_arms;
        spec_.lambda = p.lambda;
        for (std::size_t k = 0; k < p.n_arms; ++k)
            spec_.arms.push_back(Arm{expfam::GaussianKnownVariance{p.sigma}, k, p.n_per_arm});
    }

    const DesignSpec& spec() const { return spec_; }
    const Params& params() const { return p_; }
    double z_crit() const { return z_crit_; }

    GaussianParallelDesign with_lambda(double lambda) const {
        Params q = p_;
        q.lambda = lambda;
        return GaussianParallelDesign(q);
    }

    std::vector<Hypothesis> null_hypotheses() const {
        std::vector<Hypothesis> h;
        for (std::size_t k = 0; k < p_.n_arms; ++k) h.push_back({k, p_.mu0, Direction::at_most});
        return h;
    }

    std::uint64_t max_stream_blocks() const { return (p_.n_arms + 1) / 2; }

    // Applies the design's rule to already computed standardized statistics.
    void finish_trial(std::span<const double> theta, std::span<const double> z,
                      TrialOutcome& out) const {
        double n = static_cast<double>(p_.n_per_arm);
        double se = p_.sigma / std::sqrt(n);
        out.statistics.resize(p_.n_arms);
        out.suff_stat.resize(p_.n_arms);
        out.arm_counts.assign(p_.n_arms, p_.n_per_arm);
        for (std::size_t k = 0; k < p_.n_arms; ++k) {
            double sum = n * theta[k] + p_.sigma * std::sqrt(n) * z[k];
            out.suff_stat[k] = sum / (p_.sigma * p_.sigma);
            out.statistics[k] = (sum / n - p_.mu0) / se;
        }
        out.rejections = rejections_at(out, p_.lambda);
    }

    template <UniformStream Stream>
    void run_trial(std::span<const double> theta, Stream& stream, TrialOutcome& out) const {
        std::array<double, HypothesisSet::max_hypotheses> z;
        for (std::size_t k = 0; k < p_.n_arms; k += 2) {
            auto pair = normal_pair(stream);
            z[k] = pair[0];
            if (k + 1 < p_.n_arms) z[k + 1] = pair[1];
        }
        finish_trial(theta, std::span<const double>(z.data(), p_.n_arms), out);
    }

    HypothesisSet rejections_at(const TrialOutcome& out, double lambda) const {
        HypothesisSet r;
        for (std::size_t k = 0; k < p_.n_arms; ++k) r.set(k, out.statistics[k] > z_crit_ - lambda);
        return r;
    }

    // Exact rejection probability of arm k at mean mu.
    double rejection_probability(double mu, double lambda) const {
        double shift = (mu - p_.mu0) * std::sqrt(static_cast<double>(p_.n_per_arm)) / p_.sigma;
        return numerics::normal_cdf(-(z_crit_ - lambda) + shift);
    }

    // Exact probability of rejecting at least one hypothesis in `null_set`.
    double type_i_error(std::span<const double> theta, HypothesisSet null_set, double lambda) const {
        double keep = 1.0;
        for (std::size_t k = 0; k < p_.n_arms; ++k)
            if (null_set.test(k)) keep *= 1.0 - rejection_probability(theta[k], lambda);
        return 1.0 - keep;
    }

    // Same, with null status evaluated pointwise at theta.
    double type_i_error(std::span<const double> theta) const {
        HypothesisSet null_set;
        for (std::size_t k = 0; k < p_.n_arms; ++k) null_set.set(k, theta[k] <= p_.mu0);
        return type_i_error(theta, null_set, p_.lambda);
    }

   private:
    Params p_;
    DesignSpec spec_;
    double z_crit_ = 0.0;
};

/* ------------------------------------------------------------------------ */

struct BetaParams {
    double a;
    double b;
};

/* Tie-breaking state for posterior draws: rotates through tied arms. */
struct AlternationCounter {
    std::size_t next = 0;
};

namespace detail {

// Marsaglia-Tsang gamma(shape >= 1, scale 1) from a uniform stream.
template <UniformStream Stream>
double gamma_draw(double shape, Stream& stream) {
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double z = normal_pair(stream)[0];
        double v = 1.0 + c * z;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = stream.uniform();
        if (std::log1p(-u) < 0.5 * z * z + d - d * v + d * std::log(v)) return d * v;
    }
}

}  // namespace detail

/* Beta(a, b) via the gamma ratio G_a / (G_a + G_b). */
template <UniformStream Stream>
double beta_draw(BetaParams p, Stream& stream) {
    double x = detail::gamma_draw(p.a, stream);
    double y = detail::gamma_draw(p.b, stream);
    return x / (x + y);
}

/*
 * Thompson sampling allocation: one posterior draw per arm, argmax wins.
 * Exact ties go to the tied arms in rotation.
 */
template <UniformStream Stream>
std::size_t thompson_allocate(std::span<const BetaParams> posteriors, Stream& stream,
                              AlternationCounter& counter) {
    if (posteriors.empty()) throw domain_error("thompson_allocate: no arms");
    for (const auto& p : posteriors)
        if (!(p.a >= 1.0 && p.b >= 1.0) || !std::isfinite(p.a) || !std::isfinite(p.b))
            throw domain_error("thompson_allocate: Beta parameters must be >= 1");
    std::array<double, 64> draws;
    if (posteriors.size() > draws.size()) throw domain_error("thompson_allocate: too many arms");
    double best = -1.0;
    for (std::size_t k = 0; k < posteriors.size(); ++k) {
        draws[k] = beta_draw(posteriors[k], stream);
        best = std::max(best, draws[k]);
    }
    std::size_t n_tied = 0;
    for (std::size_t k = 0; k < posteriors.size(); ++k) n_tied += draws[k] == best;
    std::size_t pick = n_tied == 1 ? 0 : counter.next++ % n_tied;
    for (std::size_t k = 0; k < posteriors.size(); ++k) {
        if (draws[k] != best) continue;
        if (pick == 0) return k;
        --pick;
    }
    return 0;  // unreachable
}

/* Posterior mass above p0 under the Beta(1 + s, 1 + f) posterior of a uniform prior. */
inline double posterior_tail(std::size_t successes, std::size_t failures, double p0) {
    return numerics::regularized_incomplete_beta(1.0 - p0, 1.0 + static_cast<double>(failures),
                                                 1.0 + static_cast<double>(successes));
}

/* Rejects hypothesis i when its posterior tail mass is at least threshold - lambda. */
inline HypothesisSet thompson_reject(std::span<const std::size_t> successes,
                                     std::span<const std::size_t> failures, double p0,
                                     double threshold, double lambda) {
    if (successes.size() != failures.size()) throw domain_error("thompson_reject: count length mismatch");
    if (!(p0 > 0.0 && p0 < 1.0)) throw domain_error("thompson_reject: p0 must lie in (0, 1)");
    if (!(threshold > 0.0 && threshold < 1.0)) throw domain_error("thompson_reject: threshold must lie in (0, 1)");
    HypothesisSet r;
    for (std::size_t i = 0; i < successes.size(); ++i)
        r.set(i, posterior_tail(successes[i], failures[i], p0) >= threshold - lambda);
    return r;
}

/*
 * P(X0 > X1) for independent X0 ~ Beta(a0, b0), X1 ~ Beta(a1, b1) with
 * integer parameters, as the finite sum over i < a0 of
 * B(a1 + i, b0 + b1) / ((b0 + i) B(1 + i, b0) B(a1, b1)),
 * with consecutive terms related by a rational factor.
 */
namespace detail {
// lg(k) must return lgamma(k) for positive integers k.
template <class LogGamma>
double win_probability_sum(int a0, int b0, int a1, int b1, const LogGamma& lg) {
    double log_t0 = (lg(a1) + lg(b0 + b1) - lg(a1 + b0 + b1)) - (lg(a1) + lg(b1) - lg(a1 + b1));
    double term = std::exp(log_t0);
    double sum = 0.0;
    for (int i = 0; i < a0; ++i) {
        sum += term;
        term *= static_cast<double>(a1 + i) * static_cast<double>(b0 + i) /
                (static_cast<double>(a1 + i + b0 + b1) * static_cast<double>(1 + i));
    }
    return std::min(1.0, sum);
}
}  // namespace detail

inline double beta_win_probability(int a0, int b0, int a1, int b1) {
    if (a0 < 1 || b0 < 1 || a1 < 1 || b1 < 1) throw domain_error("beta_win_probability: parameters must be >= 1");
    return detail::win_probability_sum(a0, b0, a1, b1, [](int k) { return std::lgamma(static_cast<double>(k)); });
}

/*
 * Two-arm Bernoulli trial with n_total patients allocated one at a time by
 * Thompson sampling under independent uniform priors. At the end, arm i's
 * hypothesis p_i <= p0 is rejected when the posterior mass above p0 is at
 * least threshold - lambda. theta holds the two arms' log-odds.
 *
 * Allocation has two interchangeable implementations. `posterior_draw`
 * samples both Beta posteriors and takes the argmax. `win_probability`
 * sends the patient to arm 0 with probability P(X0 > X1), precomputed for
 * every reachable posterior state; this is the same allocation
 * distribution at the cost of one uniform per patient.
 */
class ThompsonDesign {
   public:
    enum class Allocation { win_probability, posterior_draw };

    struct Params {
        std::size_t n_total = 100;
        double p0 = 0.6;
        double threshold = 0.95;
        double lambda = 0.0;
        Allocation allocation = Allocation::win_probability;
    };

    explicit ThompsonDesign(Params p) : p_(p) {
        if (p.n_total < 1 || p.n_total > 1000) throw domain_error("thompson design: n_total must lie in [1, 1000]");
        if (!(p.p0 > 0.0 && p.p0 < 1.0)) throw domain_error("thompson design: p0 must lie in (0, 1)");
        if (!(p.threshold > 0.0 && p.threshold < 1.0))
            throw domain_error("thompson design: threshold must lie in (0, 1)");
        if (!std::isfinite(p.lambda)) throw domain_error("thompson design: lambda must be finite");
        spec_.id = "thompson";
        spec_.n_hypotheses = 2;
        spec_.lambda = p.lambda;
        spec_.arms.push_back(Arm{expfam::Bernoulli{}, 0, p.n_total});
        spec_.arms.push_back(Arm{expfam::Bernoulli{}, 1, p.n_total});
        tables_ = std::make_shared<Tables>(p.n_total, p.p0);
    }

    const DesignSpec& spec() const { return spec_; }
    const Params& params() const { return p_; }

    ThompsonDesign with_lambda(double lambda) const {
        ThompsonDesign d = *this;
        d.p_.lambda = lambda;
        d.spec_.lambda = lambda;
        return d;
    }

    std::vector<Hypothesis> null_hypotheses() const {
        double cutoff = std::log(p_.p0 / (1.0 - p_.p0));
        return {{0, cutoff, Direction::at_most}, {1, cutoff, Direction::at_most}};
    }

    std::uint64_t max_stream_blocks() const {
        // Two uniforms (one block) per patient.
        if (p_.allocation == Allocation::win_probability) return p_.n_total;
        // Rejection sampling consumes a random number of draws.
        return std::uint64_t{1} << 32;
    }

    double win_probability(std::size_t s0, std::size_t f0, std::size_t s1, std::size_t f1) const {
        return tables_->win[tables_->index(s0, f0, s1, f1)];
    }

    template <UniformStream Stream>
    void run_trial(std::span<const double> theta, Stream& stream, TrialOutcome& out) const {
        std::array<double, 2> p = {expfam::Bernoulli::mean(theta[0]), expfam::Bernoulli::mean(theta[1])};
        std::array<std::size_t, 2> s{0, 0};
        std::array<std::size_t, 2> f{0, 0};
        AlternationCounter counter;
        const Tables& tab = *tables_;
        for (std::size_t t = 0; t < p_.n_total; ++t) {
            std::size_t arm;
            if (p_.allocation == Allocation::win_probability) {
                arm = stream.uniform() < tab.win[tab.index(s[0], f[0], s[1], f[1])] ? 0 : 1;
            } else {
                std::array<BetaParams, 2> post = {
                    BetaParams{1.0 + static_cast<double>(s[0]), 1.0 + static_cast<double>(f[0])},
                    BetaParams{1.0 + static_cast<double>(s[1]), 1.0 + static_cast<double>(f[1])}};
                arm = thompson_allocate(std::span<const BetaParams>(post), stream, counter);
            }
            if (stream.uniform() < p[arm]) {
                ++s[arm];
            } else {
                ++f[arm];
            }
        }
        out.statistics.resize(2);
        out.suff_stat.resize(2);
        out.arm_counts.resize(2);
        for (std::size_t k = 0; k < 2; ++k) {
            out.statistics[k] = tab.tail[tab.tail_index(s[k], f[k])];
            out.suff_stat[k] = static_cast<double>(s[k]);
            out.arm_counts[k] = s[k] + f[k];
        }
        out.rejections = rejections_at(out, p_.lambda);
    }

    HypothesisSet rejections_at(const TrialOutcome& out, double lambda) const {
        HypothesisSet r;
        for (std::size_t k = 0; k < 2; ++k) r.set(k, out.statistics[k] >= p_.threshold - lambda);
        return r;
    }

   private:
    struct Tables {
        std::size_t n;
        std::vector<std::size_t> base;  // (n0, s0) -> first index of that block
        std::vector<double> win;
        std::vector<double> tail;

        Tables(std::size_t n_total, double p0) : n(n_total) {
            base.assign(n * (n + 1), 0);
            std::size_t next = 0;
            for (std::size_t n0 = 0; n0 < n; ++n0) {
                std::size_t rest = n - n0;  // n1 ranges over [0, rest)
                for (std::size_t s0 = 0; s0 <= n0; ++s0) {
                    base[n0 * (n + 1) + s0] = next;
                    next += rest * (rest + 1) / 2;
                }
            }
            win.resize(next);
            std::vector<double> lgam(2 * n + 3);
            for (std::size_t k = 1; k < lgam.size(); ++k) lgam[k] = std::lgamma(static_cast<double>(k));
            auto lg = [&](int k) { return lgam[static_cast<std::size_t>(k)]; };
            for (std::size_t n0 = 0; n0 < n; ++n0)
                for (std::size_t s0 = 0; s0 <= n0; ++s0)
                    for (std::size_t n1 = 0; n0 + n1 < n; ++n1)
                        for (std::size_t s1 = 0; s1 <= n1; ++s1)
                            win[index(s0, n0 - s0, s1, n1 - s1)] = detail::win_probability_sum(
                                static_cast<int>(1 + s0), static_cast<int>(1 + n0 - s0),
                                static_cast<int>(1 + s1), static_cast<int>(1 + n1 - s1), lg);
            tail.resize((n + 1) * (n + 1));
            for (std::size_t s = 0; s <= n; ++s)
                for (std::size_t f = 0; s + f <= n; ++f) tail[tail_index(s, f)] = posterior_tail(s, f, p0);
        }

        std::size_t index(std::size_t s0, std::size_t f0, std::size_t s1, std::size_t f1) const {
            std::size_t n1 = s1 + f1;
            return base[(s0 + f0) * (n + 1) + s0] + n1 * (n1 + 1) / 2 + s1;
        }
        std::size_t tail_index(std::size_t s, std::size_t f) const { return s * (n + 1) + f; }
    };

    Params p_;
    DesignSpec spec_;
    std::shared_ptr<const Tables> tables_;
};

}  // namespace designs
}  // namespace typei
