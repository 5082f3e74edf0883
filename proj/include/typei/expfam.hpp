#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "numerics.hpp"

namespace typei {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/* Closed coordinate interval [lo, hi]. */
struct Interval {
    double lo;
    double hi;
};

namespace expfam {

namespace detail {
inline void require_dim(std::span<const double> theta, std::size_t d, const char* who) {
    if (theta.size() != d) throw domain_error(std::string(who) + ": wrong parameter dimension");
}
inline void require_finite(std::span<const double> theta, const char* who) {
    for (double t : theta)
        if (!std::isfinite(t)) throw domain_error(std::string(who) + ": non-finite parameter");
}
}  // namespace detail

/*
 * Bernoulli arm in canonical form. The natural parameter is the log-odds
 * eta; T(x) = x and A(eta) = log(1 + e^eta).
 */
struct Bernoulli {
    static constexpr const char* name = "bernoulli";
    static constexpr std::size_t param_dim = 1;
    static constexpr std::size_t uniforms_per_sample = 1;

    static double mean(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

    bool in_domain(std::span<const double> theta) const {
        return theta.size() == 1 && std::isfinite(theta[0]);
    }

    // Threshold comparison u < p.
    double sample(std::span<const double> theta, std::span<const double> uniforms) const {
        return uniforms[0] < mean(theta[0]) ? 1.0 : 0.0;
    }

    Vector suff_stat(double x) const { return Vector::Constant(1, x); }

    double log_partition(std::span<const double> theta) const {
        double eta = theta[0];
        return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    }

    Vector grad_A(std::span<const double> theta) const {
        return Vector::Constant(1, mean(theta[0]));
    }

    Matrix hess_A(std::span<const double> theta) const {
        double p = mean(theta[0]);
        return Matrix::Constant(1, 1, p * (1.0 - p));
    }

    // p(1-p) peaks at eta = 0, so the interval point nearest 0 dominates.
    Matrix hess_A_tile_max(std::span<const Interval> box) const {
        double eta = std::clamp(0.0, box[0].lo, box[0].hi);
        double p = mean(eta);
        return Matrix::Constant(1, 1, std::min(0.25, p * (1.0 - p)));
    }
};

/*
 * Gaussian arm with known standard deviation sigma, parametrized by its
 * mean mu. Density exp(mu * x / sigma^2 - mu^2 / (2 sigma^2)) against a
 * mu-free carrier, so T(x) = x / sigma^2 and the per-sample Hessian is
 * the constant sigma^-2.
 */
struct GaussianKnownVariance {
    static constexpr const char* name = "gaussian_known_variance";
    static constexpr std::size_t param_dim = 1;
    static constexpr std::size_t uniforms_per_sample = 2;

    double sigma = 1.0;

    bool in_domain(std::span<const double> theta) const {
        return theta.size() == 1 && std::isfinite(theta[0]);
    }

    double location_scale(double mu, double z) const { return mu + sigma * z; }

    double sample(std::span<const double> theta, std::span<const double> uniforms) const {
        double r = std::sqrt(-2.0 * std::log1p(-uniforms[0]));
        return location_scale(theta[0], r * std::cos(2.0 * numerics::pi * uniforms[1]));
    }

    Vector suff_stat(double x) const { return Vector::Constant(1, x / (sigma * sigma)); }

    double log_partition(std::span<const double> theta) const {
        return theta[0] * theta[0] / (2.0 * sigma * sigma);
    }

    Vector grad_A(std::span<const double> theta) const {
        return Vector::Constant(1, theta[0] / (sigma * sigma));
    }

    Matrix hess_A(std::span<const double>) const {
        return Matrix::Constant(1, 1, 1.0 / (sigma * sigma));
    }

    Matrix hess_A_tile_max(std::span<const Interval>) const {
        return Matrix::Constant(1, 1, 1.0 / (sigma * sigma));
    }
};

/*
 * Gaussian with unknown mean and variance in natural parameters
 * (eta1, eta2) = (mu / sigma^2, -1 / (2 sigma^2)); T(x) = (x, x^2).
 */
struct GaussianUnknownVariance {
    static constexpr const char* name = "gaussian_unknown_variance";
    static constexpr std::size_t param_dim = 2;
    static constexpr std::size_t uniforms_per_sample = 2;

    bool in_domain(std::span<const double> theta) const {
        return theta.size() == 2 && std::isfinite(theta[0]) && std::isfinite(theta[1]) &&
               theta[1] < 0.0;
    }

    static double mu(std::span<const double> theta) { return -theta[0] / (2.0 * theta[1]); }
    static double variance(std::span<const double> theta) { return -1.0 / (2.0 * theta[1]); }

    double sample(std::span<const double> theta, std::span<const double> uniforms) const {
        double r = std::sqrt(-2.0 * std::log1p(-uniforms[0]));
        double z = r * std::cos(2.0 * numerics::pi * uniforms[1]);
        return mu(theta) + std::sqrt(variance(theta)) * z;
    }

    Vector suff_stat(double x) const { return Vector{{x, x * x}}; }

    double log_partition(std::span<const double> theta) const {
        double e1 = theta[0];
        double e2 = theta[1];
        return -e1 * e1 / (4.0 * e2) - 0.5 * std::log(-2.0 * e2);
    }

    Vector grad_A(std::span<const double> theta) const {
        double e1 = theta[0];
        double e2 = theta[1];
        return Vector{{-e1 / (2.0 * e2), e1 * e1 / (4.0 * e2 * e2) - 1.0 / (2.0 * e2)}};
    }

    Matrix hess_A(std::span<const double> theta) const {
        double e1 = theta[0];
        double e2 = theta[1];
        Matrix h(2, 2);
        h(0, 0) = -1.0 / (2.0 * e2);
        h(0, 1) = h(1, 0) = e1 / (2.0 * e2 * e2);
        h(1, 1) = -e1 * e1 / (2.0 * e2 * e2 * e2) + 1.0 / (2.0 * e2 * e2);
        return h;
    }

    /*
     * Each entry is monotone in |eta1| and |eta2| over eta2 < 0, so its
     * interval maximum sits at max |eta1| and the eta2 endpoint nearest 0.
     * The off-diagonal magnitude bound m is then added to both diagonal
     * entries; M - H is diagonally dominant with nonnegative diagonal for
     * every H in the box, hence PSD.
     */
    Matrix hess_A_tile_max(std::span<const Interval> box) const {
        double e1_abs = std::max(std::fabs(box[0].lo), std::fabs(box[0].hi));
        double e2_abs = std::fabs(box[1].hi);  // eta2 < 0: |eta2| smallest at the upper end
        double h11 = 1.0 / (2.0 * e2_abs);
        double m12 = e1_abs / (2.0 * e2_abs * e2_abs);
        double h22 = e1_abs * e1_abs / (2.0 * e2_abs * e2_abs * e2_abs) + 1.0 / (2.0 * e2_abs * e2_abs);
        Matrix m = Matrix::Zero(2, 2);
        m(0, 0) = h11 + m12;
        m(1, 1) = h22 + m12;
        return m;
    }
};

using CanonicalFamily = std::variant<Bernoulli, GaussianKnownVariance, GaussianUnknownVariance>;

inline std::size_t param_dim(const CanonicalFamily& f) {
    return std::visit([](const auto& fam) { return std::decay_t<decltype(fam)>::param_dim; }, f);
}

inline std::size_t uniforms_per_sample(const CanonicalFamily& f) {
    return std::visit(
        [](const auto& fam) { return std::decay_t<decltype(fam)>::uniforms_per_sample; }, f);
}

inline std::string family_name(const CanonicalFamily& f) {
    return std::visit([](const auto& fam) { return std::string(fam.name); }, f);
}

inline bool in_domain(const CanonicalFamily& f, std::span<const double> theta) {
    return std::visit([&](const auto& fam) { return fam.in_domain(theta); }, f);
}

inline void require_domain(const CanonicalFamily& f, std::span<const double> theta,
                           const char* who) {
    detail::require_dim(theta, param_dim(f), who);
    detail::require_finite(theta, who);
    if (!in_domain(f, theta)) throw domain_error(std::string(who) + ": parameter outside domain");
}

inline double sample(const CanonicalFamily& f, std::span<const double> theta,
                     std::span<const double> uniforms) {
    require_domain(f, theta, "sample");
    if (uniforms.size() < uniforms_per_sample(f)) throw domain_error("sample: not enough uniform draws");
    return std::visit([&](const auto& fam) { return fam.sample(theta, uniforms); }, f);
}

inline Vector suff_stat(const CanonicalFamily& f, double x) {
    return std::visit([&](const auto& fam) { return fam.suff_stat(x); }, f);
}

inline double log_partition(const CanonicalFamily& f, std::span<const double> theta) {
    require_domain(f, theta, "log_partition");
    return std::visit([&](const auto& fam) { return fam.log_partition(theta); }, f);
}

inline Vector grad_A(const CanonicalFamily& f, std::span<const double> theta) {
    require_domain(f, theta, "grad_A");
    return std::visit([&](const auto& fam) { return fam.grad_A(theta); }, f);
}

inline Matrix hess_A(const CanonicalFamily& f, std::span<const double> theta) {
    require_domain(f, theta, "hess_A");
    return std::visit([&](const auto& fam) { return fam.hess_A(theta); }, f);
}

/* A matrix M with hess_A(theta) <= M (PSD order) for every theta in the box. */
inline Matrix hess_A_tile_max(const CanonicalFamily& f, std::span<const Interval> box) {
    if (box.size() != param_dim(f)) throw domain_error("hess_A_tile_max: wrong box dimension");
    for (const auto& iv : box) {
        if (!(iv.lo <= iv.hi)) throw domain_error("hess_A_tile_max: empty interval");
    }
    std::vector<double> lo(box.size()), hi(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) {
        lo[i] = box[i].lo;
        hi[i] = box[i].hi;
    }
    // The domains are products of open intervals, so checking both extreme corners suffices.
    require_domain(f, lo, "hess_A_tile_max");
    require_domain(f, hi, "hess_A_tile_max");
    return std::visit([&](const auto& fam) { return fam.hess_A_tile_max(box); }, f);
}

}  // namespace expfam
}  // namespace typei
