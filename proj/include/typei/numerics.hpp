#pragma once
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace typei {

/*
 * Thrown when a parameter falls outside the domain an operation accepts
 * (natural parameter outside its family's domain, k > n, etc.).
 */
struct domain_error : std::domain_error {
    using std::domain_error::domain_error;
};

/* Thrown for violated internal contracts (stream exhaustion, non-PSD input). */
struct internal_error : std::logic_error {
    using std::logic_error::logic_error;
};

namespace numerics {

inline constexpr double pi = 3.141592653589793238462643383279502884;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * pi);
}

/*
 * Inverse of the standard normal CDF. Acklam's rational approximation
 * followed by two Halley steps against erfc, which brings the result to
 * within a few ulps over (0, 1).
 */
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw domain_error("normal_quantile: p must lie in (0, 1)");
    // Upper half by reflection; 1 - p is exact there, the refinement below is not.
    if (p > 0.5) return -normal_quantile(1.0 - p);
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    }
    for (int i = 0; i < 2; ++i) {
        double e = normal_cdf(x) - p;
        double u = e * std::sqrt(2.0 * pi) * std::exp(0.5 * x * x);
        x = x - u / (1.0 + 0.5 * x * u);
    }
    return x;
}

inline double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace detail {

// Modified Lentz evaluation of the incomplete beta continued fraction.
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int max_iter = 100000;
    constexpr double eps = 1e-16;
    constexpr double tiny = 1e-300;
    double qab = a + b;
    double qap = a + 1.0;
    double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) return h;
    }
    throw internal_error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

/*
 * Regularized incomplete beta I_x(a, b) for a, b > 0, x in [0, 1].
 * Evaluated by continued fraction on whichever side of the mean
 * converges fastest; absolute accuracy is well below 1e-12.
 */
inline double regularized_incomplete_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw domain_error("incomplete beta: a, b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw domain_error("incomplete beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return std::exp(log_front) * detail::beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/*
 * Solves I_x(a, b) = p for x. Newton steps on the beta density,
 * safeguarded by a bracketing interval that shrinks every iteration.
 */
inline double inverse_regularized_incomplete_beta(double p, double a, double b) {
    if (!(p >= 0.0 && p <= 1.0)) throw domain_error("inverse incomplete beta: p must lie in [0, 1]");
    if (p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    double lo = 0.0;
    double hi = 1.0;
    double x = a / (a + b);
    double lb = log_beta(a, b);
    for (int iter = 0; iter < 400; ++iter) {
        double f = regularized_incomplete_beta(x, a, b) - p;
        if (f == 0.0) return x;
        if (f < 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
        double log_pdf = (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lb;
        double next = x - f / std::exp(log_pdf);
        if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
        if (next == x) break;
        x = next;
    }
    return x;
}

/*
 * Order-independent exact accumulator: each term is rounded once to a
 * 2^-60 fixed-point grid, after which addition is exact integer arithmetic.
 * Sums therefore do not depend on batching or merge order.
 */
class ExactSum {
   public:
    static constexpr int frac_bits = 60;

    void add(double v) {
        // |v| < 2^30 keeps 2^32 terms well inside the 128-bit range.
        if (!std::isfinite(v) || std::fabs(v) >= 0x1p30) {
            throw domain_error("ExactSum: term out of range");
        }
        acc_ += static_cast<__int128>(std::nearbyint(std::ldexp(v, frac_bits)));
    }
    void merge(const ExactSum& other) { acc_ += other.acc_; }
    double value() const { return std::ldexp(static_cast<double>(acc_), -frac_bits); }
    bool operator==(const ExactSum&) const = default;

   private:
    __int128 acc_ = 0;
};

/* 64-bit FNV-1a, used for config fingerprints. */
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace numerics
}  // namespace typei
