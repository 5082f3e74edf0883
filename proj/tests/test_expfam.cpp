#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>
#include <vector>

#include "typei/expfam.hpp"
#include "typei/rng.hpp"

using namespace typei;
using expfam::CanonicalFamily;

namespace {

std::vector<std::pair<CanonicalFamily, std::vector<double>>> cases() {
    return {
        {expfam::Bernoulli{}, {-2.0}},
        {expfam::Bernoulli{}, {0.3}},
        {expfam::Bernoulli{}, {25.0}},
        {expfam::GaussianKnownVariance{1.0}, {0.4}},
        {expfam::GaussianKnownVariance{2.5}, {-1.2}},
        {expfam::GaussianUnknownVariance{}, {0.5, -0.5}},
        {expfam::GaussianUnknownVariance{}, {-1.5, -2.0}},
    };
}

}  // namespace

TEST(Expfam, GradientMatchesFiniteDifference) {
    for (auto& [f, theta] : cases()) {
        Vector g = expfam::grad_A(f, theta);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            double h = 1e-5;
            auto tp = theta, tm = theta;
            tp[i] += h;
            tm[i] -= h;
            double fd = (expfam::log_partition(f, tp) - expfam::log_partition(f, tm)) / (2 * h);
            EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::fabs(fd))) << expfam::family_name(f);
        }
    }
}

TEST(Expfam, HessianMatchesFiniteDifference) {
    for (auto& [f, theta] : cases()) {
        Matrix H = expfam::hess_A(f, theta);
        for (std::size_t j = 0; j < theta.size(); ++j) {
            double h = 1e-5;
            auto tp = theta, tm = theta;
            tp[j] += h;
            tm[j] -= h;
            Vector fd = (expfam::grad_A(f, tp) - expfam::grad_A(f, tm)) / (2 * h);
            for (std::size_t i = 0; i < theta.size(); ++i)
                EXPECT_NEAR(H(i, j), fd[i], 1e-5 * std::max(1.0, std::fabs(fd[i])));
        }
    }
}

TEST(Expfam, BernoulliMeanAndVariance) {
    expfam::Bernoulli b;
    std::vector<double> eta{std::log(0.6 / 0.4)};
    EXPECT_NEAR(expfam::grad_A(b, eta)[0], 0.6, 1e-15);
    EXPECT_NEAR(expfam::hess_A(b, eta)(0, 0), 0.24, 1e-15);
    std::vector<double> big{800.0};
    EXPECT_TRUE(std::isfinite(expfam::log_partition(b, big)));
    EXPECT_NEAR(expfam::log_partition(b, big), 800.0, 1e-12);
}

TEST(Expfam, UnknownVarianceMoments) {
    expfam::GaussianUnknownVariance g;
    double mu = 1.3, var = 0.7;
    std::vector<double> theta{mu / var, -1.0 / (2 * var)};
    Vector m = expfam::grad_A(g, theta);
    EXPECT_NEAR(m[0], mu, 1e-14);
    EXPECT_NEAR(m[1], var + mu * mu, 1e-14);
    Matrix H = expfam::hess_A(g, theta);
    EXPECT_NEAR(H(0, 0), var, 1e-14);
    EXPECT_NEAR(H(0, 1), 2 * mu * var, 1e-13);
    EXPECT_NEAR(H(1, 1), 2 * var * var + 4 * mu * mu * var, 1e-13);
}

TEST(Expfam, SampleMomentsMatchGradient) {
    Substream s(3, 0, 0);
    for (auto& [f, theta] : cases()) {
        if (std::fabs(theta[0]) > 10) continue;
        std::size_t d = theta.size();
        Vector sum = Vector::Zero(d);
        const int n = 200000;
        std::vector<double> u(expfam::uniforms_per_sample(f));
        for (int i = 0; i < n; ++i) {
            for (auto& x : u) x = s.uniform();
            sum += expfam::suff_stat(f, expfam::sample(f, theta, u));
        }
        Vector mean = sum / n;
        Vector g = expfam::grad_A(f, theta);
        Matrix H = expfam::hess_A(f, theta);
        for (std::size_t i = 0; i < d; ++i)
            EXPECT_NEAR(mean[i], g[i], 5 * std::sqrt(H(i, i) / n)) << expfam::family_name(f);
    }
}

TEST(Expfam, TileMaxDominatesHessianOnBox) {
    std::mt19937_64 rng(11);
    std::vector<std::pair<CanonicalFamily, std::vector<Interval>>> boxes = {
        {expfam::Bernoulli{}, {{-0.3, 0.2}}},
        {expfam::Bernoulli{}, {{0.5, 1.5}}},
        {expfam::Bernoulli{}, {{-3.0, -1.0}}},
        {expfam::GaussianKnownVariance{0.5}, {{-1.0, 1.0}}},
        {expfam::GaussianUnknownVariance{}, {{-1.0, 0.5}, {-2.0, -0.5}}},
        {expfam::GaussianUnknownVariance{}, {{0.2, 0.3}, {-0.4, -0.3}}},
    };
    for (auto& [f, box] : boxes) {
        Matrix M = expfam::hess_A_tile_max(f, box);
        for (int k = 0; k < 500; ++k) {
            std::vector<double> theta;
            for (auto& iv : box) theta.push_back(std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng));
            if (k < 4 && box.size() == 2) theta = {k & 1 ? box[0].hi : box[0].lo, k & 2 ? box[1].hi : box[1].lo};
            Matrix diff = M - expfam::hess_A(f, theta);
            Eigen::SelfAdjointEigenSolver<Matrix> eig(diff);
            EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12) << expfam::family_name(f);
        }
    }
}

TEST(Expfam, BernoulliTileMaxIsAttained) {
    std::vector<Interval> box{{0.5, 1.5}};
    double p = 1.0 / (1.0 + std::exp(-0.5));
    EXPECT_NEAR(expfam::hess_A_tile_max(expfam::Bernoulli{}, box)(0, 0), p * (1 - p), 1e-15);
    std::vector<Interval> around0{{-0.1, 0.1}};
    EXPECT_EQ(expfam::hess_A_tile_max(expfam::Bernoulli{}, around0)(0, 0), 0.25);
}

TEST(Expfam, DomainErrors) {
    expfam::GaussianUnknownVariance g;
    std::vector<double> bad{0.0, 0.1};
    EXPECT_THROW(expfam::grad_A(g, bad), domain_error);
    EXPECT_THROW(expfam::hess_A(g, bad), domain_error);
    std::vector<double> wrong_dim{0.0, -1.0};
    EXPECT_THROW(expfam::grad_A(expfam::Bernoulli{}, wrong_dim), domain_error);
    std::vector<double> nan{std::nan("")};
    EXPECT_THROW(expfam::log_partition(expfam::Bernoulli{}, nan), domain_error);
    std::vector<Interval> crosses{{0.0, 1.0}, {-1.0, 0.5}};
    EXPECT_THROW(expfam::hess_A_tile_max(g, crosses), domain_error);
}
