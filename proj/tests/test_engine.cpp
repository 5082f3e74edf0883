#include <gtest/gtest.h>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "typei/engine.hpp"

using namespace typei;
using designs::GaussianParallelDesign;

namespace {

GaussianParallelDesign gaussian() { return GaussianParallelDesign(GaussianParallelDesign::Params{}); }

// Upper bound by bisection on the binomial CDF: P(Bin(n, p) <= k) = tail.
double cp_by_bisection(std::uint64_t k, std::uint64_t n, double tail) {
    double lo = 0, hi = 1;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        double cdf = boost::math::cdf(boost::math::binomial_distribution<double>(static_cast<double>(n), mid),
                                      static_cast<double>(k));
        (cdf > tail ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / (std::string("typei_") + name + "_" +
                                                      std::to_string(::testing::UnitTest::GetInstance()->random_seed())))
        .string();
}

}  // namespace

TEST(ClopperPearson, Examples) {
    EXPECT_EQ(engine::clopper_pearson_upper(100, 100, 0.005), 1.0);
    EXPECT_NEAR(engine::clopper_pearson_upper(0, 100, 0.005), 1 - std::pow(0.005, 0.01), 1e-15);
    EXPECT_NEAR(engine::clopper_pearson_upper(0, 100, 0.005), 0.05161, 1e-5);
    double v = engine::clopper_pearson_upper(25, 1000, 0.005);
    EXPECT_NEAR(v, cp_by_bisection(25, 1000, 0.005), 1e-10);
    EXPECT_NEAR(v, boost::math::ibeta_inv(26.0, 975.0, 0.995), 1e-12);
    EXPECT_NEAR(engine::clopper_pearson_upper(0, 50000, 0.005), 1.06e-4, 1e-6);
    double w = engine::clopper_pearson_upper(2469, 50000, 0.005);
    EXPECT_NEAR(w, cp_by_bisection(2469, 50000, 0.005), 1e-10);
    EXPECT_GT(w, 0.0494);
    EXPECT_LT(w, 0.0525);
    EXPECT_THROW(engine::clopper_pearson_upper(5, 4, 0.005), domain_error);
}

TEST(ClopperPearson, Conservative) {
    std::mt19937_64 rng(99);
    for (double p : {0.01, 0.05, 0.2})
        for (int n : {1000, 10000}) {
            std::binomial_distribution<int> b(n, p);
            const int reps = 2000;
            int below = 0;
            for (int i = 0; i < reps; ++i) below += engine::clopper_pearson_upper(b(rng), n, 0.005) < p;
            double freq = static_cast<double>(below) / reps;
            EXPECT_LE(freq, 0.005 + 3 * std::sqrt(0.005 * 0.995 / reps)) << p << " " << n;
        }
}

TEST(NormalApprox, MatchesWaldFormula) {
    double v = engine::normal_approx_upper(50, 1000, 0.005);
    EXPECT_NEAR(v, 0.05 + 2.5758293035489 * std::sqrt(0.05 * 0.95 / 1000), 1e-12);
}

TEST(SimulateTile, SkippableTileNeverRejectsFalsely) {
    auto d = gaussian();
    Tile t{0, {0.5, 0.5}, {0.01, 0.01}, {}};
    auto s = engine::simulate_tile(d, t, 1000, SeedPolicy{1});
    EXPECT_EQ(s.false_rej_count, 0u);
    EXPECT_EQ(s.score_sum, (std::vector<double>{0.0, 0.0}));
}

TEST(SimulateTile, RatesMatchClosedForm) {
    auto d = gaussian();
    Tile a{0, {0.0, 0.0}, {1.0 / 64, 1.0 / 64}, HypothesisSet::from_string("11")};
    auto s = engine::simulate_tile(d, a, 50000, SeedPolicy{2});
    double p = 0.049375;
    EXPECT_NEAR(s.rate(), p, 5 * std::sqrt(p * (1 - p) / 50000));
    Tile b{1, {0.5, -0.5}, {1.0 / 64, 1.0 / 64}, HypothesisSet::from_string("01")};
    auto s2 = engine::simulate_tile(d, b, 50000, SeedPolicy{2});
    double q = d.rejection_probability(-0.5, 0.0);
    EXPECT_NEAR(s2.rate(), q, 5 * std::sqrt(q * (1 - q) / 50000) + 1e-12);
}

TEST(SimulateTile, UnbiasedAtRandomGridPoints) {
    auto d = gaussian();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 0.0);
    for (int i = 0; i < 20; ++i) {
        Tile t{static_cast<std::size_t>(i), {u(rng), u(rng)}, {0.01, 0.01}, HypothesisSet::from_string("11")};
        auto s = engine::simulate_tile(d, t, 20000, SeedPolicy{3});
        double p = d.type_i_error(t.center, t.null_signature, 0.0);
        EXPECT_NEAR(s.rate(), p, 5 * std::sqrt(p * (1 - p) / 20000) + 1e-9);
    }
}

TEST(SimulateTile, ScoreSumZeroWithoutEvents) {
    auto d = gaussian();
    Tile t{0, {-3.0, -3.0}, {0.01, 0.01}, HypothesisSet::from_string("11")};
    auto s = engine::simulate_tile(d, t, 500, SeedPolicy{4});
    EXPECT_EQ(s.false_rej_count, 0u);
    EXPECT_EQ(s.score_sum, (std::vector<double>{0.0, 0.0}));
}

TEST(SimulateTile, ComplementEventPartitions) {
    auto d = gaussian();
    Tile t{0, {-0.1, 0.0}, {0.01, 0.01}, HypothesisSet::from_string("11")};
    auto a = engine::simulate_tile(d, t, 3000, SeedPolicy{4}, Event::false_rejection);
    auto b = engine::simulate_tile(d, t, 3000, SeedPolicy{4}, Event::no_false_rejection);
    EXPECT_EQ(a.false_rej_count + b.false_rej_count, 3000u);
}

TEST(SimulateTile, BatchSplitMergesExactly) {
    auto d = gaussian();
    Tile t{7, {-0.05, -0.02}, {0.01, 0.01}, HypothesisSet::from_string("11")};
    double lambda = 0.0;
    std::span<const double> l(&lambda, 1);
    auto whole = engine::simulate_tile_range(d, t, 0, 5000, SeedPolicy{6}, l)[0].summary();
    for (std::uint64_t cut : {1ull, 17ull, 2500ull, 4999ull}) {
        auto a = engine::simulate_tile_range(d, t, 0, cut, SeedPolicy{6}, l)[0];
        auto b = engine::simulate_tile_range(d, t, cut, 5000, SeedPolicy{6}, l)[0];
        b.merge(a);
        EXPECT_EQ(b.summary(), whole);
    }
}

TEST(SimulateTiles, ThreadCountDoesNotChangeResults) {
    designs::ThompsonDesign t(designs::ThompsonDesign::Params{});
    double cut = std::log(1.5);
    std::vector<Hypothesis> h{{0, cut, Direction::at_most}, {1, cut, Direction::at_most}};
    auto tiles = domain::build_grid(Region{{-0.5, -0.5}, {1.5, 1.5}}, std::vector<std::size_t>{4, 4}, h);
    engine::RunOptions opt;
    opt.n_sims = 700;
    opt.batch_size = 128;
    opt.lambdas = {-0.01, 0.0, 0.02};
    std::vector<std::vector<std::vector<TileSummary>>> runs;
    for (std::size_t th : {1u, 3u, 8u}) {
        opt.threads = th;
        runs.push_back(engine::simulate_tiles(t, tiles, SeedPolicy{11}, opt));
    }
    EXPECT_EQ(runs[0], runs[1]);
    EXPECT_EQ(runs[0], runs[2]);
    opt.batch_size = 700;
    EXPECT_EQ(engine::simulate_tiles(t, tiles, SeedPolicy{11}, opt), runs[0]);
    for (std::size_t i = 0; i < tiles.size(); ++i) EXPECT_EQ(runs[0][i].empty(), tiles[i].skippable());
}

TEST(SimulateTiles, CompletedTilesAreReused) {
    auto d = gaussian();
    auto tiles = domain::build_grid(Region{{-1, -1}, {0, 0}}, std::vector<std::size_t>{2, 2}, d.null_hypotheses());
    engine::RunOptions opt;
    opt.n_sims = 100;
    auto full = engine::simulate_tiles(d, tiles, SeedPolicy{1}, opt);
    opt.completed[tiles[2].index] = full[2];
    std::vector<std::size_t> done;
    opt.on_tile_done = [&](const Tile& t, const std::vector<TileSummary>&) { done.push_back(t.index); };
    auto resumed = engine::simulate_tiles(d, tiles, SeedPolicy{1}, opt);
    EXPECT_EQ(resumed, full);
    EXPECT_EQ(done.size(), 3u);
}

TEST(SimulateTiles, Errors) {
    auto d = gaussian();
    std::vector<Tile> tiles{Tile{0, {0.0}, {0.1}, HypothesisSet::from_string("1")}};
    engine::RunOptions opt;
    opt.n_sims = 10;
    EXPECT_THROW(engine::simulate_tiles(d, tiles, SeedPolicy{1}, opt), domain_error);
    opt.n_sims = 0;
    EXPECT_THROW(engine::simulate_tiles(d, std::span<const Tile>{}, SeedPolicy{1}, opt), domain_error);
}

TEST(Checkpoint, RoundTripAndMismatch) {
    std::string path = temp_path("ckpt");
    std::filesystem::remove(path);
    EXPECT_TRUE(engine::read_checkpoint(path, 1, 2, 1).empty());
    TileSummary a{3, 100, 7, {1.25, -0.5}};
    TileSummary b{9, 100, 0, {0.0, 0.0}};
    {
        engine::CheckpointWriter w(path, 42, 2, 1, false);
        w.write({a});
    }
    {
        engine::CheckpointWriter w(path, 42, 2, 1, true);
        w.write({b});
    }
    auto m = engine::read_checkpoint(path, 42, 2, 1);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[3][0], a);
    EXPECT_EQ(m[9][0], b);
    EXPECT_THROW(engine::read_checkpoint(path, 43, 2, 1), engine::checkpoint_mismatch);
    EXPECT_THROW(engine::read_checkpoint(path, 42, 3, 1), engine::checkpoint_mismatch);
    // a torn trailing record is dropped
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
    EXPECT_EQ(engine::read_checkpoint(path, 42, 2, 1).size(), 1u);
    std::filesystem::remove(path);
}

TEST(Checkpoint, LittleEndianLayout) {
    std::string path = temp_path("layout");
    {
        engine::CheckpointWriter w(path, 0x0102030405060708ULL, 1, 1, false);
        w.write({TileSummary{5, 6, 7, {1.0}}});
    }
    std::FILE* f = std::fopen(path.c_str(), "rb");
    ASSERT_NE(f, nullptr);
    unsigned char buf[64];
    std::size_t got = std::fread(buf, 1, sizeof buf, f);
    std::fclose(f);
    ASSERT_EQ(got, 32u + 32u);
    EXPECT_EQ(std::string(reinterpret_cast<char*>(buf), 8), "TYPEICK1");
    EXPECT_EQ(buf[8], 0x08);
    EXPECT_EQ(buf[32], 5);
    EXPECT_EQ(buf[40], 6);
    EXPECT_EQ(buf[48], 7);
    EXPECT_EQ(buf[63], 0x3f);  // 1.0 = 0x3ff0000000000000
    std::filesystem::remove(path);
}
