// Drives the typei binary end to end: exit codes, outputs, determinism, resume.
#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "typei/typei.hpp"

namespace fs = std::filesystem;
using namespace typei;

namespace {

const std::string kSmallGauss =
    "design = gaussian_parallel\n"
    "arms = 2\nn_per_arm = 10\nsigma = 1\nmu0 = 0\nalpha_design = 0.025\n"
    "region_lower = -1, -1\nregion_upper = 1, 1\nsteps = 4\n"
    "n_sims = 4000\ndelta = 0.01\nseed = 99\nbatch_size = 512\n";

class Cli : public ::testing::Test {
   protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("typei_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string write_cfg(const std::string& name, const std::string& text) const {
        std::ofstream(path(name)) << text;
        return path(name);
    }

    int run(const std::string& args) const {
        std::string cmd = std::string(TYPEI_CLI) + " " + args + " >>" + path("log.txt") + " 2>&1";
        int st = std::system(cmd.c_str());
        return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    }

    static std::string slurp(const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, VerifyWritesOutputs) {
    auto cfg = write_cfg("g.cfg", kSmallGauss);
    ASSERT_EQ(run("verify --config " + cfg + " --out " + path("out") + " --threads 2"), 0);
    EXPECT_TRUE(fs::exists(path("out/surface.csv")));
    EXPECT_TRUE(fs::exists(path("out/surface.meta.json")));
    EXPECT_NE(slurp(path("out/report.txt")).find("max total"), std::string::npos);
    auto s = io::load_surface(path("out"));
    EXPECT_EQ(s.meta.master_seed, 99u);
    EXPECT_EQ(s.meta.design_id, "gaussian_parallel");
    for (const auto& b : s.bounds) {
        EXPECT_EQ(b.n_sims, 4000u);
        EXPECT_LE(b.total, 1.0);
        EXPECT_GE(b.total, static_cast<double>(b.false_rej) / b.n_sims);
    }
}

TEST_F(Cli, ValidationErrorsExitTwo) {
    EXPECT_EQ(run("verify --out " + path("o")), 2);
    EXPECT_EQ(run("verify --config " + path("missing.cfg") + " --out " + path("o")), 2);
    std::string no_seed = kSmallGauss;
    no_seed.erase(no_seed.find("seed = 99\n"), 10);
    EXPECT_EQ(run("verify --config " + write_cfg("a.cfg", no_seed) + " --out " + path("o")), 2);
    EXPECT_EQ(run("verify --config " + write_cfg("b.cfg", kSmallGauss + "steps = 0\n") + " --out " + path("o")), 2);
    EXPECT_EQ(run("verify --config " + write_cfg("c.cfg", kSmallGauss + "n_sims = 0\n") + " --out " + path("o")), 2);
    EXPECT_EQ(run("verify --config " + write_cfg("d.cfg", kSmallGauss + "region_lower = -1\n") + " --out " + path("o")),
              2);
    EXPECT_EQ(run("verify --config " + write_cfg("e.cfg", kSmallGauss + "delta = 2\n") + " --out " + path("o")), 2);
    EXPECT_EQ(run("verify --config " + write_cfg("f.cfg", kSmallGauss) + " --threads 0 --out " + path("o")), 2);
    EXPECT_EQ(run("verify --config " + write_cfg("g.cfg", kSmallGauss) + " --bogus"), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_FALSE(fs::exists(path("o/surface.csv")));
}

TEST_F(Cli, SeedFlagOverridesConfig) {
    auto cfg = write_cfg("g.cfg", kSmallGauss);
    ASSERT_EQ(run("verify --config " + cfg + " --seed 12345 --out " + path("a")), 0);
    EXPECT_EQ(io::load_surface(path("a")).meta.master_seed, 12345u);
    ASSERT_EQ(run("verify --config " + cfg + " --out " + path("b")), 0);
    EXPECT_NE(slurp(path("a/surface.csv")), slurp(path("b/surface.csv")));
}

TEST_F(Cli, OutputIsIndependentOfThreadCount) {
    auto cfg = write_cfg("g.cfg", kSmallGauss);
    ASSERT_EQ(run("verify --config " + cfg + " --threads 1 --out " + path("t1")), 0);
    ASSERT_EQ(run("verify --config " + cfg + " --threads 3 --out " + path("t3")), 0);
    ASSERT_EQ(run("verify --config " + cfg + " --threads 8 --out " + path("t8")), 0);
    std::string a = slurp(path("t1/surface.csv"));
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(path("t3/surface.csv")));
    EXPECT_EQ(a, slurp(path("t8/surface.csv")));
}

TEST_F(Cli, NormalApproxFlagChangesDeltaI) {
    auto cfg = write_cfg("g.cfg", kSmallGauss);
    ASSERT_EQ(run("verify --config " + cfg + " --out " + path("cp")), 0);
    ASSERT_EQ(run("verify --config " + cfg + " --non-regulatory-normal-approx --out " + path("na")), 0);
    EXPECT_NE(slurp(path("na/report.txt")).find("non-regulatory"), std::string::npos);
    auto cp = io::load_surface(path("cp"));
    auto na = io::load_surface(path("na"));
    ASSERT_EQ(cp.bounds.size(), na.bounds.size());
    for (std::size_t i = 0; i < cp.bounds.size(); ++i) {
        EXPECT_EQ(cp.bounds[i].false_rej, na.bounds[i].false_rej);
        EXPECT_EQ(cp.bounds[i].delta_II, na.bounds[i].delta_II);
    }
}

TEST_F(Cli, CheckpointResumeReproducesOutput) {
    auto cfg = write_cfg("g.cfg", kSmallGauss);
    ASSERT_EQ(run("verify --config " + cfg + " --out " + path("full")), 0);
    ASSERT_EQ(run("verify --config " + cfg + " --checkpoint " + path("ck.bin") + " --out " + path("ck1")), 0);
    std::string full = slurp(path("full/surface.csv"));
    EXPECT_EQ(full, slurp(path("ck1/surface.csv")));

    // Cut the checkpoint mid-record, as after a crash, and resume.
    auto size = fs::file_size(path("ck.bin"));
    fs::resize_file(path("ck.bin"), size / 2 + 3);
    ASSERT_EQ(run("verify --config " + cfg + " --checkpoint " + path("ck.bin") + " --out " + path("ck2")), 0);
    EXPECT_EQ(full, slurp(path("ck2/surface.csv")));
    EXPECT_NE(slurp(path("log.txt")).find("resuming"), std::string::npos);

    // A checkpoint from a different configuration is refused.
    auto other = write_cfg("h.cfg", kSmallGauss + "n_sims = 3000\n");
    EXPECT_EQ(run("verify --config " + other + " --checkpoint " + path("ck.bin") + " --out " + path("ck3")), 2);
}

TEST_F(Cli, OracleMatchesClosedForm) {
    auto cfg = write_cfg("g.cfg", kSmallGauss);
    ASSERT_EQ(run("oracle --config " + cfg + " --out " + path("o")), 0);
    designs::GaussianParallelDesign d({});
    std::ifstream is(path("o/oracle.csv"));
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "tile_index,center_0,center_1,null_sig,f");
    std::size_t rows = 0;
    bool saw_far = false;
    while (std::getline(is, line)) {
        auto f = RunConfig::split(line, ',');
        ASSERT_EQ(f.size(), 5u);
        std::vector<double> c{std::stod(f[1]), std::stod(f[2])};
        double want = d.type_i_error(c, HypothesisSet::from_string(f[3]), 0.0);
        EXPECT_NEAR(std::stod(f[4]), want, 1e-15);
        if (c[0] == -0.75 && c[1] == -0.75) {
            saw_far = true;
            EXPECT_LT(std::stod(f[4]), 1e-3);
        }
        ++rows;
    }
    EXPECT_TRUE(saw_far);
    // 16 tiles; the 4 in the pure alternative quadrant are not listed.
    EXPECT_EQ(rows, 12u);
}

TEST_F(Cli, OracleRejectsDesignsWithoutClosedForm) {
    EXPECT_EQ(run("oracle --config " + std::string(TYPEI_CONFIGS) + "/thompson_desk.cfg --out " + path("o")), 2);
}

TEST_F(Cli, CalibrateExitCodes) {
    std::string base = kSmallGauss + "lambda_ladder = -0.02:0.02:5\n";
    auto strict = write_cfg("s.cfg", base + "alpha = 0\n");
    EXPECT_EQ(run("calibrate --config " + strict + " --out " + path("s")), 3);
    EXPECT_NE(slurp(path("s/report.txt")).find("FAILED"), std::string::npos);

    auto loose = write_cfg("l.cfg", base + "alpha = 1\n");
    ASSERT_EQ(run("calibrate --config " + loose + " --out " + path("l")), 0);
    auto s = io::load_surface(path("l"));
    EXPECT_DOUBLE_EQ(s.meta.lambda, 0.02);
    std::string ladder = slurp(path("l/ladder.csv"));
    EXPECT_EQ(ladder.substr(0, ladder.find('\n')), "lambda,max_total,min_headroom,passes");
    EXPECT_EQ(std::count(ladder.begin(), ladder.end(), '\n'), 6);

    EXPECT_EQ(run("calibrate --config " + write_cfg("b.cfg", base + "alpha = 1.5\n") + " --out " + path("b")), 2);
    EXPECT_EQ(run("calibrate --config " + write_cfg("c.cfg", base + "lambda_ladder = 0.1, 0.0\n") + " --out " +
                  path("c")),
              2);
}

TEST_F(Cli, RedesignCheck) {
    std::string fine = kSmallGauss + "steps = 16\n";
    auto up = write_cfg("u.cfg", fine);
    auto lo = write_cfg("l.cfg", fine + "bound = lower\n");
    ASSERT_EQ(run("verify --config " + up + " --out " + path("up")), 0);
    ASSERT_EQ(run("verify --config " + lo + " --out " + path("lo")), 0);
    EXPECT_EQ(io::load_surface(path("lo")).meta.kind, SurfaceKind::lower);

    std::string args = "redesign-check --g2-plus " + path("up") + " --g1-minus " + path("lo") + " --g0-plus " +
                       path("up") + " --out " + path("r");
    // Near the global null g2+ + g0+ is about twice the level while g1- is about once.
    EXPECT_EQ(run(args + " --alpha 0.025"), 4);
    std::string viol = slurp(path("r/redesign_violations.csv"));
    EXPECT_GT(std::count(viol.begin(), viol.end(), '\n'), 1);
    EXPECT_EQ(run(args + " --alpha 1"), 0);

    // Wrong surface kinds and missing directories are input errors.
    EXPECT_EQ(run("redesign-check --g2-plus " + path("up") + " --g1-minus " + path("up") + " --g0-plus " +
                  path("up") + " --out " + path("r")),
              2);
    EXPECT_EQ(run("redesign-check --g2-plus " + path("nope") + " --g1-minus " + path("lo") + " --g0-plus " +
                  path("up") + " --out " + path("r")),
              2);
    EXPECT_EQ(run("redesign-check --g2-plus " + path("up") + " --out " + path("r")), 2);
}
