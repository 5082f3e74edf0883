#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "typei/typei.hpp"

using namespace typei;

namespace {

enum Exit { ok = 0, internal = 1, validation = 2, calibration_failed = 3, redesign_violation = 4 };

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "typei_out";
    std::optional<std::size_t> threads;
    std::string checkpoint;
    bool normal_approx = false;
};

struct Prepared {
    RunConfig cfg;
    AnyDesign design;
    std::vector<Tile> tiles;
    BoundOptions bopt;
    std::uint64_t seed = 0;
    std::uint64_t n_sims = 0;
    std::size_t threads = 1;
};

Prepared prepare(const GlobalFlags& g) {
    if (g.config.empty()) throw config_error("--config is required");
    RunConfig cfg = RunConfig::from_file(g.config);
    if (g.seed) cfg.set("seed", std::to_string(*g.seed));
    if (g.normal_approx) cfg.set("normal_approx", "true");
    AnyDesign design = cfg.design();
    Prepared p{cfg, design, cfg.tiles(design), cfg.bound_options(), cfg.seed(), cfg.n_sims(), 1};
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    p.threads = g.threads ? *g.threads : static_cast<std::size_t>(cfg.get_u64("threads", hw));
    if (p.threads < 1 || p.threads > 4096) throw config_error("threads must lie in [1, 4096]");
    std::uint64_t batch = cfg.get_u64("batch_size", 4096);
    if (batch < 1) throw config_error("config: batch_size must be >= 1");
    return p;
}

std::uint64_t config_hash(const Prepared& p, const std::string& command) {
    return numerics::fnv1a(command + "\n" + p.cfg.canonical({"threads", "out", "checkpoint"}));
}

std::size_t n_hypotheses(const Prepared& p) { return design_spec(p.design).n_hypotheses; }

/* Runs the engine with optional checkpoint/resume. */
std::vector<std::vector<TileSummary>> run_engine(const Prepared& p, const GlobalFlags& g, const std::string& command,
                                                 std::vector<double> lambdas, Event event) {
    engine::RunOptions run;
    run.n_sims = p.n_sims;
    run.threads = p.threads;
    run.batch_size = p.cfg.get_u64("batch_size", 4096);
    run.event = event;
    run.lambdas = lambdas;
    std::size_t n_l = std::max<std::size_t>(1, lambdas.size());
    std::size_t dim = design_spec(p.design).dim();
    std::unique_ptr<engine::CheckpointWriter> writer;
    std::string ck = !g.checkpoint.empty() ? g.checkpoint : p.cfg.get("checkpoint", std::string());
    if (!ck.empty()) {
        std::uint64_t hash = config_hash(p, command);
        auto done = engine::read_checkpoint(ck, hash, dim, n_l);
        bool exists = std::filesystem::exists(ck);
        for (auto& [idx, v] : done)
            if (idx < p.tiles.size() && !p.tiles[idx].skippable()) run.completed[idx] = v;
        if (!done.empty()) std::cerr << "resuming: " << run.completed.size() << " tiles from checkpoint\n";
        writer = std::make_unique<engine::CheckpointWriter>(ck, hash, dim, n_l, exists);
        run.on_tile_done = [&](const Tile&, const std::vector<TileSummary>& s) { writer->write(s); };
    }
    return std::visit(
        [&](const auto& d) { return engine::simulate_tiles(d, p.tiles, SeedPolicy{p.seed}, run); }, p.design);
}

void write_surface(const std::string& dir, const BoundSurface& s, const Prepared& p, const std::string& command) {
    std::ostringstream csv;
    io::write_surface_csv(csv, s, n_hypotheses(p));
    io::write_file(dir + "/surface.csv", csv.str());
    io::write_file(dir + "/surface.meta.json",
                   io::surface_meta_json(s, p.bopt.delta, n_hypotheses(p), config_hash(p, command)).dump(2) + "\n");
}

std::string surface_report(const BoundSurface& s, const Prepared& p) {
    std::ostringstream r;
    r.precision(10);
    r << "design: " << s.meta.design_id << "\n";
    r << "master_seed: " << s.meta.master_seed << "\n";
    r << "grid: " << s.meta.grid << "\n";
    r << "lambda: " << s.meta.lambda << "\n";
    r << "surface: " << io::kind_name(s.meta.kind) << ", pointwise confidence " << s.confidence << "\n";
    r << "delta_I estimator: " << (p.bopt.normal_approx ? "normal approximation (non-regulatory)" : "Clopper-Pearson")
      << "\n";
    r << "tiles: " << p.tiles.size() << " total, " << s.bounds.size() << " bounded\n";
    if (s.bounds.empty()) return r.str();
    auto worst = std::max_element(s.bounds.begin(), s.bounds.end(),
                                  [](const TileBound& a, const TileBound& b) { return a.total < b.total; });
    const Tile& wt = p.tiles[worst->tile_index];
    r << "max total: " << worst->total << " at tile " << worst->tile_index << " center (";
    for (std::size_t i = 0; i < wt.dim(); ++i) r << (i ? ", " : "") << wt.center[i];
    r << ")\n";
    std::vector<double> totals;
    double est = 0, cp = 0, grad = 0, curv = 0;
    for (const auto& b : s.bounds) {
        totals.push_back(b.total);
        auto sb = bounds::slack_breakdown(b);
        est += sb.estimate;
        cp += sb.cp_margin;
        grad += sb.gradient;
        curv += sb.curvature;
    }
    std::sort(totals.begin(), totals.end());
    r << "median total: " << totals[totals.size() / 2] << "\n";
    double slack = cp + grad + curv;
    if (s.meta.kind == SurfaceKind::upper && slack > 0) {
        r << "slack attribution (share of total - estimate, averaged over tiles):\n";
        r << "  f estimate error (delta_I - rate): " << cp / slack << "\n";
        r << "  gradient term (delta_II): " << grad / slack << "\n";
        r << "  curvature term (delta_III): " << curv / slack << "\n";
    }
    if (const auto* gd = std::get_if<designs::GaussianParallelDesign>(&p.design); gd && s.meta.kind == SurfaceKind::upper) {
        std::vector<double> slacks;
        std::size_t below = 0;
        for (const auto& b : s.bounds) {
            const Tile& t = p.tiles[b.tile_index];
            double f = gd->type_i_error(t.center, t.null_signature, s.meta.lambda);
            slacks.push_back(b.total - f);
            below += b.total < f;
        }
        std::sort(slacks.begin(), slacks.end());
        r << "exact oracle: min slack " << slacks.front() << ", median slack " << slacks[slacks.size() / 2]
          << ", tiles with g < f: " << below << "\n";
    }
    return r.str();
}

int cmd_verify(const GlobalFlags& g) {
    Prepared p = prepare(g);
    SurfaceKind kind = p.cfg.bound_kind();
    std::filesystem::create_directories(g.out);
    auto results = run_engine(p, g, "verify", {}, kind == SurfaceKind::upper ? Event::false_rejection
                                                                              : Event::no_false_rejection);
    std::vector<TileSummary> sums;
    for (auto& v : results)
        if (!v.empty()) sums.push_back(v[0]);
    const DesignSpec& spec = design_spec(p.design);
    BoundSurface s = kind == SurfaceKind::upper ? bounds::assemble_surface(spec, p.tiles, sums, p.bopt)
                                                : bounds::lower_surface(spec, p.tiles, sums, p.bopt);
    s.meta.master_seed = p.seed;
    s.meta.grid = p.cfg.grid_description();
    write_surface(g.out, s, p, "verify");
    std::string report = surface_report(s, p);
    io::write_file(g.out + "/report.txt", report);
    std::cout << report;
    return ok;
}

int cmd_calibrate(const GlobalFlags& g) {
    Prepared p = prepare(g);
    auto ladder = p.cfg.lambda_ladder();
    double alpha = p.cfg.get_double("alpha", 0.025);
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw config_error("config: alpha must lie in [0, 1]");
    std::filesystem::create_directories(g.out);
    auto base = run_engine(p, g, "calibrate", ladder, Event::false_rejection);
    // Replay the frozen base through calibrate's bookkeeping without re-simulating.
    engine::RunOptions run;
    run.n_sims = p.n_sims;
    for (std::size_t i = 0; i < p.tiles.size(); ++i)
        if (!base[i].empty()) run.completed[p.tiles[i].index] = base[i];
    auto result = std::visit(
        [&](const auto& d) {
            return bounds::calibrate(
                d, [](const auto& x, double l) { return x.with_lambda(l); }, p.tiles, SeedPolicy{p.seed}, ladder,
                [alpha](const Tile&) { return alpha; }, p.bopt, run);
        },
        p.design);
    result.surface.meta.grid = p.cfg.grid_description();
    write_surface(g.out, result.surface, p, "calibrate");
    std::ostringstream audit;
    audit << "lambda,max_total,min_headroom,passes\n";
    for (const auto& a : result.audit)
        audit << io::fmt_double(a.lambda) << ',' << io::fmt_double(a.max_total) << ','
              << io::fmt_double(a.min_headroom) << ',' << (a.passes ? 1 : 0) << '\n';
    io::write_file(g.out + "/ladder.csv", audit.str());
    std::ostringstream r;
    r.precision(10);
    r << "calibration: " << (result.success ? "success" : "FAILED (no ladder value keeps g <= alpha)") << "\n";
    r << "alpha: " << alpha << "\n";
    r << "lambda_prime: " << io::fmt_double(result.lambda_prime) << "\n";
    r << surface_report(result.surface, p);
    io::write_file(g.out + "/report.txt", r.str());
    std::cout << r.str();
    return result.success ? ok : calibration_failed;
}

int cmd_oracle(const GlobalFlags& g) {
    Prepared p = prepare(g);
    const auto* gd = std::get_if<designs::GaussianParallelDesign>(&p.design);
    if (!gd) throw config_error("oracle: no closed form is available for design '" + design_spec(p.design).id + "'");
    std::filesystem::create_directories(g.out);
    std::size_t d = design_spec(p.design).dim();
    std::ostringstream csv;
    csv << "tile_index";
    for (std::size_t i = 0; i < d; ++i) csv << ",center_" << i;
    csv << ",null_sig,f\n";
    for (const auto& t : p.tiles) {
        if (t.skippable()) continue;
        csv << t.index;
        for (double c : t.center) csv << ',' << io::fmt_double(c);
        csv << ',' << t.null_signature.to_string(n_hypotheses(p)) << ','
            << io::fmt_double(gd->type_i_error(t.center, t.null_signature, gd->spec().lambda)) << '\n';
    }
    io::write_file(g.out + "/oracle.csv", csv.str());
    std::cout << "wrote " << g.out << "/oracle.csv\n";
    return ok;
}

int cmd_redesign(const GlobalFlags& g, const std::string& g2, const std::string& g1, const std::string& g0,
                 double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw config_error("--alpha must lie in [0, 1]");
    BoundSurface s2 = io::load_surface(g2);
    BoundSurface s1 = io::load_surface(g1);
    BoundSurface s0 = io::load_surface(g0);
    bounds::RedesignReport rep;
    try {
        rep = bounds::check_redesign(s2, s1, s0, alpha);
    } catch (const domain_error& e) {
        throw config_error(e.what());
    }
    std::filesystem::create_directories(g.out);
    std::ostringstream csv;
    csv << "tile_index,margin\n";
    for (const auto& v : rep.violations) csv << v.tile_index << ',' << io::fmt_double(v.margin) << '\n';
    io::write_file(g.out + "/redesign_violations.csv", csv.str());
    std::ostringstream r;
    r.precision(10);
    r << "redesign check: " << (rep.pass ? "pass" : "FAIL") << "\n";
    r << "alpha: " << alpha << "\n";
    r << "tiles checked: " << s2.bounds.size() << "\n";
    r << "violations: " << rep.violations.size() << "\n";
    r << "min margin: " << rep.min_margin << "\n";
    r << "combined confidence: " << rep.combined_confidence << "\n";
    io::write_file(g.out + "/report.txt", r.str());
    std::cout << r.str();
    return rep.pass ? ok : redesign_violation;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Type I Error bound verification"};
    app.require_subcommand(1);
    GlobalFlags g;
    auto add_globals = [&](CLI::App* c) {
        c->add_option("--config", g.config, "run configuration (key = value file)");
        c->add_option("--seed", g.seed, "master seed (overrides config)");
        c->add_option("--out", g.out, "output directory");
        c->add_option("--threads", g.threads, "worker threads");
        c->add_option("--checkpoint", g.checkpoint, "checkpoint file for resumable runs");
        c->add_flag("--non-regulatory-normal-approx", g.normal_approx,
                    "normal approximation for delta_I instead of Clopper-Pearson");
    };
    auto* verify = app.add_subcommand("verify", "simulate and write the bound surface");
    auto* calibrate = app.add_subcommand("calibrate", "pick the largest safe lambda on a ladder");
    auto* oracle = app.add_subcommand("oracle", "exact Type I Error at tile centers (Gaussian design)");
    auto* redesign = app.add_subcommand("redesign-check", "check g2+ <= g1- + alpha - g0+ tile-wise");
    for (auto* c : {verify, calibrate, oracle, redesign}) add_globals(c);
    std::string g2, g1, g0;
    double alpha = 0.025;
    redesign->add_option("--g2-plus", g2, "run directory of the new design's upper surface")->required();
    redesign->add_option("--g1-minus", g1, "run directory of the original design's lower surface")->required();
    redesign->add_option("--g0-plus", g0, "run directory of the interim-look upper surface")->required();
    redesign->add_option("--alpha", alpha, "Type I Error budget");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? ok : validation;
    }
    try {
        if (*verify) return cmd_verify(g);
        if (*calibrate) return cmd_calibrate(g);
        if (*oracle) return cmd_oracle(g);
        return cmd_redesign(g, g2, g1, g0, alpha);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const engine::checkpoint_mismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const io::format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return internal;
    }
}
