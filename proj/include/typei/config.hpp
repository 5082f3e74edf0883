#pragma once
#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bounds.hpp"
#include "designs.hpp"
#include "domain.hpp"
#include "numerics.hpp"

namespace typei {

/* Raised for any invalid run configuration; maps to exit status 2. */
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using AnyDesign = std::variant<designs::GaussianParallelDesign, designs::ThompsonDesign>;

inline AnyDesign design_with_lambda(const AnyDesign& d, double lambda) {
    return std::visit([&](const auto& x) -> AnyDesign { return x.with_lambda(lambda); }, d);
}

inline const DesignSpec& design_spec(const AnyDesign& d) {
    return std::visit([](const auto& x) -> const DesignSpec& { return x.spec(); }, d);
}

/*
 * Key-value run configuration. File syntax is one `key = value` per line;
 * `#` starts a comment. Lists are comma separated.
 */
class RunConfig {
   public:
    static RunConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw config_error("cannot read config file " + path);
        std::stringstream ss;
        ss << is.rdbuf();
        return from_string(ss.str());
    }

    static RunConfig from_string(const std::string& text) {
        RunConfig c;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
            c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return c;
    }

    void set(const std::string& key, const std::string& value) {
        if (key.empty()) throw config_error("config: empty key");
        values_[key] = value;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get(const std::string& key, const std::optional<std::string>& fallback = std::nullopt) const {
        auto it = values_.find(key);
        if (it != values_.end()) return it->second;
        if (fallback) return *fallback;
        throw config_error("config: missing required key '" + key + "'");
    }

    double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            throw config_error("config: missing required key '" + key + "'");
        }
        return parse_double(key, get(key));
    }

    std::uint64_t get_u64(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) const {
        if (!has(key)) {
            if (fallback) return *fallback;
            throw config_error("config: missing required key '" + key + "'");
        }
        return parse_u64(key, get(key));
    }

    bool get_bool(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        std::string v = get(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw config_error("config: '" + key + "' must be a boolean");
    }

    std::vector<double> get_doubles(const std::string& key) const {
        std::vector<double> out;
        for (const auto& item : split(get(key), ',')) out.push_back(parse_double(key, item));
        return out;
    }

    /* Stable text of every key except those listed, for hashing. */
    std::string canonical(const std::vector<std::string>& exclude = {}) const {
        std::string s;
        for (const auto& [k, v] : values_) {
            if (std::find(exclude.begin(), exclude.end(), k) != exclude.end()) continue;
            s += k + "=" + v + "\n";
        }
        return s;
    }

    // -- typed views -------------------------------------------------------

    AnyDesign design() const {
        std::string id = get("design");
        double lambda = get_double("lambda", 0.0);
        try {
            if (id == "gaussian_parallel") {
                designs::GaussianParallelDesign::Params p;
                p.n_arms = get_u64("arms", 2);
                p.n_per_arm = get_u64("n_per_arm", 10);
                p.sigma = get_double("sigma", 1.0);
                p.mu0 = get_double("mu0", 0.0);
                p.alpha = get_double("alpha_design", 0.025);
                p.lambda = lambda;
                return designs::GaussianParallelDesign(p);
            }
            if (id == "thompson") {
                designs::ThompsonDesign::Params p;
                p.n_total = get_u64("n_total", 100);
                p.p0 = get_double("p0", 0.6);
                p.threshold = get_double("threshold", 0.95);
                p.lambda = lambda;
                std::string alloc = get("allocation", std::string("win_probability"));
                if (alloc == "win_probability") {
                    p.allocation = designs::ThompsonDesign::Allocation::win_probability;
                } else if (alloc == "posterior_draw") {
                    p.allocation = designs::ThompsonDesign::Allocation::posterior_draw;
                } else {
                    throw config_error("config: allocation must be win_probability or posterior_draw");
                }
                return designs::ThompsonDesign(p);
            }
        } catch (const domain_error& e) {
            throw config_error(std::string("config: ") + e.what());
        }
        throw config_error("config: unknown design '" + id + "'");
    }

    Region region() const {
        Region r{get_doubles("region_lower"), get_doubles("region_upper")};
        try {
            r.validate();
        } catch (const domain_error& e) {
            throw config_error(std::string("config: ") + e.what());
        }
        return r;
    }

    std::vector<std::size_t> steps(std::size_t dim) const {
        std::vector<std::size_t> out;
        for (const auto& item : split(get("steps"), ',')) {
            std::uint64_t s = parse_u64("steps", item);
            if (s < 1) throw config_error("config: steps must be >= 1");
            out.push_back(static_cast<std::size_t>(s));
        }
        if (out.size() == 1 && dim > 1) out.assign(dim, out[0]);
        if (out.size() != dim) throw config_error("config: steps needs one entry per dimension");
        return out;
    }

    /* `coord:<=:cutoff` or `coord:>=:cutoff`, separated by ';'. Defaults to the design's. */
    std::vector<Hypothesis> hypotheses(const AnyDesign& d) const {
        if (!has("hypotheses"))
            return std::visit([](const auto& x) { return x.null_hypotheses(); }, d);
        std::vector<Hypothesis> out;
        for (const auto& item : split(get("hypotheses"), ';')) {
            auto parts = split(item, ':');
            if (parts.size() != 3) throw config_error("config: hypothesis must look like coord:<=:cutoff");
            Hypothesis h;
            h.coord_index = static_cast<std::size_t>(parse_u64("hypotheses", parts[0]));
            if (parts[1] == "<=") {
                h.direction = Direction::at_most;
            } else if (parts[1] == ">=") {
                h.direction = Direction::at_least;
            } else {
                throw config_error("config: hypothesis direction must be <= or >=");
            }
            h.cutoff = parse_double("hypotheses", parts[2]);
            out.push_back(h);
        }
        if (out.size() != design_spec(d).n_hypotheses)
            throw config_error("config: the design tests " + std::to_string(design_spec(d).n_hypotheses) +
                               " hypotheses");
        return out;
    }

    std::vector<Tile> tiles(const AnyDesign& d) const {
        Region r = region();
        const DesignSpec& spec = design_spec(d);
        if (r.dim() != spec.dim())
            throw config_error("config: region dimension " + std::to_string(r.dim()) + " does not match design dimension " +
                               std::to_string(spec.dim()));
        auto st = steps(r.dim());
        auto hyps = hypotheses(d);
        try {
            spec.require_domain(r.lower, "region");
            spec.require_domain(r.upper, "region");
            return domain::build_grid(r, st, hyps);
        } catch (const domain_error& e) {
            throw config_error(std::string("config: ") + e.what());
        }
    }

    std::string grid_description() const {
        return "lower=" + get("region_lower") + ";upper=" + get("region_upper") + ";steps=" + get("steps");
    }

    BoundOptions bound_options() const {
        BoundOptions o;
        o.delta = get_double("delta", 0.01);
        o.delta_I_share = get_double("delta_I_share", 0.5);
        o.normal_approx = get_bool("normal_approx", false);
        if (has("grad_l1_cap")) o.grad_l1_cap = get_double("grad_l1_cap");
        try {
            o.validate();
        } catch (const domain_error& e) {
            throw config_error(std::string("config: ") + e.what());
        }
        return o;
    }

    std::uint64_t n_sims() const {
        std::uint64_t n = get_u64("n_sims");
        if (n < 1 || n > (std::uint64_t{1} << 32)) throw config_error("config: n_sims must lie in [1, 2^32]");
        return n;
    }

    // master_seed has no default: it must be chosen explicitly.
    std::uint64_t seed() const {
        if (!has("seed")) throw config_error("config: seed is required (set `seed` or pass --seed)");
        return get_u64("seed");
    }

    SurfaceKind bound_kind() const {
        std::string k = get("bound", std::string("upper"));
        if (k == "upper") return SurfaceKind::upper;
        if (k == "lower") return SurfaceKind::lower;
        throw config_error("config: bound must be upper or lower");
    }

    /* `lo:hi:count` (inclusive, evenly spaced) or an explicit ascending list. */
    std::vector<double> lambda_ladder() const {
        std::string spec = get("lambda_ladder", std::string("-0.05:0.05:41"));
        std::vector<double> out;
        if (spec.find(':') != std::string::npos) {
            auto parts = split(spec, ':');
            if (parts.size() != 3) throw config_error("config: lambda_ladder must be lo:hi:count or a list");
            double lo = parse_double("lambda_ladder", parts[0]);
            double hi = parse_double("lambda_ladder", parts[1]);
            std::uint64_t n = parse_u64("lambda_ladder", parts[2]);
            if (n < 1 || (n > 1 && !(lo < hi))) throw config_error("config: lambda_ladder needs lo < hi and count >= 1");
            for (std::uint64_t i = 0; i < n; ++i)
                out.push_back(n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
        } else {
            out = get_doubles("lambda_ladder");
        }
        for (std::size_t i = 1; i < out.size(); ++i)
            if (!(out[i - 1] < out[i])) throw config_error("config: lambda_ladder must be strictly increasing");
        return out;
    }

    static std::string trim(const std::string& s) {
        std::size_t a = 0;
        std::size_t b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static std::vector<std::string> split(const std::string& s, char sep) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream is(s);
        while (std::getline(is, cur, sep)) {
            cur = trim(cur);
            if (!cur.empty()) out.push_back(cur);
        }
        return out;
    }

   private:
    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            double x = std::stod(v, &pos);
            if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw config_error("config: '" + key + "' expects a number, got '" + v + "'");
        }
    }

    static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
        try {
            if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
            std::size_t pos = 0;
            unsigned long long x = std::stoull(v, &pos, 0);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw config_error("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace typei
