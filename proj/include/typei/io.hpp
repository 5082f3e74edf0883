#pragma once
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bounds.hpp"
#include "domain.hpp"
#include "numerics.hpp"

namespace typei::io {

struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// strtod keeps subnormals that std::stod rejects as out of range.
inline double parse_double(const std::string& f) {
    if (f.empty()) throw std::invalid_argument("empty number");
    char* end = nullptr;
    double x = std::strtod(f.c_str(), &end);
    if (end != f.c_str() + f.size() || !std::isfinite(x)) throw std::invalid_argument("bad number '" + f + "'");
    return x;
}

inline std::string surface_header(std::size_t d) {
    std::string h = "tile_index";
    for (std::size_t i = 0; i < d; ++i) h += ",center_" + std::to_string(i);
    for (std::size_t i = 0; i < d; ++i) h += ",half_" + std::to_string(i);
    h += ",null_sig,n_sims,false_rej,delta_I,delta_II,delta_III,total";
    return h;
}

/* One row per bounded tile. Skipped tiles are not written. */
inline void write_surface_csv(std::ostream& os, const BoundSurface& s, std::size_t n_hypotheses) {
    std::size_t d = s.tiles.empty() ? 0 : s.tiles.front().dim();
    os << surface_header(d) << '\n';
    for (const auto& b : s.bounds) {
        auto it = std::lower_bound(s.tiles.begin(), s.tiles.end(), b.tile_index,
                                   [](const Tile& x, std::size_t i) { return x.index < i; });
        if (it == s.tiles.end() || it->index != b.tile_index) throw format_error("surface: bound without a tile");
        const Tile& t = *it;
        os << b.tile_index;
        for (double c : t.center) os << ',' << fmt_double(c);
        for (double h : t.half_widths) os << ',' << fmt_double(h);
        os << ',' << t.null_signature.to_string(n_hypotheses) << ',' << b.n_sims << ',' << b.false_rej << ','
           << fmt_double(b.delta_I) << ',' << fmt_double(b.delta_II) << ',' << fmt_double(b.delta_III) << ','
           << fmt_double(b.total) << '\n';
    }
}

/*
 * Reads a surface CSV back. The returned surface holds only the tiles that
 * appear in the file; tile indices are kept as written.
 */
inline BoundSurface read_surface_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw format_error("surface csv: empty file");
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    if (cols.size() < 8 || (cols.size() - 8) % 2 != 0) throw format_error("surface csv: bad header");
    std::size_t d = (cols.size() - 8) / 2;
    if (line != surface_header(d)) throw format_error("surface csv: bad header");

    BoundSurface s;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) f.push_back(c);
        if (f.size() != cols.size()) throw format_error("surface csv: wrong field count on line " + std::to_string(lineno));
        try {
            Tile t;
            TileBound b;
            std::size_t k = 0;
            t.index = b.tile_index = std::stoull(f[k++]);
            for (std::size_t i = 0; i < d; ++i) t.center.push_back(parse_double(f[k++]));
            for (std::size_t i = 0; i < d; ++i) t.half_widths.push_back(parse_double(f[k++]));
            t.null_signature = HypothesisSet::from_string(f[k++]);
            b.n_sims = std::stoull(f[k++]);
            b.false_rej = std::stoull(f[k++]);
            b.delta_I = parse_double(f[k++]);
            b.delta_II = parse_double(f[k++]);
            b.delta_III = parse_double(f[k++]);
            b.total = parse_double(f[k++]);
            if (!s.bounds.empty() && b.tile_index <= s.bounds.back().tile_index)
                throw format_error("surface csv: tile indices must increase");
            s.tiles.push_back(std::move(t));
            s.bounds.push_back(b);
        } catch (const format_error&) {
            throw;
        } catch (const std::exception& e) {
            throw format_error("surface csv: line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return s;
}

inline const char* kind_name(SurfaceKind k) { return k == SurfaceKind::upper ? "upper" : "lower"; }

inline nlohmann::json surface_meta_json(const BoundSurface& s, double delta, std::size_t n_hypotheses,
                                        std::uint64_t config_hash) {
    nlohmann::json j;
    j["design"] = s.meta.design_id;
    j["master_seed"] = s.meta.master_seed;
    j["grid"] = s.meta.grid;
    j["lambda"] = s.meta.lambda;
    j["kind"] = kind_name(s.meta.kind);
    j["delta"] = delta;
    j["confidence"] = s.confidence;
    j["n_hypotheses"] = n_hypotheses;
    j["config_hash"] = config_hash;
    return j;
}

inline void apply_meta(BoundSurface& s, const nlohmann::json& j) {
    try {
        s.meta.design_id = j.at("design").get<std::string>();
        s.meta.master_seed = j.at("master_seed").get<std::uint64_t>();
        s.meta.grid = j.at("grid").get<std::string>();
        s.meta.lambda = j.at("lambda").get<double>();
        std::string k = j.at("kind").get<std::string>();
        if (k != "upper" && k != "lower") throw format_error("surface meta: kind must be upper or lower");
        s.meta.kind = k == "upper" ? SurfaceKind::upper : SurfaceKind::lower;
        s.confidence = j.at("confidence").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("surface meta: ") + e.what());
    }
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot write " + path);
    os << text;
    if (!os) throw format_error("write failed: " + path);
}

/* surface.csv plus its surface.meta.json sidecar from a run directory. */
inline BoundSurface load_surface(const std::string& dir) {
    std::ifstream csv(dir + "/surface.csv");
    if (!csv) throw format_error("cannot read " + dir + "/surface.csv");
    BoundSurface s = read_surface_csv(csv);
    std::ifstream meta(dir + "/surface.meta.json");
    if (!meta) throw format_error("cannot read " + dir + "/surface.meta.json");
    nlohmann::json j;
    try {
        meta >> j;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("surface meta: ") + e.what());
    }
    apply_meta(s, j);
    return s;
}

}  // namespace typei::io
