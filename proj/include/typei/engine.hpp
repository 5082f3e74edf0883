#pragma once
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "designs.hpp"
#include "domain.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace typei {

/* Monte Carlo counts and score sums for one tile. */
struct TileSummary {
    std::size_t tile_index = 0;
    std::uint64_t n_sims = 0;
    std::uint64_t false_rej_count = 0;
    std::vector<double> score_sum;  // summed over replications where the event occurred

    double rate() const { return static_cast<double>(false_rej_count) / static_cast<double>(n_sims); }

    void merge(const TileSummary& other) {
        if (other.tile_index != tile_index || other.score_sum.size() != score_sum.size())
            throw domain_error("TileSummary::merge: summaries describe different tiles");
        n_sims += other.n_sims;
        false_rej_count += other.false_rej_count;
        for (std::size_t i = 0; i < score_sum.size(); ++i) score_sum[i] += other.score_sum[i];
    }

    bool operator==(const TileSummary&) const = default;
};

/* Exactly mergeable accumulator behind a TileSummary. */
class TileAccumulator {
   public:
    TileAccumulator(std::size_t tile_index, std::size_t dim) : tile_index_(tile_index), sums_(dim) {}

    void add_replication() { ++n_sims_; }

    template <class Score>
    void add_event(const Score& score) {
        ++count_;
        for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i].add(score[i]);
    }

    void merge(const TileAccumulator& other) {
        if (other.tile_index_ != tile_index_ || other.sums_.size() != sums_.size())
            throw domain_error("TileAccumulator::merge: accumulators describe different tiles");
        n_sims_ += other.n_sims_;
        count_ += other.count_;
        for (std::size_t i = 0; i < sums_.size(); ++i) sums_[i].merge(other.sums_[i]);
    }

    TileSummary summary() const {
        TileSummary s;
        s.tile_index = tile_index_;
        s.n_sims = n_sims_;
        s.false_rej_count = count_;
        s.score_sum.resize(sums_.size());
        for (std::size_t i = 0; i < sums_.size(); ++i) s.score_sum[i] = sums_[i].value();
        return s;
    }

   private:
    std::size_t tile_index_;
    std::uint64_t n_sims_ = 0;
    std::uint64_t count_ = 0;
    std::vector<numerics::ExactSum> sums_;
};

/*
 * Which indicator a simulation tracks: the false rejection event, or its
 * complement (used for lower bounds).
 */
enum class Event { false_rejection, no_false_rejection };

namespace engine {

/*
 * Exact one-sided Clopper-Pearson upper bound: the p at which
 * P(Binomial(n, p) <= k) = conf_tail, i.e. the 1 - conf_tail quantile of
 * Beta(k + 1, n - k). Equal to 1 when k = n.
 */
inline double clopper_pearson_upper(std::uint64_t k, std::uint64_t n, double conf_tail) {
    if (n == 0) throw domain_error("clopper_pearson_upper: n must be positive");
    if (k > n) throw domain_error("clopper_pearson_upper: k exceeds n");
    if (!(conf_tail > 0.0 && conf_tail < 1.0)) throw domain_error("clopper_pearson_upper: conf_tail must lie in (0, 1)");
    if (k == n) return 1.0;
    if (k == 0) return -std::expm1(std::log(conf_tail) / static_cast<double>(n));
    return numerics::inverse_regularized_incomplete_beta(1.0 - conf_tail, static_cast<double>(k) + 1.0,
                                                         static_cast<double>(n - k));
}

/* Wald upper bound p_hat + z * sqrt(p_hat (1 - p_hat) / n); non-regulatory use only. */
inline double normal_approx_upper(std::uint64_t k, std::uint64_t n, double conf_tail) {
    if (n == 0) throw domain_error("normal_approx_upper: n must be positive");
    if (k > n) throw domain_error("normal_approx_upper: k exceeds n");
    double p = static_cast<double>(k) / static_cast<double>(n);
    double z = numerics::normal_quantile(1.0 - conf_tail);
    return std::min(1.0, p + z * std::sqrt(p * (1.0 - p) / static_cast<double>(n)));
}

/*
 * Runs replications [rep_begin, rep_end) at the tile center, evaluating
 * the event under each tuning value in `lambdas`. Replication r always
 * draws from substream (tile.index, r), so the result depends only on the
 * master seed and the replication range.
 */
template <TrialDesign Design>
std::vector<TileAccumulator> simulate_tile_range(const Design& design, const Tile& tile,
                                                 std::uint64_t rep_begin, std::uint64_t rep_end,
                                                 const SeedPolicy& seeds, std::span<const double> lambdas,
                                                 Event event = Event::false_rejection) {
    const DesignSpec& spec = design.spec();
    std::size_t d = spec.dim();
    if (tile.dim() != d) throw domain_error("simulate_tile: tile dimension does not match design");
    if (rep_end > (std::uint64_t{1} << 32)) throw domain_error("simulate_tile: at most 2^32 replications per tile");
    std::vector<TileAccumulator> acc(lambdas.size(), TileAccumulator(tile.index, d));
    designs::ScoreEvaluator score_of(spec, tile.center);
    SeedPolicy policy = seeds;
    policy.max_blocks_per_stream = design.max_stream_blocks();
    TrialOutcome outcome;
    std::vector<double> score(d);
    HypothesisSet null_set = tile.null_signature;
    for (std::uint64_t r = rep_begin; r < rep_end; ++r) {
        Substream stream = policy.stream(tile.index, static_cast<std::uint32_t>(r));
        design.run_trial(tile.center, stream, outcome);
        bool have_score = false;
        for (std::size_t l = 0; l < lambdas.size(); ++l) {
            acc[l].add_replication();
            bool false_rej = design.rejections_at(outcome, lambdas[l]).intersects(null_set);
            if (false_rej != (event == Event::false_rejection)) continue;
            if (!have_score) {
                score_of(outcome, score);
                have_score = true;
            }
            acc[l].add_event(score);
        }
    }
    return acc;
}

/* n_sims replications at the design's own lambda. */
template <TrialDesign Design>
TileSummary simulate_tile(const Design& design, const Tile& tile, std::uint64_t n_sims,
                          const SeedPolicy& seeds, Event event = Event::false_rejection) {
    if (n_sims < 1) throw domain_error("simulate_tile: n_sims must be >= 1");
    double lambda = design.spec().lambda;
    auto acc = simulate_tile_range(design, tile, 0, n_sims, seeds, std::span<const double>(&lambda, 1), event);
    return acc[0].summary();
}

struct RunOptions {
    std::uint64_t n_sims = 0;
    std::size_t threads = 1;
    std::uint64_t batch_size = 4096;
    Event event = Event::false_rejection;
    std::vector<double> lambdas;  // empty: the design's own lambda
    // Called once per finished tile (serialized), e.g. for checkpointing.
    std::function<void(const Tile&, const std::vector<TileSummary>&)> on_tile_done;
    // Tiles whose results are already known (e.g. from a checkpoint).
    std::map<std::size_t, std::vector<TileSummary>> completed;
};

/*
 * Simulates every non-skippable tile. Work is split into (tile, batch)
 * tasks pulled by a fixed pool of workers; batches merge exactly, so the
 * output is independent of thread count and scheduling.
 *
 * Returns one entry per input tile; each holds one summary per lambda,
 * or nothing for skippable tiles.
 */
template <TrialDesign Design>
std::vector<std::vector<TileSummary>> simulate_tiles(const Design& design, std::span<const Tile> tiles,
                                                     const SeedPolicy& seeds, const RunOptions& opt) {
    if (opt.n_sims < 1) throw domain_error("simulate_tiles: n_sims must be >= 1");
    if (opt.batch_size < 1) throw domain_error("simulate_tiles: batch_size must be >= 1");
    std::vector<double> lambdas = opt.lambdas;
    if (lambdas.empty()) lambdas.push_back(design.spec().lambda);

    struct Task {
        std::size_t tile_pos;
        std::uint64_t begin;
        std::uint64_t end;
        std::size_t batch;
    };
    std::vector<Task> tasks;
    std::vector<std::vector<TileSummary>> results(tiles.size());
    std::vector<std::vector<std::vector<TileAccumulator>>> partial(tiles.size());
    std::vector<std::atomic<std::size_t>> remaining(tiles.size());
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        remaining[t] = 0;
        if (tiles[t].skippable()) continue;
        design.spec().require_domain(tiles[t].center, "simulate_tiles");
        if (auto it = opt.completed.find(tiles[t].index); it != opt.completed.end()) {
            if (it->second.size() != lambdas.size())
                throw domain_error("simulate_tiles: completed results have the wrong lambda count");
            results[t] = it->second;
            continue;
        }
        std::size_t n_batches = static_cast<std::size_t>((opt.n_sims + opt.batch_size - 1) / opt.batch_size);
        partial[t].resize(n_batches);
        remaining[t] = n_batches;
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::uint64_t begin = b * opt.batch_size;
            tasks.push_back({t, begin, std::min(opt.n_sims, begin + opt.batch_size), b});
        }
    }

    std::atomic<std::size_t> next_task{0};
    std::mutex done_mutex;
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        try {
            for (;;) {
                if (failed.load()) return;
                std::size_t i = next_task.fetch_add(1);
                if (i >= tasks.size()) return;
                const Task& task = tasks[i];
                const Tile& tile = tiles[task.tile_pos];
                partial[task.tile_pos][task.batch] =
                    simulate_tile_range(design, tile, task.begin, task.end, seeds, lambdas, opt.event);
                if (remaining[task.tile_pos].fetch_sub(1) != 1) continue;
                auto& parts = partial[task.tile_pos];
                std::vector<TileSummary> out;
                for (std::size_t l = 0; l < lambdas.size(); ++l) {
                    TileAccumulator acc = parts[0][l];
                    for (std::size_t b = 1; b < parts.size(); ++b) acc.merge(parts[b][l]);
                    out.push_back(acc.summary());
                }
                parts.clear();
                parts.shrink_to_fit();
                std::lock_guard lock(done_mutex);
                results[task.tile_pos] = out;
                if (opt.on_tile_done) opt.on_tile_done(tile, results[task.tile_pos]);
            }
        } catch (...) {
            std::lock_guard lock(done_mutex);
            if (!failure) failure = std::current_exception();
            failed = true;
        }
    };
    std::size_t n_threads = std::max<std::size_t>(1, opt.threads);
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

/* ------------------------------------------------------------------------ */

/*
 * Resumable checkpoint. A 32-byte header (magic, config hash, dimension,
 * lambdas per tile) is followed by fixed little-endian records, one per
 * lambda for each finished tile:
 * tile_index u64, n_sims u64, false_rej_count u64, d x f64 score_sum.
 */
struct checkpoint_mismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline bool get_u64(std::istream& is, std::uint64_t& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
    return true;
}
inline std::uint64_t f64_bits(double x) {
    std::uint64_t u;
    std::memcpy(&u, &x, 8);
    return u;
}
inline double bits_f64(std::uint64_t u) {
    double x;
    std::memcpy(&x, &u, 8);
    return x;
}
inline constexpr std::uint64_t checkpoint_magic = 0x314b434945505954ULL;  // "TYPEICK1"
}  // namespace detail

class CheckpointWriter {
   public:
    CheckpointWriter(const std::string& path, std::uint64_t config_hash, std::size_t dim, std::size_t n_lambdas,
                     bool append)
        : dim_(dim), n_lambdas_(n_lambdas) {
        os_.open(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
        if (!os_) throw std::runtime_error("cannot open checkpoint " + path);
        if (!append) {
            detail::put_u64(os_, detail::checkpoint_magic);
            detail::put_u64(os_, config_hash);
            detail::put_u64(os_, dim);
            detail::put_u64(os_, n_lambdas);
            os_.flush();
        }
    }

    // One record per lambda, written back to back.
    void write(const std::vector<TileSummary>& per_lambda) {
        if (per_lambda.size() != n_lambdas_) throw domain_error("checkpoint: wrong lambda count");
        for (const auto& s : per_lambda) {
            if (s.score_sum.size() != dim_) throw domain_error("checkpoint: wrong score dimension");
            detail::put_u64(os_, s.tile_index);
            detail::put_u64(os_, s.n_sims);
            detail::put_u64(os_, s.false_rej_count);
            for (double x : s.score_sum) detail::put_u64(os_, detail::f64_bits(x));
        }
        os_.flush();
    }

   private:
    std::ofstream os_;
    std::size_t dim_;
    std::size_t n_lambdas_;
};

/*
 * Reads a checkpoint written for the same config. A missing file yields an
 * empty map; a header for a different config throws checkpoint_mismatch.
 * A truncated trailing tile is ignored.
 */
inline std::map<std::size_t, std::vector<TileSummary>> read_checkpoint(const std::string& path,
                                                                       std::uint64_t config_hash, std::size_t dim,
                                                                       std::size_t n_lambdas) {
    std::map<std::size_t, std::vector<TileSummary>> out;
    std::ifstream is(path, std::ios::binary);
    if (!is) return out;
    std::uint64_t magic, hash, d, nl;
    if (!detail::get_u64(is, magic) || !detail::get_u64(is, hash) || !detail::get_u64(is, d) ||
        !detail::get_u64(is, nl) || magic != detail::checkpoint_magic)
        throw checkpoint_mismatch("checkpoint " + path + " has an invalid header");
    if (hash != config_hash || d != dim || nl != n_lambdas)
        throw checkpoint_mismatch("checkpoint " + path + " was written for a different configuration");
    for (;;) {
        std::vector<TileSummary> tile;
        bool ok = true;
        for (std::size_t l = 0; l < n_lambdas && ok; ++l) {
            TileSummary s;
            std::uint64_t idx;
            ok = detail::get_u64(is, idx) && detail::get_u64(is, s.n_sims) && detail::get_u64(is, s.false_rej_count);
            s.tile_index = idx;
            s.score_sum.resize(dim);
            for (std::size_t i = 0; i < dim && ok; ++i) {
                std::uint64_t bits;
                ok = detail::get_u64(is, bits);
                s.score_sum[i] = detail::bits_f64(bits);
            }
            if (ok && !tile.empty() && s.tile_index != tile.front().tile_index)
                throw checkpoint_mismatch("checkpoint " + path + " is corrupt");
            tile.push_back(std::move(s));
        }
        if (!ok) break;
        std::size_t idx = tile.front().tile_index;
        out[idx] = std::move(tile);
    }
    return out;
}

}  // namespace engine
}  // namespace typei
