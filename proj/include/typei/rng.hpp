#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "numerics.hpp"

namespace typei {

/*
 * Philox4x32-10 counter-based generator (Salmon et al., SC'11).
 * A pure function of (counter, key): no state is carried between calls.
 */
struct Philox4x32 {
    using counter_t = std::array<std::uint32_t, 4>;
    using key_t = std::array<std::uint32_t, 2>;

    static counter_t apply(counter_t ctr, key_t key) {
        constexpr std::uint32_t m0 = 0xD2511F53u;
        constexpr std::uint32_t m1 = 0xCD9E8D57u;
        constexpr std::uint32_t w0 = 0x9E3779B9u;
        constexpr std::uint32_t w1 = 0xBB67AE85u;
        std::uint32_t c0 = ctr[0], c1 = ctr[1], c2 = ctr[2], c3 = ctr[3];
        std::uint32_t k0 = key[0], k1 = key[1];
        for (int round = 0; round < 10; ++round) {
            std::uint64_t p0 = std::uint64_t{m0} * c0;
            std::uint64_t p1 = std::uint64_t{m1} * c2;
            std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1 ^ k0;
            std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3 ^ k1;
            c1 = static_cast<std::uint32_t>(p1);
            c3 = static_cast<std::uint32_t>(p0);
            c0 = n0;
            c2 = n2;
            k0 += w0;
            k1 += w1;
        }
        return {c0, c1, c2, c3};
    }
};

/*
 * A finite stream of uniforms owned by one (tile, replication) pair.
 * Counter layout: word 0 is the block index within the stream, word 1 the
 * replication index, words 2-3 the 64-bit tile index; the key is the
 * master seed. Distinct (tile, replication) pairs never share a block.
 */
class Substream {
   public:
    Substream(std::uint64_t master_seed, std::uint64_t tile_index, std::uint32_t replication,
              std::uint64_t max_blocks = std::uint64_t{1} << 32)
        : key_{static_cast<std::uint32_t>(master_seed),
               static_cast<std::uint32_t>(master_seed >> 32)},
          ctr_{0u, replication, static_cast<std::uint32_t>(tile_index),
               static_cast<std::uint32_t>(tile_index >> 32)},
          max_blocks_(max_blocks) {}

    std::uint32_t next_u32() {
        if (pos_ == 4) refill();
        return buf_[pos_++];
    }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() {
        std::uint64_t hi = next_u32() >> 5;
        std::uint64_t lo = next_u32() >> 6;
        return static_cast<double>((hi << 26) | lo) * 0x1p-53;
    }

    std::uint64_t blocks_used() const { return blocks_; }

   private:
    void refill() {
        if (blocks_ >= max_blocks_) throw internal_error("Substream exhausted");
        ctr_[0] = static_cast<std::uint32_t>(blocks_++);
        buf_ = Philox4x32::apply(ctr_, key_);
        pos_ = 0;
    }

    Philox4x32::key_t key_;
    Philox4x32::counter_t ctr_;
    Philox4x32::counter_t buf_{};
    int pos_ = 4;
    std::uint64_t blocks_ = 0;
    std::uint64_t max_blocks_;
};

/*
 * Replays an explicit list of uniforms. Used to drive designs with
 * hand-constructed randomness.
 */
class ReplayStream {
   public:
    explicit ReplayStream(std::vector<double> draws) : draws_(std::move(draws)) {}

    double uniform() {
        if (pos_ >= draws_.size()) throw internal_error("ReplayStream exhausted");
        return draws_[pos_++];
    }
    std::size_t consumed() const { return pos_; }

   private:
    std::vector<double> draws_;
    std::size_t pos_ = 0;
};

/* Master seed plus the derivation rule for per-(tile, replication) substreams. */
struct SeedPolicy {
    std::uint64_t master_seed;
    std::uint64_t max_blocks_per_stream = std::uint64_t{1} << 32;

    Substream stream(std::uint64_t tile_index, std::uint32_t replication) const {
        return Substream(master_seed, tile_index, replication, max_blocks_per_stream);
    }
};

template <class S>
concept UniformStream = requires(S s) {
    { s.uniform() } -> std::convertible_to<double>;
};

/* Standard normal pair by Box-Muller from two uniforms of the stream. */
template <UniformStream Stream>
std::array<double, 2> normal_pair(Stream& stream) {
    double u1 = stream.uniform();
    double u2 = stream.uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));  // 1 - u1 lies in (0, 1]
    double angle = 2.0 * numerics::pi * u2;
    return {r * std::cos(angle), r * std::sin(angle)};
}

}  // namespace typei
