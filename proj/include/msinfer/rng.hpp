#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace msinfer {

/// Deterministic random stream keyed by (seed, stream_id). Child streams are
/// derived by split(k), so the j-th unit of work can own split(j) and produce
/// the same draws regardless of scheduling order or thread count.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_id_; }

    [[nodiscard]] RngStream split(std::uint64_t k) const;

    double uniform01();
    double uniform(double a, double b);
    double normal();
    double exponential();
    std::size_t uniform_index(std::size_t n);
    std::uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer.
[[nodiscard]] std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace msinfer
