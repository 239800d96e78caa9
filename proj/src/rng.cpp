#include "msinfer/rng.hpp"

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace msinfer {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::split(std::uint64_t k) const {
    return RngStream(seed_, mix64(stream_id_ ^ mix64(k + 1)));
}

// boost distributions give identical draws across standard libraries.
double RngStream::uniform01() { return boost::random::uniform_01<double>()(engine_); }

double RngStream::uniform(double a, double b) { return a + (b - a) * uniform01(); }

double RngStream::normal() { return boost::random::normal_distribution<double>()(engine_); }

double RngStream::exponential() {
    return boost::random::exponential_distribution<double>()(engine_);
}

std::size_t RngStream::uniform_index(std::size_t n) {
    return boost::random::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

}  // namespace msinfer
