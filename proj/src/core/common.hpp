#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dseg {

// Counter-seeded RNG stream. All randomized operations take one of these
// explicitly; there is no hidden global generator. Streams derived with
// child() are independent of draws made on the parent afterwards.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed), seed_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    // inclusive bounds
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
    }
    bool bernoulli(double p) { return std::bernoulli_distribution(p)(gen_); }

    Rng child(std::uint64_t stream) const {
        // splitmix-style mix so nearby stream ids decorrelate
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

    std::string state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }
    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace dseg
