#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "skiplab/errors.hpp"

namespace skiplab {

// Serialized generator state: kind tag + payload + xor checksum byte.
// Small enough to copy around freely; restore() rejects corrupted bytes.
struct RngState {
    std::string kind;
    std::vector<uint8_t> bytes;
    uint64_t draws = 0;
};

// Counter-based generator (splitmix64 stream): the state is just
// (key, counter), so checkpoint/restore is exact and trivially cheap.
// Every draw is a pure function of (key, counter).
class Rng {
public:
    static constexpr const char* kKind = "splitmix64-ctr";

    explicit Rng(uint64_t seed = 0) : key_(seed) {}

    static uint64_t mix64(uint64_t z) {
        z += 0x9E3779B97F4A7C15ull;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() {
        uint64_t v = mix64(key_ + counter_ * 0x9E3779B97F4A7C15ull);
        ++counter_;
        return v;
    }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; always consumes exactly two draws so
    // checkpointed replay stays aligned (no cached spare).
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // Independent child stream; parent state advances by one draw.
    Rng split() { return Rng(mix64(next_u64() ^ 0xA02BDBF7BB3C0A7ull)); }

    // Deterministic sub-stream derived from a label, parent untouched.
    Rng derive(const std::string& label) const {
        uint64_t h = key_ ^ 0xcbf29ce484222325ull;
        for (unsigned char c : label) h = (h ^ c) * 0x100000001b3ull;
        return Rng(mix64(h));
    }

    uint64_t draw_count() const { return counter_; }

    RngState save() const {
        RngState s;
        s.kind = kKind;
        s.draws = counter_;
        s.bytes.resize(17);
        std::memcpy(s.bytes.data(), &key_, 8);
        std::memcpy(s.bytes.data() + 8, &counter_, 8);
        uint8_t chk = 0;
        for (int i = 0; i < 16; ++i) chk ^= s.bytes[i];
        s.bytes[16] = chk;
        return s;
    }

    void restore(const RngState& s) {
        if (s.kind != kKind) throw config_error("rng restore: unknown generator kind '" + s.kind + "'");
        if (s.bytes.size() != 17) throw config_error("rng restore: corrupted state bytes (size)");
        uint8_t chk = 0;
        for (int i = 0; i < 16; ++i) chk ^= s.bytes[i];
        if (chk != s.bytes[16]) throw config_error("rng restore: corrupted state bytes (checksum)");
        std::memcpy(&key_, s.bytes.data(), 8);
        std::memcpy(&counter_, s.bytes.data() + 8, 8);
    }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

} // namespace skiplab
