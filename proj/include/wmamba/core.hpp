// Shared plumbing: error type, shape helpers, counter-based RNG,
// FNV-1a hashing, deterministic parallel_for.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace wmamba {

using shape_t = std::vector<size_t>;

struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class A, class... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
[[noreturn]] void fail(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    throw error(os.str());
}

template <class... Args>
void check(bool cond, const Args&... args) {
    if (!cond) fail(args...);
}

inline size_t numel(const shape_t& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const shape_t& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Debug flag: when set, ops validate that produced values are finite.
inline bool& debug_checks() {
    static bool flag = false;
    return flag;
}

// ---------------------------------------------------------------------------
// Counter-based RNG. Each draw is a pure function of (key, counter), so
// streams keyed by (seed, purpose, index) are reproducible regardless of
// generation order or parallelism. The mixer is SplitMix64.
// ---------------------------------------------------------------------------
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline uint64_t derive_key(uint64_t seed, uint64_t stream) {
    return mix64(mix64(seed) ^ (stream * 0xA24BAED4963EE407ull + 0x9FB21C651E98DF25ull));
}

class rng {
  public:
    explicit rng(uint64_t key) : key_(key) {}
    rng(uint64_t seed, uint64_t stream) : key_(derive_key(seed, stream)) {}

    uint64_t next_u64() { return mix64(key_ + counter_++ * 0xD1342543DE82EF95ull); }

    // uniform in [0, 1)
    double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // integer in [0, n)
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    double gaussian() {
        // Box-Muller; draws two uniforms per call, no cached state.
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    uint64_t counter() const { return counter_; }
    uint64_t key() const { return key_; }

  private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

// FNV-1a 64-bit, used for corpus fingerprints.
struct fnv1a {
    uint64_t state = 0xCBF29CE484222325ull;
    void update(const void* data, size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state ^= p[i];
            state *= 0x100000001B3ull;
        }
    }
    std::string hex() const {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        uint64_t v = state;
        for (int i = 15; i >= 0; --i) {
            out[size_t(i)] = digits[v & 0xF];
            v >>= 4;
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Worker threads. Work is split into fixed contiguous ranges so the result
// of any data-parallel section is identical for every thread count.
// ---------------------------------------------------------------------------
inline int& thread_count() {
    static int n = 1;
    return n;
}

inline void set_threads(int n) { thread_count() = n < 1 ? 1 : n; }

inline void parallel_for(size_t n, const std::function<void(size_t, size_t)>& body) {
    int workers = thread_count();
    if (workers <= 1 || n <= 1) {
        body(0, n);
        return;
    }
    size_t w = size_t(workers) < n ? size_t(workers) : n;
    size_t chunk = (n + w - 1) / w;
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (size_t i = 0; i < w; ++i) {
        size_t lo = i * chunk;
        size_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace wmamba
