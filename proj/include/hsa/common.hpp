#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsa {

using Vec = std::vector<double>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Input that violates the documented JSON schema or a structural contract.
struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad command line or API usage.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A --verify style check failed beyond the requested tolerance.
struct VerifyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double a, const Vec& x, Vec& y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// log(exp(a) + exp(b)) with -inf treated as an exact zero contribution.
inline double log_add(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = a > b ? a : b;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// log sum of exponentials with max subtraction; empty input gives -inf.
inline double log_sum_exp(const std::vector<double>& xs) {
    double m = -kInf;
    for (double x : xs) m = std::max(m, x);
    if (m == -kInf) return -kInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

// log(1/(1+exp(-x))), defined for x = +-inf (0 and -inf respectively).
inline double log_sigmoid(double x) {
    if (x == kInf) return 0.0;
    if (x == -kInf) return -kInf;
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

// splitmix64: the seed expander used for all deterministic initialization.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Uniform double in [0, 1).
inline double uniform01(uint64_t& state) {
    return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller, two splitmix draws per value.
inline double gaussian(uint64_t& state) {
    double u1 = uniform01(state);
    double u2 = uniform01(state);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// 64-bit FNV-1a over the bytes of a token.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string format_sig17(double v);     // 17 significant digits, for JSON payloads
std::string format_shortest(double v);  // shortest round-trip, for CSV data
std::string format_fixed6(double v);    // fixed 6 decimals, for RESULT lines

// Runs fn(i) for i in [0, n) across `threads` workers in contiguous chunks.
// Falls back to a plain loop for threads <= 1. Each index must be independent.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace hsa
