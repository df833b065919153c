#pragma once

#include "hsa/hierarchy.hpp"

namespace hsa {

// Multiply-add pairs count as 2 FLOPs. Flat attention is logits plus
// aggregation, 2 * (2 * N^2 * d). The hierarchical count replaces N^2 by the
// per-family sum of squared sizes and adds the centroid aggregation cost of
// every internal node below the root (the root's centroid is never consumed).
struct CostReport {
    uint64_t flat_flops = 0;
    uint64_t hsa_flops = 0;
    int n = 0, m = 0, b = 0, d = 0, depth = 0;
    double ratio = 0.0;  // flat / hsa
};

CostReport flops_estimate(const SignalHierarchy& h, int d);

struct BenchConfig {
    int n = 64;
    std::vector<int> branching = {2};
    int d = 16;
    int pos_dim = 4;
    int repeats = 5;  // 0 disables timing (deterministic output)
    int threads = 1;
    uint64_t seed = 1;
};

// One CSV row per (config, mode) with mode in {flat, hsa, direct}:
// deterministic instrumented op counts plus advisory median wall time.
std::string scaling_bench(const std::vector<BenchConfig>& configs);

extern const char* kBenchCsvHeader;

}  // namespace hsa
