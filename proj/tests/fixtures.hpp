#pragma once

// Seeded fixture generators shared by the unit and acceptance suites.

#include <cstdint>
#include <string>
#include <vector>

#include "hsa/energy.hpp"
#include "hsa/hierarchy.hpp"

namespace fixtures {

using hsa::LeafStates;
using hsa::SignalHierarchy;
using hsa::Vec;

struct TreeSpec {
    int n_leaves = 8;
    int max_branching = 4;
    int max_depth = 3;
    int dim = 8;
    int pos_dim = 4;
};

namespace detail {

inline int rand_int(uint64_t& state, int lo, int hi) {  // inclusive range
    return lo + static_cast<int>(hsa::splitmix64(state) % (hi - lo + 1));
}

// Partition n leaves into k parts, each within [1, cap].
inline std::vector<int> partition(uint64_t& state, int n, int k, int cap) {
    if (static_cast<long>(k) * cap < n)
        throw std::logic_error("fixture spec infeasible: k*cap < n");
    std::vector<int> parts(k, 1);
    int rest = n - k;
    while (rest > 0) {
        const int slot = rand_int(state, 0, k - 1);
        if (parts[slot] < cap) {
            ++parts[slot];
            --rest;
        }
    }
    return parts;
}

inline int capacity(int levels, int max_b) {
    double cap = 1;
    for (int i = 0; i < levels; ++i) cap *= max_b;
    return cap > 1e9 ? 1000000000 : static_cast<int>(cap);
}

inline int grow(SignalHierarchy& h, uint64_t& state, int n, int levels_left, int max_b,
                int parent, Vec position) {
    const int id = static_cast<int>(h.nodes.size());
    h.nodes.emplace_back();
    h.nodes[id].parent = parent;
    h.nodes[id].position = std::move(position);
    if (n == 1 && (levels_left == 0 || rand_int(state, 0, 2) == 0)) {
        h.nodes[id].features.assign(h.dim, 0.0);
        for (double& x : h.nodes[id].features) x = hsa::gaussian(state);
        return id;
    }
    // pick a family size that keeps the residual depth feasible
    const int child_cap = capacity(levels_left - 1, max_b);
    int k_min = (n + child_cap - 1) / child_cap;
    k_min = std::max(1, k_min);
    const int k = rand_int(state, std::min(std::max(2, k_min), std::min(max_b, n)),
                           std::min(max_b, n));
    const auto parts = partition(state, n, k, child_cap);

    const int kind_draw = rand_int(state, 0, 9);
    hsa::DomainKind kind = hsa::DomainKind::grid1d;
    if (kind_draw == 0) kind = hsa::DomainKind::set;
    if (kind_draw == 1) kind = hsa::DomainKind::keyvalue;
    h.nodes[id].domain = kind;
    for (int c = 0; c < k; ++c) {
        Vec pos(h.pos_dim, 0.0);
        if (kind == hsa::DomainKind::grid1d) {
            pos = hsa::fourier_position(c, h.pos_dim);
        } else if (kind == hsa::DomainKind::keyvalue) {
            for (double& x : pos) x = hsa::gaussian(state) * 0.5;
        }
        const int child = grow(h, state, parts[c], levels_left - 1, max_b, id, std::move(pos));
        h.nodes[id].children.push_back(child);
    }
    return id;
}

}  // namespace detail

// A random signal hierarchy with the requested shape envelope. Leaf features
// are standard normal; structure and values are functions of the seed only.
inline SignalHierarchy random_tree(uint64_t seed, const TreeSpec& spec = {}) {
    uint64_t state = seed * 0x9e3779b97f4a7c15ULL + 0x1234567887654321ULL;
    SignalHierarchy h;
    h.dim = spec.dim;
    h.pos_dim = spec.pos_dim;
    detail::grow(h, state, spec.n_leaves, spec.max_depth, spec.max_branching, -1,
                 Vec(spec.pos_dim, 0.0));
    // rebuild derived fields through the canonical JSON path
    return hsa::build_from_json(hsa::to_json(h));
}

inline LeafStates random_states(const SignalHierarchy& h, uint64_t seed) {
    uint64_t state = seed * 0x9e3779b97f4a7c15ULL + 0xabcdef0123456789ULL;
    LeafStates s;
    const int n = h.n_leaves();
    s.q.resize(n);
    s.k.resize(n);
    s.v.resize(n);
    for (int i = 0; i < n; ++i) {
        Vec q(h.dim), k(h.dim), v(h.dim);
        for (double& x : q) x = hsa::gaussian(state);
        for (double& x : k) x = hsa::gaussian(state);
        for (double& x : v) x = hsa::gaussian(state);
        s.q[i] = hsa::layer_norm(q);
        s.k[i] = hsa::layer_norm(k);
        s.v[i] = v;
    }
    return s;
}

// Flat single-family hierarchy with fourier positions.
inline SignalHierarchy flat_tree(uint64_t seed, int n, int dim, int pos_dim) {
    uint64_t state = seed + 17;
    std::vector<Vec> leaves(n);
    for (auto& leaf : leaves) {
        leaf.resize(dim);
        for (double& x : leaf) x = hsa::gaussian(state);
    }
    return hsa::build_fixed(leaves, {std::max(2, n)}, pos_dim);
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a[i], b[i]));
    return m;
}

}  // namespace fixtures
