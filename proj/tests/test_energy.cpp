#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "hsa/energy.hpp"

using namespace hsa;

namespace {

// Flat two-leaf hierarchy with chosen q/k and zero positions.
struct TwoLeaf {
    SignalHierarchy h;
    LeafStates s;
};

TwoLeaf two_leaf(const Vec& q1, const Vec& k2, const Vec& q2, const Vec& k1) {
    TwoLeaf f;
    std::vector<Vec> leaves = {q1, q2};
    f.h = build_fixed(leaves, {2}, 2, {PosMode::zero});
    f.s.q = {q1, q2};
    f.s.k = {k1, k2};
    f.s.v = {q1, q2};
    return f;
}

}  // namespace

TEST_CASE("layer_norm fixed points and forced rescaling") {
    const Vec same = layer_norm({1, -1, 1, -1});  // already zero-mean, unit variance
    for (int t = 0; t < 4; ++t)
        CHECK(std::abs(same[t] - (t % 2 ? -1.0 : 1.0)) <= 1e-11);  // epsilon in the std
    const Vec scaled = layer_norm({2, 0, 2, 0});
    for (int t = 0; t < 4; ++t)
        CHECK(std::abs(scaled[t] - (t % 2 ? -1.0 : 1.0)) <= 1e-11);
    CHECK(layer_norm({3.5, 3.5, 3.5, 3.5}) == Vec{0, 0, 0, 0});  // epsilon path
}

TEST_CASE("layer_norm postconditions on random input") {
    uint64_t state = 99;
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 2 + static_cast<int>(splitmix64(state) % 63);
        Vec v(d);
        for (double& x : v) x = gaussian(state) * 3.0 + 1.0;
        const Vec out = layer_norm(v);
        double mean = 0.0, norm2 = 0.0;
        for (double x : out) mean += x, norm2 += x * x;
        mean /= d;
        CHECK(std::abs(mean) <= 1e-12);
        CHECK(std::abs(norm2 - d) <= 1e-9 * d);
    }
}

TEST_CASE("subtree centroids are leaf averages") {
    const SignalHierarchy h = fixtures::random_tree(11, {9, 3, 3, 6, 2});
    const LeafStates s = fixtures::random_states(h, 12);
    const EnergyContext ctx = make_context(h, s);
    // single leaf: centroid is the state itself
    const int leaf0 = h.leaf_ids[0];
    CHECK(ctx.rho_q[leaf0] == s.q[0]);
    // root: plain mean over all leaves
    Vec mean(h.dim, 0.0);
    for (const auto& k : s.k) axpy(1.0 / h.n_leaves(), k, mean);
    CHECK(fixtures::max_abs_diff(ctx.rho_k[h.root()], mean) <= 1e-12);
    // every internal node: weighted child average equals its leaf-range mean
    for (size_t id = 0; id < h.nodes.size(); ++id) {
        if (h.is_leaf(static_cast<int>(id))) continue;
        Vec m(h.dim, 0.0);
        const auto& node = h.nodes[id];
        for (int i = node.leaf_begin; i < node.leaf_end; ++i)
            axpy(1.0 / (node.leaf_end - node.leaf_begin), s.q[i], m);
        CHECK(fixtures::max_abs_diff(ctx.rho_q[id], m) <= 1e-12);
    }
}

TEST_CASE("interaction energy forced values on singleton leaves") {
    const TwoLeaf f =
        two_leaf({1, -1, 1, -1}, {-1, 1, -1, 1}, {1, 1, -1, -1}, {1, -1, -1, 1});
    const EnergyContext ctx = make_context(f.h, f.s);
    const int a = f.h.leaf_ids[0], b = f.h.leaf_ids[1];
    // q1 = (1,-1,1,-1), k2 = (-1,1,-1,1): psi = 0 + 2 - (-4)/2 = 4
    CHECK(interaction_energy(ctx, a, b) == doctest::Approx(4.0).epsilon(1e-14));
    // the quadratic form agrees: ||q-k||^2 / (2 sqrt(d)) = 16/4 = 4
    CHECK(interaction_energy(ctx, a, b, true) == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("interaction energy vanishes for aligned normalized states") {
    const Vec v = {1, -1, 1, -1};
    const TwoLeaf f = two_leaf(v, v, v, v);  // q1 == k2, both normalized
    const EnergyContext ctx = make_context(f.h, f.s);
    CHECK(interaction_energy(ctx, f.h.leaf_ids[0], f.h.leaf_ids[1]) ==
          doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("reduced and general interaction forms agree on normalized fixtures") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        const SignalHierarchy h = fixtures::random_tree(seed, {10, 3, 3, 8, 3});
        const LeafStates s = fixtures::random_states(h, seed + 100);
        const EnergyContext ctx = make_context(h, s);
        const auto& root_children = h.nodes[h.root()].children;
        if (root_children.size() < 2) continue;
        const int a = root_children[0], b = root_children[1];
        CHECK(std::abs(interaction_energy(ctx, a, b) - interaction_energy(ctx, a, b, true)) <=
              1e-12);
        CHECK(std::abs(interaction_energy(ctx, b, a) - interaction_energy(ctx, b, a, true)) <=
              1e-12);
    }
}

TEST_CASE("interaction energy rejects related nodes") {
    const SignalHierarchy h = fixtures::random_tree(3, {6, 3, 3, 4, 2});
    const LeafStates s = fixtures::random_states(h, 4);
    const EnergyContext ctx = make_context(h, s);
    const int child = h.nodes[h.root()].children[0];
    CHECK_THROWS_AS(interaction_energy(ctx, h.root(), child), UsageError);
}

TEST_CASE("node energy: mutual zero interactions give zero root energy") {
    const Vec v = {1, -1, 1, -1};
    const TwoLeaf f = two_leaf(v, v, v, v);  // psi = 0 in both directions
    const EnergyContext ctx = make_context(f.h, f.s);
    CHECK(node_energy(ctx, f.h.root()).value == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(node_energy(ctx, f.h.leaf_ids[0]).value == kInf);
}

TEST_CASE("node energy matches a term-by-term transliteration") {
    const SignalHierarchy h = fixtures::random_tree(21, {8, 3, 2, 6, 3});
    const LeafStates s = fixtures::random_states(h, 22);
    const EnergyContext ctx = make_context(h, s);

    // plain recursive evaluation straight from the defining recurrence
    auto direct = [&](auto&& self, int node) -> double {
        if (h.is_leaf(node)) return kInf;
        double phi = 0.0;
        for (int c : h.nodes[node].children) {
            double mass = std::exp(-self(self, c));
            const int parent = h.nodes[c].parent;
            for (int b : h.nodes[parent].children)
                if (b != c)
                    mass += h.leaf_count(b) * std::exp(-interaction_energy(ctx, c, b));
            phi -= static_cast<double>(h.leaf_count(c)) / h.leaf_count(node) * std::log(mass);
        }
        return phi;
    };
    const double expected = direct(direct, h.root());
    CHECK(node_energy(ctx, h.root()).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("flat node energy differs from the softmax energy by exactly log(N-1)") {
    const int n = 7, d = 8;
    const SignalHierarchy h = fixtures::flat_tree(5, n, d, 4);
    const LeafStates s = fixtures::random_states(h, 6);
    const EnergyContext ctx = make_context(h, s);
    const double sqrt_d = std::sqrt(static_cast<double>(d));

    // per-token softmax energy with the 1/(N-1) prefactor inside the log
    double softmax_energy = 0.0;
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double sq = 0.0;
            for (int t = 0; t < d; ++t)
                sq += (s.q[i][t] - s.k[j][t]) * (s.q[i][t] - s.k[j][t]);
            const double pos = dot(h.nodes[h.leaf_ids[i]].position,
                                   h.nodes[h.leaf_ids[j]].position);
            acc += std::exp(-sq / (2.0 * sqrt_d) + pos);
        }
        softmax_energy -= std::log(acc / (n - 1)) / n;
    }
    const double phi = node_energy(ctx, h.root()).value;
    CHECK(softmax_energy - phi == doctest::Approx(std::log(n - 1.0)).epsilon(1e-12));
}

TEST_CASE("node energy is invariant to sibling permutation") {
    // permute the two root children of a nested fixture by rebuilding JSON
    const SignalHierarchy h = fixtures::random_tree(31, {6, 2, 3, 4, 2});
    const LeafStates s = fixtures::random_states(h, 32);
    const EnergyContext ctx = make_context(h, s);
    const double before = node_energy(ctx, h.root()).value;

    SignalHierarchy swapped = h;
    auto& kids = swapped.nodes[swapped.root()].children;
    if (kids.size() >= 2) {
        std::swap(kids.front(), kids.back());
        const SignalHierarchy rebuilt = build_from_json(to_json(swapped));
        // permute states to the new leaf order
        std::vector<int> order;
        for (int c : kids)
            for (int i = h.nodes[c].leaf_begin; i < h.nodes[c].leaf_end; ++i)
                order.push_back(i);
        LeafStates sp;
        for (int i : order) {
            sp.q.push_back(s.q[i]);
            sp.k.push_back(s.k[i]);
            sp.v.push_back(s.v[i]);
        }
        const EnergyContext ctx2 = make_context(rebuilt, sp);
        CHECK(node_energy(ctx2, rebuilt.root()).value ==
              doctest::Approx(before).epsilon(1e-9));
    }
}

TEST_CASE("node energy flags a family with no mass anywhere") {
    // one family holding a single leaf: the aggregation argument is exactly 0
    const SignalHierarchy h = build_from_json(R"({"dim":2,"pos_dim":1,"root":
        {"domain":"grid1d","children":[{"pos":[0.0],"leaf":{"x":[1.0,-1.0]}}]}})");
    LeafStates s;
    s.q = {layer_norm({1.0, -1.0})};
    s.k = s.q;
    s.v = s.q;
    const EnergyContext ctx = make_context(h, s);
    const NodeEnergyResult r = node_energy(ctx, h.root());
    CHECK(r.value == kInf);
    CHECK(r.degenerate_families == std::vector<int>{h.root()});
}

TEST_CASE("mixing coefficients: lone internal child keeps all mass") {
    // root -> family A -> two leaves; A has no siblings
    const SignalHierarchy h = build_from_json(R"({"dim":2,"pos_dim":1,"root":
        {"domain":"grid1d","children":[{"pos":[0.0],"node":{"domain":"grid1d","children":[
            {"pos":[0.0],"leaf":{"x":[1.0,-1.0]}},
            {"pos":[1.0],"leaf":{"x":[-1.0,1.0]}}]}}]}})");
    LeafStates s;
    s.q = {layer_norm({1.0, -1.0}), layer_norm({-1.0, 1.0})};
    s.k = s.q;
    s.v = s.q;
    const EnergyContext ctx = make_context(h, s);
    const int a = h.nodes[h.root()].children[0];
    const MixCoeffs mc = mixing_coefficients(ctx, a);
    CHECK(!mc.degenerate);
    CHECK(mc.mu == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mc.delta.empty());
}

TEST_CASE("mixing coefficients: affine constraint and naive agreement") {
    for (uint64_t seed = 41; seed < 49; ++seed) {
        const SignalHierarchy h = fixtures::random_tree(seed, {12, 4, 3, 6, 3});
        const LeafStates s = fixtures::random_states(h, seed + 1);
        const EnergyContext ctx = make_context(h, s);
        for (size_t id = 1; id < h.nodes.size(); ++id) {
            const MixCoeffs mc = mixing_coefficients(ctx, static_cast<int>(id));
            if (mc.degenerate) continue;
            double total = mc.mu;
            for (const auto& [sib, delta] : mc.delta) total += h.leaf_count(sib) * delta;
            CHECK(std::abs(total - 1.0) <= 1e-9);

            // naive exp/normalize evaluation without log-domain handling
            const double phi = node_energy(ctx, static_cast<int>(id)).value;
            double denom = std::exp(-phi);
            const int parent = h.nodes[id].parent;
            for (int b : h.nodes[parent].children) {
                if (b == static_cast<int>(id)) continue;
                denom += h.leaf_count(b) *
                         std::exp(-interaction_energy(ctx, static_cast<int>(id), b));
            }
            CHECK(std::abs(mc.mu - std::exp(-phi) / denom) <= 1e-12);
            for (const auto& [sib, delta] : mc.delta) {
                const double beta =
                    std::exp(-interaction_energy(ctx, static_cast<int>(id), sib));
                CHECK(std::abs(delta - beta / denom) <= 1e-12);
            }
        }
    }
}

TEST_CASE("degenerate mixing: isolated single leaf") {
    const SignalHierarchy h = build_from_json(R"({"dim":2,"pos_dim":1,"root":
        {"domain":"grid1d","children":[{"pos":[0.0],"leaf":{"x":[1.0,-1.0]}}]}})");
    LeafStates s;
    s.q = {layer_norm({1.0, -1.0})};
    s.k = s.q;
    s.v = s.q;
    const EnergyContext ctx = make_context(h, s);
    CHECK(mixing_coefficients(ctx, h.leaf_ids[0]).degenerate);
}
