#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "hsa/hierarchy.hpp"

using namespace hsa;

namespace {

const char* kTwoLeafDoc = R"({"dim":4,"pos_dim":2,"root":{"domain":"grid1d","children":[
  {"pos":[0.0,1.0],"leaf":{"x":[1.0,-1.0,1.0,-1.0]}},
  {"pos":[0.5,0.5],"leaf":{"x":[2.0,0.0,2.0,0.0]}}]}})";

// website-shaped fixture: graph-ish root, a `set` page of two grid signals
const char* kWebsiteDoc = R"({"dim":3,"pos_dim":2,"root":{"domain":"custom","children":[
  {"pos":[0.25,0.5],"node":{"domain":"set","children":[
    {"pos":[0.0,0.0],"node":{"domain":"grid1d","children":[
      {"pos":[0.0,1.0],"leaf":{"x":[1.0,0.0,0.0]}},
      {"pos":[0.8414709848078965,0.54030230586813977],"leaf":{"x":[0.0,1.0,0.0]}}]}},
    {"pos":[0.0,0.0],"node":{"domain":"grid1d","children":[
      {"pos":[0.0,1.0],"leaf":{"x":[0.0,0.0,1.0]}},
      {"pos":[0.8414709848078965,0.54030230586813977],"leaf":{"x":[1.0,1.0,0.0]}},
      {"pos":[0.90929742682568171,-0.41614683654714241],"leaf":{"x":[0.5,0.5,0.5]}}]}}]}}]}})";

std::vector<Vec> unit_leaves(int n, int d) {
    std::vector<Vec> leaves(n, Vec(d, 0.0));
    for (int i = 0; i < n; ++i) leaves[i][i % d] = 1.0 + i;
    return leaves;
}

std::vector<int> level_sizes(int n, const std::vector<int>& branching) {
    std::vector<int> sizes;
    int count = n;
    size_t level = 0;
    while (count > 1) {
        const int b = level < branching.size() ? branching[level] : count;
        count = (count + b - 1) / b;
        sizes.push_back(count);
        ++level;
    }
    return sizes;
}

}  // namespace

TEST_CASE("build_from_json maps a flat two-leaf document") {
    const SignalHierarchy h = build_from_json(kTwoLeafDoc);
    const HierarchyStats st = stats(h);
    CHECK(st.n_leaves == 2);
    CHECK(st.n_families == 1);
    CHECK(st.max_branching == 2);
    CHECK(st.depth == 1);
    CHECK(validate(h).empty());
    CHECK(h.nodes[h.leaf_ids[1]].features[0] == 2.0);
}

TEST_CASE("json round trip is the identity on canonical output") {
    const SignalHierarchy h = build_from_json(kTwoLeafDoc);
    const std::string once = to_json(h);
    const std::string twice = to_json(build_from_json(once));
    CHECK(once == twice);
}

TEST_CASE("website fixture: three levels, five leaves") {
    const SignalHierarchy h = build_from_json(kWebsiteDoc);
    const HierarchyStats st = stats(h);
    CHECK(st.n_leaves == 5);
    CHECK(st.depth == 3);
    CHECK(st.n_families == 4);
    CHECK(validate(h).empty());
}

TEST_CASE("build_from_json rejects malformed documents") {
    CHECK_THROWS_AS(build_from_json("{"), SchemaError);
    CHECK_THROWS_AS(build_from_json(R"({"dim":4,"root":{}})"), SchemaError);
    // wrong position length
    CHECK_THROWS_AS(build_from_json(R"({"dim":2,"pos_dim":3,"root":{"domain":"grid1d",
        "children":[{"pos":[1.0],"leaf":{"x":[1.0,2.0]}}]}})"),
                    SchemaError);
    // leaf longer than dim
    CHECK_THROWS_AS(build_from_json(R"({"dim":2,"pos_dim":1,"root":{"domain":"grid1d",
        "children":[{"pos":[0.0],"leaf":{"x":[1.0,2.0,3.0]}}]}})"),
                    SchemaError);
    // empty family
    CHECK_THROWS_AS(build_from_json(R"({"dim":2,"pos_dim":1,"root":{"domain":"grid1d",
        "children":[]}})"),
                    SchemaError);
    // nonzero positions under a set domain
    CHECK_THROWS_AS(build_from_json(R"({"dim":2,"pos_dim":1,"root":{"domain":"set",
        "children":[{"pos":[1.0],"leaf":{"x":[1.0,2.0]}}]}})"),
                    SchemaError);
}

TEST_CASE("short leaves are zero padded to dim") {
    const SignalHierarchy h = build_from_json(R"({"dim":4,"pos_dim":1,"root":{"domain":"grid1d",
        "children":[{"pos":[0.0],"leaf":{"x":[1.0,2.0]}}]}})");
    CHECK(h.nodes[h.leaf_ids[0]].features == Vec{1.0, 2.0, 0.0, 0.0});
}

TEST_CASE("to_json puts a single leaf at the root position") {
    SignalHierarchy h;
    h.dim = 2;
    h.pos_dim = 1;
    h.nodes.emplace_back();
    h.nodes[0].parent = -1;
    h.nodes[0].features = {1.0, 2.0};
    h.nodes[0].position = {0.0};
    h.leaf_ids = {0};
    h.nodes[0].leaf_end = 1;
    const std::string doc = to_json(h);
    CHECK(doc.find("\"root\":{\"leaf\":") != std::string::npos);
    const SignalHierarchy back = build_from_json(doc);
    CHECK(back.n_leaves() == 1);
    CHECK(stats(back).n_families == 0);
}

TEST_CASE("build_fixed: exact division") {
    const SignalHierarchy h = build_fixed(unit_leaves(8, 4), {2, 2, 2}, 2);
    const HierarchyStats st = stats(h);
    CHECK(st.n_leaves == 8);
    CHECK(st.n_families == 7);
    CHECK(st.max_branching == 2);
    CHECK(st.depth == 3);
    CHECK(validate(h).empty());
}

TEST_CASE("build_fixed: ceil-division level sizes at N=264") {
    const std::vector<int> branching = {2, 4, 8, 16};
    const auto sizes = level_sizes(264, branching);
    CHECK(sizes == std::vector<int>{132, 33, 5, 1});
    int expect_m = 0;
    for (int s : sizes) expect_m += s;

    const SignalHierarchy h = build_fixed(unit_leaves(264, 4), branching, 2);
    const HierarchyStats st = stats(h);
    CHECK(st.n_families == expect_m);
    CHECK(st.n_families == 171);
    // the top window is ragged (5 of a possible 16), so the realized maximum
    // family size comes from the full level-3 windows
    CHECK(st.max_branching == 8);
    CHECK(st.depth == 4);
    CHECK(validate(h).empty());
}

TEST_CASE("build_fixed: exhausted branching list tops off with one root family") {
    const SignalHierarchy h = build_fixed(unit_leaves(5, 4), {2, 2}, 2);
    const HierarchyStats st = stats(h);
    CHECK(st.n_families == 6);  // levels of size 3, 2, 1
    CHECK(st.depth == 3);
    CHECK(validate(h).empty());
}

TEST_CASE("build_fixed errors") {
    CHECK_THROWS_AS(build_fixed({}, {2}, 2), UsageError);
    CHECK_THROWS_AS(build_fixed(unit_leaves(4, 2), {1}, 2), UsageError);
}

TEST_CASE("build_fixed zero mode uses set domains and zero positions") {
    const SignalHierarchy h = build_fixed(unit_leaves(4, 2), {2}, 3, {PosMode::zero});
    for (const auto& node : h.nodes) {
        if (!node.children.empty()) CHECK(node.domain == DomainKind::set);
        for (double v : node.position) CHECK(v == 0.0);
    }
}

TEST_CASE("build_text splits paragraphs, sentences, tokens") {
    const SignalHierarchy h = build_text("a b. c d.\n\ne f.", 4, 2);
    CHECK(h.n_leaves() == 6);
    const auto& root = h.nodes[h.root()];
    REQUIRE(root.children.size() == 2);  // paragraphs
    CHECK(h.nodes[root.children[0]].children.size() == 2);  // sentences
    CHECK(h.nodes[root.children[1]].children.size() == 1);
    CHECK(stats(h).depth == 3);
}

TEST_CASE("build_text single word gives a depth-3 chain") {
    const SignalHierarchy h = build_text("x", 4, 2);
    CHECK(h.n_leaves() == 1);
    CHECK(stats(h).depth == 3);
    CHECK(stats(h).n_families == 3);  // root, paragraph, sentence: all singletons
    CHECK(stats(h).max_branching == 1);
}

TEST_CASE("build_text embeddings are reproducible") {
    const SignalHierarchy a = build_text("alpha beta gamma. delta!", 8, 2);
    const SignalHierarchy b = build_text("alpha beta gamma. delta!", 8, 2);
    CHECK(to_json(a) == to_json(b));
    CHECK_THROWS_AS(build_text("  \n\n  ", 4, 2), UsageError);
}

TEST_CASE("flatten collapses to one family and preserves leaf order") {
    const SignalHierarchy h = fixtures::random_tree(7, {6, 3, 3, 4, 2});
    const SignalHierarchy flat = flatten(h);
    CHECK(stats(flat).n_families == 1);
    CHECK(flat.n_leaves() == h.n_leaves());
    for (int i = 0; i < h.n_leaves(); ++i)
        CHECK(flat.nodes[flat.leaf_ids[i]].features == h.nodes[h.leaf_ids[i]].features);
    // idempotence, including structural identity on already-flat input
    const SignalHierarchy again = flatten(flat);
    CHECK(to_json(again) == to_json(flat));
}

TEST_CASE("batch_concat introduces a set dummy root and tiling offsets") {
    std::vector<SignalHierarchy> hs;
    hs.push_back(fixtures::random_tree(1, {4, 3, 2, 4, 2}));
    hs.push_back(fixtures::random_tree(2, {6, 3, 3, 4, 2}));
    hs.push_back(fixtures::random_tree(3, {3, 2, 2, 4, 2}));
    const BatchResult batch = batch_concat(hs);
    CHECK(batch.tree.nodes[batch.tree.root()].domain == DomainKind::set);
    CHECK(validate(batch.tree).empty());
    int expect = 0;
    for (size_t i = 0; i < hs.size(); ++i) {
        CHECK(batch.offsets[i].first == expect);
        expect += hs[i].n_leaves();
        CHECK(batch.offsets[i].second == expect);
    }
    CHECK(expect == batch.tree.n_leaves());
    CHECK(to_json(batch.tree).find("\"domain\":\"set\"") != std::string::npos);

    SignalHierarchy other = fixtures::random_tree(4, {4, 3, 2, 6, 2});
    CHECK_THROWS_AS(batch_concat({hs[0], other}), UsageError);  // mixed dim
}

TEST_CASE("stats on simple shapes") {
    const SignalHierarchy flat = fixtures::flat_tree(1, 6, 4, 2);
    const HierarchyStats st = stats(flat);
    CHECK(st.n_leaves == 6);
    CHECK(st.n_families == 1);
    CHECK(st.max_branching == 6);
    CHECK(st.depth == 1);
}

TEST_CASE("random trees satisfy the structural invariants") {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        fixtures::TreeSpec spec;
        spec.n_leaves = 1 + static_cast<int>(seed * 7 % 40);
        const SignalHierarchy h = fixtures::random_tree(seed, spec);
        CHECK(validate(h).empty());
        // leaf ranges tile: checked by validate; leaf count consistency:
        for (size_t id = 0; id < h.nodes.size(); ++id) {
            if (h.is_leaf(static_cast<int>(id))) continue;
            int total = 0;
            for (int c : h.nodes[id].children) total += h.leaf_count(c);
            CHECK(total == h.leaf_count(static_cast<int>(id)));
        }
    }
}
