#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hsa/common.hpp"

namespace hsa {

// Domain kind of one family. `set` carries no positional information and
// forces all-zero position vectors on the children.
enum class DomainKind { set, grid1d, keyvalue, custom };

const char* domain_name(DomainKind k);
DomainKind domain_from_name(const std::string& name);

enum class PosMode { fourier, zero, random_fourier };

struct PosOptions {
    PosMode mode = PosMode::fourier;
    uint64_t seed = 0;  // random_fourier only
};

// A nested-signal tree stored as a flat arena in depth-first preorder:
// node 0 is the root and every child id is larger than its parent's, so a
// descending id sweep visits children before parents. Treat instances as
// immutable once a builder has returned them.
struct SignalHierarchy {
    struct Node {
        int parent = -1;
        DomainKind domain = DomainKind::set;  // internal nodes only
        std::vector<int> children;            // empty for leaves
        Vec position;                         // annotation assigned by the parent family
        Vec features;                         // leaves only, length dim
        int leaf_begin = 0;                   // contiguous [leaf_begin, leaf_end) range
        int leaf_end = 0;
        int index_in_family = 0;
        int depth = 0;
    };

    int dim = 0;
    int pos_dim = 0;
    std::vector<Node> nodes;
    std::vector<int> leaf_ids;  // leaf order -> node id

    bool is_leaf(int id) const { return nodes[id].children.empty(); }
    int n_leaves() const { return static_cast<int>(leaf_ids.size()); }
    int leaf_count(int id) const { return nodes[id].leaf_end - nodes[id].leaf_begin; }
    int root() const { return 0; }
};

struct HierarchyStats {
    int n_leaves = 0;
    int n_families = 0;   // internal node count
    int max_branching = 0;
    int depth = 0;
};

// Deterministic sinusoidal position vector for within-family index i:
// component 2m is sin(i*w_m), 2m+1 is cos(i*w_m), w_m = 10000^(-2m/c).
Vec fourier_position(int index, int pos_dim);
Vec position_for(int index, int pos_dim, const PosOptions& opts);

// Deterministic token embedding: FNV-1a of the token seeds a splitmix64
// stream expanded to `dim` values in [-1, 1), then shifted to zero mean.
Vec hash_embed(const std::string& token, int dim);

SignalHierarchy build_from_json(const std::string& document);
std::string to_json(const SignalHierarchy& h);

// Bottom-to-top fixed-window builder. Level k groups the previous level into
// consecutive windows of size branching[k]; the last window may be ragged.
// Construction stops once a single node remains; if the branching list runs
// out first, one final family over all remaining nodes is added.
SignalHierarchy build_fixed(const std::vector<Vec>& leaves,
                            const std::vector<int>& branching,
                            int pos_dim, const PosOptions& pos = {});

// paragraphs (blank lines) / sentences ([.?!] + whitespace) / tokens
// (whitespace), all grid1d, leaves via hash_embed.
SignalHierarchy build_text(const std::string& text, int dim, int pos_dim,
                           const PosOptions& pos = {});

// Single root family whose children are h's leaves in leaf order. Leaf
// positions are retained for reporting only; pairwise interactions of the
// original tree are the reference for flat comparisons.
SignalHierarchy flatten(const SignalHierarchy& h);

struct BatchResult {
    SignalHierarchy tree;
    std::vector<std::pair<int, int>> offsets;  // per input: [begin, end) leaf range
};

// Joins hierarchies under a zero-position `set` dummy root. The attention
// engine evaluates each original root independently; no interaction is ever
// computed across the dummy level.
BatchResult batch_concat(const std::vector<SignalHierarchy>& hs);

std::vector<std::string> validate(const SignalHierarchy& h);
HierarchyStats stats(const SignalHierarchy& h);

}  // namespace hsa
