#pragma once

#include <memory>

#include "hsa/hsa_dp.hpp"
#include "hsa/hierarchy.hpp"

namespace hsa {

struct CausalConfig {
    bool include_self = true;  // self term at the leaf level; avoids empty-context rows
    PayloadMode payload = PayloadMode::keys;
    double pos_scale = 1.0;
    int threads = 1;
};

// Full-tree causal attention: every sibling sum is restricted to left
// siblings, so no leaf ever receives mass from a leaf to its right.
AttentionOutput hsa_causal_forward(const SignalHierarchy& h, const LeafStates& s,
                                   const CausalConfig& cfg = {});

struct TokenState {
    Vec q, k, v;  // q and k normalized
};

// Emits the family-close events that precede each token and the position
// embedding used for new nodes. Level 1 is the deepest (token) family.
class GrowthPolicy {
public:
    virtual ~GrowthPolicy() = default;
    // levels to close before inserting token `index` (0-based), ascending
    virtual std::vector<int> boundary_events(long index, const std::string& token) = 0;
    virtual Vec position(int index_in_family) const = 0;
};

// Closes the level-l family whenever the token index is a multiple of the
// product of the first l branching factors. An empty list never closes
// anything (flat, classical KV-cache behavior). The list is extended by its
// last entry for levels beyond its length.
class FixedBranchingPolicy : public GrowthPolicy {
public:
    FixedBranchingPolicy(std::vector<int> branching, int pos_dim, PosOptions pos = {});
    std::vector<int> boundary_events(long index, const std::string& token) override;
    Vec position(int index_in_family) const override;
    const std::vector<int>& branching() const { return branching_; }

private:
    std::vector<int> branching_;
    int pos_dim_;
    PosOptions pos_;
};

// Token/sentence/paragraph growth: a token whose predecessor ended a
// sentence closes level 1; a paragraph marker closes levels 1 and 2.
class TextMarkerPolicy : public GrowthPolicy {
public:
    TextMarkerPolicy(int pos_dim, PosOptions pos = {});
    std::vector<int> boundary_events(long index, const std::string& token) override;
    Vec position(int index_in_family) const override;

private:
    int pos_dim_;
    PosOptions pos_;
    bool pending_sentence_ = false;
    bool pending_paragraph_ = false;
};

// Frozen sufficient statistics of one completed node.
struct CacheEntry {
    double phi = kInf;
    double eta = kInf;      // against its left siblings, fixed at close time
    double logmass = -kInf;  // log(exp(-phi) + exp(-eta))
    Vec rho_q, rho_k, rho_v;
    long n_leaves = 1;
    Vec position;
};

// One open family on the right-skewed spine. Children are the closed
// entries plus, above level 0, the open family one level deeper.
struct CacheLevel {
    std::vector<CacheEntry> closed;
    Vec sum_q, sum_k, sum_v;        // sums of n_leaves * rho over closed children
    double weighted_logmass = 0.0;  // sum of n_leaves * logmass
    long leaves = 0;
};

// The pruned sub-hierarchy plus cached statistics for incremental causal
// decoding. levels[0] is the deepest family; levels.back() is the root.
struct RightSkewedCache {
    CausalConfig cfg;
    int dim = 0, pos_dim = 0;
    std::vector<CacheLevel> levels;
    long tokens = 0;
    uint64_t last_ops = 0;
    uint64_t total_ops = 0;
    const GrowthPolicy* policy = nullptr;  // advisory handle, not owned
};

struct AttentionRow {
    Vec grad;
    Vec updated_q;
};

// Extracts the maximal right-skewed subtree of a prompt hierarchy, with a
// full causal bottom-up pass folded into per-node summaries.
RightSkewedCache cache_init(const SignalHierarchy& prompt, const LeafStates& s,
                            const CausalConfig& cfg, const GrowthPolicy* policy = nullptr);

// Appends one token. close_levels are the policy's boundary events for this
// token and must be an ascending run 1..m. Returns the attention row of the
// new token against the whole prefix.
AttentionRow cache_append(RightSkewedCache& cache, const TokenState& token,
                          const std::vector<int>& close_levels);

struct CacheStats {
    long nodes = 0;          // stored summaries across all levels
    int depth = 0;           // spine length
    uint64_t per_token_ops = 0;
};
CacheStats cache_stats(const RightSkewedCache& cache);

// The hierarchy a fixed-branching policy implies for a token prefix; the
// recompute oracle for incremental generation. A single token yields a root
// family with one leaf.
SignalHierarchy implied_fixed_prefix(const std::vector<Vec>& leaf_features,
                                     const std::vector<int>& branching, int pos_dim,
                                     const PosOptions& pos = {});

}  // namespace hsa
