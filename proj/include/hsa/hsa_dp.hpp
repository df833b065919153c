#pragma once

#include "hsa/energy.hpp"
#include "hsa/hierarchy.hpp"

namespace hsa {

struct EngineOptions {
    PayloadMode payload = PayloadMode::keys;
    bool causal = false;
    bool include_self = true;  // causal mode only: self term at the leaf level
    double pos_scale = 1.0;
    int threads = 1;
    bool batch_dummy_root = false;  // internal: skip interactions at the root family
};

// Bottom-up sufficient statistics, one slot per node id.
//   phi  - subtree energy (+inf at leaves and for degenerate subtrees)
//   eta  - -log sum_{B in sib(A)} exp(psi'_{A->B}) over the sibling logits
//   psi' - -psi_{A->B} + log|l(B)| per sibling
//   pooled - softmax(psi')-weighted average of sibling payload centroids
struct SuffStats {
    std::vector<double> phi, eta;
    std::vector<Vec> rho_q, rho_k, rho_v;
    std::vector<Vec> pooled;
    std::vector<std::vector<double>> psi_prime;
    std::vector<std::vector<int>> sib_ids;  // node ids the psi' entries refer to
    std::vector<int> degenerate_families;
    uint64_t ops = 0;  // deterministic count of scalar multiply-adds
};

struct AttentionOutput {
    std::vector<Vec> grads;      // per leaf, length d
    std::vector<Vec> updated_q;  // q_i - N*sqrt(d) * grad_i
    std::vector<int> degenerate_leaves;
    uint64_t ops = 0;
};

SuffStats bottom_up(const SignalHierarchy& h, const LeafStates& s,
                    const EngineOptions& opts = {});

// Walks from eval_root to the leaves accumulating the path coefficient u
// (seeded with -log of the evaluation root's leaf count) and the payload
// vector; grads land at out.grads[leaf index]. Returns the op count.
uint64_t top_down(const SignalHierarchy& h, const SuffStats& stats, int eval_root,
                  AttentionOutput& out, const EngineOptions& opts = {});

AttentionOutput hsa_forward(const SignalHierarchy& h, const LeafStates& s,
                            const EngineOptions& opts = {});

// Batched evaluation over a breadth-wise concatenated tree: statistics are
// shared, the top-down pass restarts at every original root, and no
// interaction is ever evaluated across the dummy level.
std::vector<AttentionOutput> hsa_forward_batch(const BatchResult& batch, const LeafStates& s,
                                               const EngineOptions& opts = {});

}  // namespace hsa
