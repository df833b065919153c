#pragma once

#include "hsa/energy.hpp"
#include "hsa/hsa_dp.hpp"
#include "hsa/hierarchy.hpp"

// Deliberately slow, single-threaded reference computations used to certify
// the dynamic-programming path. Nothing here shares code with hsa_dp.

namespace hsa {

// Materialized attention matrix with the hierarchy-induced block structure.
struct DenseBlockMatrix {
    int n = 0;
    std::vector<double> theta_hat;  // row-major n x n, rows sum to 1
    std::vector<int> block_map;     // block id per cell, -1 on the diagonal
    double tau = 0.0;               // (N sqrt(d))^-1
    std::vector<double> theta_flat;  // optional flat reference, empty if unset

    double at(int i, int j) const { return theta_hat[static_cast<size_t>(i) * n + j]; }
};

// Pairwise leaf interaction energies for the flattened view of h; the
// position term still comes from the highest distinct ancestors in the
// original tree. Diagonal entries are +inf.
std::vector<double> pairwise_psi(const EnergyContext& ctx);

struct FlatAttention {
    std::vector<double> theta;  // row-major n x n, row-wise softmax of -psi
    std::vector<Vec> outputs;   // theta * payload
};

// Row-stochastic softmax over j != i of -psi, then aggregation against the
// payload rows. Requires n >= 2.
FlatAttention flat_attention(const std::vector<double>& psi, const std::vector<Vec>& payload);

// Gradient of the root energy for one leaf by literal recursion down the
// root-to-leaf path. Every scalar is recomputed from scratch in plain
// arithmetic; nothing is cached across calls.
Vec direct_gradient(const SignalHierarchy& h, const LeafStates& s, int leaf,
                    const EngineOptions& opts = {});

// The non-shared direct method run for every leaf: one energy table pass,
// then an O(b * depth) walk per leaf. `ops` receives the deterministic
// multiply-add count of this method for complexity comparisons.
std::vector<Vec> direct_all_gradients(const SignalHierarchy& h, const LeafStates& s,
                                      const EngineOptions& opts, uint64_t* ops);

// Recursive block construction of the stochastic matrix: same-child entries
// scale the child's matrix by mu, cross-child entries take the tied delta,
// the base family is a softmax over siblings. Honors causal options.
DenseBlockMatrix materialize_matrix(const SignalHierarchy& h, const LeafStates& s,
                                    const EngineOptions& opts = {});

struct KlValue {
    double value = 0.0;
    bool support_violation = false;  // theta positive where theta_flat is zero
};

// Sum over rows of KL(theta_i. || theta_flat_i.), with 0 log 0 = 0.
KlValue kl_objective(const std::vector<double>& theta, const std::vector<double>& theta_flat,
                     int n);

struct KlMinimizeResult {
    DenseBlockMatrix matrix;
    double kl = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Numeric minimization of the total KL over block-tied row-stochastic
// matrices by exponentiated gradient on the per-node mass simplices.
// Independent of the closed-form mixing coefficients.
KlMinimizeResult minimize_block_kl(const SignalHierarchy& h,
                                   const std::vector<double>& theta_flat,
                                   int max_iters = 10000, double tol = 1e-10,
                                   double step = 0.5);

// Central finite differences of the root energy with respect to the
// components of q_leaf, treating q as a free vector (no re-normalization).
Vec finite_diff_energy_grad(const SignalHierarchy& h, const LeafStates& s, int leaf,
                            double step, double pos_scale = 1.0);

}  // namespace hsa
