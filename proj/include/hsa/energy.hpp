#pragma once

#include <map>
#include <optional>

#include "hsa/common.hpp"
#include "hsa/hierarchy.hpp"

namespace hsa {

enum class PayloadMode { keys, values };

// Per-leaf query/key/value state in leaf order. q and k are expected to be
// LayerNorm-normalized before any energy computation.
struct LeafStates {
    std::vector<Vec> q, k, v;
    int dim() const { return q.empty() ? 0 : static_cast<int>(q.front().size()); }
    int size() const { return static_cast<int>(q.size()); }
};

// (v - mean) / (std + 1e-12) with biased variance and no affine parameters.
// A constant vector maps to zeros through the epsilon guard.
Vec layer_norm(const Vec& v);

// Shared context for energy evaluation: subtree centroids and leaf counts.
struct EnergyContext {
    const SignalHierarchy* h = nullptr;
    const LeafStates* states = nullptr;
    double pos_scale = 1.0;            // multiplier on position dot products
    std::vector<Vec> rho_q, rho_k, rho_v;  // per node id
    double sqrt_d = 0.0;
};

// Computes all subtree centroids rho_x(A) = (1/|l(A)|) sum |l(C)| rho_x(C).
EnergyContext make_context(const SignalHierarchy& h, const LeafStates& s,
                           double pos_scale = 1.0);

// Directional interaction energy between two unrelated nodes. The default is
// the reduced form valid for normalized states,
//   psi = -e(A')^T e(B') + sqrt(d) - rho_q(A)^T rho_k(B) / sqrt(d);
// with general=true the quadratic double sum over leaf pairs is evaluated
// instead (identical for normalized inputs, kept for cross-checking).
double interaction_energy(const EnergyContext& ctx, int a, int b, bool general = false);

// Recursive node energy. Leaves are +inf by definition; a family whose every
// aggregation term is an exact zero is degenerate and also yields +inf.
struct NodeEnergyResult {
    double value = kInf;
    std::vector<int> degenerate_families;
};
NodeEnergyResult node_energy(const EnergyContext& ctx, int node);

// Convex mixing weights of one child node against its siblings:
//   mu = alpha / (alpha + sum |l(C)| beta(B,C)),  delta(B,C) = beta / same,
// alpha = exp(-phi(B)), beta = exp(-psi_{B->C}), evaluated in log domain.
struct MixCoeffs {
    double mu = 0.0;
    std::map<int, double> delta;  // sibling node id -> weight
    bool degenerate = false;      // zero denominator: emit a zero update downstream
};
MixCoeffs mixing_coefficients(const EnergyContext& ctx, int b_node);

}  // namespace hsa
