#include "hsa/energy.hpp"

namespace hsa {

Vec layer_norm(const Vec& v) {
    const size_t d = v.size();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    const double denom = std::sqrt(var) + 1e-12;
    Vec out(d);
    for (size_t i = 0; i < d; ++i) out[i] = (v[i] - mean) / denom;
    return out;
}

EnergyContext make_context(const SignalHierarchy& h, const LeafStates& s, double pos_scale) {
    EnergyContext ctx;
    ctx.h = &h;
    ctx.states = &s;
    ctx.pos_scale = pos_scale;
    ctx.sqrt_d = std::sqrt(static_cast<double>(h.dim));
    const size_t n = h.nodes.size();
    ctx.rho_q.resize(n);
    ctx.rho_k.resize(n);
    ctx.rho_v.resize(n);
    // descending id order visits children before parents
    for (size_t id = n; id-- > 0;) {
        const auto& node = h.nodes[id];
        if (node.children.empty()) {
            const int li = node.leaf_begin;
            ctx.rho_q[id] = s.q[li];
            ctx.rho_k[id] = s.k[li];
            ctx.rho_v[id] = s.v[li];
            continue;
        }
        Vec q(h.dim, 0.0), k(h.dim, 0.0), v(h.dim, 0.0);
        for (int c : node.children) {
            const double w = static_cast<double>(h.leaf_count(c));
            axpy(w, ctx.rho_q[c], q);
            axpy(w, ctx.rho_k[c], k);
            axpy(w, ctx.rho_v[c], v);
        }
        const double inv = 1.0 / static_cast<double>(h.leaf_count(static_cast<int>(id)));
        for (int i = 0; i < h.dim; ++i) {
            q[i] *= inv;
            k[i] *= inv;
            v[i] *= inv;
        }
        ctx.rho_q[id] = std::move(q);
        ctx.rho_k[id] = std::move(k);
        ctx.rho_v[id] = std::move(v);
    }
    return ctx;
}

namespace {

bool related(const SignalHierarchy& h, int a, int b) {
    const auto& na = h.nodes[a];
    const auto& nb = h.nodes[b];
    return (na.leaf_begin <= nb.leaf_begin && nb.leaf_end <= na.leaf_end) ||
           (nb.leaf_begin <= na.leaf_begin && na.leaf_end <= nb.leaf_end);
}

// Highest distinct ancestors of two unrelated nodes: the pair of siblings
// under the immediate common ancestor.
std::pair<int, int> highest_distinct(const SignalHierarchy& h, int a, int b) {
    int da = h.nodes[a].depth, db = h.nodes[b].depth;
    while (da > db) a = h.nodes[a].parent, --da;
    while (db > da) b = h.nodes[b].parent, --db;
    while (h.nodes[a].parent != h.nodes[b].parent) {
        a = h.nodes[a].parent;
        b = h.nodes[b].parent;
    }
    return {a, b};
}

}  // namespace

double interaction_energy(const EnergyContext& ctx, int a, int b, bool general) {
    const auto& h = *ctx.h;
    if (related(h, a, b))
        throw UsageError("interaction_energy: nodes are related");
    const auto [ap, bp] = highest_distinct(h, a, b);
    const double pos = ctx.pos_scale * dot(h.nodes[ap].position, h.nodes[bp].position);
    if (!general) {
        return -pos + ctx.sqrt_d - dot(ctx.rho_q[a], ctx.rho_k[b]) / ctx.sqrt_d;
    }
    const auto& s = *ctx.states;
    double acc = 0.0;
    for (int i = h.nodes[a].leaf_begin; i < h.nodes[a].leaf_end; ++i)
        for (int j = h.nodes[b].leaf_begin; j < h.nodes[b].leaf_end; ++j) {
            double sq = 0.0;
            for (int t = 0; t < h.dim; ++t) {
                const double diff = s.q[i][t] - s.k[j][t];
                sq += diff * diff;
            }
            acc += sq;
        }
    const double scale =
        2.0 * ctx.sqrt_d * h.leaf_count(a) * static_cast<double>(h.leaf_count(b));
    return -pos + acc / scale;
}

namespace {

// log[ sum_{C in sib(B)} |l(C)| exp(-psi_{B->C}) ], -inf when B has no siblings.
double log_sibling_mass(const EnergyContext& ctx, int b_node) {
    const auto& h = *ctx.h;
    const int parent = h.nodes[b_node].parent;
    if (parent < 0) return -kInf;
    std::vector<double> terms;
    for (int c : h.nodes[parent].children) {
        if (c == b_node) continue;
        terms.push_back(std::log(static_cast<double>(h.leaf_count(c))) -
                        interaction_energy(ctx, b_node, c));
    }
    return log_sum_exp(terms);
}

double node_energy_rec(const EnergyContext& ctx, int node, std::vector<int>& degenerate) {
    const auto& h = *ctx.h;
    if (h.is_leaf(node)) return kInf;
    double phi = 0.0;
    bool poisoned = false;
    for (int c : h.nodes[node].children) {
        const double phi_c = node_energy_rec(ctx, c, degenerate);
        const double mass = log_add(-phi_c, log_sibling_mass(ctx, c));
        if (mass == -kInf) poisoned = true;
        phi -= static_cast<double>(h.leaf_count(c)) / h.leaf_count(node) * mass;
    }
    if (poisoned) {
        degenerate.push_back(node);
        return kInf;
    }
    return phi;
}

}  // namespace

NodeEnergyResult node_energy(const EnergyContext& ctx, int node) {
    NodeEnergyResult r;
    r.value = node_energy_rec(ctx, node, r.degenerate_families);
    return r;
}

MixCoeffs mixing_coefficients(const EnergyContext& ctx, int b_node) {
    const auto& h = *ctx.h;
    MixCoeffs out;
    const double phi = node_energy(ctx, b_node).value;
    const int parent = h.nodes[b_node].parent;

    std::vector<double> terms;  // log |l(C)| - psi per sibling, aligned with sib ids
    std::vector<int> sibs;
    if (parent >= 0) {
        for (int c : h.nodes[parent].children) {
            if (c == b_node) continue;
            sibs.push_back(c);
            terms.push_back(std::log(static_cast<double>(h.leaf_count(c))) -
                            interaction_energy(ctx, b_node, c));
        }
    }
    std::vector<double> all = terms;
    all.push_back(-phi);
    const double denom = log_sum_exp(all);
    if (denom == -kInf) {
        out.degenerate = true;
        return out;
    }
    out.mu = std::exp(-phi - denom);
    for (size_t i = 0; i < sibs.size(); ++i) {
        // delta is beta/denominator; drop the |l(C)| factor used in the mass
        const double log_l = std::log(static_cast<double>(h.leaf_count(sibs[i])));
        out.delta[sibs[i]] = std::exp(terms[i] - log_l - denom);
    }
    return out;
}

}  // namespace hsa
