#include "hsa/oracle.hpp"

namespace hsa {

namespace {

// Plain-arithmetic evaluation helpers. These mirror the definitions, not the
// implementation: no log-domain tricks, no shared statistics.

std::pair<int, int> highest_distinct_pair(const SignalHierarchy& h, int a, int b) {
    int da = h.nodes[a].depth, db = h.nodes[b].depth;
    while (da > db) a = h.nodes[a].parent, --da;
    while (db > da) b = h.nodes[b].parent, --db;
    while (h.nodes[a].parent != h.nodes[b].parent) {
        a = h.nodes[a].parent;
        b = h.nodes[b].parent;
    }
    return {a, b};
}

double mean_dot_qk(const SignalHierarchy& h, const LeafStates& s, int a, int b) {
    double acc = 0.0;
    for (int i = h.nodes[a].leaf_begin; i < h.nodes[a].leaf_end; ++i)
        for (int j = h.nodes[b].leaf_begin; j < h.nodes[b].leaf_end; ++j)
            acc += dot(s.q[i], s.k[j]);
    return acc / (static_cast<double>(h.leaf_count(a)) * h.leaf_count(b));
}

double psi_naive(const SignalHierarchy& h, const LeafStates& s, int a, int b,
                 double pos_scale) {
    const auto [ap, bp] = highest_distinct_pair(h, a, b);
    const double sqrt_d = std::sqrt(static_cast<double>(h.dim));
    return -pos_scale * dot(h.nodes[ap].position, h.nodes[bp].position) + sqrt_d -
           mean_dot_qk(h, s, a, b) / sqrt_d;
}

// Siblings of c the energy recursion may see: all of them, or the left ones
// plus an optional leaf-level self term in causal mode.
std::vector<int> visible_siblings(const SignalHierarchy& h, int c, const EngineOptions& opts) {
    std::vector<int> out;
    const int parent = h.nodes[c].parent;
    if (parent < 0) return out;
    for (int b : h.nodes[parent].children) {
        if (b == c) continue;
        if (opts.causal && h.nodes[b].index_in_family >= h.nodes[c].index_in_family) continue;
        out.push_back(b);
    }
    if (opts.causal && opts.include_self && h.is_leaf(c)) out.push_back(c);
    return out;
}

double psi_between(const SignalHierarchy& h, const LeafStates& s, int a, int b,
                   double pos_scale) {
    if (a == b) {
        // leaf-level self term: same reduced form applied to the node itself
        const double sqrt_d = std::sqrt(static_cast<double>(h.dim));
        const int li = h.nodes[a].leaf_begin;
        return -pos_scale * dot(h.nodes[a].position, h.nodes[a].position) + sqrt_d -
               dot(s.q[li], s.k[li]) / sqrt_d;
    }
    return psi_naive(h, s, a, b, pos_scale);
}

double phi_naive(const SignalHierarchy& h, const LeafStates& s, int node,
                 const EngineOptions& opts) {
    if (h.is_leaf(node)) return kInf;
    double phi = 0.0;
    for (int c : h.nodes[node].children) {
        double mass = std::exp(-phi_naive(h, s, c, opts));
        for (int b : visible_siblings(h, c, opts))
            mass += h.leaf_count(b) * std::exp(-psi_between(h, s, c, b, opts.pos_scale));
        phi -= static_cast<double>(h.leaf_count(c)) / h.leaf_count(node) * std::log(mass);
    }
    return phi;
}

Vec payload_mean(const SignalHierarchy& h, const LeafStates& s, int node, PayloadMode payload) {
    Vec m(h.dim, 0.0);
    for (int j = h.nodes[node].leaf_begin; j < h.nodes[node].leaf_end; ++j)
        axpy(1.0, payload == PayloadMode::keys ? s.k[j] : s.v[j], m);
    for (double& x : m) x /= h.leaf_count(node);
    return m;
}

Vec direct_gradient_rec(const SignalHierarchy& h, const LeafStates& s, int node, int leaf_id,
                        const EngineOptions& opts) {
    const double sqrt_d = std::sqrt(static_cast<double>(h.dim));
    // child of `node` whose subtree holds the leaf
    int b = -1;
    for (int c : h.nodes[node].children) {
        const int lb = h.nodes[c].leaf_begin, le = h.nodes[c].leaf_end;
        const int pos = h.nodes[leaf_id].leaf_begin;
        if (lb <= pos && pos < le) b = c;
    }
    const double alpha = std::exp(-phi_naive(h, s, b, opts));
    const auto sibs = visible_siblings(h, b, opts);
    double denom = alpha;
    std::vector<double> betas(sibs.size());
    for (size_t t = 0; t < sibs.size(); ++t) {
        betas[t] = std::exp(-psi_between(h, s, b, sibs[t], opts.pos_scale));
        denom += h.leaf_count(sibs[t]) * betas[t];
    }
    Vec grad(h.dim, 0.0);
    if (denom == 0.0) return grad;  // no mass: zero update for this branch

    if (!h.is_leaf(b) && alpha > 0.0) {
        Vec inner = direct_gradient_rec(h, s, b, leaf_id, opts);
        axpy(alpha / denom, inner, grad);
    }
    for (size_t t = 0; t < sibs.size(); ++t) {
        const Vec mean = payload_mean(h, s, sibs[t], opts.payload);
        const double coeff =
            -h.leaf_count(sibs[t]) * betas[t] / (denom * sqrt_d * h.leaf_count(b));
        axpy(coeff, mean, grad);
    }
    const double ratio = static_cast<double>(h.leaf_count(b)) / h.leaf_count(node);
    for (double& x : grad) x *= ratio;
    return grad;
}

}  // namespace

std::vector<double> pairwise_psi(const EnergyContext& ctx) {
    const auto& h = *ctx.h;
    const auto& s = *ctx.states;
    const int n = h.n_leaves();
    std::vector<double> psi(static_cast<size_t>(n) * n, kInf);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            psi[static_cast<size_t>(i) * n + j] =
                psi_naive(h, s, h.leaf_ids[i], h.leaf_ids[j], ctx.pos_scale);
        }
    return psi;
}

FlatAttention flat_attention(const std::vector<double>& psi, const std::vector<Vec>& payload) {
    const int n = static_cast<int>(payload.size());
    if (n < 2) throw UsageError("flat_attention: need at least 2 leaves");
    const int d = static_cast<int>(payload.front().size());
    FlatAttention out;
    out.theta.assign(static_cast<size_t>(n) * n, 0.0);
    out.outputs.assign(n, Vec(d, 0.0));
    for (int i = 0; i < n; ++i) {
        double m = -kInf;
        for (int j = 0; j < n; ++j)
            if (j != i) m = std::max(m, -psi[static_cast<size_t>(i) * n + j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j)
            if (j != i) z += std::exp(-psi[static_cast<size_t>(i) * n + j] - m);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double w = std::exp(-psi[static_cast<size_t>(i) * n + j] - m) / z;
            out.theta[static_cast<size_t>(i) * n + j] = w;
            axpy(w, payload[j], out.outputs[i]);
        }
    }
    return out;
}

Vec direct_gradient(const SignalHierarchy& h, const LeafStates& s, int leaf,
                    const EngineOptions& opts) {
    if (leaf < 0 || leaf >= h.n_leaves()) throw UsageError("direct_gradient: bad leaf index");
    const int leaf_id = h.leaf_ids[leaf];
    if (h.is_leaf(h.root())) return Vec(h.dim, 0.0);
    return direct_gradient_rec(h, s, h.root(), leaf_id, opts);
}

std::vector<Vec> direct_all_gradients(const SignalHierarchy& h, const LeafStates& s,
                                      const EngineOptions& opts, uint64_t* ops) {
    const int n = h.n_leaves();
    const int d = h.dim;
    const double sqrt_d = std::sqrt(static_cast<double>(d));
    uint64_t count = 0;

    // one shared pass: centroids and the energy table
    std::vector<Vec> cen_q(h.nodes.size()), cen_k(h.nodes.size()), cen_v(h.nodes.size());
    std::vector<double> phi(h.nodes.size(), kInf);
    for (size_t id = h.nodes.size(); id-- > 0;) {
        const auto& node = h.nodes[id];
        if (node.children.empty()) {
            cen_q[id] = s.q[node.leaf_begin];
            cen_k[id] = s.k[node.leaf_begin];
            cen_v[id] = s.v[node.leaf_begin];
            continue;
        }
        Vec q(d, 0.0), k(d, 0.0), v(d, 0.0);
        for (int c : node.children) {
            const double w = h.leaf_count(c);
            axpy(w, cen_q[c], q);
            axpy(w, cen_k[c], k);
            axpy(w, cen_v[c], v);
            count += static_cast<uint64_t>(d);
        }
        for (int i = 0; i < d; ++i) {
            q[i] /= h.leaf_count(static_cast<int>(id));
            k[i] /= h.leaf_count(static_cast<int>(id));
            v[i] /= h.leaf_count(static_cast<int>(id));
        }
        cen_q[id] = std::move(q);
        cen_k[id] = std::move(k);
        cen_v[id] = std::move(v);
    }
    auto psi_c = [&](int a, int b) {
        count += static_cast<uint64_t>(d + h.pos_dim);
        const auto [ap, bp] =
            a == b ? std::pair<int, int>{a, b} : highest_distinct_pair(h, a, b);
        return -opts.pos_scale * dot(h.nodes[ap].position, h.nodes[bp].position) + sqrt_d -
               dot(cen_q[a], cen_k[b]) / sqrt_d;
    };
    for (size_t id = h.nodes.size(); id-- > 0;) {
        const auto& node = h.nodes[id];
        if (node.children.empty()) continue;
        double p = 0.0;
        for (int c : node.children) {
            double mass = std::exp(-phi[c]);
            for (int b : visible_siblings(h, c, opts))
                mass += h.leaf_count(b) * std::exp(-psi_c(c, b));
            p -= static_cast<double>(h.leaf_count(c)) / h.leaf_count(static_cast<int>(id)) *
                 std::log(mass);
            ++count;
        }
        phi[id] = p;
    }

    // per leaf: walk the root-to-leaf path, O(b * depth) each
    std::vector<Vec> grads(n, Vec(d, 0.0));
    for (int i = 0; i < n; ++i) {
        std::vector<int> path;  // nodes below the root down to the leaf
        for (int id = h.leaf_ids[i]; h.nodes[id].parent >= 0; id = h.nodes[id].parent)
            path.push_back(id);
        double coeff = 1.0 / h.n_leaves();
        Vec g(d, 0.0);
        for (size_t t = path.size(); t-- > 0;) {
            const int b = path[t];
            const double alpha = std::exp(-phi[b]);
            const auto sibs = visible_siblings(h, b, opts);
            double denom = alpha;
            std::vector<double> betas(sibs.size());
            for (size_t u = 0; u < sibs.size(); ++u) {
                betas[u] = std::exp(-psi_c(b, sibs[u]));
                denom += h.leaf_count(sibs[u]) * betas[u];
            }
            if (denom == 0.0) break;  // no mass at or below this level
            for (size_t u = 0; u < sibs.size(); ++u) {
                const Vec& mean = opts.payload == PayloadMode::keys ? cen_k[sibs[u]]
                                                                    : cen_v[sibs[u]];
                axpy(-coeff * h.leaf_count(sibs[u]) * betas[u] / (denom * sqrt_d), mean, g);
                count += static_cast<uint64_t>(d);
            }
            coeff *= alpha / denom;
        }
        grads[i] = std::move(g);
    }
    if (ops) *ops = count;
    return grads;
}

namespace {

struct MatrixBuilder {
    const SignalHierarchy& h;
    const LeafStates& s;
    const EngineOptions& opts;
    DenseBlockMatrix& out;
    int next_block = 0;

    void fill(int a, int b, double value, int block_id) {
        for (int i = h.nodes[a].leaf_begin; i < h.nodes[a].leaf_end; ++i)
            for (int j = h.nodes[b].leaf_begin; j < h.nodes[b].leaf_end; ++j) {
                out.theta_hat[static_cast<size_t>(i) * out.n + j] = value;
                out.block_map[static_cast<size_t>(i) * out.n + j] = block_id;
            }
    }

    // writes all within-subtree entries, pre-scaled by the mass that reaches
    // this subtree from above
    void build(int node, double scale) {
        if (h.is_leaf(node)) return;
        for (int b : h.nodes[node].children) {
            const double alpha = std::exp(-phi_naive(h, s, b, opts));
            const auto visible = visible_siblings(h, b, opts);
            double denom = alpha;
            for (int c : visible)
                denom += h.leaf_count(c) * std::exp(-psi_between(h, s, b, c, opts.pos_scale));
            const bool dead = denom == 0.0;

            for (int c : h.nodes[node].children) {
                if (c == b) continue;
                const bool vis =
                    !opts.causal ||
                    h.nodes[c].index_in_family < h.nodes[b].index_in_family;
                double delta = 0.0;
                if (vis && !dead)
                    delta = std::exp(-psi_between(h, s, b, c, opts.pos_scale)) / denom;
                fill(b, c, scale * delta, next_block++);
            }
            if (opts.causal && opts.include_self && h.is_leaf(b) && !dead) {
                const int i = h.nodes[b].leaf_begin;
                out.theta_hat[static_cast<size_t>(i) * out.n + i] =
                    scale * std::exp(-psi_between(h, s, b, b, opts.pos_scale)) / denom;
            }
            build(b, dead ? 0.0 : scale * alpha / denom);
        }
    }
};

}  // namespace

DenseBlockMatrix materialize_matrix(const SignalHierarchy& h, const LeafStates& s,
                                    const EngineOptions& opts) {
    DenseBlockMatrix m;
    m.n = h.n_leaves();
    m.tau = 1.0 / (m.n * std::sqrt(static_cast<double>(h.dim)));
    m.theta_hat.assign(static_cast<size_t>(m.n) * m.n, 0.0);
    m.block_map.assign(static_cast<size_t>(m.n) * m.n, -1);
    MatrixBuilder builder{h, s, opts, m};
    builder.build(h.root(), 1.0);
    return m;
}

KlValue kl_objective(const std::vector<double>& theta, const std::vector<double>& theta_flat,
                     int n) {
    KlValue r;
    for (size_t idx = 0; idx < theta.size(); ++idx) {
        const double t = theta[idx];
        if (t == 0.0) continue;  // 0 log 0 := 0
        const double f = theta_flat[idx];
        if (f == 0.0) {
            r.support_violation = true;
            r.value = kInf;
            return r;
        }
        r.value += t * std::log(t / f);
    }
    (void)n;
    return r;
}

namespace {

// One mass simplex per non-root node: how a row inside this node splits its
// remaining mass between staying in the subtree (internal nodes only) and
// each sibling block.
struct MassSimplex {
    int node = 0;
    bool has_self = false;
    std::vector<int> sibs;
    std::vector<double> w;  // [self], then one entry per sibling
};

struct BlockRef {
    int from = 0, to = 0;          // ordered sibling pair
    std::vector<int> factors;      // (simplex, coord) packed as simplex*4096+coord
    double cells = 0;              // |l(from)| * |l(to)|
};

}  // namespace

KlMinimizeResult minimize_block_kl(const SignalHierarchy& h,
                                   const std::vector<double>& theta_flat, int max_iters,
                                   double tol, double step) {
    const int n = h.n_leaves();
    std::vector<MassSimplex> simplices;
    std::vector<int> simplex_of(h.nodes.size(), -1);
    for (size_t id = 0; id < h.nodes.size(); ++id) {
        const int parent = h.nodes[id].parent;
        if (parent < 0) continue;
        MassSimplex sx;
        sx.node = static_cast<int>(id);
        sx.has_self = !h.is_leaf(static_cast<int>(id));
        for (int c : h.nodes[parent].children)
            if (c != static_cast<int>(id)) sx.sibs.push_back(c);
        const size_t k = (sx.has_self ? 1 : 0) + sx.sibs.size();
        if (k == 0) continue;
        sx.w.assign(k, 1.0 / static_cast<double>(k));
        simplex_of[id] = static_cast<int>(simplices.size());
        simplices.push_back(std::move(sx));
    }

    auto coord_of_sib = [&](const MassSimplex& sx, int sib) {
        for (size_t t = 0; t < sx.sibs.size(); ++t)
            if (sx.sibs[t] == sib) return static_cast<int>(t) + (sx.has_self ? 1 : 0);
        return -1;
    };

    // enumerate tied blocks with their parameter factor chains
    std::vector<BlockRef> blocks;
    for (size_t id = 0; id < h.nodes.size(); ++id) {
        const int parent = h.nodes[id].parent;
        if (parent < 0 || simplex_of[id] < 0) continue;
        std::vector<int> self_chain;  // self coords of proper ancestors below root
        for (int a = parent; h.nodes[a].parent >= 0; a = h.nodes[a].parent)
            self_chain.push_back(simplex_of[a] * 4096 + 0);
        for (int sib : simplices[simplex_of[id]].sibs) {
            BlockRef b;
            b.from = static_cast<int>(id);
            b.to = sib;
            b.factors = self_chain;
            b.factors.push_back(simplex_of[id] * 4096 +
                                coord_of_sib(simplices[simplex_of[id]], sib));
            b.cells = static_cast<double>(h.leaf_count(static_cast<int>(id))) *
                      h.leaf_count(sib);
            blocks.push_back(std::move(b));
        }
    }

    auto block_value = [&](const BlockRef& b) {
        double v = 1.0;
        for (int f : b.factors) v *= simplices[f / 4096].w[f % 4096];
        return v / h.leaf_count(b.to);  // mass spread evenly over the target leaves
    };

    KlMinimizeResult result;
    std::vector<std::vector<double>> grads(simplices.size());
    for (size_t sx = 0; sx < simplices.size(); ++sx)
        grads[sx].assign(simplices[sx].w.size(), 0.0);

    int iter = 0;
    for (; iter < max_iters; ++iter) {
        for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
        // d/dtheta of sum theta log(theta/theta_f) is log(theta/theta_f) + 1,
        // accumulated per block against each parameter in its factor chain
        for (const auto& b : blocks) {
            const double v = block_value(b);
            if (v <= 0.0) continue;
            double dsum = 0.0;
            for (int i = h.nodes[b.from].leaf_begin; i < h.nodes[b.from].leaf_end; ++i)
                for (int j = h.nodes[b.to].leaf_begin; j < h.nodes[b.to].leaf_end; ++j)
                    dsum += std::log(v / theta_flat[static_cast<size_t>(i) * n + j]) + 1.0;
            for (int f : b.factors) {
                const double pv = simplices[f / 4096].w[f % 4096];
                if (pv > 0.0) grads[f / 4096][f % 4096] += dsum * v / pv;
            }
        }
        double max_pg = 0.0;
        for (size_t sx = 0; sx < simplices.size(); ++sx) {
            const auto& w = simplices[sx].w;
            const auto& g = grads[sx];
            double mean = 0.0;
            for (size_t t = 0; t < w.size(); ++t) mean += w[t] * g[t];
            for (size_t t = 0; t < w.size(); ++t)
                max_pg = std::max(max_pg, w[t] * std::abs(g[t] - mean));
        }
        if (max_pg <= tol) {
            result.converged = true;
            break;
        }
        for (size_t sx = 0; sx < simplices.size(); ++sx) {
            auto& w = simplices[sx].w;
            const auto& g = grads[sx];
            double m = -kInf;
            for (size_t t = 0; t < w.size(); ++t) m = std::max(m, -step * g[t]);
            double z = 0.0;
            for (size_t t = 0; t < w.size(); ++t) {
                w[t] = std::max(w[t] * std::exp(-step * g[t] - m), 1e-300);
                z += w[t];
            }
            for (double& x : w) x /= z;
        }
    }
    result.iterations = iter;

    // materialize the optimized matrix; one assignment per block keeps ties exact
    result.matrix.n = n;
    result.matrix.tau = 1.0 / (n * std::sqrt(static_cast<double>(h.dim)));
    result.matrix.theta_hat.assign(static_cast<size_t>(n) * n, 0.0);
    result.matrix.block_map.assign(static_cast<size_t>(n) * n, -1);
    int next_block = 0;
    for (const auto& b : blocks) {
        const double v = block_value(b);
        for (int i = h.nodes[b.from].leaf_begin; i < h.nodes[b.from].leaf_end; ++i)
            for (int j = h.nodes[b.to].leaf_begin; j < h.nodes[b.to].leaf_end; ++j) {
                result.matrix.theta_hat[static_cast<size_t>(i) * n + j] = v;
                result.matrix.block_map[static_cast<size_t>(i) * n + j] = next_block;
            }
        ++next_block;
    }
    result.kl = kl_objective(result.matrix.theta_hat, theta_flat, n).value;
    return result;
}

Vec finite_diff_energy_grad(const SignalHierarchy& h, const LeafStates& s, int leaf,
                            double step, double pos_scale) {
    if (step <= 0.0) throw UsageError("finite_diff_energy_grad: step must be positive");
    EngineOptions opts;
    opts.pos_scale = pos_scale;
    LeafStates pert = s;
    Vec g(h.dim, 0.0);
    for (int t = 0; t < h.dim; ++t) {
        pert.q[leaf][t] = s.q[leaf][t] + step;
        const double up = phi_naive(h, pert, h.root(), opts);
        pert.q[leaf][t] = s.q[leaf][t] - step;
        const double dn = phi_naive(h, pert, h.root(), opts);
        pert.q[leaf][t] = s.q[leaf][t];
        g[t] = (up - dn) / (2.0 * step);
    }
    return g;
}

}  // namespace hsa
