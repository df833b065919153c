#include "hsa/hsa_dp.hpp"

namespace hsa {

namespace {

// Sibling list of child `c` inside family `family`, honoring causal
// restriction (left siblings only, plus the self term for leaves).
std::vector<int> sibling_list(const SignalHierarchy& h, const std::vector<int>& family, int c,
                              const EngineOptions& opts) {
    std::vector<int> sibs;
    const int my_index = h.nodes[c].index_in_family;
    for (int b : family) {
        if (b == c) continue;
        if (opts.causal && h.nodes[b].index_in_family >= my_index) continue;
        sibs.push_back(b);
    }
    if (opts.causal && opts.include_self && h.is_leaf(c)) sibs.push_back(c);
    return sibs;
}

}  // namespace

SuffStats bottom_up(const SignalHierarchy& h, const LeafStates& s, const EngineOptions& opts) {
    const size_t n = h.nodes.size();
    const int d = h.dim;
    const double sqrt_d = std::sqrt(static_cast<double>(d));

    SuffStats st;
    st.phi.assign(n, kInf);
    st.eta.assign(n, kInf);
    st.rho_q.resize(n);
    st.rho_k.resize(n);
    st.rho_v.resize(n);
    st.pooled.resize(n);
    st.psi_prime.resize(n);
    st.sib_ids.resize(n);
    std::vector<uint64_t> node_ops(n, 0);

    for (size_t id = 0; id < n; ++id) {
        if (!h.is_leaf(static_cast<int>(id))) continue;
        const int li = h.nodes[id].leaf_begin;
        st.rho_q[id] = s.q[li];
        st.rho_k[id] = s.k[li];
        st.rho_v[id] = s.v[li];
    }

    // internal nodes grouped by depth, deepest first; families at one depth
    // are independent once their children are done
    std::vector<std::vector<int>> by_depth;
    for (size_t id = 0; id < n; ++id) {
        if (h.is_leaf(static_cast<int>(id))) continue;
        const int depth = h.nodes[id].depth;
        if (static_cast<int>(by_depth.size()) <= depth) by_depth.resize(depth + 1);
        by_depth[depth].push_back(static_cast<int>(id));
    }

    std::vector<int> degenerate_slots(n, 0);
    for (size_t depth = by_depth.size(); depth-- > 0;) {
        const auto& level = by_depth[depth];
        parallel_for(level.size(), opts.threads, [&](size_t idx) {
            const int a = level[idx];
            const auto& family = h.nodes[a].children;
            uint64_t ops = 1;

            // centroids of this node from its children
            Vec rq(d, 0.0), rk(d, 0.0), rv(d, 0.0);
            for (int c : family) {
                const double w = static_cast<double>(h.leaf_count(c));
                axpy(w, st.rho_q[c], rq);
                axpy(w, st.rho_k[c], rk);
                axpy(w, st.rho_v[c], rv);
                ops += static_cast<uint64_t>(d);
            }
            const double inv = 1.0 / static_cast<double>(h.leaf_count(a));
            for (int i = 0; i < d; ++i) rq[i] *= inv, rk[i] *= inv, rv[i] *= inv;
            st.rho_q[a] = std::move(rq);
            st.rho_k[a] = std::move(rk);
            st.rho_v[a] = std::move(rv);

            const bool skip_family = opts.batch_dummy_root && a == h.root();
            if (!skip_family) {
                // family-local attention: logits, row normalizers, pooled payloads
                for (int c : family) {
                    auto sibs = sibling_list(h, family, c, opts);
                    std::vector<double> logits(sibs.size());
                    for (size_t t = 0; t < sibs.size(); ++t) {
                        const int b = sibs[t];
                        logits[t] = opts.pos_scale * dot(h.nodes[c].position, h.nodes[b].position) +
                                    dot(st.rho_q[c], st.rho_k[b]) / sqrt_d - sqrt_d +
                                    std::log(static_cast<double>(h.leaf_count(b)));
                        ops += static_cast<uint64_t>(d + h.pos_dim);
                    }
                    st.eta[c] = -log_sum_exp(logits);
                    if (st.eta[c] < kInf) {
                        double m = -kInf;
                        for (double l : logits) m = std::max(m, l);
                        Vec pooled(d, 0.0);
                        double total = 0.0;
                        for (size_t t = 0; t < sibs.size(); ++t) {
                            const double w = std::exp(logits[t] - m);
                            const Vec& payload = opts.payload == PayloadMode::keys
                                                     ? st.rho_k[sibs[t]]
                                                     : st.rho_v[sibs[t]];
                            axpy(w, payload, pooled);
                            total += w;
                            ops += static_cast<uint64_t>(d);
                        }
                        for (int i = 0; i < d; ++i) pooled[i] /= total;
                        st.pooled[c] = std::move(pooled);
                    }
                    st.psi_prime[c] = std::move(logits);
                    st.sib_ids[c] = std::move(sibs);
                }
                // subtree energy from the children's masses
                double phi = 0.0;
                bool poisoned = false;
                for (int c : family) {
                    const double mass = log_add(-st.phi[c], -st.eta[c]);
                    if (mass == -kInf) poisoned = true;
                    phi -= static_cast<double>(h.leaf_count(c)) / h.leaf_count(a) * mass;
                    ++ops;
                }
                if (poisoned) {
                    st.phi[a] = kInf;
                    degenerate_slots[a] = 1;
                } else {
                    st.phi[a] = phi;
                }
            }
            node_ops[a] = ops;
        });
    }

    for (size_t id = 0; id < n; ++id) {
        st.ops += node_ops[id];
        if (degenerate_slots[id]) st.degenerate_families.push_back(static_cast<int>(id));
    }
    return st;
}

uint64_t top_down(const SignalHierarchy& h, const SuffStats& st, int eval_root,
                  AttentionOutput& out, const EngineOptions& opts) {
    const int d = h.dim;
    const double sqrt_d = std::sqrt(static_cast<double>(d));
    const size_t n = h.nodes.size();

    // subtree of eval_root is the contiguous preorder id range [eval_root, end)
    std::vector<int> subtree_end(n);
    for (size_t id = n; id-- > 0;) {
        subtree_end[id] = h.is_leaf(static_cast<int>(id))
                              ? static_cast<int>(id) + 1
                              : subtree_end[h.nodes[id].children.back()];
    }

    std::vector<double> u(n, -kInf);
    std::vector<Vec> theta(n);
    u[eval_root] = -std::log(static_cast<double>(h.leaf_count(eval_root)));
    theta[eval_root] = Vec(d, 0.0);

    std::vector<uint64_t> node_ops(n, 0);
    std::vector<std::vector<int>> by_depth;
    for (int id = eval_root + 1; id < subtree_end[eval_root]; ++id) {
        const int depth = h.nodes[id].depth;
        if (static_cast<int>(by_depth.size()) <= depth) by_depth.resize(depth + 1);
        by_depth[depth].push_back(id);
    }

    for (const auto& level : by_depth) {
        parallel_for(level.size(), opts.threads, [&](size_t idx) {
            const int c = level[idx];
            const int parent = h.nodes[c].parent;
            const double phi = st.phi[c];
            const double eta = st.eta[c];
            Vec t = theta[parent];
            double uc;
            if (phi == kInf && eta == kInf) {
                // no mass anywhere below or beside this node
                uc = -kInf;
            } else {
                const double log_coeff = u[parent] + log_sigmoid(phi - eta);
                if (log_coeff > -kInf && eta < kInf) {
                    axpy(-std::exp(log_coeff) / sqrt_d, st.pooled[c], t);
                    node_ops[c] += static_cast<uint64_t>(d);
                }
                uc = u[parent] + log_sigmoid(eta - phi);
            }
            node_ops[c] += static_cast<uint64_t>(d) + 1;
            u[c] = uc;
            theta[c] = std::move(t);
        });
    }

    uint64_t ops = 0;
    for (int id = eval_root; id < subtree_end[eval_root]; ++id) {
        ops += node_ops[id];
        const auto& node = h.nodes[id];
        if (node.children.empty()) out.grads[node.leaf_begin] = theta[id];
    }
    return ops;
}

AttentionOutput hsa_forward(const SignalHierarchy& h, const LeafStates& s,
                            const EngineOptions& opts) {
    const int n_leaves = h.n_leaves();
    AttentionOutput out;
    out.grads.assign(n_leaves, Vec(h.dim, 0.0));
    out.updated_q = s.q;
    if (n_leaves == 1) {
        out.degenerate_leaves.push_back(0);
        if (!(opts.causal && opts.include_self && !h.is_leaf(h.root()))) return out;
        // a single token attending to itself is still well defined in causal mode
    }
    SuffStats st = bottom_up(h, s, opts);
    out.ops = st.ops;
    out.ops += top_down(h, st, h.root(), out, opts);

    const double scale = static_cast<double>(n_leaves) * std::sqrt(static_cast<double>(h.dim));
    out.degenerate_leaves.clear();
    for (int i = 0; i < n_leaves; ++i) {
        bool zero = true;
        for (int t = 0; t < h.dim; ++t) {
            out.updated_q[i][t] = s.q[i][t] - scale * out.grads[i][t];
            if (out.grads[i][t] != 0.0) zero = false;
        }
        if (zero) out.degenerate_leaves.push_back(i);
    }
    return out;
}

std::vector<AttentionOutput> hsa_forward_batch(const BatchResult& batch, const LeafStates& s,
                                               const EngineOptions& opts) {
    const auto& h = batch.tree;
    for (const auto& [begin, end] : batch.offsets)
        if (begin < 0 || end > h.n_leaves() || begin >= end)
            throw UsageError("hsa_forward_batch: offsets inconsistent with tree");

    EngineOptions inner = opts;
    inner.batch_dummy_root = true;
    SuffStats st = bottom_up(h, s, inner);

    AttentionOutput all;
    all.grads.assign(h.n_leaves(), Vec(h.dim, 0.0));
    uint64_t td_ops = 0;
    for (int r : h.nodes[h.root()].children) td_ops += top_down(h, st, r, all, inner);

    std::vector<AttentionOutput> outs;
    const double sqrt_d = std::sqrt(static_cast<double>(h.dim));
    for (size_t b = 0; b < batch.offsets.size(); ++b) {
        const auto [begin, end] = batch.offsets[b];
        AttentionOutput o;
        o.ops = b == 0 ? st.ops + td_ops : 0;  // shared passes, reported once
        const double scale = static_cast<double>(end - begin) * sqrt_d;
        for (int i = begin; i < end; ++i) {
            o.grads.push_back(all.grads[i]);
            Vec uq = s.q[i];
            bool zero = true;
            for (int t = 0; t < h.dim; ++t) {
                uq[t] -= scale * all.grads[i][t];
                if (all.grads[i][t] != 0.0) zero = false;
            }
            if (zero) o.degenerate_leaves.push_back(i - begin);
            o.updated_q.push_back(std::move(uq));
        }
        outs.push_back(std::move(o));
    }
    return outs;
}

}  // namespace hsa
