#include "hsa/causal.hpp"

namespace hsa {

AttentionOutput hsa_causal_forward(const SignalHierarchy& h, const LeafStates& s,
                                   const CausalConfig& cfg) {
    EngineOptions opts;
    opts.causal = true;
    opts.include_self = cfg.include_self;
    opts.payload = cfg.payload;
    opts.pos_scale = cfg.pos_scale;
    opts.threads = cfg.threads;
    return hsa_forward(h, s, opts);
}

FixedBranchingPolicy::FixedBranchingPolicy(std::vector<int> branching, int pos_dim,
                                           PosOptions pos)
    : branching_(std::move(branching)), pos_dim_(pos_dim), pos_(pos) {
    for (int b : branching_)
        if (b < 2) throw UsageError("FixedBranchingPolicy: branching factor must be >= 2");
}

std::vector<int> FixedBranchingPolicy::boundary_events(long index, const std::string&) {
    std::vector<int> events;
    if (index <= 0 || branching_.empty()) return events;
    long window = 1;
    for (int level = 1;; ++level) {
        const int b = level <= static_cast<int>(branching_.size()) ? branching_[level - 1]
                                                                   : branching_.back();
        if (window > index / b) break;  // window*b would exceed index
        window *= b;
        if (index % window != 0) break;
        events.push_back(level);
    }
    return events;
}

Vec FixedBranchingPolicy::position(int index_in_family) const {
    return position_for(index_in_family, pos_dim_, pos_);
}

TextMarkerPolicy::TextMarkerPolicy(int pos_dim, PosOptions pos) : pos_dim_(pos_dim), pos_(pos) {}

std::vector<int> TextMarkerPolicy::boundary_events(long index, const std::string& token) {
    std::vector<int> events;
    if (index > 0) {
        if (pending_paragraph_)
            events = {1, 2};
        else if (pending_sentence_)
            events = {1};
    }
    pending_paragraph_ = token.find("\n\n") != std::string::npos;
    pending_sentence_ = false;
    if (!token.empty()) {
        const char last = token.back();
        pending_sentence_ = last == '.' || last == '?' || last == '!';
    }
    return events;
}

Vec TextMarkerPolicy::position(int index_in_family) const {
    return position_for(index_in_family, pos_dim_, pos_);
}

namespace {

struct NodeView {
    double phi = kInf;
    double eta = kInf;
    Vec rho_q, rho_k, rho_v;
    long leaves = 0;
    Vec pooled;           // softmax over left-sibling logits, payload-weighted
    double logmass = -kInf;
};

// Interaction logits of a node (given by rho_q/position) against the closed
// left siblings in `parent`, plus an optional self term.
struct EtaResult {
    double eta = kInf;
    Vec pooled;
};

EtaResult eta_against(const RightSkewedCache& cache, const std::vector<CacheEntry>& left,
                      const Vec& rho_q, const Vec& position, const CacheEntry* self,
                      uint64_t& ops) {
    const double sqrt_d = std::sqrt(static_cast<double>(cache.dim));
    std::vector<double> logits;
    std::vector<const CacheEntry*> refs;
    for (const auto& e : left) {
        logits.push_back(cache.cfg.pos_scale * dot(position, e.position) +
                         dot(rho_q, e.rho_k) / sqrt_d - sqrt_d +
                         std::log(static_cast<double>(e.n_leaves)));
        refs.push_back(&e);
        ops += static_cast<uint64_t>(cache.dim + cache.pos_dim);
    }
    if (self) {
        logits.push_back(cache.cfg.pos_scale * dot(position, self->position) +
                         dot(rho_q, self->rho_k) / sqrt_d - sqrt_d);
        refs.push_back(self);
        ops += static_cast<uint64_t>(cache.dim + cache.pos_dim);
    }
    EtaResult r;
    r.eta = -log_sum_exp(logits);
    if (r.eta < kInf) {
        double m = -kInf;
        for (double l : logits) m = std::max(m, l);
        Vec pooled(cache.dim, 0.0);
        double total = 0.0;
        for (size_t t = 0; t < logits.size(); ++t) {
            const double w = std::exp(logits[t] - m);
            axpy(w, cache.cfg.payload == PayloadMode::keys ? refs[t]->rho_k : refs[t]->rho_v,
                 pooled);
            total += w;
            ops += static_cast<uint64_t>(cache.dim);
        }
        for (double& x : pooled) x /= total;
        r.pooled = std::move(pooled);
    }
    return r;
}

void push_closed(RightSkewedCache& cache, int parent_level, CacheEntry entry) {
    auto& parent = cache.levels[parent_level];
    if (parent.sum_q.empty()) {
        parent.sum_q.assign(cache.dim, 0.0);
        parent.sum_k.assign(cache.dim, 0.0);
        parent.sum_v.assign(cache.dim, 0.0);
    }
    const double w = static_cast<double>(entry.n_leaves);
    axpy(w, entry.rho_q, parent.sum_q);
    axpy(w, entry.rho_k, parent.sum_k);
    axpy(w, entry.rho_v, parent.sum_v);
    parent.weighted_logmass += w * entry.logmass;
    parent.leaves += entry.n_leaves;
    parent.closed.push_back(std::move(entry));
}

// Position of the open family at `level` inside its parent family.
Vec open_position(const RightSkewedCache& cache, size_t level) {
    if (level + 1 >= cache.levels.size()) return Vec(cache.pos_dim, 0.0);  // root
    const int index = static_cast<int>(cache.levels[level + 1].closed.size());
    return cache.policy ? cache.policy->position(index)
                        : position_for(index, cache.pos_dim, {});
}

}  // namespace

RightSkewedCache cache_init(const SignalHierarchy& prompt, const LeafStates& s,
                            const CausalConfig& cfg, const GrowthPolicy* policy) {
    RightSkewedCache cache;
    cache.cfg = cfg;
    cache.dim = prompt.dim;
    cache.pos_dim = prompt.pos_dim;
    cache.policy = policy;
    cache.tokens = prompt.n_leaves();

    EngineOptions opts;
    opts.causal = true;
    opts.include_self = cfg.include_self;
    opts.payload = cfg.payload;
    opts.pos_scale = cfg.pos_scale;
    const SuffStats st = bottom_up(prompt, s, opts);

    // spine: root down to the last leaf's family; every spine node is the
    // rightmost child of its parent
    std::vector<int> spine;
    int node = prompt.root();
    while (!prompt.is_leaf(node)) {
        spine.push_back(node);
        node = prompt.nodes[node].children.back();
    }
    if (spine.empty()) throw UsageError("cache_init: prompt must have at least one family");

    cache.levels.resize(spine.size());
    for (size_t i = 0; i < spine.size(); ++i) {
        const int spine_node = spine[spine.size() - 1 - i];  // levels[0] = deepest
        auto& level = cache.levels[i];
        level.sum_q.assign(cache.dim, 0.0);
        level.sum_k.assign(cache.dim, 0.0);
        level.sum_v.assign(cache.dim, 0.0);
        const auto& children = prompt.nodes[spine_node].children;
        const size_t keep = i == 0 ? children.size() : children.size() - 1;
        for (size_t c = 0; c < keep; ++c) {
            const int child = children[c];
            CacheEntry e;
            e.phi = st.phi[child];
            e.eta = st.eta[child];
            e.logmass = log_add(-e.phi, -e.eta);
            e.rho_q = st.rho_q[child];
            e.rho_k = st.rho_k[child];
            e.rho_v = st.rho_v[child];
            e.n_leaves = prompt.leaf_count(child);
            e.position = prompt.nodes[child].position;
            push_closed(cache, static_cast<int>(i), std::move(e));
        }
    }
    return cache;
}

AttentionRow cache_append(RightSkewedCache& cache, const TokenState& token,
                          const std::vector<int>& close_levels) {
    uint64_t ops = 0;
    for (size_t t = 0; t < close_levels.size(); ++t)
        if (close_levels[t] != static_cast<int>(t) + 1)
            throw UsageError("cache_append: events must close levels bottom-up");

    for (int k : close_levels) {
        const int lvl = k - 1;
        if (lvl >= static_cast<int>(cache.levels.size()) || cache.levels[lvl].closed.empty())
            throw UsageError("cache_append: closing an empty or missing level");
        if (k == static_cast<int>(cache.levels.size())) cache.levels.emplace_back();
        auto& level = cache.levels[lvl];

        CacheEntry e;
        e.n_leaves = level.leaves;
        const double inv = 1.0 / static_cast<double>(level.leaves);
        e.rho_q = level.sum_q;
        e.rho_k = level.sum_k;
        e.rho_v = level.sum_v;
        for (int t = 0; t < cache.dim; ++t) e.rho_q[t] *= inv, e.rho_k[t] *= inv, e.rho_v[t] *= inv;
        e.phi = -level.weighted_logmass * inv;
        e.position = open_position(cache, lvl);
        const auto er =
            eta_against(cache, cache.levels[lvl + 1].closed, e.rho_q, e.position, nullptr, ops);
        e.eta = er.eta;
        e.logmass = log_add(-e.phi, -e.eta);
        push_closed(cache, lvl + 1, std::move(e));
        level = CacheLevel{};
        level.sum_q.assign(cache.dim, 0.0);
        level.sum_k.assign(cache.dim, 0.0);
        level.sum_v.assign(cache.dim, 0.0);
    }

    // the new leaf joins the deepest family
    {
        CacheEntry leaf;
        leaf.phi = kInf;
        leaf.rho_q = token.q;
        leaf.rho_k = token.k;
        leaf.rho_v = token.v;
        leaf.n_leaves = 1;
        leaf.position = cache.policy
                            ? cache.policy->position(
                                  static_cast<int>(cache.levels[0].closed.size()))
                            : position_for(static_cast<int>(cache.levels[0].closed.size()),
                                           cache.pos_dim, {});
        const CacheEntry* self = cache.cfg.include_self ? &leaf : nullptr;
        const auto leaf_er =
            eta_against(cache, cache.levels[0].closed, leaf.rho_q, leaf.position, self, ops);
        leaf.eta = leaf_er.eta;
        leaf.logmass = log_add(-leaf.phi, -leaf.eta);
        const double leaf_eta = leaf.eta;
        push_closed(cache, 0, std::move(leaf));
        ++cache.tokens;

        const size_t n_levels = cache.levels.size();
        std::vector<NodeView> views(n_levels);
        for (size_t i = 0; i < n_levels; ++i) {
            auto& view = views[i];
            const auto& level = cache.levels[i];
            const long below = i == 0 ? 0 : views[i - 1].leaves;
            view.leaves = level.leaves + below;
            view.rho_q.assign(cache.dim, 0.0);
            view.rho_k.assign(cache.dim, 0.0);
            view.rho_v.assign(cache.dim, 0.0);
            double wlm = level.weighted_logmass;
            for (int t = 0; t < cache.dim; ++t) {
                view.rho_q[t] = level.sum_q[t];
                view.rho_k[t] = level.sum_k[t];
                view.rho_v[t] = level.sum_v[t];
            }
            if (i > 0) {
                const double w = static_cast<double>(views[i - 1].leaves);
                axpy(w, views[i - 1].rho_q, view.rho_q);
                axpy(w, views[i - 1].rho_k, view.rho_k);
                axpy(w, views[i - 1].rho_v, view.rho_v);
                wlm += w * views[i - 1].logmass;
                ops += static_cast<uint64_t>(cache.dim);
            }
            const double inv = 1.0 / static_cast<double>(view.leaves);
            for (int t = 0; t < cache.dim; ++t) {
                view.rho_q[t] *= inv;
                view.rho_k[t] *= inv;
                view.rho_v[t] *= inv;
            }
            view.phi = -wlm * inv;
            if (i + 1 < n_levels) {
                const auto er = eta_against(cache, cache.levels[i + 1].closed, view.rho_q,
                                            open_position(cache, i), nullptr, ops);
                view.eta = er.eta;
                view.pooled = er.pooled;
            }
            view.logmass = log_add(-view.phi, -view.eta);
        }

        const double sqrt_d = std::sqrt(static_cast<double>(cache.dim));
        double u = -std::log(static_cast<double>(cache.tokens));
        Vec theta(cache.dim, 0.0);
        // path: open families below the root, deepest last, then the leaf
        for (size_t i = n_levels - 1; i-- > 0;) {
            const auto& view = views[i];
            if (view.phi == kInf && view.eta == kInf) {
                u = -kInf;
                continue;
            }
            const double log_coeff = u + log_sigmoid(view.phi - view.eta);
            if (log_coeff > -kInf && view.eta < kInf) {
                axpy(-std::exp(log_coeff) / sqrt_d, view.pooled, theta);
                ops += static_cast<uint64_t>(cache.dim);
            }
            u += log_sigmoid(view.eta - view.phi);
        }
        // the leaf is the last path node; phi(leaf)=+inf makes its sigmoid 1
        if (leaf_eta < kInf && u > -kInf) {
            axpy(-std::exp(u) / sqrt_d, leaf_er.pooled, theta);
            ops += static_cast<uint64_t>(cache.dim);
        }

        cache.last_ops = ops;
        cache.total_ops += ops;
        AttentionRow row;
        row.grad = theta;
        row.updated_q = token.q;
        const double scale = static_cast<double>(cache.tokens) * sqrt_d;
        for (int t = 0; t < cache.dim; ++t) row.updated_q[t] -= scale * theta[t];
        return row;
    }
}

CacheStats cache_stats(const RightSkewedCache& cache) {
    CacheStats s;
    for (const auto& level : cache.levels) s.nodes += static_cast<long>(level.closed.size());
    s.depth = static_cast<int>(cache.levels.size());
    s.per_token_ops = cache.last_ops;
    return s;
}

SignalHierarchy implied_fixed_prefix(const std::vector<Vec>& leaf_features,
                                     const std::vector<int>& branching, int pos_dim,
                                     const PosOptions& pos) {
    if (leaf_features.empty()) throw UsageError("implied_fixed_prefix: no tokens");
    if (leaf_features.size() == 1) {
        // a lone token still sits inside a root family
        SignalHierarchy h;
        h.dim = static_cast<int>(leaf_features.front().size());
        h.pos_dim = pos_dim;
        h.nodes.resize(2);
        h.nodes[0].parent = -1;
        h.nodes[0].domain = pos.mode == PosMode::zero ? DomainKind::set : DomainKind::grid1d;
        h.nodes[0].position = Vec(pos_dim, 0.0);
        h.nodes[0].children = {1};
        h.nodes[0].leaf_begin = 0;
        h.nodes[0].leaf_end = 1;
        h.nodes[1].parent = 0;
        h.nodes[1].position = position_for(0, pos_dim, pos);
        h.nodes[1].features = leaf_features.front();
        h.nodes[1].leaf_begin = 0;
        h.nodes[1].leaf_end = 1;
        h.nodes[1].depth = 1;
        h.leaf_ids = {1};
        return h;
    }
    // extend the branching list far enough that it never runs out
    std::vector<int> extended = branching;
    if (!extended.empty()) {
        size_t count = leaf_features.size();
        size_t levels = 0;
        while (count > 1) {
            const int b =
                levels < branching.size() ? branching[levels] : branching.back();
            count = (count + b - 1) / b;
            ++levels;
        }
        while (extended.size() < levels) extended.push_back(branching.back());
    }
    return build_fixed(leaf_features, extended, pos_dim, pos);
}

}  // namespace hsa
