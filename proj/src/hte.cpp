#include "hsa/hte.hpp"

#include "hsa/energy.hpp"
#include "json.hpp"

namespace hsa {

using nlohmann::json;

Vec matvec(const Matrix& m, const Vec& x) {
    Vec y(m.rows, 0.0);
    for (int r = 0; r < m.rows; ++r) {
        double acc = 0.0;
        const double* row = m.data.data() + static_cast<size_t>(r) * m.cols;
        for (int c = 0; c < m.cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
    return y;
}

namespace {

Matrix seeded_matrix(int rows, int cols, uint64_t& state) {
    Matrix m(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : m.data) v = (2.0 * uniform01(state) - 1.0) * bound;
    return m;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

LayerParams init_params(const LayerConfig& config, uint64_t seed) {
    if (config.d_model < 1 || config.d_head < 1 || config.n_heads < 1 || config.pos_dim < 1)
        throw UsageError("init_params: inconsistent dimensions");
    LayerParams p;
    p.config = config;
    p.config.seed = seed;
    uint64_t state = seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL;
    for (const auto& tag : config.type_tags) {
        std::vector<LayerParams::HeadProj> heads;
        for (int hd = 0; hd < config.n_heads; ++hd) {
            LayerParams::HeadProj hp;
            hp.wq = seeded_matrix(config.d_head, config.d_model, state);
            hp.wk = seeded_matrix(config.d_head, config.d_model, state);
            hp.wv = seeded_matrix(config.d_head, config.d_model, state);
            heads.push_back(std::move(hp));
        }
        p.proj.emplace(tag, std::move(heads));
    }
    for (const auto& kind : config.position_kinds)
        p.pos_proj.emplace(kind, seeded_matrix(config.pos_dim, config.pos_dim, state));
    p.w_o = seeded_matrix(config.d_model, config.n_heads * config.d_head, state);
    p.ffn_w1 = seeded_matrix(4 * config.d_model, config.d_model, state);
    p.ffn_b1.assign(4 * config.d_model, 0.0);
    p.ffn_w2 = seeded_matrix(config.d_model, 4 * config.d_model, state);
    p.ffn_b2.assign(config.d_model, 0.0);
    return p;
}

size_t param_count(const LayerParams& p) {
    size_t count = 0;
    for (const auto& [tag, heads] : p.proj)
        for (const auto& hp : heads)
            count += hp.wq.data.size() + hp.wk.data.size() + hp.wv.data.size();
    for (const auto& [kind, m] : p.pos_proj) count += m.data.size();
    count += p.w_o.data.size();
    count += p.ffn_w1.data.size() + p.ffn_b1.size();
    count += p.ffn_w2.data.size() + p.ffn_b2.size();
    return count;
}

SignalHierarchy layer_forward(const SignalHierarchy& h, const LayerParams& p,
                              const std::vector<std::string>* leaf_tags) {
    const auto& cfg = p.config;
    if (h.dim != cfg.d_model) throw UsageError("layer_forward: leaf feature dim != d_model");
    const int n = h.n_leaves();

    // positions projected per kind of the owning family, once per layer
    SignalHierarchy skel = h;
    skel.dim = cfg.d_head;
    for (size_t id = 0; id < h.nodes.size(); ++id) {
        const int parent = h.nodes[id].parent;
        if (parent < 0) continue;
        const std::string kind = domain_name(h.nodes[parent].domain);
        const auto it = p.pos_proj.find(kind);
        if (it == p.pos_proj.end())
            throw UsageError("layer_forward: no position projection for kind " + kind);
        skel.nodes[id].position = matvec(it->second, h.nodes[id].position);
    }

    auto tag_of = [&](int leaf) -> const std::string& {
        static const std::string empty;
        if (leaf_tags) {
            if (static_cast<int>(leaf_tags->size()) != n)
                throw UsageError("layer_forward: leaf_tags size mismatch");
            return (*leaf_tags)[leaf];
        }
        return cfg.type_tags.empty() ? empty : cfg.type_tags.front();
    };

    EngineOptions opts;
    opts.payload = cfg.payload;
    opts.pos_scale = cfg.pos_scale;
    opts.threads = cfg.threads;

    // per head: project, normalize, attend; collect the update directions
    std::vector<std::vector<Vec>> deltas(n);  // leaf -> per-head update
    for (auto& d : deltas) d.resize(cfg.n_heads);
    for (int head = 0; head < cfg.n_heads; ++head) {
        LeafStates s;
        s.q.resize(n);
        s.k.resize(n);
        s.v.resize(n);
        for (int i = 0; i < n; ++i) {
            const auto it = p.proj.find(tag_of(i));
            if (it == p.proj.end())
                throw UsageError("layer_forward: unknown type tag " + tag_of(i));
            const auto& hp = it->second[head];
            const Vec& x = h.nodes[h.leaf_ids[i]].features;
            s.q[i] = layer_norm(matvec(hp.wq, x));
            s.k[i] = layer_norm(matvec(hp.wk, x));
            s.v[i] = matvec(hp.wv, x);
        }
        const AttentionOutput out = hsa_forward(skel, s, opts);
        for (int i = 0; i < n; ++i) {
            Vec delta(cfg.d_head);
            for (int t = 0; t < cfg.d_head; ++t) delta[t] = out.updated_q[i][t] - s.q[i][t];
            deltas[i][head] = std::move(delta);
        }
    }

    SignalHierarchy out = h;
    for (int i = 0; i < n; ++i) {
        Vec concat;
        concat.reserve(static_cast<size_t>(cfg.n_heads) * cfg.d_head);
        for (int head = 0; head < cfg.n_heads; ++head)
            concat.insert(concat.end(), deltas[i][head].begin(), deltas[i][head].end());
        const Vec attn = matvec(p.w_o, concat);
        Vec y = h.nodes[h.leaf_ids[i]].features;
        axpy(1.0, attn, y);

        Vec hidden = matvec(p.ffn_w1, y);
        for (size_t t = 0; t < hidden.size(); ++t) hidden[t] = gelu(hidden[t] + p.ffn_b1[t]);
        Vec ffn = matvec(p.ffn_w2, hidden);
        for (int t = 0; t < cfg.d_model; ++t) y[t] += ffn[t] + p.ffn_b2[t];
        out.nodes[out.leaf_ids[i]].features = std::move(y);
    }
    return out;
}

Vec global_pool(const SignalHierarchy& h) {
    Vec pooled(h.dim, 0.0);
    for (int leaf : h.leaf_ids) axpy(1.0, h.nodes[leaf].features, pooled);
    for (double& v : pooled) v /= h.n_leaves();
    return pooled;
}

SignalHierarchy stack_forward(const SignalHierarchy& h, const std::vector<LayerParams>& layers,
                              const std::vector<std::string>* leaf_tags) {
    SignalHierarchy cur = h;
    for (const auto& layer : layers) cur = layer_forward(cur, layer, leaf_tags);
    return cur;
}

namespace {

json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    json data = json::array();
    for (double v : m.data) data.push_back(v);
    j["data"] = std::move(data);
    return j;
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    m.data = j.at("data").get<Vec>();
    if (m.data.size() != static_cast<size_t>(m.rows) * m.cols)
        throw SchemaError("matrix data size mismatch");
    return m;
}

}  // namespace

std::string params_to_json(const LayerParams& p) {
    json j;
    j["d_model"] = p.config.d_model;
    j["n_heads"] = p.config.n_heads;
    j["d_head"] = p.config.d_head;
    j["pos_dim"] = p.config.pos_dim;
    j["payload"] = p.config.payload == PayloadMode::keys ? "keys" : "values";
    j["pos_scale"] = p.config.pos_scale;
    j["seed"] = p.config.seed;
    json proj = json::object();
    for (const auto& [tag, heads] : p.proj) {
        json hs = json::array();
        for (const auto& hp : heads) {
            json e;
            e["wq"] = matrix_to_json(hp.wq);
            e["wk"] = matrix_to_json(hp.wk);
            e["wv"] = matrix_to_json(hp.wv);
            hs.push_back(std::move(e));
        }
        proj[tag] = std::move(hs);
    }
    j["proj"] = std::move(proj);
    json pos = json::object();
    for (const auto& [kind, m] : p.pos_proj) pos[kind] = matrix_to_json(m);
    j["pos_proj"] = std::move(pos);
    j["w_o"] = matrix_to_json(p.w_o);
    j["ffn_w1"] = matrix_to_json(p.ffn_w1);
    j["ffn_b1"] = p.ffn_b1;
    j["ffn_w2"] = matrix_to_json(p.ffn_w2);
    j["ffn_b2"] = p.ffn_b2;
    return j.dump();
}

LayerParams params_from_json(const std::string& document) {
    json j;
    try {
        j = json::parse(document);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("invalid JSON: ") + e.what());
    }
    LayerParams p;
    try {
        p.config.d_model = j.at("d_model").get<int>();
        p.config.n_heads = j.at("n_heads").get<int>();
        p.config.d_head = j.at("d_head").get<int>();
        p.config.pos_dim = j.at("pos_dim").get<int>();
        p.config.payload =
            j.at("payload").get<std::string>() == "keys" ? PayloadMode::keys : PayloadMode::values;
        p.config.pos_scale = j.at("pos_scale").get<double>();
        p.config.seed = j.at("seed").get<uint64_t>();
        p.config.type_tags.clear();
        for (auto it = j.at("proj").begin(); it != j.at("proj").end(); ++it) {
            p.config.type_tags.push_back(it.key());
            std::vector<LayerParams::HeadProj> heads;
            for (const auto& e : it.value()) {
                LayerParams::HeadProj hp;
                hp.wq = matrix_from_json(e.at("wq"));
                hp.wk = matrix_from_json(e.at("wk"));
                hp.wv = matrix_from_json(e.at("wv"));
                heads.push_back(std::move(hp));
            }
            p.proj.emplace(it.key(), std::move(heads));
        }
        p.config.position_kinds.clear();
        for (auto it = j.at("pos_proj").begin(); it != j.at("pos_proj").end(); ++it) {
            p.config.position_kinds.push_back(it.key());
            p.pos_proj.emplace(it.key(), matrix_from_json(it.value()));
        }
        p.w_o = matrix_from_json(j.at("w_o"));
        p.ffn_w1 = matrix_from_json(j.at("ffn_w1"));
        p.ffn_b1 = j.at("ffn_b1").get<Vec>();
        p.ffn_w2 = matrix_from_json(j.at("ffn_w2"));
        p.ffn_b2 = j.at("ffn_b2").get<Vec>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("schema violation: ") + e.what());
    }
    return p;
}

}  // namespace hsa
