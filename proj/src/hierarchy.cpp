#include "hsa/hierarchy.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace hsa {

using nlohmann::json;

const char* domain_name(DomainKind k) {
    switch (k) {
        case DomainKind::set: return "set";
        case DomainKind::grid1d: return "grid1d";
        case DomainKind::keyvalue: return "keyvalue";
        case DomainKind::custom: return "custom";
    }
    return "custom";
}

DomainKind domain_from_name(const std::string& name) {
    if (name == "set") return DomainKind::set;
    if (name == "grid1d") return DomainKind::grid1d;
    if (name == "keyvalue") return DomainKind::keyvalue;
    if (name == "custom") return DomainKind::custom;
    throw SchemaError("unknown domain kind: " + name);
}

Vec fourier_position(int index, int pos_dim) {
    Vec e(pos_dim, 0.0);
    for (int m = 0; 2 * m < pos_dim; ++m) {
        const double omega = std::pow(10000.0, -2.0 * m / pos_dim);
        e[2 * m] = std::sin(index * omega);
        if (2 * m + 1 < pos_dim) e[2 * m + 1] = std::cos(index * omega);
    }
    return e;
}

Vec position_for(int index, int pos_dim, const PosOptions& opts) {
    switch (opts.mode) {
        case PosMode::zero: return Vec(pos_dim, 0.0);
        case PosMode::fourier: return fourier_position(index, pos_dim);
        case PosMode::random_fourier: {
            // seeded random frequencies/phases; same seed -> same embedding map
            Vec e(pos_dim);
            for (int m = 0; m < pos_dim; ++m) {
                uint64_t s = opts.seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(m) + 1;
                const double omega = uniform01(s) * 2.0;
                const double phase = uniform01(s) * 6.283185307179586;
                e[m] = std::sin(index * omega + phase);
            }
            return e;
        }
    }
    return Vec(pos_dim, 0.0);
}

Vec hash_embed(const std::string& token, int dim) {
    uint64_t state = fnv1a64(token);
    Vec x(dim);
    double mean = 0.0;
    for (int i = 0; i < dim; ++i) {
        x[i] = 2.0 * uniform01(state) - 1.0;
        mean += x[i];
    }
    mean /= dim;
    for (double& v : x) v -= mean;
    return x;
}

namespace {

// Recomputes leaf ranges, depths and family indices after structural edits.
void finalize(SignalHierarchy& h) {
    h.leaf_ids.clear();
    // preorder guarantees children appear after parents
    for (size_t id = 0; id < h.nodes.size(); ++id) {
        auto& n = h.nodes[id];
        n.depth = n.parent < 0 ? 0 : h.nodes[n.parent].depth + 1;
        if (n.children.empty()) {
            n.leaf_begin = static_cast<int>(h.leaf_ids.size());
            h.leaf_ids.push_back(static_cast<int>(id));
            n.leaf_end = n.leaf_begin + 1;
        }
    }
    for (size_t i = h.nodes.size(); i-- > 0;) {
        auto& n = h.nodes[i];
        if (n.children.empty()) continue;
        n.leaf_begin = h.nodes[n.children.front()].leaf_begin;
        n.leaf_end = h.nodes[n.children.back()].leaf_end;
        for (size_t c = 0; c < n.children.size(); ++c)
            h.nodes[n.children[c]].index_in_family = static_cast<int>(c);
    }
}

int parse_node(const json& j, SignalHierarchy& h, int parent, Vec position) {
    const int id = static_cast<int>(h.nodes.size());
    h.nodes.emplace_back();
    h.nodes[id].parent = parent;
    h.nodes[id].position = std::move(position);

    if (j.contains("leaf")) {
        const auto& leaf = j.at("leaf");
        if (!leaf.contains("x") || !leaf.at("x").is_array())
            throw SchemaError("leaf node must carry an \"x\" array");
        Vec x = leaf.at("x").get<Vec>();
        if (static_cast<int>(x.size()) > h.dim)
            throw SchemaError("leaf feature length exceeds dim");
        x.resize(h.dim, 0.0);  // zero-pad shorter signals
        h.nodes[id].features = std::move(x);
        return id;
    }
    if (!j.contains("domain") || !j.contains("children"))
        throw SchemaError("internal node must carry \"domain\" and \"children\"");
    const DomainKind kind = domain_from_name(j.at("domain").get<std::string>());
    h.nodes[id].domain = kind;
    const auto& children = j.at("children");
    if (!children.is_array() || children.empty())
        throw SchemaError("family must have at least one child");
    for (const auto& cj : children) {
        if (!cj.contains("pos") || !cj.at("pos").is_array())
            throw SchemaError("child entry must carry a \"pos\" array");
        Vec pos = cj.at("pos").get<Vec>();
        if (static_cast<int>(pos.size()) != h.pos_dim)
            throw SchemaError("position length does not match pos_dim");
        if (kind == DomainKind::set) {
            for (double v : pos)
                if (v != 0.0) throw SchemaError("set domain requires zero position vectors");
        }
        int child;
        if (cj.contains("node"))
            child = parse_node(cj.at("node"), h, id, std::move(pos));
        else if (cj.contains("leaf"))
            child = parse_node(cj, h, id, std::move(pos));
        else
            throw SchemaError("child entry must carry \"node\" or \"leaf\"");
        h.nodes[id].children.push_back(child);
    }
    return id;
}

void write_vec(std::string& out, const Vec& v) {
    out += '[';
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += format_sig17(v[i]);
    }
    out += ']';
}

void write_node(std::string& out, const SignalHierarchy& h, int id) {
    const auto& n = h.nodes[id];
    if (n.children.empty()) {
        out += "{\"leaf\":{\"x\":";
        write_vec(out, n.features);
        out += "}}";
        return;
    }
    out += "{\"domain\":\"";
    out += domain_name(n.domain);
    out += "\",\"children\":[";
    for (size_t c = 0; c < n.children.size(); ++c) {
        if (c) out += ',';
        const int cid = n.children[c];
        out += "{\"pos\":";
        write_vec(out, h.nodes[cid].position);
        out += ',';
        if (h.is_leaf(cid)) {
            out += "\"leaf\":{\"x\":";
            write_vec(out, h.nodes[cid].features);
            out += '}';
        } else {
            out += "\"node\":";
            std::string inner;
            write_node(inner, h, cid);
            out += inner;
        }
        out += '}';
    }
    out += "]}";
}

}  // namespace

SignalHierarchy build_from_json(const std::string& document) {
    json j;
    try {
        j = json::parse(document);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("invalid JSON: ") + e.what());
    }
    SignalHierarchy h;
    try {
        if (!j.contains("dim") || !j.contains("pos_dim") || !j.contains("root"))
            throw SchemaError("document must carry \"dim\", \"pos_dim\" and \"root\"");
        h.dim = j.at("dim").get<int>();
        h.pos_dim = j.at("pos_dim").get<int>();
        if (h.dim < 1 || h.pos_dim < 1) throw SchemaError("dim and pos_dim must be positive");
        parse_node(j.at("root"), h, -1, Vec(h.pos_dim, 0.0));
    } catch (const json::exception& e) {
        throw SchemaError(std::string("schema violation: ") + e.what());
    }
    finalize(h);
    return h;
}

std::string to_json(const SignalHierarchy& h) {
    std::string out = "{\"dim\":" + std::to_string(h.dim) +
                      ",\"pos_dim\":" + std::to_string(h.pos_dim) + ",\"root\":";
    write_node(out, h, h.root());
    out += '}';
    return out;
}

namespace {

struct TmpNode {
    std::vector<int> kids;  // indices into the temp arena
    int leaf = -1;          // leaf-order index, or -1 for families
};

int emit(const std::vector<TmpNode>& tmp, int tmp_id, const std::vector<Vec>& leaves,
         DomainKind kind, const PosOptions& pos, SignalHierarchy& h, int parent,
         Vec position) {
    const int id = static_cast<int>(h.nodes.size());
    h.nodes.emplace_back();
    h.nodes[id].parent = parent;
    h.nodes[id].position = std::move(position);
    const TmpNode& t = tmp[tmp_id];
    if (t.leaf >= 0) {
        h.nodes[id].features = leaves[t.leaf];
        h.nodes[id].features.resize(h.dim, 0.0);
        return id;
    }
    h.nodes[id].domain = kind;
    for (size_t c = 0; c < t.kids.size(); ++c) {
        Vec p = position_for(static_cast<int>(c), h.pos_dim, pos);
        const int child = emit(tmp, t.kids[c], leaves, kind, pos, h, id, std::move(p));
        h.nodes[id].children.push_back(child);
    }
    return id;
}

}  // namespace

SignalHierarchy build_fixed(const std::vector<Vec>& leaves, const std::vector<int>& branching,
                            int pos_dim, const PosOptions& pos) {
    if (leaves.empty()) throw UsageError("build_fixed: empty leaf list");
    for (int b : branching)
        if (b < 2) throw UsageError("build_fixed: branching factor must be >= 2");

    SignalHierarchy h;
    h.dim = static_cast<int>(leaves.front().size());
    h.pos_dim = pos_dim;
    const DomainKind kind = pos.mode == PosMode::zero ? DomainKind::set : DomainKind::grid1d;

    std::vector<TmpNode> tmp;
    std::vector<int> level;
    for (size_t i = 0; i < leaves.size(); ++i) {
        tmp.push_back(TmpNode{{}, static_cast<int>(i)});
        level.push_back(static_cast<int>(i));
    }
    size_t next_factor = 0;
    while (level.size() > 1) {
        // one final family over everything remaining once the list runs out
        const int b = next_factor < branching.size()
                          ? branching[next_factor++]
                          : static_cast<int>(level.size());
        std::vector<int> up;
        for (size_t i = 0; i < level.size(); i += b) {
            TmpNode fam;
            for (size_t j = i; j < level.size() && j < i + b; ++j) fam.kids.push_back(level[j]);
            tmp.push_back(std::move(fam));
            up.push_back(static_cast<int>(tmp.size()) - 1);
        }
        level = std::move(up);
    }
    emit(tmp, level.front(), leaves, kind, pos, h, -1, Vec(pos_dim, 0.0));
    finalize(h);
    return h;
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace

SignalHierarchy build_text(const std::string& text, int dim, int pos_dim, const PosOptions& pos) {
    // paragraphs separated by blank lines
    std::vector<std::string> paragraphs;
    {
        std::string cur;
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            bool blank = true;
            for (char ch : line)
                if (!std::isspace(static_cast<unsigned char>(ch))) blank = false;
            if (blank) {
                if (!cur.empty()) paragraphs.push_back(std::move(cur)), cur.clear();
            } else {
                if (!cur.empty()) cur += ' ';
                cur += line;
            }
        }
        if (!cur.empty()) paragraphs.push_back(std::move(cur));
    }

    SignalHierarchy h;
    h.dim = dim;
    h.pos_dim = pos_dim;
    h.nodes.emplace_back();
    h.nodes[0].parent = -1;
    h.nodes[0].domain = DomainKind::grid1d;
    h.nodes[0].position = Vec(pos_dim, 0.0);

    int n_tokens = 0;
    int p_index = 0;
    for (const auto& para : paragraphs) {
        // sentence split: [.?!]+ followed by whitespace (or end of paragraph)
        std::vector<std::string> sentences;
        std::string cur;
        for (size_t i = 0; i < para.size(); ++i) {
            cur += para[i];
            const bool ender = para[i] == '.' || para[i] == '?' || para[i] == '!';
            const bool boundary =
                ender && (i + 1 == para.size() ||
                          std::isspace(static_cast<unsigned char>(para[i + 1])));
            if (boundary) {
                if (!split_ws(cur).empty()) sentences.push_back(cur);
                cur.clear();
            }
        }
        if (!split_ws(cur).empty()) sentences.push_back(cur);
        if (sentences.empty()) continue;

        const int pid = static_cast<int>(h.nodes.size());
        h.nodes.emplace_back();
        h.nodes[pid].parent = 0;
        h.nodes[pid].domain = DomainKind::grid1d;
        h.nodes[pid].position = position_for(p_index++, pos_dim, pos);
        h.nodes[0].children.push_back(pid);

        int s_index = 0;
        for (const auto& sent : sentences) {
            const auto tokens = split_ws(sent);
            const int sid = static_cast<int>(h.nodes.size());
            h.nodes.emplace_back();
            h.nodes[sid].parent = pid;
            h.nodes[sid].domain = DomainKind::grid1d;
            h.nodes[sid].position = position_for(s_index++, pos_dim, pos);
            h.nodes[pid].children.push_back(sid);
            int t_index = 0;
            for (const auto& tok : tokens) {
                const int tid = static_cast<int>(h.nodes.size());
                h.nodes.emplace_back();
                h.nodes[tid].parent = sid;
                h.nodes[tid].position = position_for(t_index++, pos_dim, pos);
                h.nodes[tid].features = hash_embed(tok, dim);
                h.nodes[sid].children.push_back(tid);
                ++n_tokens;
            }
        }
    }
    if (n_tokens == 0) throw UsageError("build_text: no tokens in input");
    finalize(h);
    return h;
}

SignalHierarchy flatten(const SignalHierarchy& h) {
    const auto& root = h.nodes[h.root()];
    bool flat = !root.children.empty();
    for (int c : root.children) flat = flat && h.is_leaf(c);
    if (flat) return h;

    SignalHierarchy out;
    out.dim = h.dim;
    out.pos_dim = h.pos_dim;
    out.nodes.emplace_back();
    out.nodes[0].parent = -1;
    out.nodes[0].domain = DomainKind::custom;
    out.nodes[0].position = Vec(h.pos_dim, 0.0);
    for (int leaf : h.leaf_ids) {
        const int id = static_cast<int>(out.nodes.size());
        out.nodes.emplace_back();
        out.nodes[id].parent = 0;
        out.nodes[id].position = h.nodes[leaf].position;
        out.nodes[id].features = h.nodes[leaf].features;
        out.nodes[0].children.push_back(id);
    }
    finalize(out);
    return out;
}

namespace {

int copy_subtree(const SignalHierarchy& src, int src_id, SignalHierarchy& dst, int parent) {
    const int id = static_cast<int>(dst.nodes.size());
    dst.nodes.push_back(src.nodes[src_id]);
    dst.nodes[id].parent = parent;
    dst.nodes[id].children.clear();
    for (int c : src.nodes[src_id].children) {
        const int child = copy_subtree(src, c, dst, id);
        dst.nodes[id].children.push_back(child);
    }
    return id;
}

}  // namespace

BatchResult batch_concat(const std::vector<SignalHierarchy>& hs) {
    if (hs.empty()) throw UsageError("batch_concat: empty batch");
    for (const auto& h : hs)
        if (h.dim != hs.front().dim || h.pos_dim != hs.front().pos_dim)
            throw UsageError("batch_concat: mixed dim or pos_dim");

    BatchResult r;
    r.tree.dim = hs.front().dim;
    r.tree.pos_dim = hs.front().pos_dim;
    r.tree.nodes.emplace_back();
    r.tree.nodes[0].parent = -1;
    r.tree.nodes[0].domain = DomainKind::set;
    r.tree.nodes[0].position = Vec(r.tree.pos_dim, 0.0);
    int offset = 0;
    for (const auto& h : hs) {
        const int id = copy_subtree(h, h.root(), r.tree, 0);
        r.tree.nodes[id].position = Vec(r.tree.pos_dim, 0.0);  // dummy level: set domain
        r.tree.nodes[0].children.push_back(id);
        r.offsets.emplace_back(offset, offset + h.n_leaves());
        offset += h.n_leaves();
    }
    finalize(r.tree);
    return r;
}

std::vector<std::string> validate(const SignalHierarchy& h) {
    std::vector<std::string> issues;
    if (h.dim < 1) issues.push_back("dim must be positive");
    if (h.pos_dim < 1) issues.push_back("pos_dim must be positive");
    if (h.nodes.empty()) {
        issues.push_back("empty hierarchy");
        return issues;
    }
    for (size_t id = 0; id < h.nodes.size(); ++id) {
        const auto& n = h.nodes[id];
        if (n.children.empty()) {
            if (static_cast<int>(n.features.size()) != h.dim)
                issues.push_back("leaf " + std::to_string(id) + ": feature length != dim");
        } else if (id != 0 && !n.features.empty()) {
            issues.push_back("internal node " + std::to_string(id) + " carries features");
        }
        if (id != 0 && static_cast<int>(n.position.size()) != h.pos_dim)
            issues.push_back("node " + std::to_string(id) + ": position length != pos_dim");
        if (!n.children.empty() && n.domain == DomainKind::set) {
            for (int c : n.children)
                for (double v : h.nodes[c].position)
                    if (v != 0.0) {
                        issues.push_back("set family " + std::to_string(id) +
                                         " has a nonzero child position");
                        break;
                    }
        }
        for (int c : n.children)
            if (h.nodes[c].parent != static_cast<int>(id))
                issues.push_back("node " + std::to_string(c) + ": bad parent link");
        // leaf ranges must tile the node's own range
        if (!n.children.empty()) {
            int expect = n.leaf_begin;
            for (int c : n.children) {
                if (h.nodes[c].leaf_begin != expect)
                    issues.push_back("node " + std::to_string(id) +
                                     ": children do not tile the leaf range");
                expect = h.nodes[c].leaf_end;
            }
            if (expect != n.leaf_end)
                issues.push_back("node " + std::to_string(id) + ": leaf range mismatch");
        }
    }
    for (size_t i = 0; i < h.leaf_ids.size(); ++i)
        if (h.nodes[h.leaf_ids[i]].leaf_begin != static_cast<int>(i))
            issues.push_back("leaf order is not a bijection onto 0..N-1");
    return issues;
}

HierarchyStats stats(const SignalHierarchy& h) {
    HierarchyStats s;
    s.n_leaves = h.n_leaves();
    for (const auto& n : h.nodes) {
        if (!n.children.empty()) {
            ++s.n_families;
            s.max_branching = std::max(s.max_branching, static_cast<int>(n.children.size()));
        } else {
            s.depth = std::max(s.depth, n.depth);
        }
    }
    return s;
}

}  // namespace hsa
