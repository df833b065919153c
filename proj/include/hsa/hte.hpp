#pragma once

#include <map>
#include <string>

#include "hsa/hsa_dp.hpp"
#include "hsa/hierarchy.hpp"

namespace hsa {

struct Matrix {
    int rows = 0, cols = 0;
    Vec data;  // row-major

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
};

Vec matvec(const Matrix& m, const Vec& x);

struct LayerConfig {
    int d_model = 0;
    int n_heads = 1;
    int d_head = 0;
    int pos_dim = 0;
    std::vector<std::string> type_tags = {"default"};
    std::vector<std::string> position_kinds = {"set", "grid1d", "keyvalue", "custom"};
    PayloadMode payload = PayloadMode::values;
    double pos_scale = 1.0;
    int threads = 1;
    uint64_t seed = 0;
};

// One projection set per signal-type tag and head; one position projection
// per position-embedding kind; shared output projection and feed-forward.
struct LayerParams {
    LayerConfig config;
    struct HeadProj {
        Matrix wq, wk, wv;  // d_head x d_model
    };
    std::map<std::string, std::vector<HeadProj>> proj;  // tag -> per-head
    std::map<std::string, Matrix> pos_proj;             // kind -> pos_dim x pos_dim
    Matrix w_o;                                         // d_model x (n_heads * d_head)
    Matrix ffn_w1;                                      // 4*d_model x d_model
    Vec ffn_b1;
    Matrix ffn_w2;  // d_model x 4*d_model
    Vec ffn_b2;
};

// Seeded scaled-uniform initialization, bound 1/sqrt(fan_in), zero biases.
// The same seed yields bit-identical parameters.
LayerParams init_params(const LayerConfig& config, uint64_t seed);

size_t param_count(const LayerParams& p);

// One encoder layer: per-type projections, post-projection LayerNorm on q/k,
// multi-head attention over the hierarchy, output projection with residual,
// then the feed-forward block with residual. Tree structure, positions and
// leaf order are untouched; only leaf features change.
// leaf_tags maps each leaf to a projection set; all leaves use the first
// configured tag when omitted.
SignalHierarchy layer_forward(const SignalHierarchy& h, const LayerParams& p,
                              const std::vector<std::string>* leaf_tags = nullptr);

// Arithmetic mean of all leaf features.
Vec global_pool(const SignalHierarchy& h);

SignalHierarchy stack_forward(const SignalHierarchy& h, const std::vector<LayerParams>& layers,
                              const std::vector<std::string>* leaf_tags = nullptr);

std::string params_to_json(const LayerParams& p);
LayerParams params_from_json(const std::string& document);

}  // namespace hsa
