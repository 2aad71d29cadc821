#pragma once

#include <memory>
#include <vector>

#include "leansplat/camera.hpp"
#include "leansplat/features.hpp"
#include "leansplat/gaussians.hpp"
#include "leansplat/renderer.hpp"

namespace leansplat {

struct ModelConfig {
    int n_queries = 256;  // must be a perfect square (ray grid)
    int hidden = 128;     // query dimension C
    int layers = 2;       // decoder layers L
    int n_points = 4;     // sampling points per query N_P
    int heads = 4;        // self-attention heads
    double scene_extent = 1.0;
    FeatureConfig feat;
    ActivationConfig act;  // scale_max is derived from scene_extent
    DType dtype = DType::F64;
};

struct DecoderState {
    Array q;  // [N,C]
    RawGaussians gaussians;
    Array refs;  // [N,2] in feature-grid coordinates
    int layer_index = 0;
};

// Single-image reconstructor: N learnable queries are refined layer by layer
// with deformable cross-attention anchored at the 2D projections of the
// current Gaussian centers, then decoded to parameter increments.
class LeanSplatModel {
public:
    // rays_override replaces the default uniform ray grid (row count must
    // equal n_queries); weight initialization is unaffected.
    LeanSplatModel(const ModelConfig& cfg, const Intrinsics& input_intrinsics, uint64_t seed,
                   const QueryRays* rays_override = nullptr);

    // Every refinement stage: [G_init, G_1, ..., G_L].
    // freeze_refs keeps reference points at their initial projection.
    std::vector<RawGaussians> forward(const Array& img, bool freeze_refs = false) const;

    DecoderState init_state() const;
    FeatureMap extract_features(const Array& img) const { return extractor_->extract(img); }
    Array gaussian_dfa(int layer, const Array& q, const Array& refs, const FeatureMap& f) const;
    // The attention-weighted feature mixture [N, C_F] before projection.
    Array deformable_mixture(int layer, const Array& q, const Array& refs,
                             const FeatureMap& f) const;
    DecoderState decoder_layer(int layer, const DecoderState& state, const FeatureMap& f,
                               bool reproject = true) const;

    PhysicalGaussians activate_raw(const RawGaussians& g) const {
        return activate(g, rays_, cfg_.act);
    }
    Array project_refs(const RawGaussians& g) const;

    const QueryRays& rays() const { return rays_; }
    const Camera& input_camera() const { return input_cam_; }
    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    Array self_attention(int layer, const Array& q) const;
    Array feed_forward(int layer, const Array& q) const;

    ModelConfig cfg_;
    Camera input_cam_;
    ParamStore params_;
    QueryRays rays_;
    int feat_pad_ = 0;

    struct LayerModules {
        Linear offsets, attn_weights, proj;
        LayerNorm dfa_norm;
        LayerNorm sa_norm;
        Linear wq, wk, wv, wo;
        LayerNorm ffn_norm;
        Linear ffn1, ffn2;
        Linear head_hidden, head_out;
    };
    Array q_init_;
    Linear init_hidden_, init_out_;
    std::vector<LayerModules> layers_;
    std::unique_ptr<FeatureExtractor> extractor_;
};

// Splat-head bias giving the documented initial Gaussians: mid-range depth,
// zero offsets, grid-sized scales, identity quaternion, 0.5 opacity, zero SH.
Array initial_head_bias(const ModelConfig& cfg);

}  // namespace leansplat
