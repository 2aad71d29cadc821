#include "leansplat/decoder.hpp"

#include <cmath>

#include "leansplat/ops.hpp"
#include "leansplat/nn.hpp"
#include "leansplat/rng.hpp"

namespace leansplat {

namespace {

constexpr int64_t kAttnRowBlock = 2048;

int grid_side(int n_queries) {
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_queries))));
    LS_CHECK(g * g == n_queries, "n_queries must be a perfect square, got ", n_queries);
    return g;
}

}  // namespace

Array initial_head_bias(const ModelConfig& cfg) {
    Array b = Array::zeros({kGaussianParams}, cfg.dtype);
    const int g = grid_side(cfg.n_queries);
    // depth raw 0 -> sigmoid 0.5 -> mid range; scales ~ extent / grid side
    const double log_scale = std::log(cfg.scene_extent / static_cast<double>(g));
    for (int k = 0; k < 3; ++k) b.set_value(kIdxScale + k, log_scale);
    b.set_value(kIdxQuat, 1.0);  // identity rotation
    return b;
}

LeanSplatModel::LeanSplatModel(const ModelConfig& cfg, const Intrinsics& intr, uint64_t seed,
                               const QueryRays* rays_override)
    : cfg_(cfg) {
    LS_CHECK(cfg_.n_points >= 1, "n_points must be >= 1");
    LS_CHECK(cfg_.layers >= 0, "layers must be >= 0");
    LS_CHECK(cfg_.hidden % cfg_.heads == 0, "hidden dim must divide into heads");
    cfg_.act.scale_max = 0.5 * cfg_.scene_extent;
    cfg_.feat.dtype = cfg_.dtype;

    input_cam_ = make_camera(intr, Eigen::Matrix4d::Identity());
    feat_pad_ = FeatureExtractor::padding_for(intr.height, cfg_.feat.scale);

    if (rays_override != nullptr) {
        LS_CHECK(rays_override->u.dim(0) == cfg_.n_queries, "rays override must have ",
                 cfg_.n_queries, " rows");
        rays_.u = rays_override->u;
    } else {
        // Fixed ray grid over the input image plane (never trained).
        const int g = grid_side(cfg_.n_queries);
        rays_.u = Array({cfg_.n_queries, 2}, cfg_.dtype);
        for (int gy = 0; gy < g; ++gy) {
            for (int gx = 0; gx < g; ++gx) {
                const int64_t k = static_cast<int64_t>(gy) * g + gx;
                const double px = (gx + 0.5) * intr.width / g;
                const double py = (gy + 0.5) * intr.height / g;
                rays_.u.set_value(k * 2 + 0, (px - intr.cx) / intr.fx);
                rays_.u.set_value(k * 2 + 1, (py - intr.cy) / intr.fy);
            }
        }
    }

    const int64_t N = cfg_.n_queries, C = cfg_.hidden;

    Rng q_rng(param_init_stream(seed, "decoder.q_init"));
    Array q0({N, C}, cfg_.dtype);
    for (int64_t i = 0; i < q0.numel(); ++i) q0.set_value(i, q_rng.normal(0.0, 0.02));
    q_init_ = params_.add("decoder.q_init", std::move(q0));

    init_hidden_ = Linear::create(params_, "decoder.init.hidden", C, C, seed, Init::Xavier,
                                  cfg_.dtype);
    init_out_ = Linear::create(params_, "decoder.init.out", C, kGaussianParams, seed, Init::Zero,
                               cfg_.dtype);
    params_.assign("decoder.init.out.b", initial_head_bias(cfg_));

    layers_.resize(static_cast<size_t>(cfg_.layers));
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "decoder.layer" + std::to_string(l);
        LayerModules& m = layers_[static_cast<size_t>(l)];
        m.offsets = Linear::create(params_, p + ".dfa.offsets", C, cfg_.n_points * 2, seed,
                                   Init::Zero, cfg_.dtype);
        // Spread the initial sampling points on a half-cell ring.
        Array off_bias = Array::zeros({cfg_.n_points * 2}, cfg_.dtype);
        for (int k = 0; k < cfg_.n_points; ++k) {
            const double ang = 2.0 * M_PI * k / cfg_.n_points;
            off_bias.set_value(2 * k + 0, 0.5 * std::cos(ang));
            off_bias.set_value(2 * k + 1, 0.5 * std::sin(ang));
        }
        params_.assign(p + ".dfa.offsets.b", off_bias);
        m.attn_weights = Linear::create(params_, p + ".dfa.attn", C, cfg_.n_points, seed,
                                        Init::Zero, cfg_.dtype);
        m.proj = Linear::create(params_, p + ".dfa.proj", cfg_.feat.out_channels, C, seed,
                                Init::Xavier, cfg_.dtype);
        m.dfa_norm = LayerNorm::create(params_, p + ".dfa.norm", C, cfg_.dtype);
        m.sa_norm = LayerNorm::create(params_, p + ".sa.norm", C, cfg_.dtype);
        m.wq = Linear::create(params_, p + ".sa.wq", C, C, seed, Init::Xavier, cfg_.dtype);
        m.wk = Linear::create(params_, p + ".sa.wk", C, C, seed, Init::Xavier, cfg_.dtype);
        m.wv = Linear::create(params_, p + ".sa.wv", C, C, seed, Init::Xavier, cfg_.dtype);
        m.wo = Linear::create(params_, p + ".sa.wo", C, C, seed, Init::Xavier, cfg_.dtype);
        m.ffn_norm = LayerNorm::create(params_, p + ".ffn.norm", C, cfg_.dtype);
        m.ffn1 = Linear::create(params_, p + ".ffn.lin1", C, 4 * C, seed, Init::Xavier, cfg_.dtype);
        m.ffn2 = Linear::create(params_, p + ".ffn.lin2", 4 * C, C, seed, Init::Xavier, cfg_.dtype);
        m.head_hidden =
            Linear::create(params_, p + ".head.hidden", C, C, seed, Init::Xavier, cfg_.dtype);
        // Zero output weights + identity-quaternion bias: the layer starts
        // as a no-op refinement.
        m.head_out = Linear::create(params_, p + ".head.out", C, kGaussianParams, seed, Init::Zero,
                                    cfg_.dtype);
        Array head_bias = Array::zeros({kGaussianParams}, cfg_.dtype);
        head_bias.set_value(kIdxQuat, 1.0);
        params_.assign(p + ".head.out.b", head_bias);
    }

    extractor_ = std::make_unique<FeatureExtractor>(params_, cfg_.feat, seed);
}

Array LeanSplatModel::project_refs(const RawGaussians& g) const {
    PhysicalGaussians phys = activate(g, rays_, cfg_.act);
    auto [pts, depth] = project_centers(input_cam_, phys.centers);
    const double s = cfg_.feat.scale;
    return ops::mul_scalar(ops::add_scalar(pts, feat_pad_ - s / 2.0), 1.0 / s);
}

DecoderState LeanSplatModel::init_state() const {
    DecoderState st;
    st.q = q_init_;
    Array h = ops::relu(init_hidden_.apply(st.q));
    st.gaussians = RawGaussians{init_out_.apply(h)};
    st.refs = project_refs(st.gaussians);
    st.layer_index = 0;
    return st;
}

Array LeanSplatModel::deformable_mixture(int layer, const Array& q, const Array& refs,
                                         const FeatureMap& f) const {
    const LayerModules& m = layers_[static_cast<size_t>(layer)];
    Array offs = m.offsets.apply(q);                           // [N, P*2]
    Array weights = ops::softmax(m.attn_weights.apply(q), 1);  // [N, P]
    Array mix;
    for (int p = 0; p < cfg_.n_points; ++p) {
        Array pts = ops::add(refs, ops::slice(offs, 1, 2 * p, 2));
        Array sampled = ops::bilinear_sample(f.data, pts);  // [N, C_F]
        Array term = ops::mul(sampled, ops::slice(weights, 1, p, 1));
        mix = mix.defined() ? ops::add(mix, term) : term;
    }
    return mix;
}

Array LeanSplatModel::gaussian_dfa(int layer, const Array& q, const Array& refs,
                                   const FeatureMap& f) const {
    const LayerModules& m = layers_[static_cast<size_t>(layer)];
    Array projected = m.proj.apply(deformable_mixture(layer, q, refs, f));
    return m.dfa_norm.apply(ops::add(q, projected));
}

Array LeanSplatModel::self_attention(int layer, const Array& q) const {
    const LayerModules& m = layers_[static_cast<size_t>(layer)];
    const int64_t N = q.dim(0), C = q.dim(1);
    const int64_t d = C / cfg_.heads;
    Array x = m.sa_norm.apply(q);
    Array qq = m.wq.apply(x), kk = m.wk.apply(x), vv = m.wv.apply(x);
    std::vector<Array> head_outs;
    for (int h = 0; h < cfg_.heads; ++h) {
        Array qh = ops::slice(qq, 1, h * d, d);
        Array kh_t = ops::transpose(ops::slice(kk, 1, h * d, d));
        Array vh = ops::slice(vv, 1, h * d, d);
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        if (N <= kAttnRowBlock) {
            Array scores = ops::mul_scalar(ops::matmul(qh, kh_t), inv_sqrt_d);
            head_outs.push_back(ops::matmul(ops::softmax(scores, 1), vh));
        } else {
            // Row blocks bound the N x N score matrix; per-row math unchanged.
            std::vector<Array> blocks;
            for (int64_t r0 = 0; r0 < N; r0 += kAttnRowBlock) {
                const int64_t rows = std::min(kAttnRowBlock, N - r0);
                Array sb = ops::mul_scalar(ops::matmul(ops::slice(qh, 0, r0, rows), kh_t),
                                           inv_sqrt_d);
                blocks.push_back(ops::matmul(ops::softmax(sb, 1), vh));
            }
            head_outs.push_back(ops::concat(blocks, 0));
        }
    }
    Array out = m.wo.apply(ops::concat(head_outs, 1));
    return ops::add(q, out);
}

Array LeanSplatModel::feed_forward(int layer, const Array& q) const {
    const LayerModules& m = layers_[static_cast<size_t>(layer)];
    Array x = m.ffn_norm.apply(q);
    Array h = ops::relu(m.ffn1.apply(x));
    return ops::add(q, m.ffn2.apply(h));
}

DecoderState LeanSplatModel::decoder_layer(int layer, const DecoderState& state,
                                           const FeatureMap& f, bool reproject) const {
    const LayerModules& m = layers_[static_cast<size_t>(layer)];
    DecoderState out;
    out.q = gaussian_dfa(layer, state.q, state.refs, f);
    out.q = self_attention(layer, out.q);
    out.q = feed_forward(layer, out.q);
    Array h = ops::relu(m.head_hidden.apply(out.q));
    Array delta = m.head_out.apply(h);
    out.gaussians = compose_update(state.gaussians, delta);
    out.refs = reproject ? project_refs(out.gaussians) : state.refs;
    out.layer_index = state.layer_index + 1;
    return out;
}

std::vector<RawGaussians> LeanSplatModel::forward(const Array& img, bool freeze_refs) const {
    FeatureMap f = extract_features(img);
    DecoderState st = init_state();
    std::vector<RawGaussians> out;
    out.push_back(st.gaussians);
    for (int l = 0; l < cfg_.layers; ++l) {
        st = decoder_layer(l, st, f, /*reproject=*/!freeze_refs);
        out.push_back(st.gaussians);
    }
    return out;
}

}  // namespace leansplat
