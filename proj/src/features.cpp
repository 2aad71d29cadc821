#include "leansplat/features.hpp"

#include "leansplat/ops.hpp"

namespace leansplat {

FeatureExtractor::FeatureExtractor(ParamStore& ps, const FeatureConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
    const int B = cfg.base_channels;
    const DType dt = cfg.dtype;
    e0a_ = Conv::create(ps, "feat.unet.e0a", 3, B, 3, seed, dt);
    e0b_ = Conv::create(ps, "feat.unet.e0b", B, B, 3, seed, dt);
    d1_ = Conv::create(ps, "feat.unet.d1", B, 2 * B, 3, seed, dt);
    e1b_ = Conv::create(ps, "feat.unet.e1b", 2 * B, 2 * B, 3, seed, dt);
    d2_ = Conv::create(ps, "feat.unet.d2", 2 * B, 4 * B, 3, seed, dt);
    e2b_ = Conv::create(ps, "feat.unet.e2b", 4 * B, 4 * B, 3, seed, dt);
    u1a_ = Conv::create(ps, "feat.unet.u1a", 4 * B, 2 * B, 3, seed, dt);
    u1b_ = Conv::create(ps, "feat.unet.u1b", 2 * B, 2 * B, 3, seed, dt);
    u2a_ = Conv::create(ps, "feat.unet.u2a", 2 * B, B, 3, seed, dt);
    u2b_ = Conv::create(ps, "feat.unet.u2b", B, B, 3, seed, dt);
    b1_ = Conv::create(ps, "feat.depth.s1", 3, B, 3, seed, dt);
    b2_ = Conv::create(ps, "feat.depth.s2", B, 2 * B, 3, seed, dt);
    b3_ = Conv::create(ps, "feat.depth.s3", 2 * B, B, 3, seed, dt);
    fuse_ = Conv::create(ps, "feat.fuse", B, B, 3, seed, dt);
    down_ = Conv::create(ps, "feat.down", B, cfg.out_channels, cfg.scale, seed, dt);
}

FeatureMap FeatureExtractor::extract(const Array& img) const {
    LS_CHECK(img.ndim() == 3 && img.dim(0) == 3, "extract: image must be [3,H,W], got ",
             img.shape_str());
    const int64_t H = img.dim(1), W = img.dim(2);
    LS_CHECK(H == W, "extract: image must be square, got ", img.shape_str());
    LS_CHECK(H % 4 == 0, "extract: image side must be a multiple of 4, got ", H);

    // Depth-aware branch at H/4, upsampled back to full resolution.
    Array b = ops::relu(b1_.apply(img, 2, 1));
    b = ops::relu(b2_.apply(b, 2, 1));
    b = ops::relu(b3_.apply(b, 1, 1));
    Array b_up = ops::upsample_bilinear(b, 4);

    Array fused_in;
    if (cfg_.use_unet) {
        Array e0 = ops::relu(e0a_.apply(img, 1, 1));
        e0 = ops::relu(e0b_.apply(e0, 1, 1));
        Array e1 = ops::relu(d1_.apply(e0, 2, 1));
        e1 = ops::relu(e1b_.apply(e1, 1, 1));
        Array e2 = ops::relu(d2_.apply(e1, 2, 1));
        e2 = ops::relu(e2b_.apply(e2, 1, 1));
        Array u1 = ops::relu(u1a_.apply(ops::upsample_bilinear(e2, 2), 1, 1));
        u1 = ops::relu(u1b_.apply(ops::add(u1, e1), 1, 1));
        Array u2 = ops::relu(u2a_.apply(ops::upsample_bilinear(u1, 2), 1, 1));
        u2 = ops::relu(u2b_.apply(ops::add(u2, e0), 1, 1));
        fused_in = ops::add(u2, b_up);
    } else {
        fused_in = b_up;
    }

    Array fused = ops::relu(fuse_.apply(fused_in, 1, 1));
    const int pad = padding_for(H, cfg_.scale);
    FeatureMap fm;
    fm.data = down_.apply(fused, cfg_.scale, pad);
    fm.scale = cfg_.scale;
    fm.pad = pad;
    return fm;
}

}  // namespace leansplat
