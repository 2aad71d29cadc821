#pragma once

#include "leansplat/nn.hpp"

namespace leansplat {

struct FeatureMap {
    Array data;  // [C, H_f, W_f]
    int scale = 14;
    int pad = 0;  // zero padding used by the downsampling conv

    // Maps input pixel coordinates to continuous feature-grid coordinates.
    double to_grid(double pixel) const { return (pixel + pad - scale / 2.0) / scale; }
};

struct FeatureConfig {
    int base_channels = 32;   // UNet width
    int out_channels = 64;    // fused feature channels C
    int scale = 14;           // stride/kernel of the downsampling conv
    bool use_unet = true;     // ablation hook: drop the pixel-aligned branch
    DType dtype = DType::F64;
};

// Two-branch extractor: a small UNet (2 down / 2 up, skip connections) at
// full resolution plus a strided conv encoder standing in for the pretrained
// depth-aware model, fused FPN-style and downsampled by a conv with
// kernel = stride = scale.
class FeatureExtractor {
public:
    FeatureExtractor(ParamStore& ps, const FeatureConfig& cfg, uint64_t seed);

    // img: [3,H,W], H == W, multiples of 4, values in [0,1].
    FeatureMap extract(const Array& img) const;

    static int64_t grid_size(int64_t image_size, int scale) {
        return (image_size + scale - 1) / scale;
    }
    static int padding_for(int64_t image_size, int scale) {
        const int64_t total = grid_size(image_size, scale) * scale - image_size;
        return static_cast<int>((total + 1) / 2);
    }

    const FeatureConfig& config() const { return cfg_; }

private:
    FeatureConfig cfg_;
    // UNet encoder/decoder
    Conv e0a_, e0b_, d1_, e1b_, d2_, e2b_, u1a_, u1b_, u2a_, u2b_;
    // depth-aware branch
    Conv b1_, b2_, b3_;
    // fusion + downsample
    Conv fuse_, down_;
};

}  // namespace leansplat
