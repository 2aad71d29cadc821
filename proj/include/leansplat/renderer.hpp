#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

#include "leansplat/camera.hpp"
#include "leansplat/gaussians.hpp"

namespace leansplat {

struct Splat2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;  // regularized (+0.3 I)
    double depth_z = 0;
    double opacity = 0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double radius = 0;  // cull extent: 3*sqrt(max eigenvalue of cov2d)
    int64_t index = -1;  // original gaussian index
};

struct RenderedImage {
    Array rgb;    // [3,H,W]
    Array alpha;  // [H,W]
};

struct RenderOptions {
    std::array<double, 3> background = {1.0, 1.0, 1.0};
    bool cull = true;        // tile binning and off-screen culling
    bool early_stop = true;  // stop once transmittance < 1e-4
    int tile_size = 16;
};

constexpr double kAlphaClamp = 0.999;
constexpr double kTransmittanceStop = 1e-4;
constexpr double kCovRegularizer = 0.3;

// EWA projection of every Gaussian to screen space. Behind-camera Gaussians
// are always dropped; fully off-screen ones only when `cull`. The result is
// sorted front-to-back by depth with stable original-index tie-breaking.
std::vector<Splat2D> prepare_splats(const PhysicalGaussians& g, const Camera& cam,
                                    bool cull = true);

// Front-to-back alpha compositing of one pixel over depth-sorted splats.
void composite_pixel(const std::vector<Splat2D>& sorted, double px, double py,
                     const RenderOptions& opts, double rgb_out[3], double& alpha_out);

// Tiled differentiable renderer; records one tape node covering the full
// chain back to centers, covariances, opacities and SH coefficients.
RenderedImage render(const PhysicalGaussians& g, const Camera& cam,
                     const RenderOptions& opts = RenderOptions{});

// Semantic ground truth: per-pixel loop over all splats, no tiling, no
// radius culling, no early stop. Forward only.
RenderedImage render_oracle(const PhysicalGaussians& g, const Camera& cam,
                            const std::array<double, 3>& background = {1.0, 1.0, 1.0});

}  // namespace leansplat
