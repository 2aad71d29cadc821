#pragma once

#include <string>

#include "leansplat/array.hpp"

namespace leansplat {

// 24 raw parameters per Gaussian:
//   0      depth (pre-sigmoid)
//   1..3   center offsets (dx, dy, dz)
//   4..6   log-scales
//   7..10  rotation quaternion (w, x, y, z), unnormalized
//   11     opacity (pre-sigmoid)
//   12..23 SH coefficients, 3 channels x 4 degree<=1 coefficients
constexpr int kGaussianParams = 24;

constexpr int kIdxDepth = 0;
constexpr int kIdxOffset = 1;
constexpr int kIdxScale = 4;
constexpr int kIdxQuat = 7;
constexpr int kIdxOpacity = 11;
constexpr int kIdxSh = 12;

constexpr double kShC0 = 0.28209479177387814;  // Y_0^0
constexpr double kShC1 = 0.4886025119029199;   // degree-1 constant

struct RawGaussians {
    Array params;  // [N,24]
    int64_t count() const { return params.defined() ? params.dim(0) : 0; }
};

struct PhysicalGaussians {
    Array centers;  // [N,3]
    Array cov;      // [N,3,3], symmetric PSD by construction
    Array opacity;  // [N], in (0,1)
    Array sh;       // [N,3,4]
    int64_t count() const { return centers.defined() ? centers.dim(0) : 0; }
};

// Per-query image-plane ray tangents (x/z, y/z); fixed, never trained.
struct QueryRays {
    Array u;  // [N,2]
};

struct ActivationConfig {
    double d_near = 0.5;
    double d_far = 3.0;
    double scale_min = 1e-6;
    double scale_max = 0.5;  // 0.5 * scene extent by default
};

// Raw -> physical parameters; one tape node, differentiable w.r.t. params.
//   depth d = d_near + (d_far-d_near)*sigmoid(raw)
//   center  = (u1*d+dx, u2*d+dy, d+dz)
//   scales  = exp(raw) clamped to [scale_min, scale_max]
//   cov     = R diag(s^2) R^T with R from the normalized quaternion
//   opacity = sigmoid(raw); SH passed through
PhysicalGaussians activate(const RawGaussians& raw, const QueryRays& rays,
                           const ActivationConfig& cfg);

// G (+) dG: quaternion block is Hamilton-composed (normalized dG quaternion
// on the left), every other parameter is added.
RawGaussians compose_update(const RawGaussians& g, const Array& delta);

// Evaluates degree<=1 real SH per channel and squashes with a sigmoid.
// sh: [N,3,4], view_dirs: [N,3] unit vectors; returns [N,3] in (0,1).
Array sh_color(const Array& sh, const Array& view_dirs);

// Binary little-endian PLY with x, y, z, opacity per vertex.
void export_ply(const std::string& path, const PhysicalGaussians& g);

}  // namespace leansplat
