#pragma once

#include <vector>

#include "leansplat/array.hpp"
#include "leansplat/tape.hpp"

namespace leansplat::ops {

// Elementwise with trailing-dimension broadcasting.
Array add(const Array& a, const Array& b);
Array sub(const Array& a, const Array& b);
Array mul(const Array& a, const Array& b);
Array div(const Array& a, const Array& b);

Array add_scalar(const Array& a, double c);
Array mul_scalar(const Array& a, double c);
Array div_scalar(const Array& a, double c);
Array neg(const Array& a);
Array exp(const Array& a);
Array log(const Array& a);
Array sqrt(const Array& a);
Array sigmoid(const Array& a);
Array softplus(const Array& a);
Array tanh(const Array& a);
Array clamp_min(const Array& a, double lo);
inline Array relu(const Array& a) { return clamp_min(a, 0.0); }

// Reductions (fixed summation order for run-to-run reproducibility).
Array sum_all(const Array& a);
Array mean_all(const Array& a);
Array sum_axis(const Array& a, int axis, bool keepdim);

// Shape manipulation.
Array reshape(const Array& a, std::vector<int64_t> shape);
Array transpose(const Array& a);  // 2-D
Array slice(const Array& a, int axis, int64_t start, int64_t len);
Array concat(const std::vector<Array>& parts, int axis);

Array matmul(const Array& a, const Array& b);
Array softmax(const Array& a, int axis);

// x: [C_in,H,W], w: [C_out,C_in,k,k]; cross-correlation, zero padding.
Array conv2d(const Array& x, const Array& w, int stride, int padding);

// F: [C,H_f,W_f], pts: [P,2] as (x,y) in feature-grid pixel coordinates.
// Corners outside the grid contribute zero value and receive zero gradient.
Array bilinear_sample(const Array& feat, const Array& pts);

// x: [C,H,W] -> [C,H*factor,W*factor], half-pixel alignment, edge clamped.
Array upsample_bilinear(const Array& x, int factor);

// Normalizes over the last dimension.
Array layer_norm(const Array& x, const Array& gamma, const Array& beta, double eps = 1e-5);

// Broadcast result shape under trailing-dimension alignment (throws on clash).
std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// Sums g down to `shape` (inverse of broadcasting); used by op backwards.
Array reduce_to_shape(const Array& g, const std::vector<int64_t>& shape);

}  // namespace leansplat::ops
