#pragma once

#include <functional>
#include <string>
#include <vector>

#include "leansplat/array.hpp"
#include "leansplat/data.hpp"

namespace leansplat {

// 10*log10(1 / MSE) on [0,1] images; +inf sentinel when MSE is zero.
double psnr(const Array& a, const Array& b);

// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// valid-region mean over channels. Differentiable; returns a scalar array.
Array ssim(const Array& a, const Array& b);
double ssim_value(const Array& a, const Array& b);  // no-grad convenience

struct ViewMetrics {
    int view = 0;
    double psnr = 0;
    double ssim = 0;
    bool far = false;  // elevation or azimuth differs from the input by > threshold
};

struct EvalReport {
    std::vector<ViewMetrics> per_view;  // every view except the input
    double psnr_mean = 0, ssim_mean = 0;
    double psnr_far = 0, ssim_far = 0;
    int n_far = 0;
};

// Renders one novel view of the object from the input view.
using ViewSynthesizer =
    std::function<Array(const View& input, const Camera& target_camera)>;

// Average metrics over all views except the input, plus the far-view subset
// (angular difference beyond `far_angle_deg` in elevation or azimuth).
EvalReport eval_object(const ViewSynthesizer& synth, const ObjectViews& object, int input_index,
                       double far_angle_deg = 45.0);

// CSV (per view) and JSON summary; PSNR infinities serialize as "inf".
void write_eval_report(const std::string& dir, const std::string& object_name,
                       const EvalReport& report);

}  // namespace leansplat
