#include "leansplat/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "leansplat/ops.hpp"
#include "leansplat/tape.hpp"

namespace leansplat {

double psnr(const Array& a, const Array& b) {
    LS_CHECK(a.shape() == b.shape(), "psnr: shape mismatch ", a.shape_str(), " vs ", b.shape_str());
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = a.value_at(i) - b.value_at(i);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

Array gaussian_window(DType dt) {
    constexpr int k = 11;
    constexpr double sigma = 1.5;
    Array w({1, 1, k, k}, dt);
    double sum = 0.0;
    for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
            const double dy = y - (k - 1) / 2.0, dx = x - (k - 1) / 2.0;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w.set_value(y * k + x, v);
            sum += v;
        }
    }
    for (int64_t i = 0; i < w.numel(); ++i) w.set_value(i, w.value_at(i) / sum);
    return w;
}

}  // namespace

Array ssim(const Array& a, const Array& b) {
    LS_CHECK(a.shape() == b.shape(), "ssim: shape mismatch ", a.shape_str(), " vs ", b.shape_str());
    LS_CHECK(a.ndim() == 3, "ssim expects [C,H,W], got ", a.shape_str());
    LS_CHECK(a.dim(1) >= 11 && a.dim(2) >= 11, "ssim needs images of at least 11x11, got ",
             a.shape_str());
    const int64_t C = a.dim(0);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    Array w = gaussian_window(a.dtype());

    Array total;
    for (int64_t ch = 0; ch < C; ++ch) {
        Array ac = ops::slice(a, 0, ch, 1);
        Array bc = ops::slice(b, 0, ch, 1);
        Array mu1 = ops::conv2d(ac, w, 1, 0);
        Array mu2 = ops::conv2d(bc, w, 1, 0);
        Array mu1_sq = ops::mul(mu1, mu1);
        Array mu2_sq = ops::mul(mu2, mu2);
        Array mu12 = ops::mul(mu1, mu2);
        Array s1 = ops::sub(ops::conv2d(ops::mul(ac, ac), w, 1, 0), mu1_sq);
        Array s2 = ops::sub(ops::conv2d(ops::mul(bc, bc), w, 1, 0), mu2_sq);
        Array s12 = ops::sub(ops::conv2d(ops::mul(ac, bc), w, 1, 0), mu12);
        Array num = ops::mul(ops::add_scalar(ops::mul_scalar(mu12, 2.0), c1),
                             ops::add_scalar(ops::mul_scalar(s12, 2.0), c2));
        Array den = ops::mul(ops::add_scalar(ops::add(mu1_sq, mu2_sq), c1),
                             ops::add_scalar(ops::add(s1, s2), c2));
        Array m = ops::mean_all(ops::div(num, den));
        total = total.defined() ? ops::add(total, m) : m;
    }
    return ops::div_scalar(total, static_cast<double>(C));
}

double ssim_value(const Array& a, const Array& b) {
    NoGradGuard ng;
    return ssim(a, b).scalar();
}

EvalReport eval_object(const ViewSynthesizer& synth, const ObjectViews& object, int input_index,
                       double far_angle_deg) {
    LS_CHECK(object.views.size() >= 2, "eval_object: object needs at least 2 views");
    LS_CHECK(input_index >= 0 && input_index < static_cast<int>(object.views.size()),
             "eval_object: input index out of range");
    const View& input = object.views[static_cast<size_t>(input_index)];
    double in_az = 0, in_el = 0;
    camera_angles(input.camera, in_az, in_el);

    EvalReport rep;
    double psum = 0, ssum = 0, pfar = 0, sfar = 0;
    for (size_t j = 0; j < object.views.size(); ++j) {
        if (static_cast<int>(j) == input_index) continue;
        const View& target = object.views[j];
        Array pred = synth(input, target.camera);
        ViewMetrics vm;
        vm.view = target.index;
        vm.psnr = psnr(pred, target.image);
        vm.ssim = ssim_value(pred, target.image);
        double az = 0, el = 0;
        camera_angles(target.camera, az, el);
        double daz = std::abs(az - in_az);
        daz = std::min(daz, 2.0 * M_PI - daz);
        const double del = std::abs(el - in_el);
        const double thresh = far_angle_deg * M_PI / 180.0;
        vm.far = daz > thresh || del > thresh;
        rep.per_view.push_back(vm);
        psum += vm.psnr;
        ssum += vm.ssim;
        if (vm.far) {
            pfar += vm.psnr;
            sfar += vm.ssim;
            ++rep.n_far;
        }
    }
    const double n = static_cast<double>(rep.per_view.size());
    rep.psnr_mean = psum / n;
    rep.ssim_mean = ssum / n;
    rep.psnr_far = rep.n_far ? pfar / rep.n_far : 0.0;
    rep.ssim_far = rep.n_far ? sfar / rep.n_far : 0.0;
    return rep;
}

void write_eval_report(const std::string& dir, const std::string& object_name,
                       const EvalReport& report) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / (object_name + "_views.csv"));
    LS_CHECK_DATA(csv.good(), "cannot write eval CSV in '", dir, "'");
    csv << "view,psnr,ssim,far\n";
    for (const ViewMetrics& vm : report.per_view) {
        csv << vm.view << ",";
        if (std::isinf(vm.psnr)) {
            csv << "inf";
        } else {
            csv << vm.psnr;
        }
        csv << "," << vm.ssim << "," << (vm.far ? 1 : 0) << "\n";
    }

    auto num_or_inf = [](double v) -> nlohmann::json {
        if (std::isinf(v)) return "inf";
        return v;
    };
    nlohmann::json j;
    j["psnr_mean"] = num_or_inf(report.psnr_mean);
    j["ssim_mean"] = report.ssim_mean;
    j["psnr_far"] = num_or_inf(report.psnr_far);
    j["ssim_far"] = report.ssim_far;
    j["lpips"] = "n/a";
    j["n_views"] = report.per_view.size();
    j["n_far"] = report.n_far;
    std::ofstream js(fs::path(dir) / (object_name + "_summary.json"));
    js << j.dump(2) << "\n";
}

}  // namespace leansplat
