#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "leansplat/metrics.hpp"
#include "leansplat/ops.hpp"
#include "leansplat/renderer.hpp"
#include "support/gradcheck.hpp"

using namespace leansplat;
using namespace leansplat::testing;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("psnr closed forms") {
    Array a = Array::full({3, 4, 4}, 0.4);
    CHECK(std::isinf(psnr(a, a)));

    Array b = ops::add_scalar(a, 0.1);  // MSE = 0.01 -> 20 dB
    CHECK(psnr(a, b) == doctest::Approx(20.0));
    CHECK(psnr(b, a) == doctest::Approx(psnr(a, b)));  // symmetric

    CHECK(psnr(Array::zeros({2, 2}), Array::full({2, 2}, 1.0)) == doctest::Approx(0.0));
    CHECK_THROWS_AS(psnr(Array::zeros({2, 2}), Array::zeros({3, 2})), NumericError);
}

TEST_CASE("ssim identity and constants") {
    Rng rng(3);
    Array a = random_uniform({3, 16, 16}, rng, 0.0, 1.0);
    CHECK(ssim_value(a, a) == 1.0);  // exact

    // Constant images of different values: luminance term only.
    Array c1 = Array::full({1, 16, 16}, 0.3);
    Array c2 = Array::full({1, 16, 16}, 0.6);
    const double l = (2 * 0.3 * 0.6 + 1e-4) / (0.3 * 0.3 + 0.6 * 0.6 + 1e-4);
    CHECK(ssim_value(c1, c2) == doctest::Approx(l).epsilon(1e-9));
    CHECK(ssim_value(c1, c2) < 1.0);
    CHECK(ssim_value(c2, c1) == doctest::Approx(ssim_value(c1, c2)));
}

TEST_CASE("ssim gradient vs finite differences") {
    Rng rng(5);
    Array a = random_uniform({1, 13, 13}, rng, 0.1, 0.9);
    Array b = random_uniform({1, 13, 13}, rng, 0.1, 0.9);
    double err = max_grad_rel_error(
        [](const std::vector<Array>& ls) { return ssim(ls[0], ls[1]); }, {a, b}, 1e-5, 60, 42);
    CHECK(err < 1e-4);
}

namespace {
ObjectViews rig_object(int n_views, int res, uint64_t seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.n_views = n_views;
    spec.resolution = res;
    spec.n_gaussians = 12;
    return generate_scene(spec, 0).object;
}
}  // namespace

TEST_CASE("eval_object with an oracle synthesizer gives the infinity sentinel") {
    SceneSpec spec;
    spec.seed = 9;
    spec.n_views = 6;
    spec.resolution = 24;
    spec.n_gaussians = 8;
    GeneratedScene scene = generate_scene(spec, 0);

    // The oracle re-renders the ground-truth gaussians with the same
    // renderer that produced the dataset: exact equality, MSE 0.
    ViewSynthesizer oracle = [&](const View&, const Camera& target) {
        return render_oracle(scene.ground_truth, target).rgb;
    };
    EvalReport rep = eval_object(oracle, scene.object, 0);
    CHECK(rep.per_view.size() == 5);
    for (const auto& vm : rep.per_view) CHECK(std::isinf(vm.psnr));
    CHECK(std::isinf(rep.psnr_mean));
    for (const auto& vm : rep.per_view) CHECK(vm.ssim == doctest::Approx(1.0));
}

TEST_CASE("far-view subset matches a brute-force angle check") {
    ObjectViews obj = rig_object(16, 16, 31);
    ViewSynthesizer dummy = [&](const View&, const Camera& target) {
        (void)target;
        return ops::mul_scalar(obj.views[0].image, 0.9);
    };
    const int input_index = 2;
    EvalReport rep = eval_object(dummy, obj, input_index, 45.0);

    // Independent angle computation straight from camera positions.
    auto angles = [](const Camera& c, double& az, double& el) {
        const Eigen::Vector3d p = c.center();
        el = std::asin(-p.y() / p.norm());
        az = std::atan2(p.x(), -p.z());
    };
    double in_az, in_el;
    angles(obj.views[input_index].camera, in_az, in_el);
    size_t row = 0;
    int n_far = 0;
    for (size_t j = 0; j < obj.views.size(); ++j) {
        if (static_cast<int>(j) == input_index) continue;
        double az, el;
        angles(obj.views[j].camera, az, el);
        double daz = std::fmod(std::abs(az - in_az), 2 * M_PI);
        daz = std::min(daz, 2 * M_PI - daz);
        const bool far = daz > M_PI / 4 || std::abs(el - in_el) > M_PI / 4;
        CHECK(rep.per_view[row].far == far);
        n_far += far ? 1 : 0;
        ++row;
    }
    CHECK(rep.n_far == n_far);
    CHECK(rep.n_far > 0);  // a 16-view ring must contain far views

    // Subset means only aggregate flagged rows.
    double pf = 0;
    for (const auto& vm : rep.per_view)
        if (vm.far) pf += vm.psnr;
    CHECK(rep.psnr_far == doctest::Approx(pf / rep.n_far));
}

TEST_CASE("eval report files") {
    namespace fs = std::filesystem;
    EvalReport rep;
    rep.per_view = {{1, 30.0, 0.9, false}, {2, std::numeric_limits<double>::infinity(), 1.0, true}};
    rep.psnr_mean = std::numeric_limits<double>::infinity();
    rep.ssim_mean = 0.95;
    rep.psnr_far = 31.0;
    rep.ssim_far = 1.0;
    rep.n_far = 1;
    fs::path dir = fs::temp_directory_path() / "leansplat_eval_test";
    write_eval_report(dir.string(), "obj_0", rep);
    std::ifstream csv(dir / "obj_0_views.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "view,psnr,ssim,far");
    std::getline(csv, line);
    CHECK(line.find("30") != std::string::npos);
    std::getline(csv, line);
    CHECK(line.find("inf") != std::string::npos);
    std::ifstream js(dir / "obj_0_summary.json");
    std::string text((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"lpips\": \"n/a\"") != std::string::npos);
    CHECK(text.find("\"psnr_mean\": \"inf\"") != std::string::npos);
    fs::remove_all(dir);
}

TEST_SUITE_END();
