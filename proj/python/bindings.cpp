#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "leansplat/data.hpp"
#include "leansplat/metrics.hpp"
#include "leansplat/renderer.hpp"
#include "leansplat/threading.hpp"
#include "leansplat/training.hpp"

namespace py = pybind11;
using namespace leansplat;

namespace {

Array to_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(a.ndim());
    for (py::ssize_t d = 0; d < a.ndim(); ++d) shape[static_cast<size_t>(d)] = a.shape(d);
    Array out(shape, DType::F64);
    std::copy(a.data(), a.data() + a.size(), out.raw<double>());
    return out;
}

py::array_t<double> to_numpy(const Array& a) {
    std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
    py::array_t<double> out(shape);
    for (int64_t i = 0; i < a.numel(); ++i) out.mutable_data()[i] = a.value_at(i);
    return out;
}

Camera camera_from(const py::array_t<double>& pose16, double fx, double fy, double cx, double cy,
                   int width, int height) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    if (pose16.size() == 16) {
        auto r = pose16.unchecked();
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) m(i, j) = r(i, j);
    }
    return make_camera({fx, fy, cx, cy, width, height}, m);
}

PhysicalGaussians gaussians_from(const py::array_t<double>& centers,
                                 const py::array_t<double>& cov, const py::array_t<double>& opacity,
                                 const py::array_t<double>& sh) {
    PhysicalGaussians g;
    g.centers = to_array(centers);
    g.cov = to_array(cov);
    g.opacity = to_array(opacity);
    g.sh = to_array(sh);
    LS_CHECK(g.centers.ndim() == 2 && g.centers.dim(1) == 3, "centers must be [N,3]");
    LS_CHECK(g.cov.ndim() == 3 && g.cov.dim(1) == 3 && g.cov.dim(2) == 3, "cov must be [N,3,3]");
    LS_CHECK(g.opacity.ndim() == 1 && g.opacity.dim(0) == g.centers.dim(0), "opacity must be [N]");
    LS_CHECK(g.sh.ndim() == 3 && g.sh.dim(1) == 3 && g.sh.dim(2) == 4, "sh must be [N,3,4]");
    return g;
}

// Thin model wrapper holding a reconstructor and its input-camera geometry.
struct PyModel {
    TrainConfig cfg;
    std::shared_ptr<LeanSplatModel> model;

    py::dict reconstruct(const py::array_t<double>& image) const {
        NoGradGuard ng;
        Array img = to_array(image);
        auto outs = model->forward(img, cfg.freeze_refs);
        PhysicalGaussians phys = model->activate_raw(outs.back());
        py::dict d;
        d["centers"] = to_numpy(phys.centers);
        d["cov"] = to_numpy(phys.cov);
        d["opacity"] = to_numpy(phys.opacity);
        d["sh"] = to_numpy(phys.sh);
        return d;
    }

    py::array_t<double> synthesize(const py::array_t<double>& image,
                                   const py::array_t<double>& target_pose) const {
        View input;
        input.image = to_array(image);
        input.camera = model->input_camera();
        const Camera& c = model->input_camera();
        Camera target = camera_from(target_pose, c.fx, c.fy, c.cx, c.cy, c.width, c.height);
        return to_numpy(synthesize_view(*model, cfg.freeze_refs, input, target));
    }
};

PyModel make_model(int n_queries, int hidden, int layers, int n_points, int resolution, double fov_deg,
                   uint64_t seed) {
    PyModel pm;
    pm.cfg.n_queries = n_queries;
    pm.cfg.hidden = hidden;
    pm.cfg.layers = layers;
    pm.cfg.n_points = n_points;
    pm.cfg.heads = hidden % 4 == 0 ? 4 : 1;
    pm.cfg.seed = seed;
    const double f = 0.5 * resolution / std::tan(0.5 * fov_deg * M_PI / 180.0);
    Intrinsics intr{f, f, resolution / 2.0, resolution / 2.0, resolution, resolution};
    pm.model = std::make_shared<LeanSplatModel>(pm.cfg.model_config(), intr, seed);
    return pm;
}

PyModel load_model(const std::string& path) {
    LoadedModel lm = load_model_checkpoint(path);
    PyModel pm;
    pm.cfg = lm.cfg;
    pm.model = std::move(lm.model);
    return pm;
}

}  // namespace

PYBIND11_MODULE(_leansplat, m) {
    m.doc() = "Differentiable gaussian splatting and single-image reconstruction";

    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");

    m.def("set_threads", [](int n) { ThreadPool::instance().set_threads(n); },
          "Set the worker thread count");

    m.def(
        "render",
        [](const py::array_t<double>& centers, const py::array_t<double>& cov,
           const py::array_t<double>& opacity, const py::array_t<double>& sh,
           const py::array_t<double>& pose, double fx, double fy, double cx, double cy, int width,
           int height, bool oracle) {
            PhysicalGaussians g = gaussians_from(centers, cov, opacity, sh);
            Camera cam = camera_from(pose, fx, fy, cx, cy, width, height);
            RenderedImage img = oracle ? render_oracle(g, cam) : render(g, cam);
            return py::make_tuple(to_numpy(img.rgb), to_numpy(img.alpha));
        },
        py::arg("centers"), py::arg("cov"), py::arg("opacity"), py::arg("sh"), py::arg("pose"),
        py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"),
        py::arg("height"), py::arg("oracle") = false,
        "Alpha-composite gaussians into an RGB image; returns (rgb [3,H,W], alpha [H,W])");

    m.def("psnr", [](const py::array_t<double>& a,
                     const py::array_t<double>& b) { return psnr(to_array(a), to_array(b)); });
    m.def("ssim", [](const py::array_t<double>& a,
                     const py::array_t<double>& b) { return ssim_value(to_array(a), to_array(b)); });

    m.def(
        "generate_scene",
        [](uint64_t seed, int n_gaussians, int n_views, int resolution) {
            SceneSpec spec;
            spec.seed = seed;
            spec.n_gaussians = n_gaussians;
            spec.n_views = n_views;
            spec.resolution = resolution;
            GeneratedScene scene = generate_scene(spec, 0);
            py::dict d;
            d["centers"] = to_numpy(scene.ground_truth.centers);
            d["cov"] = to_numpy(scene.ground_truth.cov);
            d["opacity"] = to_numpy(scene.ground_truth.opacity);
            d["sh"] = to_numpy(scene.ground_truth.sh);
            py::list images, poses;
            for (const View& v : scene.object.views) {
                images.append(to_numpy(v.image));
                Eigen::Matrix4d pm = v.camera.pose_matrix();
                py::array_t<double> p({4, 4});
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j) p.mutable_at(i, j) = pm(i, j);
                poses.append(p);
            }
            d["images"] = images;
            d["poses"] = poses;
            const Camera& c = scene.object.views[0].camera;
            d["intrinsics"] = py::make_tuple(c.fx, c.fy, c.cx, c.cy, c.width, c.height);
            return d;
        },
        py::arg("seed") = 0, py::arg("n_gaussians") = 16, py::arg("n_views") = 8,
        py::arg("resolution") = 32,
        "Deterministic synthetic multi-view scene with gaussian ground truth");

    py::class_<PyModel>(m, "Model")
        .def("reconstruct", &PyModel::reconstruct, py::arg("image"),
             "Image [3,H,W] -> dict of gaussian parameter arrays")
        .def("synthesize", &PyModel::synthesize, py::arg("image"), py::arg("target_pose"),
             "Render a novel view of the reconstructed scene; pose is 4x4 "
             "world-from-camera relative to the input view")
        .def_property_readonly("n_gaussians", [](const PyModel& pm) { return pm.cfg.n_queries; })
        .def_property_readonly("layers", [](const PyModel& pm) { return pm.cfg.layers; });

    m.def("create_model", &make_model, py::arg("n_queries") = 64, py::arg("hidden") = 64,
          py::arg("layers") = 2, py::arg("n_points") = 4, py::arg("resolution") = 64,
          py::arg("fov_deg") = 50.0, py::arg("seed") = 0,
          "Fresh randomly initialized reconstruction model");
    m.def("load_checkpoint", &load_model, py::arg("path"), "Model from a training checkpoint");
}
